//! The four ablation grids and their results table.

use std::path::Path;

use serde::Serialize;

use super::config::segment_names;
use super::plot::ablation_chart;
use super::{io_err, run_experiment_with, ExperimentConfig, ExperimentSummary, HarnessError, PolicySource};
use crate::codec::{NormalizationMode, FORMAT_VERSION};
use crate::model::SegmentKind;
use crate::prompt::SectionKind;

/// Episode length used by the normalization benchmark.
pub const NORMALIZATION_EPISODE_LENGTH: f64 = 20.0;
pub const HISTORY_LENGTHS: [usize; 4] = [0, 10, 30, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Description,
    HistoryLength,
    Observation,
    Normalization,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Description, Suite::HistoryLength, Suite::Observation, Suite::Normalization];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Description => "description",
            Suite::HistoryLength => "history_length",
            Suite::Observation => "observation",
            Suite::Normalization => "normalization",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "history" => Ok(Suite::HistoryLength),
            _ => Self::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| HarnessError::UnknownSuite(s.into())),
        }
    }
}

/// One configuration in a suite's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: String,
    pub label: String,
    pub config: ExperimentConfig,
}

fn sections(kinds: &[SectionKind]) -> Vec<String> {
    kinds.iter().map(|k| k.short().to_string()).collect()
}

/// Enumerates the grid of `suite` on top of `base`.
pub fn suite_cells(suite: Suite, base: &ExperimentConfig) -> Vec<Cell> {
    use SectionKind::*;
    use SegmentKind::*;
    let cell = |i: usize, label: &str, config: ExperimentConfig| Cell {
        id: format!("E{}", i + 1),
        label: label.to_string(),
        config: ExperimentConfig { name: format!("{}-E{}", suite.as_str(), i + 1), ..config },
    };
    match suite {
        Suite::Description => [
            ("no description", vec![]),
            ("io", vec![IoMeaning]),
            ("io+jo", vec![IoMeaning, JointOrder]),
            ("td+io+jo+cp", vec![TaskDescription, IoMeaning, JointOrder, ControlPipeline]),
            ("full description", SectionKind::ALL.to_vec()),
        ]
        .iter()
        .enumerate()
        .map(|(i, (label, kinds))| cell(i, label, ExperimentConfig { sections: sections(kinds), ..base.clone() }))
        .collect(),
        Suite::HistoryLength => HISTORY_LENGTHS
            .iter()
            .map(|&h| Cell {
                id: format!("L{h}"),
                label: format!("history {h}"),
                config: ExperimentConfig {
                    name: format!("history_length-L{h}"),
                    history_length: h,
                    ..base.clone()
                },
            })
            .collect(),
        Suite::Observation => [
            ("no observation", Some(vec![])),
            ("base velocities", Some(vec![BaseLinVel, BaseAngVel])),
            ("joint states", Some(vec![JointPos, JointVel])),
            ("velocities + joints", Some(vec![BaseLinVel, BaseAngVel, JointPos, JointVel])),
            ("full observation", None),
        ]
        .iter()
        .enumerate()
        .map(|(i, (label, kinds))| {
            let observation = kinds.as_deref().map(segment_names);
            cell(i, label, ExperimentConfig { observation, ..base.clone() })
        })
        .collect(),
        Suite::Normalization => NormalizationMode::ALL
            .iter()
            .enumerate()
            .map(|(i, &mode)| {
                cell(
                    i,
                    mode.as_str(),
                    ExperimentConfig {
                        normalization: mode,
                        episode_length: NORMALIZATION_EPISODE_LENGTH,
                        observation: Some(segment_names(&[BaseLinVel, BaseAngVel])),
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

/// One results row. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub format: &'static str,
    pub suite: &'static str,
    pub cell: String,
    pub label: String,
    pub trials: usize,
    pub successes: usize,
    pub nwt: f64,
    pub success_rate: f64,
    /// Mean input tokens per trial.
    pub input_tokens: f64,
    /// Mean output tokens per trial.
    pub output_tokens: f64,
    /// Mean estimated size of one prompt.
    pub estimated_prompt_tokens: f64,
    pub history_length: usize,
    pub sections: String,
    pub observation: String,
    pub normalization: &'static str,
    pub episode_length: f64,
    /// Trials lost to infrastructure problems.
    pub failures: usize,
}

impl AblationRow {
    pub fn new(suite: Suite, cell: &Cell, summary: &ExperimentSummary) -> Self {
        let cfg = &cell.config;
        let observation = cfg.robot_model().map(|m| cfg.observation_names(&m).join(" ")).unwrap_or_default();
        Self {
            format: FORMAT_VERSION,
            suite: suite.as_str(),
            cell: cell.id.clone(),
            label: cell.label.clone(),
            trials: summary.trials.len(),
            successes: summary.successes(),
            nwt: summary.mean_nwt,
            success_rate: summary.success_rate,
            input_tokens: summary.mean_input_tokens,
            output_tokens: summary.mean_output_tokens,
            estimated_prompt_tokens: summary.mean_prompt_tokens,
            history_length: cfg.history_length,
            sections: cfg.sections.join(" "),
            observation,
            normalization: cfg.normalization.as_str(),
            episode_length: cfg.episode_length,
            failures: summary.failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
    pub summaries: Vec<ExperimentSummary>,
    /// The cost guard stopped the suite before every cell ran.
    pub halted: bool,
    pub total_input_tokens: u64,
}

impl AblationReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(Path::new("<csv>")))?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String, HarnessError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn svg(&self) -> String {
        ablation_chart(&format!("{} ablation", self.suite.as_str()), &self.rows)
    }
}

/// Runs every cell of `suite`. With `out_dir`, writes `<suite>.csv`,
/// `<suite>.svg` and per-cell transcripts beneath it.
pub fn run_ablation_suite(
    suite: Suite,
    base: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<AblationReport, HarnessError> {
    base.validate()?;
    let source = PolicySource::from_config(base)?;
    let mut report = AblationReport { suite, rows: Vec::new(), summaries: Vec::new(), halted: false, total_input_tokens: 0 };
    for cell in suite_cells(suite, base) {
        if let Some(limit) = base.max_suite_input_tokens {
            if report.total_input_tokens >= limit {
                log::warn!("{} suite halted: {} input tokens used, budget {limit}", suite.as_str(), report.total_input_tokens);
                report.halted = true;
                break;
            }
        }
        let dir = out_dir.map(|d| d.join(suite.as_str()).join(&cell.id));
        let summary = run_experiment_with(&cell.config, &source, dir.as_deref())?;
        report.total_input_tokens += summary.total_input_tokens();
        report.rows.push(AblationRow::new(suite, &cell, &summary));
        report.summaries.push(summary);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv_path = dir.join(format!("{}.csv", suite.as_str()));
        let file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
        report.write_csv(file)?;
        let svg_path = dir.join(format!("{}.svg", suite.as_str()));
        std::fs::write(&svg_path, report.svg()).map_err(io_err(&svg_path))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_expected_shape() {
        let base = ExperimentConfig::default();
        assert_eq!(suite_cells(Suite::Description, &base).len(), 5);
        let e4 = &suite_cells(Suite::Description, &base)[3];
        assert_eq!(e4.config.sections, vec!["td", "io", "jo", "cp"]);
        assert!(suite_cells(Suite::Description, &base)[0].config.sections.is_empty());
        let h: Vec<usize> = suite_cells(Suite::HistoryLength, &base).iter().map(|c| c.config.history_length).collect();
        assert_eq!(h, vec![0, 10, 30, 50]);
        let norm = suite_cells(Suite::Normalization, &base);
        assert_eq!(norm.len(), 5);
        assert!(norm.iter().all(|c| c.config.episode_length == 20.0));
        assert_eq!(norm[4].config.normalization, NormalizationMode::PositiveInt);
        let obs = suite_cells(Suite::Observation, &base);
        assert_eq!(obs[0].config.observation, Some(vec![]));
        assert_eq!(obs[4].config.observation, None);
        for s in Suite::ALL {
            for c in suite_cells(s, &base) {
                c.config.validate().unwrap();
            }
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!(Suite::parse("history_length").unwrap(), Suite::HistoryLength);
        assert_eq!(Suite::parse("history").unwrap(), Suite::HistoryLength);
        assert!(matches!(Suite::parse("bogus"), Err(HarnessError::UnknownSuite(_))));
    }
}

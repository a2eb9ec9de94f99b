use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llmwalk::codec::LineCodec;
use llmwalk::gait::{collect_rollout, default_controller};
use llmwalk::harness::plot::transcript_chart;
use llmwalk::harness::{
    read_transcript, replay_transcript, run_ablation_suite, run_experiment, trial_env, trial_seeds, write_trials_csv,
    ExperimentConfig, Suite,
};
use llmwalk::policy::stub::StubServer;

#[derive(Parser)]
#[command(name = "llmwalk", version, about = "Text policies as low-level robot controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set history_length=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted-controller rollouts in line format.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Policy steps per rollout.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(short, long, default_value = "rollouts")]
        out: PathBuf,
    },
    /// Run one experiment (all trials).
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite: description, history_length, observation or normalization.
    Ablate {
        suite: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Plot target joint trajectories from a transcript as SVG.
    Plot {
        transcript: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Re-run a transcript with its recorded responses and compare.
    Replay {
        transcript: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Serve the bundled chat-completion stub until interrupted.
    Stub {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
    /// Print the effective config as TOML.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output_dir.join(&cfg.name))
}

fn collect(cfg: &ExperimentConfig, steps: usize, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let model = cfg.robot_model()?;
    let codec: LineCodec = cfg.codec(&model)?;
    std::fs::create_dir_all(out)?;
    for (i, seed) in trial_seeds(cfg.master_seed, cfg.trials).into_iter().enumerate() {
        let mut env = trial_env(cfg, &model, seed)?;
        let mut controller = default_controller(&model, &cfg.gait, cfg.gains.kp, cfg.gains.kd);
        let traj = collect_rollout(&mut env, controller.as_mut(), steps)?;
        let path = out.join(format!("rollout_{i:02}.p2w"));
        traj.write_records(&codec, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        println!("{}: {} steps, x = {:.2} m", path.display(), traj.len(), env.state.base_pos[0]);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Collect { cfg, steps, out } => collect(&cfg.load()?, steps, &out)?,
        Command::Run { cfg, out } => {
            let cfg = cfg.load()?;
            let dir = out_dir(&cfg, out);
            let summary = run_experiment(&cfg, Some(&dir))?;
            write_trials_csv(&summary, std::fs::File::create(dir.join("trials.csv"))?)?;
            println!(
                "{}: NWT {:.3}, success rate {:.2}, input tokens {:.0}, output tokens {:.0} -> {}",
                summary.name,
                summary.mean_nwt,
                summary.success_rate,
                summary.mean_input_tokens,
                summary.mean_output_tokens,
                dir.display()
            );
        }
        Command::Ablate { suite, cfg, out } => {
            let suite = Suite::parse(&suite)?;
            let cfg = cfg.load()?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_ablation_suite(suite, &cfg, Some(&dir))?;
            print!("{}", report.csv_string()?);
            if report.halted {
                eprintln!("suite halted by the input-token budget after {} cells", report.rows.len());
            }
        }
        Command::Plot { transcript, out } => {
            let t = read_transcript(&transcript)?;
            let out = out.unwrap_or_else(|| transcript.with_extension("svg"));
            std::fs::write(&out, transcript_chart(&t))?;
            println!("{}", out.display());
        }
        Command::Replay { transcript, out } => {
            let report = replay_transcript(&transcript, out.as_deref())?;
            println!(
                "{} steps replayed, NWT {:.3}: {}",
                report.replayed_steps.len(),
                report.replayed.normalized_walking_time,
                match report.first_divergence {
                    None => "identical trajectory".to_string(),
                    Some(i) => format!("diverged at step {i}"),
                }
            );
            if !report.identical {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Stub { addr } => {
            let server = StubServer::bind(&addr, Box::new(llmwalk::policy::stub::pattern_reply))?;
            println!("stub listening on {}", server.url());
            loop {
                std::thread::park();
            }
        }
        Command::Config { cfg } => print!("{}", cfg.load()?.to_toml_string()),
    }
    Ok(ExitCode::SUCCESS)
}

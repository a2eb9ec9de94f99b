//! Plain SVG charts: grouped bars for ablation tables and line traces for
//! transcripts.

use std::fmt::Write as _;

use super::transcript::Transcript;
use super::AblationRow;

const W: f64 = 720.0;
const H: f64 = 360.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 60.0); // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, y_lo: f64, y_hi: f64) {
    let (l, r, t, b) = MARGIN;
    let _ = writeln!(s, r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - b, W - r, H - b);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#, H - b);
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = H - b - (H - t - b) * i as f64 / 4.0;
        let _ = writeln!(s, r##"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, l, W - r);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, l - 6.0, y + 4.0);
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let x = MARGIN.0 + 10.0 + 110.0 * (i % 6) as f64;
        let y = H - 18.0 + -14.0 * (i / 6) as f64;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Grouped bar chart; every series has one value per label.
pub fn bar_chart(title: &str, labels: &[String], series: &[(&str, Vec<f64>)], y_max: f64) -> String {
    let (l, r, t, b) = MARGIN;
    let mut s = open(title);
    axes(&mut s, 0.0, y_max);
    let group_w = (W - l - r) / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (gi, label) in labels.iter().enumerate() {
        let gx = l + group_w * gi as f64 + group_w * 0.1;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(gi).copied().unwrap_or(0.0).clamp(0.0, y_max);
            let h = (H - t - b) * v / y_max;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                gx + bar_w * si as f64,
                H - b - h,
                bar_w,
                PALETTE[si % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            H - b + 16.0,
            escape(label)
        );
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Line chart of several traces sharing an x axis.
pub fn line_chart(title: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (l, r, t, b) = MARGIN;
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let (x0, x1) = (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0));
    let xs = |v: f64| l + (W - l - r) * if x1 > x0 { (v - x0) / (x1 - x0) } else { 0.0 };
    let ys = |v: f64| H - b - (H - t - b) * (v - lo) / (hi - lo);
    let mut s = open(title);
    axes(&mut s, lo, hi);
    let _ = writeln!(s, r#"<text x="{l}" y="{}">{x0:.1} s</text>"#, H - b + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.1} s</text>"#, W - r, H - b + 16.0);
    for (i, (_, values)) in series.iter().enumerate() {
        let pts: Vec<String> =
            x.iter().zip(values).filter(|(_, v)| v.is_finite()).map(|(a, v)| format!("{:.1},{:.1}", xs(*a), ys(*v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, &series.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// NWT and success rate per ablation cell.
pub fn ablation_chart(title: &str, rows: &[AblationRow]) -> String {
    let labels: Vec<String> = rows.iter().map(|r| r.cell.clone()).collect();
    bar_chart(
        title,
        &labels,
        &[
            ("NWT", rows.iter().map(|r| r.nwt).collect()),
            ("success rate", rows.iter().map(|r| r.success_rate).collect()),
        ],
        1.0,
    )
}

/// Executed joint targets over time for a transcript.
pub fn transcript_chart(t: &Transcript) -> String {
    let steps: Vec<_> = t.steps.iter().filter(|s| s.executed.is_some()).collect();
    let x: Vec<f64> = steps.iter().map(|s| s.sim_time).collect();
    let names = t.header.config.robot_model().map(|m| m.joint_names).unwrap_or_default();
    let dim = steps.first().and_then(|s| s.executed.as_ref()).map_or(0, Vec::len);
    let series: Vec<(String, Vec<f64>)> = (0..dim)
        .map(|j| {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("joint {j}"));
            (name, steps.iter().map(|s| s.executed.as_ref().map_or(f64::NAN, |a| a[j])).collect())
        })
        .collect();
    let title = format!("target joint positions, trial {} ({})", t.header.trial, t.header.policy);
    line_chart(&title, &x, &series)
}

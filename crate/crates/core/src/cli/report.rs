//! Machine-readable run reports and their text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Estimate;

/// One checked quantity: `value` must not exceed `tolerance` (for deviations)
/// or reach it (see [`Metric::at_most`] and friends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Metric {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, se: f64, tolerance: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            se,
            tolerance,
            pass: value <= tolerance,
        }
    }

    /// `|estimate - target| <= k * se` (with `se` floored at zero).
    pub fn within_se(name: impl Into<String>, est: Estimate, target: f64, k: f64) -> Self {
        let dev = (est.mean - target).abs();
        Metric::at_most(name, dev, est.se, k * est.se)
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            se: 0.0,
            tolerance: threshold,
            pass: value >= threshold,
        }
    }

    /// Boolean check recorded as a count of violations.
    pub fn zero_count(name: impl Into<String>, count: usize) -> Self {
        Metric::at_most(name, count as f64, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub metrics: Vec<Metric>,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
    pub seed: u64,
    pub workers: usize,
    /// The resolved configuration, as written to `config.resolved.toml`.
    pub config: String,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Text,
}

pub fn emit_report(report: &RunReport, format: Format) -> Result<String> {
    match format {
        Format::Json => serde_json::to_string_pretty(report).map_err(|e| Error::solver("cli", e.to_string())),
        Format::Text => Ok(render_text(report)),
    }
}

/// `name value ± se [tol] PASS/FAIL`, one line per metric, after a header.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# experiment {} seed {} workers {} wall_time {:.3}s",
        report.experiment, report.seed, report.workers, report.wall_time_s
    );
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "{} {:e} ± {:e} [{:e}] {}",
            m.name,
            m.value,
            m.se,
            m.tolerance,
            if m.pass { "PASS" } else { "FAIL" }
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    for a in &report.artifacts {
        let _ = writeln!(out, "# artifact {a}");
    }
    out
}

/// Parses the metric lines of [`render_text`]; comment lines are skipped.
pub fn parse_text_metrics(text: &str) -> Result<Vec<Metric>> {
    let bad = |line: &str| Error::Config(format!("malformed metric line: {line}"));
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 || parts[2] != "±" {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        let tol = parts[4]
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| bad(line))?;
        let pass = match parts[5] {
            "PASS" => true,
            "FAIL" => false,
            _ => return Err(bad(line)),
        };
        out.push(Metric {
            name: parts[0].to_string(),
            value: num(parts[1])?,
            se: num(parts[3])?,
            tolerance: num(tol)?,
            pass,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(metrics: Vec<Metric>) -> RunReport {
        RunReport {
            experiment: "solve".into(),
            metrics,
            artifacts: vec!["bsde.csv".into()],
            warnings: vec![],
            wall_time_s: 0.5,
            seed: 7,
            workers: 1,
            config: String::new(),
        }
    }

    #[test]
    fn empty_report_renders() {
        let r = report(vec![]);
        let text = emit_report(&r, Format::Text).unwrap();
        assert!(parse_text_metrics(&text).unwrap().is_empty());
        let json = emit_report(&r, Format::Json).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn one_failure_one_fail_line() {
        let r = report(vec![
            Metric::at_most("a", 0.1, 0.0, 1.0),
            Metric::at_most("b", 2.0, 0.1, 1.0),
            Metric::at_least("c", 0.95, 0.9),
        ]);
        let text = render_text(&r);
        assert_eq!(text.matches("FAIL").count(), 1);
        assert!(!r.passed());
    }

    #[test]
    fn json_text_round_trip() {
        let r = report(vec![
            Metric::at_most("y0_error", 1.234567890123e-7, 3.3e-4, 1e-6),
            Metric::within_se(
                "mean",
                Estimate {
                    mean: 0.1 + 0.2,
                    se: 0.01,
                    n: 10,
                },
                0.3,
                3.0,
            ),
        ]);
        let json = emit_report(&r, Format::Json).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        let parsed = parse_text_metrics(&render_text(&back)).unwrap();
        assert_eq!(parsed, r.metrics);
    }
}

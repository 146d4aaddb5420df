//! Experiment harness: each experiment turns a config into report rows.

mod config;
mod counterexample;
mod decomposition;
mod kernel;
mod report;
mod smoothing;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat, DEFAULT_TOLERANCES};
pub use report::{format_number, Provenance, Report, ReportRow, Tolerance, Verdict, CSV_HEADER};

use crate::error::Result;

/// Runs the configured experiment(s) and assembles the sorted report.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let mut rows = Vec::new();
    for kind in config.experiments() {
        rows.extend(run_one(kind, config)?);
    }
    Ok(Report::new(rows))
}

fn run_one(kind: ExperimentKind, config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    match kind {
        ExperimentKind::Kernel => kernel::run(config),
        ExperimentKind::Counterexample => counterexample::run(config),
        ExperimentKind::Smoothing => smoothing::run(config),
        ExperimentKind::Decomposition => decomposition::run(config),
        ExperimentKind::All => unreachable!("expanded by ExperimentConfig::experiments"),
    }
}

/// One generator per experiment so that runs do not depend on which others ran.
fn rng_for(config: &ExperimentConfig, kind: ExperimentKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed ^ ((kind as u64 + 1) << 32))
}

/// Row collector for one experiment.
struct Rows {
    experiment: &'static str,
    rows: Vec<ReportRow>,
}

impl Rows {
    fn new(experiment: &'static str) -> Rows {
        Rows {
            experiment,
            rows: Vec::new(),
        }
    }

    /// `|measured − reference|` against an absolute tolerance.
    #[allow(clippy::too_many_arguments)]
    fn abs(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, reference: f64, tol: f64, prov: Provenance, source: &str) {
        self.push(k, quantity, measured, Some(reference), prov, Tolerance::Abs(tol), source);
    }

    /// A residual that should vanish.
    fn residual(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, tol: f64, source: &str) {
        self.abs(k, quantity, measured, 0.0, tol, Provenance::Derived, source);
    }

    fn at_most(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, bound: f64, prov: Provenance, source: &str) {
        self.push(k, quantity, measured, None, prov, Tolerance::AtMost(bound), source);
    }

    fn above(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, bound: f64, prov: Provenance, source: &str) {
        self.push(k, quantity, measured, None, prov, Tolerance::Above(bound), source);
    }

    fn info(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, reference: Option<f64>, prov: Provenance, source: &str) {
        self.push(k, quantity, measured, reference, prov, Tolerance::Info, source);
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, k: Option<u32>, quantity: impl Into<String>, measured: f64, reference: Option<f64>, prov: Provenance, tol: Tolerance, source: &str) {
        self.rows.push(ReportRow::new(self.experiment, k, quantity, measured, reference, prov, tol, source));
    }

    fn finish(self) -> Vec<ReportRow> {
        self.rows
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Smallest successive difference; `None` for fewer than two values.
fn min_increment(values: &[f64]) -> Option<f64> {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .reduce(f64::min)
}

/// Points on a spiral inside `|x| ≤ radius`, deterministic and spread in angle.
fn test_points(count: usize, radius: f64) -> Vec<crate::geometry::Point> {
    (0..count)
        .map(|i| {
            let r = radius * (i as f64 + 1.0) / count as f64;
            crate::geometry::Point::polar(r, 0.3 + 2.399_963_229_728_653 * i as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [4.0, 8.0, 16.0, 32.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.5)).collect();
        assert!((log_log_slope(&xs, &ys) - 0.5).abs() < 1e-14);
        assert_eq!(min_increment(&[1.0, 3.0, 3.5]), Some(0.5));
        assert_eq!(min_increment(&[1.0]), None);
    }
}

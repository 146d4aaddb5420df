use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Kernel,
    Counterexample,
    Smoothing,
    Decomposition,
    All,
}

impl ExperimentKind {
    pub const SINGLE: [ExperimentKind; 4] = [
        ExperimentKind::Kernel,
        ExperimentKind::Counterexample,
        ExperimentKind::Smoothing,
        ExperimentKind::Decomposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Kernel => "kernel",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::Smoothing => "smoothing",
            ExperimentKind::Decomposition => "decomposition",
            ExperimentKind::All => "all",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<ExperimentKind> {
        match s {
            "kernel" => Ok(ExperimentKind::Kernel),
            "counterexample" => Ok(ExperimentKind::Counterexample),
            "smoothing" => Ok(ExperimentKind::Smoothing),
            "decomposition" => Ok(ExperimentKind::Decomposition),
            "all" => Ok(ExperimentKind::All),
            other => usage(format!(
                "unknown experiment `{other}` (kernel, counterexample, smoothing, decomposition, all)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = LabError;

    fn from_str(s: &str) -> Result<OutputFormat> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => usage(format!("unknown format `{other}` (csv, json)")),
        }
    }
}

/// Default tolerances, overridable per key from the config file.
pub const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("kernel_abs", 1e-12),
    ("kernel_rel", 1e-9),
    ("symmetry", 1e-13),
    ("kernel_harmonicity", 1e-6),
    ("center", 1e-14),
    ("mean_value", 1e-12),
    ("reproducing", 1e-6),
    ("reproducing_n3", 1e-8),
    ("projection_harmonicity", 1e-8),
    ("commutator", 1e-8),
    ("self_adjoint", 1e-8),
    ("idempotence", 1e-10),
    ("closed_norm", 1e-10),
    ("off_mode", 1e-8),
    ("route", 1e-8),
    ("analytic_coefficient", 1e-8),
    ("tangential_ratio", 1e-6),
    ("growth_exponent", 0.1),
    ("family_spread", 2.0),
    ("ftc", 1e-6),
    ("lemma", 1e-6),
    ("split", 1e-8),
    ("split_weight", 1e-12),
    ("flow_group", 1e-10),
    ("commutation", 1e-10),
    ("decomposition", 1e-6),
    ("slope", 0.1),
];

fn default_k_list() -> Vec<u32> {
    (1..=16).chain([32]).collect()
}

/// Everything an experiment run depends on. Read from a flat JSON object;
/// command-line flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    /// Counterexample orders; smoothing and decomposition use the members in
    /// `{1, 2}` and `{1, 2, 3}`.
    pub k_list: Vec<u32>,
    /// Disk rule `(n_r, n_θ)`.
    pub quad: Vec<usize>,
    /// Ball rule `(n_r, n_θ, n_φ)` for the three-dimensional checks.
    pub ball_quad: Vec<usize>,
    /// Disk rule `(n_r, min n_θ)` for the flow identities; `n_θ` grows with the mode.
    pub flow_quad: Vec<usize>,
    pub basis_degree: usize,
    pub eval_radius: f64,
    pub s_nodes: usize,
    pub kernel_pairs: usize,
    pub decomposition_m: Vec<u32>,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::All,
            n: 2,
            k_list: default_k_list(),
            quad: vec![160, 256],
            ball_quad: vec![32, 32, 64],
            flow_quad: vec![40, 32],
            basis_degree: 64,
            eval_radius: 0.7,
            s_nodes: 64,
            kernel_pairs: 10_000,
            decomposition_m: vec![0, 5, 8, 16, 32, 64],
            tolerances: BTreeMap::new(),
            seed: 20_240_601,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        serde_json::from_str(text).map_err(|e| LabError::Usage(format!("bad config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Tolerance for `key`, with file overrides applied.
    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| {
            DEFAULT_TOLERANCES
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no default tolerance for `{key}`"))
        })
    }

    /// Orders from `k_list` inside `allowed`, sorted and deduplicated.
    pub fn orders_in(&self, allowed: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .k_list
            .iter()
            .copied()
            .filter(|k| allowed.contains(k))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn experiments(&self) -> Vec<ExperimentKind> {
        match self.experiment {
            ExperimentKind::All => ExperimentKind::SINGLE.to_vec(),
            one => vec![one],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n) {
            return usage(format!("n must be 2 or 3, got {}", self.n));
        }
        if self.n == 3 && self.experiment != ExperimentKind::Kernel {
            return usage("only the kernel experiment runs in n = 3; the others live on the disk");
        }
        if self.k_list.is_empty() {
            return usage("k_list is empty");
        }
        if let Some(k) = self.k_list.iter().find(|k| !(1..=60).contains(*k)) {
            return usage(format!("k = {k} is outside [1, 60]"));
        }
        check_resolution("quad", &self.quad, &[8, 8])?;
        check_resolution("ball_quad", &self.ball_quad, &[4, 4, 8])?;
        check_resolution("flow_quad", &self.flow_quad, &[8, 8])?;
        if !(1..=256).contains(&self.basis_degree) {
            return usage(format!("basis_degree must be in 1..=256, got {}", self.basis_degree));
        }
        let needed = self.k_list.iter().max().copied().unwrap_or(0).max(32) as usize + 1;
        let runs_disk_modes = self
            .experiments()
            .iter()
            .any(|e| matches!(e, ExperimentKind::Counterexample | ExperimentKind::Smoothing));
        if runs_disk_modes && self.basis_degree < needed {
            return usage(format!(
                "basis_degree {} cannot hold the mode {needed} the counterexample needs",
                self.basis_degree
            ));
        }
        if !(self.eval_radius > 0.0 && self.eval_radius < 1.0) {
            return usage(format!("eval_radius must lie in (0, 1), got {}", self.eval_radius));
        }
        if self.eval_radius < 0.5 {
            return usage("eval_radius must cover the test points (|x| ≤ 0.5)");
        }
        if self.s_nodes < 4 {
            return usage("s_nodes must be at least 4");
        }
        if self.kernel_pairs == 0 {
            return usage("kernel_pairs must be positive");
        }
        if self.decomposition_m.is_empty() {
            return usage("decomposition_m is empty");
        }
        if self.decomposition_m.iter().any(|&m| m > 128) {
            return usage("decomposition_m entries must be ≤ 128");
        }
        for (key, value) in &self.tolerances {
            if !DEFAULT_TOLERANCES.iter().any(|(k, _)| k == key) {
                return usage(format!("unknown tolerance key `{key}`"));
            }
            if !(value.is_finite() && *value >= 0.0) {
                return usage(format!("tolerance `{key}` must be finite and ≥ 0"));
            }
        }
        Ok(())
    }
}

fn check_resolution(name: &str, values: &[usize], minimum: &[usize]) -> Result<()> {
    if values.len() != minimum.len() {
        return usage(format!("{name} needs {} entries, got {}", minimum.len(), values.len()));
    }
    for (v, m) in values.iter().zip(minimum) {
        if v < m {
            return usage(format!("{name} = {values:?} is below the minimum {minimum:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ExperimentConfig::from_json(r#"{"n": 2, "bogus": 1}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"n": 4}"#).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_json(r#"{"k_list": [0, 3]}"#).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_json(r#"{"tolerances": {"nope": 1e-3}}"#).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_json(r#"{"n": 3, "experiment": "smoothing"}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn orders_filter() {
        let c = ExperimentConfig::default();
        assert_eq!(c.orders_in(&[1, 2]), vec![1, 2]);
        assert_eq!(c.tol("kernel_abs"), 1e-12);
    }
}

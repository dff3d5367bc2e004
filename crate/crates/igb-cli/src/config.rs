//! Experiment configuration: a single TOML file per experiment, with
//! unknown keys rejected so typos cannot silently change a run. The same
//! structure is embedded, fully resolved, in every result manifest, and a
//! manifest can be fed back as `--config` to reproduce a run.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use igb_core::data::DataSpec;
use igb_core::metrics::FilterThresholds;
use igb_core::net::NetworkConfig;
use igb_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StaticEnsemble,
    GammaScan,
    TheoryTable,
    FilteredDynamics,
    DistTest,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::StaticEnsemble => "static-ensemble",
            ExperimentKind::GammaScan => "gamma-scan",
            ExperimentKind::TheoryTable => "theory-table",
            ExperimentKind::FilteredDynamics => "filtered-dynamics",
            ExperimentKind::DistTest => "dist-test",
        }
    }
}

/// Which layers to report variance ratios for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSelection {
    /// The literal string "all": layers 1..=L+1.
    All(String),
    Layers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    pub layers: LayerSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    /// Depths to tabulate predictions for.
    pub depths: Vec<usize>,
    /// BatchNorm batch sizes: "full" or integers.
    #[serde(default)]
    pub batch_sizes: Vec<igb_core::net::BnBatchSize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupName {
    Neutral,
    WeakPrejudice,
    DeepPrejudice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// Random initializations screened for the regime partition.
    pub screen_runs: usize,
    /// Trained runs per selected group (first seeds in seed order).
    pub per_group: usize,
    /// Which regime groups to train.
    pub groups: Vec<GroupName>,
    /// Held-out data; evaluated alongside training data when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<DataSpec>,
    /// Accuracy level defining the convergence time tau.
    #[serde(default = "default_tau_level")]
    pub tau_level: f64,
}

fn default_tau_level() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistTestSection {
    /// Batch size B for the leave-one-out estimator checks.
    pub batch_size_b: usize,
    /// Gaussian columns drawn for the distribution comparison.
    pub columns: usize,
    /// Draws for the rectified-moment Monte Carlo cross-check.
    #[serde(default = "default_relu_draws")]
    pub relu_draws: usize,
}

fn default_relu_draws() -> usize {
    1_000_000
}

/// One experiment, fully described. CLI flags and `IGB_*` environment
/// variables override `base_seed`, `runs`, `threads`, and `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<FilterThresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_test: Option<DistTestSection>,
}

/// A config file is either TOML, or a previously written `manifest.json`
/// whose embedded resolved config is reused verbatim.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{') {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| format!("{} is not valid JSON: {e}", path.display()))?;
        let resolved = manifest
            .get("resolved_config")
            .ok_or_else(|| format!("{} has no resolved_config field", path.display()))?;
        serde_json::from_value(resolved.clone())
            .map_err(|e| format!("embedded config in {} is invalid: {e}", path.display()))
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl ExperimentConfig {
    /// Validate everything the experiment kind requires, reporting all
    /// violations at once.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let need_network = !matches!(self.kind, ExperimentKind::DistTest | ExperimentKind::TheoryTable);
        if need_network {
            match &self.network {
                None => problems.push("missing [network] section".to_string()),
                Some(n) => {
                    if let Err(e) = n.validate() {
                        problems.push(e.to_string());
                    }
                }
            }
            match &self.data {
                None => problems.push("missing [data] section".to_string()),
                Some(d) => {
                    if let (Some(dim), Some(n)) = (d.dim_hint(), self.network.as_ref()) {
                        if n.validate().is_ok() && dim != n.input_dim {
                            problems.push(format!(
                                "data dim {dim} does not match network input_dim {}",
                                n.input_dim
                            ));
                        }
                    }
                }
            }
        }
        if let Some(t) = &self.thresholds {
            if let Err(e) = t.validate() {
                problems.push(e.to_string());
            }
        }
        match self.kind {
            ExperimentKind::StaticEnsemble | ExperimentKind::GammaScan => {
                match self.runs {
                    None => problems.push("runs is required".to_string()),
                    Some(r) if self.kind == ExperimentKind::GammaScan && r < 10 => {
                        problems.push(format!("gamma-scan needs runs >= 10, got {r}"))
                    }
                    Some(r) if r < 2 => problems.push(format!("runs must be >= 2, got {r}")),
                    _ => {}
                }
                if self.kind == ExperimentKind::GammaScan && self.gamma.is_none() {
                    problems.push("gamma-scan requires a [gamma] section".to_string());
                }
            }
            ExperimentKind::TheoryTable => match &self.theory {
                None => problems.push("theory-table requires a [theory] section".to_string()),
                Some(t) if t.depths.is_empty() => {
                    problems.push("theory.depths must not be empty".to_string())
                }
                _ => {}
            },
            ExperimentKind::FilteredDynamics => {
                if self.train.is_none() {
                    problems.push("filtered-dynamics requires a [train] section".to_string());
                }
                match &self.dynamics {
                    None => {
                        problems.push("filtered-dynamics requires a [dynamics] section".to_string())
                    }
                    Some(d) => {
                        if d.screen_runs < 2 {
                            problems.push("dynamics.screen_runs must be >= 2".to_string());
                        }
                        if d.per_group < 1 {
                            problems.push("dynamics.per_group must be >= 1".to_string());
                        }
                        if d.groups.is_empty() {
                            problems.push("dynamics.groups must not be empty".to_string());
                        }
                        if !(d.tau_level > 0.0 && d.tau_level < 1.0) {
                            problems.push(format!(
                                "dynamics.tau_level must lie in (0, 1), got {}",
                                d.tau_level
                            ));
                        }
                    }
                }
            }
            ExperimentKind::DistTest => match &self.dist_test {
                None => problems.push("dist-test requires a [dist_test] section".to_string()),
                Some(d) => {
                    if d.batch_size_b < 5 {
                        problems.push(format!(
                            "dist_test.batch_size_b must be >= 5 (moment formulas need B > 4), got {}",
                            d.batch_size_b
                        ));
                    }
                    if d.columns < 100 {
                        problems.push("dist_test.columns must be >= 100".to_string());
                    }
                }
            },
        }
        if let Some(g) = &self.gamma {
            match (&g.layers, &self.network) {
                (LayerSelection::All(tag), _) if tag != "all" => {
                    problems.push(format!("gamma.layers must be \"all\" or a list, got \"{tag}\""))
                }
                (LayerSelection::Layers(ls), Some(n)) if n.validate().is_ok() => {
                    let max = n.depth() + 1;
                    for &l in ls {
                        if l == 0 || l > max {
                            problems.push(format!("gamma layer {l} out of range 1..={max}"));
                        }
                    }
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Concrete layer list for gamma diagnostics.
    pub fn gamma_layers(&self) -> Option<Vec<usize>> {
        let g = self.gamma.as_ref()?;
        let net = self.network.as_ref()?;
        Some(match &g.layers {
            LayerSelection::All(_) => (1..=net.depth() + 1).collect(),
            LayerSelection::Layers(ls) => ls.clone(),
        })
    }
}

//! Ensemble Monte-Carlo estimation of guess-fraction distributions,
//! layer-wise variance ratios, initialization filtering, and statistical
//! comparison against closed-form predictions.
//!
//! Runs across seeds are independent and execute in parallel; results are
//! merged in seed order, so output never depends on scheduling. Static
//! ensembles always evaluate with full-batch normalization statistics;
//! the mini-batch estimators are exercised by dedicated distribution
//! tests.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataSpec;
use crate::error::{IgbError, Result};
use crate::net::{forward_node_moments, forward_outputs, predict, ForwardMode, Network, NetworkConfig};
use crate::net::init_network;
use crate::quad;
use crate::Dataset;

/// Distinct seed stream for data generation so data never reuses the
/// weight stream.
const DATA_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Network seed of ensemble run `run`: `base_seed + run`, so any single
/// run can be re-executed in isolation.
pub fn run_net_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

/// Data seed of ensemble run `run`; constant across runs when the dataset
/// is fixed.
pub fn run_data_seed(base_seed: u64, run: usize, fixed: bool) -> u64 {
    if fixed {
        base_seed ^ DATA_STREAM
    } else {
        base_seed.wrapping_add(run as u64) ^ DATA_STREAM
    }
}

/// Per-class guess fractions of one network on one dataset. Fractions are
/// exact ratios of integer counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GuessStats {
    pub counts: Vec<u64>,
    /// G_c = counts[c] / N.
    pub fractions: Vec<f64>,
    /// Fractions sorted in decreasing order.
    pub ranked: Vec<f64>,
    /// Class with the largest fraction; ties break to the lowest index.
    pub dominant_class: usize,
}

impl GuessStats {
    pub fn from_predictions(preds: &[usize], num_classes: usize) -> Result<Self> {
        if preds.is_empty() {
            return Err(IgbError::InsufficientSamples("no predictions".into()));
        }
        let mut counts = vec![0u64; num_classes];
        for &p in preds {
            if p >= num_classes {
                return Err(IgbError::Shape(format!(
                    "prediction {p} out of range for {num_classes} classes"
                )));
            }
            counts[p] += 1;
        }
        let n = preds.len() as f64;
        let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let mut ranked = fractions.clone();
        ranked.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let dominant_class = fractions
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        Ok(GuessStats {
            counts,
            fractions,
            ranked,
            dominant_class,
        })
    }

    /// G_0, the class-0 fraction.
    pub fn g0(&self) -> f64 {
        self.fractions[0]
    }

    /// The largest per-class fraction.
    pub fn max_fraction(&self) -> f64 {
        self.ranked[0]
    }
}

/// Guess fractions of `net` on `data`, evaluated with full-batch
/// normalization statistics (the static-experiment convention).
pub fn estimate_guess_stats(net: &Network, data: &Dataset) -> Result<GuessStats> {
    let outputs = forward_outputs(net, data.inputs.view(), ForwardMode::EvalBatch)?;
    let preds = predict(&outputs)?;
    GuessStats::from_predictions(&preds, net.config.num_classes)
}

/// Equal-width histogram.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges from `lo` to `hi`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &s in samples {
            let mut idx = ((s - lo) / width).floor() as isize;
            if idx < 0 {
                idx = 0;
            }
            if idx >= bins as isize {
                idx = bins as isize - 1;
            }
            counts[idx as usize] += 1;
        }
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Default histogram binning for guess fractions: 40 equal bins on [0, 1].
pub const G0_HISTOGRAM_BINS: usize = 40;

/// Per-run, per-layer sums over nodes of the dataset means and variances
/// of the pre-activations. These aggregate exactly into pooled
/// variance-ratio estimates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerMomentSums {
    pub layer: usize,
    pub n_nodes: usize,
    /// Σ_i ⟨h_i⟩
    pub sum_mean: f64,
    /// Σ_i ⟨h_i⟩²
    pub sum_mean_sq: f64,
    /// Σ_i Var_D(h_i)
    pub sum_var: f64,
}

/// One ensemble of independently initialized networks evaluated on
/// Gaussian inputs: the G0 samples, their histogram, and optional
/// per-layer moment diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config: NetworkConfig,
    pub data_spec: DataSpec,
    pub base_seed: u64,
    /// Network seed per run, in run order.
    pub seeds: Vec<u64>,
    /// G_0 per run (class-0 fraction, fixed labels).
    pub samples: Vec<f64>,
    /// Largest per-class fraction per run.
    pub ghat0: Vec<f64>,
    pub histogram: Histogram,
    /// Static ensembles always use full-batch normalization statistics;
    /// recorded so results are self-describing.
    pub full_batch_stats: bool,
    /// Per-run per-layer moment sums, when gamma diagnostics were
    /// requested (one inner vec per run, ordered by requested layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_diagnostics: Option<Vec<Vec<LayerMomentSums>>>,
}

impl EnsembleResult {
    /// Pooled variance-ratio report per requested layer, when diagnostics
    /// were recorded.
    pub fn gamma_reports(&self) -> Option<Vec<VarianceRatioReport>> {
        let diag = self.gamma_diagnostics.as_ref()?;
        if diag.is_empty() || diag[0].is_empty() {
            return None;
        }
        let n_layers = diag[0].len();
        let mut reports = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let per_run: Vec<&LayerMomentSums> = diag.iter().map(|r| &r[li]).collect();
            match pooled_gamma(&per_run) {
                Ok(rep) => reports.push(rep),
                Err(_) => return None,
            }
        }
        Some(reports)
    }
}

/// Monte-Carlo ensemble of the class-0 guess fraction under independent
/// initializations. Data is fresh per run or fixed across runs per the
/// spec flag.
pub fn ensemble_g0(
    config: &NetworkConfig,
    data_spec: &DataSpec,
    n_runs: usize,
    base_seed: u64,
) -> Result<EnsembleResult> {
    ensemble_g0_with_gamma(config, data_spec, n_runs, base_seed, None)
}

/// Like [`ensemble_g0`], optionally recording per-layer moment sums for
/// the requested layers (1..=L+1) alongside each run.
pub fn ensemble_g0_with_gamma(
    config: &NetworkConfig,
    data_spec: &DataSpec,
    n_runs: usize,
    base_seed: u64,
    gamma_layers: Option<&[usize]>,
) -> Result<EnsembleResult> {
    if n_runs < 2 {
        return Err(IgbError::InsufficientSamples(format!(
            "ensemble needs n_runs >= 2, got {n_runs}"
        )));
    }
    config.validate()?;
    if let Some(layers) = gamma_layers {
        let max = config.depth() + 1;
        if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > max) {
            return Err(IgbError::Config(format!(
                "gamma layer {bad} out of range 1..={max}"
            )));
        }
    }
    let fixed = data_spec.is_fixed();
    let shared = if fixed {
        Some(data_spec.realize(run_data_seed(base_seed, 0, true))?)
    } else {
        None
    };

    struct RunOut {
        seed: u64,
        g0: f64,
        ghat0: f64,
        moments: Option<Vec<LayerMomentSums>>,
    }

    let runs: Vec<Result<RunOut>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let seed = run_net_seed(base_seed, r);
            let net = init_network(config, seed)?;
            let local;
            let data = match &shared {
                Some(ds) => ds,
                None => {
                    local = data_spec.realize(run_data_seed(base_seed, r, false))?;
                    &local
                }
            };
            let (stats, moments) = match gamma_layers {
                None => {
                    let outputs =
                        forward_outputs(&net, data.inputs.view(), ForwardMode::EvalBatch)?;
                    let preds = predict(&outputs)?;
                    (
                        GuessStats::from_predictions(&preds, config.num_classes)?,
                        None,
                    )
                }
                Some(layers) => {
                    let (all, outputs) =
                        forward_node_moments(&net, data.inputs.view(), ForwardMode::EvalBatch)?;
                    let preds = predict(&outputs)?;
                    let sums = layers
                        .iter()
                        .map(|&l| moment_sums(&all[l - 1].mean, &all[l - 1].var, l))
                        .collect();
                    (
                        GuessStats::from_predictions(&preds, config.num_classes)?,
                        Some(sums),
                    )
                }
            };
            Ok(RunOut {
                seed,
                g0: stats.g0(),
                ghat0: stats.max_fraction(),
                moments,
            })
        })
        .collect();

    let mut seeds = Vec::with_capacity(n_runs);
    let mut samples = Vec::with_capacity(n_runs);
    let mut ghat0 = Vec::with_capacity(n_runs);
    let mut diags = gamma_layers.map(|_| Vec::with_capacity(n_runs));
    for run in runs {
        let run = run?;
        seeds.push(run.seed);
        samples.push(run.g0);
        ghat0.push(run.ghat0);
        if let (Some(d), Some(m)) = (diags.as_mut(), run.moments) {
            d.push(m);
        }
    }
    let histogram = Histogram::new(&samples, G0_HISTOGRAM_BINS, 0.0, 1.0);
    Ok(EnsembleResult {
        config: config.clone(),
        data_spec: data_spec.clone(),
        base_seed,
        seeds,
        samples,
        ghat0,
        histogram,
        full_batch_stats: true,
        gamma_diagnostics: diags,
    })
}

fn moment_sums(mean: &Array1<f64>, var: &Array1<f64>, layer: usize) -> LayerMomentSums {
    LayerMomentSums {
        layer,
        n_nodes: mean.len(),
        sum_mean: mean.sum(),
        sum_mean_sq: mean.iter().map(|m| m * m).sum(),
        sum_var: var.sum(),
    }
}

/// Layer-wise variance ratio estimate with its ingredients and errors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarianceRatioReport {
    pub layer: usize,
    pub n_runs: usize,
    pub n_nodes: usize,
    /// Variance, across runs and nodes pooled, of the per-node dataset
    /// means.
    pub var_w: f64,
    /// Mean, across runs and nodes, of the per-node dataset variances.
    pub var_d: f64,
    /// var_w / var_d, nodes pooled into the ensemble variance.
    pub gamma: f64,
    /// Audit estimate that averages per-node variances across runs
    /// instead of pooling nodes into one sample.
    pub gamma_per_node: f64,
    /// Leave-one-run-out jackknife standard error of `gamma`.
    pub jackknife_se: f64,
}

fn pooled_gamma(per_run: &[&LayerMomentSums]) -> Result<VarianceRatioReport> {
    let r = per_run.len();
    let n_nodes = per_run[0].n_nodes;
    let layer = per_run[0].layer;
    let total = (r * n_nodes) as f64;
    let sum_m: f64 = per_run.iter().map(|s| s.sum_mean).sum();
    let sum_m2: f64 = per_run.iter().map(|s| s.sum_mean_sq).sum();
    let sum_v: f64 = per_run.iter().map(|s| s.sum_var).sum();
    let gamma_of = |sm: f64, sm2: f64, sv: f64, count: f64| -> Result<f64> {
        let mean = sm / count;
        let var_w = (sm2 / count - mean * mean) * count / (count - 1.0);
        let var_d = sv / count;
        if var_d <= 0.0 {
            return Err(IgbError::DegenerateVariance(
                "zero dataset variance in gamma denominator".into(),
            ));
        }
        Ok(var_w / var_d)
    };
    let gamma = gamma_of(sum_m, sum_m2, sum_v, total)?;
    let var_d = sum_v / total;
    let mean = sum_m / total;
    let var_w = (sum_m2 / total - mean * mean) * total / (total - 1.0);

    // Jackknife over runs.
    let mut jack = Vec::with_capacity(r);
    for leave in 0..r {
        let s = per_run[leave];
        let count = total - n_nodes as f64;
        jack.push(gamma_of(
            sum_m - s.sum_mean,
            sum_m2 - s.sum_mean_sq,
            sum_v - s.sum_var,
            count,
        )?);
    }
    let jmean = jack.iter().sum::<f64>() / r as f64;
    let jackknife_se = ((r as f64 - 1.0) / r as f64
        * jack.iter().map(|g| (g - jmean) * (g - jmean)).sum::<f64>())
    .sqrt();

    Ok(VarianceRatioReport {
        layer,
        n_runs: r,
        n_nodes,
        var_w,
        var_d,
        gamma,
        gamma_per_node: f64::NAN, // filled by callers that kept per-node means
        jackknife_se,
    })
}

/// Estimate the variance ratio γ^(l) at the pre-activations of several
/// layers at once, over `n_runs` independent initializations.
///
/// For each run the per-node dataset mean and variance are computed; the
/// numerator pools nodes and runs into one sample (nodes are exchangeable
/// under the weight ensemble), the denominator averages the dataset
/// variances. A per-node-only numerator is reported alongside for audit.
pub fn estimate_gamma_scan(
    config: &NetworkConfig,
    data_spec: &DataSpec,
    n_runs: usize,
    base_seed: u64,
    layers: &[usize],
) -> Result<Vec<VarianceRatioReport>> {
    if n_runs < 10 {
        return Err(IgbError::InsufficientSamples(format!(
            "gamma estimation needs n_runs >= 10, got {n_runs}"
        )));
    }
    config.validate()?;
    let max = config.depth() + 1;
    if layers.is_empty() {
        return Err(IgbError::Config("no layers requested".into()));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > max) {
        return Err(IgbError::Config(format!(
            "gamma layer {bad} out of range 1..={max}"
        )));
    }
    let fixed = data_spec.is_fixed();
    let shared = if fixed {
        Some(data_spec.realize(run_data_seed(base_seed, 0, true))?)
    } else {
        None
    };
    // Per run, per requested layer: node means and vars.
    let per_run: Vec<Result<Vec<(Array1<f64>, Array1<f64>)>>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let net = init_network(config, run_net_seed(base_seed, r))?;
            let local;
            let data = match &shared {
                Some(ds) => ds,
                None => {
                    local = data_spec.realize(run_data_seed(base_seed, r, false))?;
                    &local
                }
            };
            let (all, _) = forward_node_moments(&net, data.inputs.view(), ForwardMode::EvalBatch)?;
            Ok(layers
                .iter()
                .map(|&l| (all[l - 1].mean.clone(), all[l - 1].var.clone()))
                .collect())
        })
        .collect();
    let per_run: Vec<Vec<(Array1<f64>, Array1<f64>)>> =
        per_run.into_iter().collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(layers.len());
    for (li, &layer) in layers.iter().enumerate() {
        let sums: Vec<LayerMomentSums> = per_run
            .iter()
            .map(|run| moment_sums(&run[li].0, &run[li].1, layer))
            .collect();
        let refs: Vec<&LayerMomentSums> = sums.iter().collect();
        let mut report = pooled_gamma(&refs)?;
        // Audit variant: variance across runs per node, averaged over nodes.
        let n_nodes = per_run[0][li].0.len();
        let r = n_runs as f64;
        let mut acc = 0.0;
        for node in 0..n_nodes {
            let vals: Vec<f64> = per_run.iter().map(|run| run[li].0[node]).collect();
            let m = vals.iter().sum::<f64>() / r;
            acc += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (r - 1.0);
        }
        report.gamma_per_node = (acc / n_nodes as f64) / report.var_d;
        reports.push(report);
    }
    Ok(reports)
}

/// Variance ratio at a single layer; see [`estimate_gamma_scan`].
pub fn estimate_gamma(
    config: &NetworkConfig,
    data_spec: &DataSpec,
    n_runs: usize,
    base_seed: u64,
    layer: usize,
) -> Result<VarianceRatioReport> {
    Ok(estimate_gamma_scan(config, data_spec, n_runs, base_seed, &[layer])?.remove(0))
}

/// Regime thresholds applied to the largest per-class fraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FilterThresholds {
    /// Neutral band half-width around the balanced fraction.
    #[serde(default = "default_neutral_halfwidth")]
    pub neutral_halfwidth: f64,
    /// Deep-prejudice threshold on the largest fraction.
    #[serde(default = "default_deep_threshold")]
    pub deep_threshold: f64,
}

fn default_neutral_halfwidth() -> f64 {
    0.05
}

fn default_deep_threshold() -> f64 {
    0.95
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            neutral_halfwidth: default_neutral_halfwidth(),
            deep_threshold: default_deep_threshold(),
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.neutral_halfwidth > 0.0
            && self.neutral_halfwidth < 0.5
            && self.deep_threshold > 0.5
            && self.deep_threshold < 1.0)
        {
            return Err(IgbError::Config(format!(
                "need 0 < neutral_halfwidth < 0.5 < deep_threshold < 1, got {} and {}",
                self.neutral_halfwidth, self.deep_threshold
            )));
        }
        Ok(())
    }
}

/// Initialization regime label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    Neutral,
    WeakPrejudice,
    DeepPrejudice,
}

/// Classify one run by its largest guess fraction.
pub fn classify_run(
    max_fraction: f64,
    num_classes: usize,
    thresholds: &FilterThresholds,
) -> RegimeLabel {
    let balanced = 1.0 / num_classes as f64;
    if max_fraction >= thresholds.deep_threshold {
        RegimeLabel::DeepPrejudice
    } else if (max_fraction - balanced).abs() <= thresholds.neutral_halfwidth {
        RegimeLabel::Neutral
    } else {
        RegimeLabel::WeakPrejudice
    }
}

/// Seeds of an ensemble partitioned by initialization regime. Empty
/// groups are allowed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegimePartition {
    pub neutral: Vec<u64>,
    pub weak_prejudice: Vec<u64>,
    pub deep_prejudice: Vec<u64>,
    pub thresholds: FilterThresholds,
}

/// Partition the ensemble's seeds into neutral / weak / deep prejudice by
/// the largest per-class fraction of each run.
pub fn filter_initializations(
    result: &EnsembleResult,
    thresholds: &FilterThresholds,
) -> Result<RegimePartition> {
    thresholds.validate()?;
    if result.seeds.is_empty() {
        return Err(IgbError::InsufficientSamples("empty ensemble".into()));
    }
    let mut part = RegimePartition {
        neutral: Vec::new(),
        weak_prejudice: Vec::new(),
        deep_prejudice: Vec::new(),
        thresholds: *thresholds,
    };
    for (&seed, &ghat) in result.seeds.iter().zip(&result.ghat0) {
        match classify_run(ghat, result.config.num_classes, thresholds) {
            RegimeLabel::Neutral => part.neutral.push(seed),
            RegimeLabel::WeakPrejudice => part.weak_prejudice.push(seed),
            RegimeLabel::DeepPrejudice => part.deep_prejudice.push(seed),
        }
    }
    Ok(part)
}

const KS_MIN_SAMPLES: usize = 20;

/// Kolmogorov–Smirnov statistic of `samples` against a cdf.
pub fn ks_statistic_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(IgbError::InsufficientSamples(format!(
            "KS needs >= {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    Ok(d)
}

/// KS statistic of `samples` against a density: the cdf is built by
/// cumulative Simpson quadrature of `pdf` on `[lo, hi]` with `grid`
/// panels, then interpolated linearly.
pub fn ks_statistic_pdf<F: Fn(f64) -> f64>(
    samples: &[f64],
    pdf: F,
    lo: f64,
    hi: f64,
    grid: usize,
) -> Result<f64> {
    let (xs, cum) = quad::cumulative(&pdf, lo, hi, grid);
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(IgbError::Domain("pdf integrates to zero on [lo, hi]".into()));
    }
    let cdf = move |x: f64| -> f64 {
        if x <= xs[0] {
            return 0.0;
        }
        if x >= *xs.last().unwrap() {
            return 1.0;
        }
        let w = (x - xs[0]) / (xs[1] - xs[0]);
        let i = (w.floor() as usize).min(xs.len() - 2);
        let frac = w - i as f64;
        ((1.0 - frac) * cum[i] + frac * cum[i + 1]) / total
    };
    ks_statistic_cdf(samples, cdf)
}

/// Two-sample KS statistic.
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < KS_MIN_SAMPLES || b.len() < KS_MIN_SAMPLES {
        return Err(IgbError::InsufficientSamples(format!(
            "KS needs >= {KS_MIN_SAMPLES} samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BnBatchSize, NormKind, NormPlacement};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(kind: NormKind, placement: NormPlacement, widths: Vec<usize>, d: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim: d,
            hidden_widths: widths,
            num_classes: 2,
            sigma_w2: 2.0,
            norm_kind: kind,
            placement,
            epsilon: 0.0,
            bn_batch: BnBatchSize::FullBatch,
            loo_estimators: false,
        }
    }

    #[test]
    fn guess_stats_exact_fractions() {
        let stats = GuessStats::from_predictions(&[0, 1, 1, 0, 1, 1, 1, 0], 2).unwrap();
        assert_eq!(stats.counts, vec![3, 5]);
        assert_relative_eq!(stats.g0(), 3.0 / 8.0);
        assert_eq!(stats.dominant_class, 1);
        assert_eq!(stats.ranked, vec![5.0 / 8.0, 3.0 / 8.0]);
        // N · G_c is an integer.
        for (&c, &f) in stats.counts.iter().zip(&stats.fractions) {
            assert_eq!(f * 8.0, c as f64);
        }
    }

    #[test]
    fn zero_output_weights_tie_to_class_zero() {
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![16], 8);
        let mut net = init_network(&c, 3).unwrap();
        net.weights[1].fill(0.0);
        let data = crate::data::unlabeled_gaussian(500, 8, 4).unwrap();
        let stats = estimate_guess_stats(&net, &data).unwrap();
        assert_eq!(stats.g0(), 1.0, "ties resolve to the lowest class index");
    }

    #[test]
    fn guess_stats_deterministic() {
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![64], 32);
        let net = init_network(&c, 17).unwrap();
        let data = crate::data::unlabeled_gaussian(4000, 32, 5).unwrap();
        let a = estimate_guess_stats(&net, &data).unwrap();
        let b = estimate_guess_stats(&net, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_row_swap_flips_g0() {
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![32], 16);
        let net = init_network(&c, 23).unwrap();
        let mut swapped = net.clone();
        let w = swapped.weights[1].clone();
        swapped.weights[1].row_mut(0).assign(&w.row(1));
        swapped.weights[1].row_mut(1).assign(&w.row(0));
        let data = crate::data::unlabeled_gaussian(2000, 16, 6).unwrap();
        let a = estimate_guess_stats(&net, &data).unwrap();
        let b = estimate_guess_stats(&swapped, &data).unwrap();
        assert_eq!(a.g0(), 1.0 - b.g0());
    }

    #[test]
    fn ensemble_is_reproducible_and_consistent() {
        let c = cfg(NormKind::LayerNorm, NormPlacement::PostActivation, vec![64], 32);
        let spec = DataSpec::unlabeled(1000, 32);
        let a = ensemble_g0(&c, &spec, 8, 99).unwrap();
        let b = ensemble_g0(&c, &spec, 8, 99).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.seeds.len(), a.samples.len());
        assert_eq!(a.histogram.total() as usize, a.samples.len());
        // Seeds follow base + run index.
        assert_eq!(a.seeds[0], 99);
        assert_eq!(a.seeds[7], 106);
    }

    #[test]
    fn ensemble_fixed_data_shares_dataset() {
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![16], 8);
        let mut spec = DataSpec::unlabeled(200, 8);
        spec.fixed = true;
        let a = ensemble_g0(&c, &spec, 4, 7).unwrap();
        // Same seeds, same fixed data: identical samples on re-run.
        let b = ensemble_g0(&c, &spec, 4, 7).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn post_norm_ensemble_centers_near_half() {
        let c = cfg(NormKind::LayerNorm, NormPlacement::PostActivation, vec![200], 50);
        let spec = DataSpec::unlabeled(2000, 50);
        let res = ensemble_g0(&c, &spec, 50, 1234).unwrap();
        let mean = res.samples.iter().sum::<f64>() / res.samples.len() as f64;
        let var = res
            .samples
            .iter()
            .map(|g| (g - mean) * (g - mean))
            .sum::<f64>()
            / (res.samples.len() as f64 - 1.0);
        let se = (var / res.samples.len() as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se.max(0.005),
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn gamma_scan_layer_one_near_zero_no_norm() {
        // Standardized i.i.d. inputs at l = 1 with no norm: centers vanish.
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![100], 200);
        let spec = DataSpec::unlabeled(4000, 200);
        let rep = estimate_gamma(&c, &spec, 40, 5, 1).unwrap();
        assert!(rep.gamma.abs() < 0.02, "gamma = {}", rep.gamma);
        assert!(rep.jackknife_se.is_finite());
    }

    #[test]
    fn gamma_requires_enough_runs() {
        let c = cfg(NormKind::None, NormPlacement::Absent, vec![8], 4);
        let spec = DataSpec::unlabeled(100, 4);
        assert!(estimate_gamma(&c, &spec, 9, 5, 1).is_err());
        assert!(estimate_gamma(&c, &spec, 10, 5, 5).is_err(), "layer out of range");
    }

    #[test]
    fn filter_classification_rules() {
        let t = FilterThresholds::default();
        assert_eq!(classify_run(0.5, 2, &t), RegimeLabel::Neutral);
        assert_eq!(classify_run(0.54, 2, &t), RegimeLabel::Neutral);
        // G0 = 0.03 means the other class holds 0.97: deep prejudice.
        assert_eq!(classify_run(0.97, 2, &t), RegimeLabel::DeepPrejudice);
        assert_eq!(classify_run(0.7, 2, &t), RegimeLabel::WeakPrejudice);
        // Multiclass: the band sits around 1/N_C.
        assert_eq!(classify_run(0.27, 4, &t), RegimeLabel::Neutral);
        assert_eq!(classify_run(0.5, 4, &t), RegimeLabel::WeakPrejudice);

        let bad = FilterThresholds {
            neutral_halfwidth: 0.6,
            deep_threshold: 0.95,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ks_identical_samples_zero() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(ks_statistic_two_sample(&xs, &xs).unwrap(), 0.0);
    }

    #[test]
    fn ks_uniform_vs_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();
        // Point mass at 0.5: cdf is a step.
        let d = ks_statistic_cdf(&xs, |x| if x < 0.5 { 0.0 } else { 1.0 }).unwrap();
        assert!((d - 0.5).abs() < 0.02, "d = {d}");
    }

    #[test]
    fn ks_self_consistency_against_pdf() {
        // Draws from G0 = Φ(Z), Z ~ N(0, γ), against the closed-form
        // density via quadrature.
        let gamma: f64 = 0.4669;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                crate::special::std_normal_cdf(z * gamma.sqrt())
            })
            .collect();
        let d = ks_statistic_pdf(
            &samples,
            |g| crate::theory::g0_pdf_from_gamma(g, gamma).unwrap(),
            1e-9,
            1.0 - 1e-9,
            200_000,
        )
        .unwrap();
        assert!(d < 0.03, "d = {d}");
    }

    #[test]
    fn ks_requires_samples() {
        let xs = vec![0.5; 10];
        assert!(ks_statistic_cdf(&xs, |_| 0.5).is_err());
    }
}

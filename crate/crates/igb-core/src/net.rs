//! ReLU MLPs with configurable normalization kind and placement, plus
//! deterministic forward propagation over batches.
//!
//! A [`Network`] is immutable after construction; forward passes are pure,
//! so disjoint batches can be processed concurrently. Batch-statistics
//! normalization never stores state in the network: train-mode statistics
//! live in the returned trace, and eval-time running statistics are passed
//! in explicitly by the caller (the trainer owns them).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IgbError, Result};

/// Which normalization a layer applies. `RmsNorm` differs from
/// `LayerNorm` only by omitting mean subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    None,
    BatchNorm,
    LayerNorm,
    RmsNorm,
}

/// Where the normalization sits relative to the ReLU inside a block.
/// `Absent` if and only if the kind is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    PreActivation,
    PostActivation,
    Absent,
}

/// Batch scope for BatchNorm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnBatchSize {
    /// Statistics over the whole batch handed to `forward` (the static
    /// experiment setting, where estimators are deterministic).
    FullBatch,
    /// Statistics over mini-batches of exactly this many rows.
    MiniBatch(usize),
}

impl Serialize for BnBatchSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BnBatchSize::FullBatch => s.serialize_str("full"),
            BnBatchSize::MiniBatch(b) => s.serialize_u64(*b as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BnBatchSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Size(usize),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Size(b) => Ok(BnBatchSize::MiniBatch(b)),
            Repr::Tag(t) if t == "full" => Ok(BnBatchSize::FullBatch),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "bn_batch must be \"full\" or an integer, got \"{t}\""
            ))),
        }
    }
}

/// Architecture description: dimensions, weight variance, and the
/// normalization scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    /// Weight variance scale: W_ij ~ N(0, sigma_w2 / fan_in).
    #[serde(default = "default_sigma_w2")]
    pub sigma_w2: f64,
    pub norm_kind: NormKind,
    pub placement: NormPlacement,
    /// Stability constant inside the normalizer square root. 0 in
    /// theory/ensemble settings, 1e-5 recommended for training.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_bn_batch")]
    pub bn_batch: BnBatchSize,
    /// Use leave-one-out BatchNorm estimators in train mode.
    #[serde(default)]
    pub loo_estimators: bool,
}

fn default_sigma_w2() -> f64 {
    2.0
}

fn default_bn_batch() -> BnBatchSize {
    BnBatchSize::FullBatch
}

impl NetworkConfig {
    /// Number of hidden layers L.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Widths of every activation layer: [d, n_1, ..., n_L, num_classes].
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.depth() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.num_classes);
        w
    }

    pub fn has_norm(&self) -> bool {
        self.norm_kind != NormKind::None
    }

    /// Check every invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_dim < 1 {
            problems.push("input_dim must be >= 1".to_string());
        }
        if self.hidden_widths.is_empty() {
            problems.push("hidden_widths must contain at least one layer".to_string());
        }
        for (l, &w) in self.hidden_widths.iter().enumerate() {
            if w < 1 {
                problems.push(format!("hidden_widths[{l}] must be >= 1, got {w}"));
            }
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(self.sigma_w2 > 0.0) {
            problems.push(format!("sigma_w2 must be > 0, got {}", self.sigma_w2));
        }
        if !(self.epsilon >= 0.0) {
            problems.push(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        match (self.norm_kind, self.placement) {
            (NormKind::None, NormPlacement::Absent) => {}
            (NormKind::None, p) => {
                problems.push(format!(
                    "placement must be absent when norm_kind is none, got {p:?}"
                ));
            }
            (k, NormPlacement::Absent) => {
                problems.push(format!("placement required for norm_kind {k:?}"));
            }
            _ => {}
        }
        if let BnBatchSize::MiniBatch(b) = self.bn_batch {
            if self.norm_kind == NormKind::BatchNorm {
                if b < 2 {
                    problems.push(format!("mini-batch BN needs B >= 2, got {b}"));
                }
                if self.loo_estimators && b < 3 {
                    problems.push(format!(
                        "leave-one-out BN needs B >= 3 (variance over B-1 residual samples), got {b}"
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IgbError::Config(problems.join("; ")))
        }
    }
}

/// A concrete weight realization of a [`NetworkConfig`].
///
/// Weight matrix `weights[l]` has shape (n_{l+1}, n_l) and maps layer l's
/// outputs to layer l+1's pre-activations. Biases are zero at
/// initialization; norm scale is 1 and shift is 0.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Per-node scale for each normalized hidden layer (empty when no norm).
    pub norm_scale: Vec<Array1<f64>>,
    /// Per-node shift for each normalized hidden layer.
    pub norm_shift: Vec<Array1<f64>>,
}

/// Draw a network with W_ij ~ N(0, sigma_w2 / fan_in), i.i.d.,
/// deterministic per seed. The output layer is included.
pub fn init_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let widths = config.layer_widths();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(widths.len() - 1);
    let mut biases = Vec::with_capacity(widths.len() - 1);
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let std = (config.sigma_w2 / fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        });
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    let (norm_scale, norm_shift) = if config.has_norm() {
        (
            config.hidden_widths.iter().map(|&n| Array1::ones(n)).collect(),
            config.hidden_widths.iter().map(|&n| Array1::zeros(n)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Network {
        config: config.clone(),
        weights,
        biases,
        norm_scale,
        norm_shift,
    })
}

/// Eval-time BatchNorm statistics, owned by the trainer.
#[derive(Debug, Clone)]
pub struct BnRunningStats {
    /// Per normalized hidden layer: running mean per node.
    pub mean: Vec<Array1<f64>>,
    /// Per normalized hidden layer: running variance per node.
    pub var: Vec<Array1<f64>>,
}

impl BnRunningStats {
    /// Fresh statistics: mean 0, variance 1.
    pub fn init(config: &NetworkConfig) -> Self {
        BnRunningStats {
            mean: config.hidden_widths.iter().map(|&n| Array1::zeros(n)).collect(),
            var: config.hidden_widths.iter().map(|&n| Array1::ones(n)).collect(),
        }
    }
}

/// How normalization statistics are obtained during a forward pass.
///
/// LayerNorm/RMSNorm always use per-sample statistics; the mode only
/// changes BatchNorm behavior.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode<'a> {
    /// Current-batch statistics (leave-one-out if configured). Requires
    /// the batch to have exactly B rows under mini-batch BN.
    Train,
    /// Statistics of the batch itself, standard estimators. This is the
    /// static-experiment setting (full-batch deterministic estimators).
    EvalBatch,
    /// Stored running statistics (BatchNorm only).
    EvalRunning(&'a BnRunningStats),
}

/// Cached quantities a backward pass needs from one normalization stage.
#[derive(Debug, Clone)]
pub enum NormCache {
    /// Standard batch statistics: per-node mean and 1/sqrt(var + eps).
    BatchStd {
        mean: Array1<f64>,
        inv_std: Array1<f64>,
        xhat: Array2<f64>,
    },
    /// Leave-one-out statistics, one per (sample, node).
    BatchLoo {
        raw: Array2<f64>,
        means: Array2<f64>,
        inv_stds: Array2<f64>,
        xhat: Array2<f64>,
    },
    /// Running statistics (no gradient flows into them).
    BatchRunning {
        inv_std: Array1<f64>,
        xhat: Array2<f64>,
    },
    /// LayerNorm: per-sample 1/sqrt(var + eps).
    Layer {
        inv_std: Array1<f64>,
        xhat: Array2<f64>,
    },
    /// RMSNorm: per-sample 1/sqrt(mean-square + eps).
    Rms {
        inv_rms: Array1<f64>,
        xhat: Array2<f64>,
    },
}

/// Everything recorded for one hidden layer during a traced forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Dense output h^(l), before any normalization or activation.
    pub pre_act: Array2<f64>,
    /// Values right after the normalization stage (with scale/shift),
    /// wherever it is placed. `None` when the network has no norm.
    pub normed: Option<Array2<f64>>,
    /// Values right after the ReLU.
    pub activated: Array2<f64>,
    pub norm_cache: Option<NormCache>,
}

impl LayerTrace {
    /// The block output that feeds the next dense layer.
    pub fn block_output(&self, placement: NormPlacement) -> &Array2<f64> {
        match placement {
            // Post-activation: norm comes last.
            NormPlacement::PostActivation => self.normed.as_ref().unwrap(),
            _ => &self.activated,
        }
    }
}

/// Full record of a forward pass. The output layer is purely linear:
/// `outputs` carries no activation and no normalization.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The batch the pass consumed (the backward pass needs it for the
    /// first-layer weight gradient).
    pub inputs: Array2<f64>,
    pub layers: Vec<LayerTrace>,
    pub outputs: Array2<f64>,
}

fn dense(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut h = x.dot(&w.t());
    h += b;
    h
}

/// Normalize `x` per the config, returning the scaled/shifted result and,
/// when requested, the cache for the backward pass.
fn norm_stage(
    config: &NetworkConfig,
    layer: usize,
    alpha: &Array1<f64>,
    beta: &Array1<f64>,
    x: &Array2<f64>,
    mode: ForwardMode<'_>,
    want_cache: bool,
) -> Result<(Array2<f64>, Option<NormCache>)> {
    let eps = config.epsilon;
    let rows = x.nrows() as f64;
    match config.norm_kind {
        NormKind::None => unreachable!("norm_stage called without a norm"),
        NormKind::BatchNorm => {
            if let ForwardMode::EvalRunning(stats) = mode {
                let mean = &stats.mean[layer];
                let inv_std = stats.var[layer].mapv(|v| 1.0 / (v + eps).sqrt());
                let xhat = (x - mean) * &inv_std;
                let out = &xhat * alpha + beta;
                let cache = want_cache.then(|| NormCache::BatchRunning {
                    inv_std,
                    xhat: xhat.clone(),
                });
                return Ok((out, cache));
            }
            let use_loo = matches!(mode, ForwardMode::Train) && config.loo_estimators;
            if use_loo {
                let b = x.nrows();
                if b < 3 {
                    return Err(IgbError::InsufficientSamples(format!(
                        "leave-one-out BN needs B >= 3 rows, got {b}"
                    )));
                }
                let m = (b - 1) as f64;
                let sum = x.sum_axis(Axis(0));
                let sum_sq = x.mapv(|v| v * v).sum_axis(Axis(0));
                let mut means = Array2::zeros(x.raw_dim());
                let mut inv_stds = Array2::zeros(x.raw_dim());
                let mut xhat = Array2::zeros(x.raw_dim());
                for a in 0..b {
                    for j in 0..x.ncols() {
                        let v = x[[a, j]];
                        let mu = (sum[j] - v) / m;
                        let var = ((sum_sq[j] - v * v) / m - mu * mu).max(0.0);
                        let denom_sq = var + eps;
                        if denom_sq <= 0.0 {
                            return Err(IgbError::DegenerateVariance(format!(
                                "LOO BN residual variance zero at layer {layer}, node {j}, eps = 0"
                            )));
                        }
                        let inv = 1.0 / denom_sq.sqrt();
                        means[[a, j]] = mu;
                        inv_stds[[a, j]] = inv;
                        xhat[[a, j]] = (v - mu) * inv;
                    }
                }
                let out = &xhat * alpha + beta;
                let cache = want_cache.then(|| NormCache::BatchLoo {
                    raw: x.clone(),
                    means,
                    inv_stds,
                    xhat: xhat.clone(),
                });
                return Ok((out, cache));
            }
            if x.nrows() < 2 {
                return Err(IgbError::InsufficientSamples(
                    "batch statistics need B >= 2 rows".into(),
                ));
            }
            let mean = x.sum_axis(Axis(0)) / rows;
            let centered = x - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / rows;
            if var.iter().any(|&v| v + eps <= 0.0) {
                return Err(IgbError::DegenerateVariance(format!(
                    "BN column variance zero at layer {layer} with eps = 0"
                )));
            }
            let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
            let xhat = centered * &inv_std;
            let out = &xhat * alpha + beta;
            let cache = want_cache.then(|| NormCache::BatchStd {
                mean,
                inv_std,
                xhat: xhat.clone(),
            });
            Ok((out, cache))
        }
        NormKind::LayerNorm | NormKind::RmsNorm => {
            let subtract_mean = config.norm_kind == NormKind::LayerNorm;
            let n = x.ncols();
            if subtract_mean && n < 2 {
                return Err(IgbError::Shape("LayerNorm needs layer width >= 2".into()));
            }
            let cols = n as f64;
            let mut xhat = x.clone();
            let mut inv_scale = Array1::zeros(x.nrows());
            for (a, mut row) in xhat.rows_mut().into_iter().enumerate() {
                let denom_sq = if subtract_mean {
                    let mean = row.sum() / cols;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
                    row.mapv_inplace(|v| v - mean);
                    var + eps
                } else {
                    row.iter().map(|v| v * v).sum::<f64>() / cols + eps
                };
                if denom_sq <= 0.0 {
                    return Err(IgbError::DegenerateVariance(format!(
                        "layer statistics degenerate at layer {layer}, sample {a}, eps = 0"
                    )));
                }
                let inv = 1.0 / denom_sq.sqrt();
                row.mapv_inplace(|v| v * inv);
                inv_scale[a] = inv;
            }
            let out = &xhat * alpha + beta;
            let cache = want_cache.then(|| {
                if subtract_mean {
                    NormCache::Layer {
                        inv_std: inv_scale,
                        xhat: xhat.clone(),
                    }
                } else {
                    NormCache::Rms {
                        inv_rms: inv_scale,
                        xhat: xhat.clone(),
                    }
                }
            });
            Ok((out, cache))
        }
    }
}

fn relu_matrix(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Per-column mean and biased variance in two passes, no temporaries.
fn column_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let rows = x.nrows() as f64;
    let n = x.ncols();
    let mut mean = Array1::<f64>::zeros(n);
    for row in x.rows() {
        mean += &row;
    }
    mean /= rows;
    let mut var = Array1::<f64>::zeros(n);
    for row in x.rows() {
        for (v, (&xv, &m)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
            let c = xv - m;
            *v += c * c;
        }
    }
    var /= rows;
    (mean, var)
}

/// Normalize `x` in place per the config; the allocation-free twin of
/// [`norm_stage`] for paths that do not need backward caches.
fn norm_stage_inplace(
    config: &NetworkConfig,
    layer: usize,
    alpha: &Array1<f64>,
    beta: &Array1<f64>,
    mut x: Array2<f64>,
    mode: ForwardMode<'_>,
) -> Result<Array2<f64>> {
    let eps = config.epsilon;
    match config.norm_kind {
        NormKind::None => unreachable!("norm_stage_inplace called without a norm"),
        NormKind::BatchNorm => {
            if let ForwardMode::EvalRunning(stats) = mode {
                let mean = &stats.mean[layer];
                let scale: Vec<f64> = stats.var[layer]
                    .iter()
                    .zip(alpha.iter())
                    .map(|(&v, &a)| a / (v + eps).sqrt())
                    .collect();
                for mut row in x.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v - mean[j]) * scale[j] + beta[j];
                    }
                }
                return Ok(x);
            }
            if matches!(mode, ForwardMode::Train) && config.loo_estimators {
                let b = x.nrows();
                if b < 3 {
                    return Err(IgbError::InsufficientSamples(format!(
                        "leave-one-out BN needs B >= 3 rows, got {b}"
                    )));
                }
                let m = (b - 1) as f64;
                let sum = x.sum_axis(Axis(0));
                let sum_sq = x.mapv(|v| v * v).sum_axis(Axis(0));
                for mut row in x.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let mu = (sum[j] - *v) / m;
                        let var = ((sum_sq[j] - *v * *v) / m - mu * mu).max(0.0);
                        let denom_sq = var + eps;
                        if denom_sq <= 0.0 {
                            return Err(IgbError::DegenerateVariance(format!(
                                "LOO BN residual variance zero at layer {layer}, node {j}, eps = 0"
                            )));
                        }
                        *v = (*v - mu) / denom_sq.sqrt() * alpha[j] + beta[j];
                    }
                }
                return Ok(x);
            }
            if x.nrows() < 2 {
                return Err(IgbError::InsufficientSamples(
                    "batch statistics need B >= 2 rows".into(),
                ));
            }
            let (mean, var) = column_stats(&x);
            if var.iter().any(|&v| v + eps <= 0.0) {
                return Err(IgbError::DegenerateVariance(format!(
                    "BN column variance zero at layer {layer} with eps = 0"
                )));
            }
            let scale: Vec<f64> = var
                .iter()
                .zip(alpha.iter())
                .map(|(&v, &a)| a / (v + eps).sqrt())
                .collect();
            for mut row in x.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean[j]) * scale[j] + beta[j];
                }
            }
            Ok(x)
        }
        NormKind::LayerNorm | NormKind::RmsNorm => {
            let subtract_mean = config.norm_kind == NormKind::LayerNorm;
            let n = x.ncols();
            if subtract_mean && n < 2 {
                return Err(IgbError::Shape("LayerNorm needs layer width >= 2".into()));
            }
            let cols = n as f64;
            for (a, mut row) in x.rows_mut().into_iter().enumerate() {
                let (shift, denom_sq) = if subtract_mean {
                    let mean = row.sum() / cols;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
                    (mean, var + eps)
                } else {
                    (0.0, row.iter().map(|v| v * v).sum::<f64>() / cols + eps)
                };
                if denom_sq <= 0.0 {
                    return Err(IgbError::DegenerateVariance(format!(
                        "layer statistics degenerate at layer {layer}, sample {a}, eps = 0"
                    )));
                }
                let inv = 1.0 / denom_sq.sqrt();
                for (i, v) in row.iter_mut().enumerate() {
                    *v = (*v - shift) * inv * alpha[i] + beta[i];
                }
            }
            Ok(x)
        }
    }
}

fn check_input(net: &Network, x: &ArrayView2<f64>, mode: &ForwardMode<'_>) -> Result<()> {
    if x.ncols() != net.config.input_dim {
        return Err(IgbError::Shape(format!(
            "batch has {} columns, network expects {}",
            x.ncols(),
            net.config.input_dim
        )));
    }
    if x.nrows() == 0 {
        return Err(IgbError::Shape("empty batch".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IgbError::NonFinite("forward input".into()));
    }
    if matches!(mode, ForwardMode::Train)
        && net.config.norm_kind == NormKind::BatchNorm
    {
        if let BnBatchSize::MiniBatch(b) = net.config.bn_batch {
            if x.nrows() != b {
                return Err(IgbError::Shape(format!(
                    "train-mode mini-batch BN expects exactly B = {b} rows, got {}",
                    x.nrows()
                )));
            }
        }
    }
    Ok(())
}

/// Forward pass recording per-layer values and normalization caches.
/// Memory scales with batch × width × depth; ensemble-scale passes should
/// use [`forward_outputs`] or [`forward_node_moments`] instead.
pub fn forward(net: &Network, batch: ArrayView2<f64>, mode: ForwardMode<'_>) -> Result<ForwardTrace> {
    check_input(net, &batch, &mode)?;
    let cfg = &net.config;
    let depth = cfg.depth();
    let mut layers = Vec::with_capacity(depth);
    let mut current = batch.to_owned();
    for l in 0..depth {
        let pre_act = dense(&current, &net.weights[l], &net.biases[l]);
        let (normed, activated, cache) = match cfg.placement {
            NormPlacement::Absent => (None, relu_matrix(&pre_act), None),
            NormPlacement::PreActivation => {
                let (nrm, cache) = norm_stage(
                    cfg,
                    l,
                    &net.norm_scale[l],
                    &net.norm_shift[l],
                    &pre_act,
                    mode,
                    true,
                )?;
                let act = relu_matrix(&nrm);
                (Some(nrm), act, cache)
            }
            NormPlacement::PostActivation => {
                let act = relu_matrix(&pre_act);
                let (nrm, cache) = norm_stage(
                    cfg,
                    l,
                    &net.norm_scale[l],
                    &net.norm_shift[l],
                    &act,
                    mode,
                    true,
                )?;
                (Some(nrm), act, cache)
            }
        };
        let trace = LayerTrace {
            pre_act,
            normed,
            activated,
            norm_cache: cache,
        };
        current = trace.block_output(cfg.placement).clone();
        layers.push(trace);
    }
    let outputs = dense(&current, &net.weights[depth], &net.biases[depth]);
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(IgbError::NonFinite("forward outputs".into()));
    }
    Ok(ForwardTrace {
        inputs: batch.to_owned(),
        layers,
        outputs,
    })
}

/// Forward pass keeping only what the next layer needs; `observe` is
/// called with each layer's pre-activations (hidden layers 1..=L and the
/// output layer L+1) before they are consumed.
fn propagate<F: FnMut(usize, &Array2<f64>)>(
    net: &Network,
    batch: ArrayView2<f64>,
    mode: ForwardMode<'_>,
    mut observe: F,
) -> Result<Array2<f64>> {
    check_input(net, &batch, &mode)?;
    let cfg = &net.config;
    let depth = cfg.depth();
    let mut current = batch.to_owned();
    for l in 0..depth {
        let mut h = dense(&current, &net.weights[l], &net.biases[l]);
        observe(l + 1, &h);
        current = match cfg.placement {
            NormPlacement::Absent => {
                relu_inplace(&mut h);
                h
            }
            NormPlacement::PreActivation => {
                let mut z = norm_stage_inplace(
                    cfg,
                    l,
                    &net.norm_scale[l],
                    &net.norm_shift[l],
                    h,
                    mode,
                )?;
                relu_inplace(&mut z);
                z
            }
            NormPlacement::PostActivation => {
                relu_inplace(&mut h);
                norm_stage_inplace(cfg, l, &net.norm_scale[l], &net.norm_shift[l], h, mode)?
            }
        };
    }
    let outputs = dense(&current, &net.weights[depth], &net.biases[depth]);
    observe(depth + 1, &outputs);
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(IgbError::NonFinite("forward outputs".into()));
    }
    Ok(outputs)
}

/// Outputs only, with memory bounded by two layer buffers.
pub fn forward_outputs(
    net: &Network,
    batch: ArrayView2<f64>,
    mode: ForwardMode<'_>,
) -> Result<Array2<f64>> {
    propagate(net, batch, mode, |_, _| {})
}

/// Per-node batch mean and biased variance of one layer's pre-activations.
#[derive(Debug, Clone)]
pub struct NodeMoments {
    /// Layer index: 1..=L for hidden pre-activations, L+1 for outputs.
    pub layer: usize,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Forward pass that records, for every layer l = 1..=L+1, the per-node
/// mean and biased variance of the pre-activations over the batch.
pub fn forward_node_moments(
    net: &Network,
    batch: ArrayView2<f64>,
    mode: ForwardMode<'_>,
) -> Result<(Vec<NodeMoments>, Array2<f64>)> {
    let mut moments = Vec::with_capacity(net.config.depth() + 1);
    let outputs = propagate(net, batch, mode, |layer, pre| {
        let rows = pre.nrows() as f64;
        let mean = pre.sum_axis(Axis(0)) / rows;
        let var = (pre - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / rows;
        moments.push(NodeMoments { layer, mean, var });
    })?;
    Ok((moments, outputs))
}

/// Per-layer batch statistics of the values each BatchNorm stage
/// normalizes (pre-activations under pre-placement, rectified values under
/// post-placement), computed with full-batch estimators. Used to prime
/// eval-time running statistics. Empty unless the network uses BatchNorm.
pub fn bn_input_stats(
    net: &Network,
    batch: ArrayView2<f64>,
) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    if net.config.norm_kind != NormKind::BatchNorm {
        return Ok(Vec::new());
    }
    check_input(net, &batch, &ForwardMode::EvalBatch)?;
    let cfg = &net.config;
    let mut stats = Vec::with_capacity(cfg.depth());
    let mut current = batch.to_owned();
    let rows = current.nrows() as f64;
    for l in 0..cfg.depth() {
        let pre_act = dense(&current, &net.weights[l], &net.biases[l]);
        let norm_input = match cfg.placement {
            NormPlacement::PreActivation => pre_act.clone(),
            NormPlacement::PostActivation => relu_matrix(&pre_act),
            NormPlacement::Absent => unreachable!(),
        };
        let mean = norm_input.sum_axis(Axis(0)) / rows;
        let var = (&norm_input - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / rows;
        stats.push((mean, var));
        let (nrm, _) = norm_stage(
            cfg,
            l,
            &net.norm_scale[l],
            &net.norm_shift[l],
            &norm_input,
            ForwardMode::EvalBatch,
            false,
        )?;
        current = match cfg.placement {
            NormPlacement::PreActivation => relu_matrix(&nrm),
            _ => nrm,
        };
    }
    Ok(stats)
}

/// Arg-max class per row; ties break toward the lowest class index.
pub fn predict(outputs: &Array2<f64>) -> Result<Vec<usize>> {
    if outputs.nrows() == 0 {
        return Err(IgbError::Shape("predict on empty batch".into()));
    }
    if outputs.ncols() < 2 {
        return Err(IgbError::Shape(format!(
            "predict needs >= 2 classes, got {}",
            outputs.ncols()
        )));
    }
    Ok(outputs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_val = row[0];
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > best_val {
                    best = c;
                    best_val = v;
                }
            }
            best
        })
        .collect())
}

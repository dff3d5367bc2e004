//! Standalone normalization and activation primitives.
//!
//! These operate on plain slices so their distributional properties can be
//! tested in isolation from networks. Conventions:
//!
//! * `batch_norm` uses the biased (divide-by-B) variance.
//! * `batch_norm_loo` drops the sample being normalized from its own
//!   estimators; mean and variance are taken over the remaining B−1
//!   values, with the variance divided by B−1. This makes each sample
//!   independent of its normalizer for Gaussian columns.
//! * Trainable scale/shift are applied by the caller, not here.
//!
//! A zero denominator with eps = 0 is an error, not a silent zero.

use crate::error::{IgbError, Result};

/// Estimator kind plus the statistics a normalization actually used.
#[derive(Debug, Clone, PartialEq)]
pub enum NormStats {
    /// One mean/std pair shared by the whole column.
    Standard { mean: f64, std: f64 },
    /// Per-sample leave-one-out estimates; entry `a` excludes sample `a`.
    LeaveOneOut { means: Vec<f64>, stds: Vec<f64> },
}

/// Rectified linear unit. Exact zeros are preserved.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// In-place ReLU over a slice.
pub fn relu_inplace(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Mean and biased (divide-by-n) variance of a slice.
pub(crate) fn mean_biased_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Standardize a column across the batch: (x_b − μ̂) / sqrt(σ̂² + eps),
/// biased variance. Returns the normalized column and the statistics used.
pub fn batch_norm(column: &[f64], eps: f64) -> Result<(Vec<f64>, NormStats)> {
    if column.len() < 2 {
        return Err(IgbError::InsufficientSamples(format!(
            "batch_norm needs B >= 2, got {}",
            column.len()
        )));
    }
    if column.iter().any(|x| !x.is_finite()) {
        return Err(IgbError::NonFinite("batch_norm input".into()));
    }
    let (mean, var) = mean_biased_var(column);
    let denom_sq = var + eps;
    if denom_sq <= 0.0 {
        return Err(IgbError::DegenerateVariance(
            "batch_norm column has zero variance and eps = 0".into(),
        ));
    }
    let inv = 1.0 / denom_sq.sqrt();
    let out = column.iter().map(|x| (x - mean) * inv).collect();
    Ok((
        out,
        NormStats::Standard {
            mean,
            std: var.sqrt(),
        },
    ))
}

/// Leave-one-out batch normalization: sample `a` is normalized by the mean
/// and standard deviation of the other B−1 samples (variance divided by
/// B−1), so that `x_a` is independent of its own normalizer on Gaussian
/// columns.
pub fn batch_norm_loo(column: &[f64], eps: f64) -> Result<(Vec<f64>, NormStats)> {
    let b = column.len();
    if b < 3 {
        return Err(IgbError::InsufficientSamples(format!(
            "batch_norm_loo needs B >= 3, got {b}"
        )));
    }
    if column.iter().any(|x| !x.is_finite()) {
        return Err(IgbError::NonFinite("batch_norm_loo input".into()));
    }
    let sum: f64 = column.iter().sum();
    let sum_sq: f64 = column.iter().map(|x| x * x).sum();
    let m = (b - 1) as f64;
    let mut out = Vec::with_capacity(b);
    let mut means = Vec::with_capacity(b);
    let mut stds = Vec::with_capacity(b);
    for (a, &x) in column.iter().enumerate() {
        let mean = (sum - x) / m;
        // sum over b != a of (x_b - mean)^2, divided by B-1
        let var = ((sum_sq - x * x) / m - mean * mean).max(0.0);
        let denom_sq = var + eps;
        if denom_sq <= 0.0 {
            return Err(IgbError::DegenerateVariance(format!(
                "batch_norm_loo residual variance is zero at sample {a} with eps = 0"
            )));
        }
        let std = var.sqrt();
        out.push((x - mean) / denom_sq.sqrt());
        means.push(mean);
        stds.push(std);
    }
    Ok((out, NormStats::LeaveOneOut { means, stds }))
}

/// Normalize a row across its entries. With `subtract_mean` this is
/// LayerNorm, (x_i − μ) / sqrt(σ² + eps) with biased variance; without it,
/// RMSNorm, x_i / sqrt(mean(x²) + eps).
pub fn layer_norm(row: &[f64], eps: f64, subtract_mean: bool) -> Result<Vec<f64>> {
    let n = row.len();
    let min = if subtract_mean { 2 } else { 1 };
    if n < min {
        return Err(IgbError::InsufficientSamples(format!(
            "layer_norm needs n >= {min}, got {n}"
        )));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(IgbError::NonFinite("layer_norm input".into()));
    }
    let (shift, denom_sq) = if subtract_mean {
        let (mean, var) = mean_biased_var(row);
        (mean, var + eps)
    } else {
        let ms = row.iter().map(|x| x * x).sum::<f64>() / n as f64;
        (0.0, ms + eps)
    };
    if denom_sq <= 0.0 {
        return Err(IgbError::DegenerateVariance(
            "layer_norm row has zero variance and eps = 0".into(),
        ));
    }
    let inv = 1.0 / denom_sq.sqrt();
    Ok(row.iter().map(|x| (x - shift) * inv).collect())
}

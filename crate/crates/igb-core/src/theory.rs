//! Closed-form densities, moments, and variance-ratio predictions for the
//! initialization statistics of ReLU MLPs with and without normalization.
//!
//! Conventions: `B` is the batch size of the leave-one-out BatchNorm
//! estimators; gamma is the variance ratio Var_W(center) / Var_D(output),
//! zero meaning neutral (balanced) initial predictions.

use serde::{Deserialize, Serialize};

use crate::error::{IgbError, Result};
use crate::net::{NetworkConfig, NormKind, NormPlacement};
use crate::special::{gamma_ratio, log_gamma, std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Mean and variance of a Gaussian, in output units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub var: f64,
}

/// Initialization regime of the guess-fraction distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// p(G0) peaked at 1/2; the center distribution is a point mass at 0.
    Neutral,
    /// p(G0) spread over the support but stable with depth.
    WeakPrejudice,
    /// p(G0) concentrating at the extremes, amplifying with depth.
    DeepPrejudice,
}

/// Variance-ratio prediction: either a closed-form value or a statement
/// that the curve coincides with the unnormalized network at equal depth
/// (to be estimated empirically; the depth recursion itself is not
/// re-derived here).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GammaSpec {
    Exact { value: f64 },
    SameAsUnnormalized { depth: usize },
}

/// Distribution of the output-node center m_c across initializations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CenterDist {
    /// Point mass at zero (neutral).
    DeltaAtZero,
    Gaussian(GaussianParams),
}

/// What the theorems say about a configuration at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub regime: Regime,
    pub gamma: GammaSpec,
    /// Data-randomness distribution of an output node around its center
    /// (the stored mean is the marginal 0), when available in closed form.
    pub output_dist: Option<GaussianParams>,
    /// Ensemble distribution of the centers, when available in closed form.
    pub center_dist: Option<CenterDist>,
}

impl TheoryPrediction {
    /// The exact gamma value if the prediction has one.
    pub fn gamma_value(&self) -> Option<f64> {
        match self.gamma {
            GammaSpec::Exact { value } => Some(value),
            GammaSpec::SameAsUnnormalized { .. } => None,
        }
    }
}

/// Mean and variance of ReLU(X) for X ~ N(mu, sigma^2):
/// E = mu·Φ(mu/σ) + σ·φ(mu/σ), second moment (mu²+σ²)·Φ(mu/σ) + mu·σ·φ(mu/σ).
pub fn rectified_gaussian_moments(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(IgbError::Domain(format!(
            "rectified moments need sigma > 0, got {sigma}"
        )));
    }
    let r = mu / sigma;
    let cdf = std_normal_cdf(r);
    let pdf = std_normal_pdf(r);
    let mean = mu * cdf + sigma * pdf;
    let second = (mu * mu + sigma * sigma) * cdf + mu * sigma * pdf;
    Ok((mean, second - mean * mean))
}

/// Density of a Gaussian sample normalized by its own leave-one-out batch
/// estimators:
/// sqrt(1/(Bπ)) · Γ((B−1)/2)/Γ((B−2)/2) · (1 + z²/B)^(−(B−1)/2).
/// Converges to the standard normal as B → ∞.
pub fn bn_unit_pdf(z: f64, b: usize) -> Result<f64> {
    if b < 3 {
        return Err(IgbError::Domain(format!("bn_unit_pdf needs B >= 3, got {b}")));
    }
    let bf = b as f64;
    let log_coeff = -0.5 * (bf * std::f64::consts::PI).ln() + log_gamma((bf - 1.0) / 2.0)?
        - log_gamma((bf - 2.0) / 2.0)?;
    let log_kernel = -0.5 * (bf - 1.0) * (z * z / bf).ln_1p();
    Ok((log_coeff + log_kernel).exp())
}

/// Mean and variance of ReLU applied to a leave-one-out-normalized
/// Gaussian sample at batch size B:
/// mean = sqrt(1/(Bπ)) · Γ((B−1)/2)/Γ((B−2)/2) · B/(B−3),
/// variance = B/(2(B−4)) − mean².
pub fn bn_relu_moments(b: usize) -> Result<(f64, f64)> {
    if b <= 4 {
        return Err(IgbError::Domain(format!(
            "bn_relu_moments needs B >= 5 (variance finite only for B > 4), got {b}"
        )));
    }
    let bf = b as f64;
    let coeff = (1.0 / (bf * std::f64::consts::PI)).sqrt()
        * gamma_ratio((bf - 1.0) / 2.0, (bf - 2.0) / 2.0)?;
    let mean = coeff * bf / (bf - 3.0);
    let var = bf / (2.0 * (bf - 4.0)) - mean * mean;
    Ok((mean, var))
}

/// Expectation of the leave-one-out variance estimator on a column with
/// true variance sigma2: sigma2 · (B−2)/(B−1).
pub fn loo_var_expectation(sigma2: f64, b: usize) -> Result<f64> {
    if b < 2 {
        return Err(IgbError::Domain(format!(
            "loo_var_expectation needs B >= 2, got {b}"
        )));
    }
    Ok(sigma2 * (b as f64 - 2.0) / (b as f64 - 1.0))
}

/// Variance ratio of a single ReLU hidden layer whose pre-activations are
/// standard normal over the data: E[g]² / Var(g) = 1/(π−1).
pub fn gamma_single_relu_layer() -> f64 {
    1.0 / (std::f64::consts::PI - 1.0)
}

/// Predict the initialization regime and variance ratio for a config.
///
/// Post-activation BatchNorm or LayerNorm are neutral at any depth.
/// Pre-activation BatchNorm is weakly prejudiced with a depth-independent
/// gamma set by the batch size. Pre-activation LayerNorm (and RMSNorm,
/// which it equals at initialization) reproduces the unnormalized
/// network's gamma at equal depth: closed value at depth 1, empirical
/// reference beyond. Post-activation RMSNorm is unsupported: without mean
/// subtraction the rectified mean survives the normalizer, so none of the
/// neutrality results apply.
pub fn gamma_prediction(config: &NetworkConfig) -> Result<TheoryPrediction> {
    config.validate()?;
    let sw2 = config.sigma_w2;
    let depth = config.depth();
    match (config.norm_kind, config.placement) {
        (NormKind::BatchNorm | NormKind::LayerNorm, NormPlacement::PostActivation) => {
            Ok(TheoryPrediction {
                regime: Regime::Neutral,
                gamma: GammaSpec::Exact { value: 0.0 },
                output_dist: Some(GaussianParams { mean: 0.0, var: sw2 }),
                center_dist: Some(CenterDist::DeltaAtZero),
            })
        }
        (NormKind::RmsNorm, NormPlacement::PostActivation) => Err(IgbError::Config(
            "no closed-form prediction for post-activation RMSNorm: without mean \
             subtraction the rectified mean passes through the normalizer"
                .into(),
        )),
        (NormKind::BatchNorm, NormPlacement::PreActivation) => {
            // Depth-independent: every normalized layer feeds the next one
            // the same rectified distribution. Var_W = sigma_w^2 · E[g]^2,
            // Var_D = sigma_w^2 · Var(g); sigma_w^2 cancels in gamma.
            let (mean_g, var_g) = match config.bn_batch {
                crate::net::BnBatchSize::FullBatch => rectified_gaussian_moments(0.0, 1.0)?,
                crate::net::BnBatchSize::MiniBatch(b) => bn_relu_moments(b)?,
            };
            let value = mean_g * mean_g / var_g;
            Ok(TheoryPrediction {
                regime: Regime::WeakPrejudice,
                gamma: GammaSpec::Exact { value },
                output_dist: Some(GaussianParams {
                    mean: 0.0,
                    var: sw2 * var_g,
                }),
                center_dist: Some(CenterDist::Gaussian(GaussianParams {
                    mean: 0.0,
                    var: sw2 * mean_g * mean_g,
                })),
            })
        }
        (NormKind::LayerNorm | NormKind::RmsNorm, NormPlacement::PreActivation)
        | (NormKind::None, NormPlacement::Absent) => {
            if depth == 1 {
                // Single hidden layer: pre-activations are N(0, s^2) over
                // the data (s^2 = sigma_w^2 unnormalized, 1 under the layer
                // normalizer); the scale cancels in gamma.
                let (mean_g, var_g) = rectified_gaussian_moments(0.0, 1.0)?;
                let value = mean_g * mean_g / var_g;
                let scale = if config.norm_kind == NormKind::None {
                    sw2 * sw2
                } else {
                    sw2
                };
                Ok(TheoryPrediction {
                    regime: Regime::WeakPrejudice,
                    gamma: GammaSpec::Exact { value },
                    output_dist: Some(GaussianParams {
                        mean: 0.0,
                        var: scale * var_g,
                    }),
                    center_dist: Some(CenterDist::Gaussian(GaussianParams {
                        mean: 0.0,
                        var: scale * mean_g * mean_g,
                    })),
                })
            } else {
                // The layer normalizer rescales centers and spreads by the
                // same factor, so gamma tracks the unnormalized network;
                // the deep no-norm recursion is estimated, not re-derived.
                Ok(TheoryPrediction {
                    regime: Regime::DeepPrejudice,
                    gamma: GammaSpec::SameAsUnnormalized { depth },
                    output_dist: None,
                    center_dist: None,
                })
            }
        }
        _ => Err(IgbError::Config(format!(
            "unsupported combination {:?} / {:?}",
            config.norm_kind, config.placement
        ))),
    }
}

/// Density of the class-0 guess fraction G0 = Φ(Z), Z ~ N(0, gamma):
/// p(g) = (1/sqrt(γ)) · φ(Φ⁻¹(g)/sqrt(γ)) / φ(Φ⁻¹(g)) on (0, 1).
///
/// Exactly symmetric under g → 1−g. gamma = 0 is the neutral point mass
/// at 1/2 by convention: the density is 0 away from 1/2 and infinite
/// there.
pub fn g0_pdf_from_gamma(g: f64, gamma: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(IgbError::Domain(format!("g must lie in (0, 1), got {g}")));
    }
    if !(gamma >= 0.0) {
        return Err(IgbError::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(if g == 0.5 { f64::INFINITY } else { 0.0 });
    }
    // Canonicalize through the upper representative: g and 1−g share
    // max(g, 1−g) bit-for-bit, and subtracting it from 1 is exact
    // (Sterbenz), so p(g) == p(1−g) exactly.
    let gm = 1.0 - g.max(1.0 - g);
    if gm <= 0.0 {
        // g closer to the endpoints than one ulp of 1: endpoint limit.
        return Ok(match gamma.partial_cmp(&1.0).unwrap() {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Greater => f64::INFINITY,
        });
    }
    let z = std_normal_quantile(gm)?;
    let log_ratio = 0.5 * z * z * (1.0 - 1.0 / gamma) - 0.5 * gamma.ln();
    Ok(log_ratio.exp())
}

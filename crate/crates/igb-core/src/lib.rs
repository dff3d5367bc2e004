//! Numerical laboratory for the class-prediction statistics of untrained
//! ReLU MLPs under different normalization layers and placements, and for
//! the early SGD dynamics that follow from them.
//!
//! The crate is organized around the pipeline
//!
//! ```text
//! data  ->  net (forward)  ->  metrics (guess fractions, variance ratios)
//!                          ->  theory  (closed-form predictions)
//!                          ->  train   (SGD dynamics, filtered by regime)
//! ```
//!
//! All floating-point work is `f64`; every stochastic operation is
//! deterministic given its seed.

// Link dense matrix products against the system BLAS.
extern crate blas_src;

/// Configure the BLAS runtime: one BLAS thread (parallelism lives at the
/// run level, which keeps results independent of scheduling), and a
/// vector kernel matched to the host CPU when OpenBLAS's own detection
/// falls back to a generic core (common inside VMs that mask the CPU
/// model string). Explicit environment settings always win.
///
/// OpenBLAS reads these variables in its ELF constructor, before `main`
/// runs, so when anything needs changing this re-execs the current
/// process once with the adjusted environment. Call it first thing in
/// `main`, before spawning threads or doing work with side effects.
pub fn configure_blas_runtime() {
    let mut missing: Vec<(&str, String)> = Vec::new();
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        missing.push(("OPENBLAS_NUM_THREADS", "1".to_string()));
    }
    #[cfg(target_arch = "x86_64")]
    if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
        let core = if is_x86_feature_detected!("avx512f") {
            Some("SKYLAKEX")
        } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            Some("HASWELL")
        } else {
            None
        };
        if let Some(core) = core {
            missing.push(("OPENBLAS_CORETYPE", core.to_string()));
        }
    }
    if missing.is_empty() {
        return;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        if let Ok(exe) = std::env::current_exe() {
            let err = std::process::Command::new(exe)
                .args(std::env::args_os().skip(1))
                .envs(missing.iter().map(|(k, v)| (*k, v.as_str())))
                .exec();
            // exec only returns on failure; continue with defaults.
            eprintln!("note: BLAS runtime re-exec failed ({err}); using library defaults");
        }
    }
    #[cfg(not(unix))]
    {
        let _ = missing;
    }
}

pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod norm;
pub mod quad;
pub mod special;
pub mod theory;
pub mod train;

pub use data::Dataset;
pub use error::{IgbError, Result};
pub use metrics::{EnsembleResult, FilterThresholds, GuessStats, VarianceRatioReport};
pub use net::{
    BnBatchSize, ForwardMode, ForwardTrace, Network, NetworkConfig, NormKind, NormPlacement,
};
pub use theory::{GaussianParams, Regime, TheoryPrediction};
pub use train::{TrainConfig, TrainTrajectory};

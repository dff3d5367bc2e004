//! Acceptance suite: one check per criterion, each printing a single
//! PASS/FAIL line with its measured quantities. Run via
//! `cargo test -p igb-core --test acceptance` (optionally with a
//! substring filter argument, e.g. `-- c05`).
//!
//! Every stochastic check runs from a fixed seed, so outcomes are
//! deterministic; tolerances are stated inline next to each assertion.

use igb_core::data::DataSpec;
use igb_core::metrics::{
    classify_run, ensemble_g0, estimate_gamma, estimate_gamma_scan, filter_initializations,
    ks_statistic_pdf, ks_statistic_two_sample, FilterThresholds, RegimeLabel,
};
use igb_core::net::{
    forward, init_network, BnBatchSize, ForwardMode, NetworkConfig, NormKind, NormPlacement,
};
use igb_core::norm::{batch_norm_loo, relu, NormStats};
use igb_core::quad::simpson;
use igb_core::special::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use igb_core::theory::{
    bn_unit_pdf, g0_pdf_from_gamma, gamma_single_relu_layer,
    rectified_gaussian_moments,
};
use igb_core::train::{backward, softmax_cross_entropy, train, TrainConfig, TrainTrajectory};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

type Check = fn() -> Result<String, String>;

fn main() {
    igb_core::configure_blas_runtime();
    let filter: Option<String> = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .map(|s| s.to_lowercase());

    let checks: &[(&str, &str, Check)] = &[
        ("C01", "leave-one-out variance expectation", c01_loo_variance_expectation),
        ("C02", "leave-one-out normalized variance", c02_loo_normalized_variance),
        ("C03", "closed-form normalized-sample density", c03_bn_density),
        ("C04", "rectified-Gaussian moments", c04_rectified_moments),
        ("C05", "post-activation neutrality", c05_post_activation_neutrality),
        ("C06", "pre-activation BatchNorm depth stability", c06_bn_pre_depth_stability),
        ("C07", "pre-activation LayerNorm amplification", c07_ln_pre_amplification),
        ("C08", "pre-activation BatchNorm gamma value", c08_bn_pre_gamma_value),
        ("C09", "guess-fraction density reconstruction", c09_g0_density),
        ("C10", "analytic gradients vs finite differences", c10_gradient_suite),
        ("C11", "filtered training dynamics", c11_filtered_dynamics),
        ("C12", "normalization placement and regimes", c12_placement_regimes),
    ];

    let mut failures = 0;
    let mut ran = 0;
    for (id, name, check) in checks {
        if let Some(f) = &filter {
            if !id.to_lowercase().contains(f) && !name.to_lowercase().contains(f) {
                continue;
            }
        }
        ran += 1;
        let start = Instant::now();
        match check() {
            Ok(detail) => {
                println!("ACCEPTANCE {id} PASS ({:.1}s) {name}: {detail}", start.elapsed().as_secs_f64());
            }
            Err(detail) => {
                failures += 1;
                println!("ACCEPTANCE {id} FAIL ({:.1}s) {name}: {detail}", start.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {} checks, {failures} failures", ran);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn cfg(
    kind: NormKind,
    placement: NormPlacement,
    widths: Vec<usize>,
    input_dim: usize,
) -> NetworkConfig {
    NetworkConfig {
        input_dim,
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

fn ensure(cond: bool, detail: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail.to_string())
    }
}

/// Mean of the leave-one-out variance estimator over 1e5 unit Gaussian
/// columns at B = 10: (B−2)/(B−1) = 8/9 within 0.01.
fn c01_loo_variance_expectation() -> Result<String, String> {
    let b = 10;
    let cols = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut acc = 0.0;
    for _ in 0..cols {
        let col: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, stats) = batch_norm_loo(&col, 0.0).map_err(|e| e.to_string())?;
        let NormStats::LeaveOneOut { stds, .. } = stats else {
            unreachable!()
        };
        acc += stds.iter().map(|s| s * s).sum::<f64>() / b as f64;
    }
    let observed = acc / cols as f64;
    let expected = 8.0 / 9.0;
    ensure(
        (observed - expected).abs() < 0.01,
        &format!("mean sigma-tilde^2 = {observed:.5}, expected {expected:.5} +- 0.01"),
    )?;
    Ok(format!("mean sigma-tilde^2 = {observed:.5} vs {expected:.5} +- 0.01"))
}

/// Variance of the leave-one-out-normalized samples at B = 8 over 1e6
/// draws: B/(B−4) = 2 within 0.02.
fn c02_loo_normalized_variance() -> Result<String, String> {
    let b = 8;
    let cols = 1_000_000 / b;
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0u64);
    for _ in 0..cols {
        let col: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (out, _) = batch_norm_loo(&col, 0.0).map_err(|e| e.to_string())?;
        for v in out {
            sum += v;
            sum_sq += v * v;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    ensure(
        (var - 2.0).abs() < 0.02,
        &format!("Var(b-tilde) = {var:.4}, expected 2.0 +- 0.02 over {n} samples"),
    )?;
    Ok(format!("Var(b-tilde) = {var:.4} vs 2.0 +- 0.02 ({n} samples)"))
}

/// (a) KS distance between 1e6 leave-one-out-normalized Gaussian samples
/// and the closed-form density at B = 16 is below 0.005. (b) At B = 1e4
/// the density matches the standard normal within 1e-3 on [-4, 4].
fn c03_bn_density() -> Result<String, String> {
    let b = 16;
    let cols = 1_000_000 / b;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut samples = Vec::with_capacity(cols * b);
    for _ in 0..cols {
        let col: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (out, _) = batch_norm_loo(&col, 0.0).map_err(|e| e.to_string())?;
        samples.extend(out);
    }
    let ks = ks_statistic_pdf(&samples, |z| bn_unit_pdf(z, b).unwrap(), -60.0, 60.0, 600_000)
        .map_err(|e| e.to_string())?;
    ensure(ks < 0.005, &format!("KS = {ks:.5}, required < 0.005"))?;

    let mut max_gap: f64 = 0.0;
    let mut z = -4.0;
    while z <= 4.0 {
        let gap = (bn_unit_pdf(z, 10_000).map_err(|e| e.to_string())? - std_normal_pdf(z)).abs();
        max_gap = max_gap.max(gap);
        z += 0.01;
    }
    ensure(
        max_gap < 1e-3,
        &format!("max |pdf - phi| = {max_gap:.2e} at B = 1e4, required < 1e-3"),
    )?;
    Ok(format!(
        "KS(1e6 samples, B=16) = {ks:.5} < 0.005; max |pdf - phi| at B=1e4 = {max_gap:.1e} < 1e-3"
    ))
}

/// Closed-form rectified moments vs 1e7-draw Monte Carlo within 3
/// standard errors for three (mu, sigma) pairs, plus the exact scaling
/// law through the formulas.
fn c04_rectified_moments() -> Result<String, String> {
    let n = 10_000_000usize;
    let mut worst = 0.0f64;
    for (i, &(mu, sigma)) in [(0.0, 1.0), (1.0, 1.0), (-1.0, 2.0)].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(104 + i as u64);
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let g = relu(mu + sigma * z);
            s1 += g;
            let g2 = g * g;
            s2 += g2;
            s3 += g2 * g;
            s4 += g2 * g2;
        }
        let nf = n as f64;
        let mean_mc = s1 / nf;
        let var_mc = s2 / nf - mean_mc * mean_mc;
        let (mean, var) = rectified_gaussian_moments(mu, sigma).map_err(|e| e.to_string())?;
        let se_mean = (var_mc / nf).sqrt();
        // Var of the sample variance from the empirical central moments.
        let m2 = var_mc;
        let m3 = s3 / nf - 3.0 * mean_mc * (s2 / nf) + 2.0 * mean_mc.powi(3);
        let m4 = s4 / nf - 4.0 * mean_mc * (s3 / nf) + 6.0 * mean_mc * mean_mc * (s2 / nf)
            - 3.0 * mean_mc.powi(4);
        let _ = m3;
        let se_var = ((m4 - m2 * m2) / nf).sqrt();
        let z_mean = (mean_mc - mean).abs() / se_mean;
        let z_var = (var_mc - var).abs() / se_var;
        worst = worst.max(z_mean).max(z_var);
        ensure(
            z_mean < 3.0 && z_var < 3.0,
            &format!("(mu={mu}, sigma={sigma}): |z_mean| = {z_mean:.2}, |z_var| = {z_var:.2}, required < 3"),
        )?;
    }
    // Scaling law holds exactly through the formulas for powers of two.
    for alpha in [0.5, 2.0] {
        for (mu, sigma) in [(0.7, 1.3), (1.0, 1.0)] {
            let (m, v) = rectified_gaussian_moments(mu, sigma).map_err(|e| e.to_string())?;
            let (ms, vs) =
                rectified_gaussian_moments(alpha * mu, alpha * sigma).map_err(|e| e.to_string())?;
            ensure(
                ms == alpha * m && vs == alpha * alpha * v,
                &format!("scaling law not exact at alpha = {alpha}"),
            )?;
        }
    }
    Ok(format!(
        "3 (mu, sigma) cases within 3 SE of 1e7-draw MC (worst |z| = {worst:.2}); scaling exact for alpha in {{0.5, 2}}"
    ))
}

/// ReLU + BatchNorm and ReLU + LayerNorm at width 500, depths 1 and 20:
/// every G0 of 200 initializations lies in [0.4, 0.6]; and the mean
/// |G0 - 0.5| shrinks strictly from width 100 to width 1000.
fn c05_post_activation_neutrality() -> Result<String, String> {
    let spec = DataSpec::unlabeled(10_000, 100);
    let mut worst: f64 = 0.0;
    for kind in [NormKind::BatchNorm, NormKind::LayerNorm] {
        for depth in [1usize, 20] {
            let c = cfg(kind, NormPlacement::PostActivation, vec![500; depth], 100);
            let res = ensemble_g0(&c, &spec, 200, 500 + depth as u64).map_err(|e| e.to_string())?;
            let (lo, hi) = res
                .samples
                .iter()
                .fold((1.0f64, 0.0f64), |(lo, hi), &g| (lo.min(g), hi.max(g)));
            worst = worst.max((lo - 0.5).abs()).max((hi - 0.5).abs());
            ensure(
                lo >= 0.4 && hi <= 0.6,
                &format!("{kind:?} depth {depth}: G0 range [{lo:.3}, {hi:.3}] not within [0.4, 0.6]"),
            )?;
        }
    }
    // Width comparison at depth 1, both norms pooled per width.
    let mean_dev = |width: usize, base: u64| -> Result<f64, String> {
        let mut devs = Vec::new();
        for kind in [NormKind::BatchNorm, NormKind::LayerNorm] {
            let c = cfg(kind, NormPlacement::PostActivation, vec![width], 100);
            let res = ensemble_g0(&c, &spec, 200, base).map_err(|e| e.to_string())?;
            devs.extend(res.samples.iter().map(|g| (g - 0.5).abs()));
        }
        Ok(devs.iter().sum::<f64>() / devs.len() as f64)
    };
    let dev_small = mean_dev(100, 551)?;
    let dev_large = mean_dev(1000, 552)?;
    ensure(
        dev_large < dev_small,
        &format!("mean |G0 - 0.5|: width 1000 gives {dev_large:.4}, width 100 gives {dev_small:.4}"),
    )?;
    Ok(format!(
        "all 800 G0 in [0.4, 0.6] (worst |G0-0.5| = {worst:.3}); mean |G0-0.5| width 1000 = {dev_large:.4} < width 100 = {dev_small:.4}"
    ))
}

/// BatchNorm before ReLU at width 100: the G0 distributions at depths 1
/// and 20 agree (two-sample KS over 500 runs each below 0.1).
fn c06_bn_pre_depth_stability() -> Result<String, String> {
    let spec = DataSpec::unlabeled(10_000, 100);
    let c1 = cfg(NormKind::BatchNorm, NormPlacement::PreActivation, vec![100], 100);
    let c20 = cfg(NormKind::BatchNorm, NormPlacement::PreActivation, vec![100; 20], 100);
    let e1 = ensemble_g0(&c1, &spec, 500, 601).map_err(|e| e.to_string())?;
    let e20 = ensemble_g0(&c20, &spec, 500, 602).map_err(|e| e.to_string())?;
    let ks = ks_statistic_two_sample(&e1.samples, &e20.samples).map_err(|e| e.to_string())?;
    ensure(ks < 0.1, &format!("two-sample KS = {ks:.4}, required < 0.1"))?;
    Ok(format!("two-sample KS(depth 1, depth 20) = {ks:.4} < 0.1 over 500 runs each"))
}

/// LayerNorm before ReLU at width 100: deep prejudice grows with depth
/// (the fraction of runs with max(G0, 1-G0) > 0.9 at depth 20 is at
/// least twice the depth-1 fraction), while the layer-wise variance
/// ratios track the unnormalized network within 10% under paired seeds.
fn c07_ln_pre_amplification() -> Result<String, String> {
    let spec = DataSpec::unlabeled(10_000, 100);
    let frac_extreme = |depth: usize, seed: u64| -> Result<f64, String> {
        let c = cfg(NormKind::LayerNorm, NormPlacement::PreActivation, vec![100; depth], 100);
        let res = ensemble_g0(&c, &spec, 500, seed).map_err(|e| e.to_string())?;
        Ok(res.samples.iter().filter(|&&g| g.max(1.0 - g) > 0.9).count() as f64 / 500.0)
    };
    let f1 = frac_extreme(1, 701)?;
    let f20 = frac_extreme(20, 701)?;
    ensure(
        f1 > 0.0 && f20 >= 2.0 * f1,
        &format!("extreme fractions: depth 1 = {f1:.3}, depth 20 = {f20:.3}, need factor >= 2"),
    )?;

    // Paired gamma scan: identical seeds give identical weights and data,
    // so the two curves share their sampling noise.
    let layers: Vec<usize> = (1..=20).collect();
    let ln = cfg(NormKind::LayerNorm, NormPlacement::PreActivation, vec![100; 20], 100);
    let nn = cfg(NormKind::None, NormPlacement::Absent, vec![100; 20], 100);
    let spec_gamma = DataSpec::unlabeled(10_000, 100);
    let g_ln = estimate_gamma_scan(&ln, &spec_gamma, 300, 702, &layers).map_err(|e| e.to_string())?;
    let g_nn = estimate_gamma_scan(&nn, &spec_gamma, 300, 702, &layers).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut worst_layer = 0;
    for (a, b) in g_ln.iter().zip(&g_nn) {
        let rel = if a.gamma == b.gamma {
            0.0
        } else {
            (a.gamma - b.gamma).abs() / b.gamma.abs()
        };
        if rel > worst {
            worst = rel;
            worst_layer = a.layer;
        }
    }
    ensure(
        worst < 0.10,
        &format!("layer-wise gamma mismatch up to {:.1}% at layer {worst_layer}, required < 10%", worst * 100.0),
    )?;
    Ok(format!(
        "extreme-run fraction {f1:.3} -> {f20:.3} (factor {:.1}); max layer-wise gamma mismatch vs no-norm = {:.1}% over l <= 20",
        f20 / f1,
        worst * 100.0
    ))
}

/// Empirical output-layer variance ratio of BatchNorm-before-ReLU at
/// width 1000, depth 1, full batch, 200 runs: within 10% of 1/(pi-1).
fn c08_bn_pre_gamma_value() -> Result<String, String> {
    let c = cfg(NormKind::BatchNorm, NormPlacement::PreActivation, vec![1000], 100);
    let spec = DataSpec::unlabeled(10_000, 100);
    // Output layer = layer 2. Seed fixed for determinism; the pooled
    // estimator at 200 runs x 2 output nodes carries ~7% standard error.
    let report = estimate_gamma(&c, &spec, 200, 801, 2).map_err(|e| e.to_string())?;
    let expected = gamma_single_relu_layer();
    let rel = (report.gamma - expected).abs() / expected;
    ensure(
        rel < 0.10,
        &format!(
            "gamma = {:.4} (se {:.4}) vs 1/(pi-1) = {expected:.4}: off by {:.1}%, required < 10%",
            report.gamma,
            report.jackknife_se,
            rel * 100.0
        ),
    )?;
    Ok(format!(
        "gamma = {:.4} (jackknife se {:.4}) vs 1/(pi-1) = {expected:.4} ({:.1}% off)",
        report.gamma,
        report.jackknife_se,
        rel * 100.0
    ))
}

/// The closed-form G0 density against a Monte-Carlo oracle over 1e6
/// center draws. The oracle uses only the definitions: centers m0, m1 ~
/// N(0, gamma) and G0 = Phi((m0 - m1)/sqrt(2)); per draw of m0 the
/// other center is integrated out in closed form (P(G0 <= g | m0) =
/// Phi((sqrt(2) Phi^-1(g) - m0)/sqrt(gamma))), which keeps every bin's
/// standard error well below the 2% comparison at this sample size.
/// Bins with mass >= 0.01 must match within 2% relative; the remaining
/// tail bins within 5e-4 absolute. Symmetry p(g) = p(1-g) is exact.
fn c09_g0_density() -> Result<String, String> {
    let bins = 40usize;
    let draws = 1_000_000usize;
    let mut worst_rel = 0.0f64;
    for (i, &gamma) in [0.1, gamma_single_relu_layer(), 5.0].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(901 + i as u64);
        // Conditional cdf at the bin edges, accumulated over m0 draws.
        let edges_z: Vec<f64> = (0..=bins)
            .map(|b| {
                let g = b as f64 / bins as f64;
                if b == 0 {
                    f64::NEG_INFINITY
                } else if b == bins {
                    f64::INFINITY
                } else {
                    (2.0f64).sqrt() * std_normal_quantile(g).unwrap()
                }
            })
            .collect();
        let mut cdf_acc = vec![0.0f64; bins + 1];
        let sg = gamma.sqrt();
        for _ in 0..draws {
            let m0: f64 = {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sg
            };
            for (acc, &zq) in cdf_acc.iter_mut().zip(&edges_z).skip(1).take(bins - 1) {
                *acc += std_normal_cdf((zq - m0) / sg);
            }
        }
        cdf_acc[bins] = draws as f64;
        // Theory mass per bin by quadrature of the density in z-space,
        // where the integrand stays finite at the support ends.
        let z_of = |g: f64| -> f64 {
            if g <= 0.0 {
                -8.2
            } else if g >= 1.0 {
                8.2
            } else {
                std_normal_quantile(g).unwrap().clamp(-8.2, 8.2)
            }
        };
        for bin in 0..bins {
            let lo = bin as f64 / bins as f64;
            let hi = (bin + 1) as f64 / bins as f64;
            let mass = simpson(
                |z| g0_pdf_from_gamma(std_normal_cdf(z), gamma).unwrap() * std_normal_pdf(z),
                z_of(lo),
                z_of(hi),
                800,
            );
            let emp = (cdf_acc[bin + 1] - cdf_acc[bin]) / draws as f64;
            if mass >= 0.01 {
                let rel = (emp - mass).abs() / mass;
                worst_rel = worst_rel.max(rel);
                ensure(
                    rel < 0.02,
                    &format!(
                        "gamma {gamma:.4}, bin {bin}: mass {mass:.5} vs MC {emp:.5} ({:.2}% off, required < 2%)",
                        rel * 100.0
                    ),
                )?;
            } else {
                ensure(
                    (emp - mass).abs() < 5e-4,
                    &format!("gamma {gamma:.4}, tail bin {bin}: |{emp:.6} - {mass:.6}| >= 5e-4"),
                )?;
            }
        }
    }
    for &gamma in &[0.1, 0.4669, 5.0] {
        for &g in &[0.1, 0.3, 0.2573] {
            let a = g0_pdf_from_gamma(g, gamma).map_err(|e| e.to_string())?;
            let b = g0_pdf_from_gamma(1.0 - g, gamma).map_err(|e| e.to_string())?;
            ensure(a == b, &format!("symmetry broken at g = {g}, gamma = {gamma}"))?;
        }
    }
    Ok(format!(
        "per-bin match within 2% on all mass-bearing bins (worst {:.2}%); symmetry exact",
        worst_rel * 100.0
    ))
}

/// Analytic gradients vs central finite differences (h = 1e-5) on
/// width-5 depth-2 networks, 20 seeds for each of the 8 kind x placement
/// combinations.
fn c10_gradient_suite() -> Result<String, String> {
    let combos: [(NormKind, NormPlacement); 8] = [
        (NormKind::None, NormPlacement::Absent),
        (NormKind::None, NormPlacement::Absent),
        (NormKind::BatchNorm, NormPlacement::PreActivation),
        (NormKind::BatchNorm, NormPlacement::PostActivation),
        (NormKind::LayerNorm, NormPlacement::PreActivation),
        (NormKind::LayerNorm, NormPlacement::PostActivation),
        (NormKind::RmsNorm, NormPlacement::PreActivation),
        (NormKind::RmsNorm, NormPlacement::PostActivation),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (ci, (kind, placement)) in combos.into_iter().enumerate() {
        let mut config = cfg(kind, placement, vec![5, 5], 4);
        config.epsilon = 1e-3;
        let mut done = 0;
        let mut candidate = 10_000 * (ci as u64 + 1);
        while done < 20 {
            candidate += 1;
            match check_gradients_once(&config, candidate) {
                None => continue, // a ReLU input sat too close to its kink
                Some(Err(e)) => return Err(format!("{kind:?}/{placement:?} seed {candidate}: {e}")),
                Some(Ok((n, w))) => {
                    checked += n;
                    worst = worst.max(w);
                    done += 1;
                }
            }
        }
    }
    Ok(format!(
        "{checked} parameter derivatives across 8 combos x 20 seeds; worst relative error {worst:.2e} < 1e-5"
    ))
}

/// One finite-difference sweep; `None` when the forward pass has a ReLU
/// input within 1e-3 of zero (central differences would cross the kink).
#[allow(clippy::type_complexity)]
fn check_gradients_once(
    config: &NetworkConfig,
    seed: u64,
) -> Option<Result<(usize, f64), String>> {
    let batch = 8;
    let net = init_network(config, seed).unwrap();
    let data = igb_core::data::unlabeled_gaussian(batch, config.input_dim, seed ^ 0xF00D).unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    let trace = forward(&net, data.inputs.view(), ForwardMode::Train).unwrap();
    let mut margin = f64::INFINITY;
    for layer in &trace.layers {
        let relu_input = match config.placement {
            NormPlacement::PreActivation => layer.normed.as_ref().unwrap(),
            _ => &layer.pre_act,
        };
        for &v in relu_input {
            margin = margin.min(v.abs());
        }
    }
    if margin < 1e-3 {
        return None;
    }
    let (_, grads) = backward(&net, &trace, &labels).unwrap();
    let loss_with = |net: &igb_core::net::Network| -> f64 {
        let trace = forward(net, data.inputs.view(), ForwardMode::Train).unwrap();
        softmax_cross_entropy(&trace.outputs, &labels).unwrap().0
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut probe = |set: &dyn Fn(&mut igb_core::net::Network, f64), analytic: f64| -> Result<(), String> {
        let mut plus = net.clone();
        set(&mut plus, h);
        let mut minus = net.clone();
        set(&mut minus, -h);
        let fd = (loss_with(&plus) - loss_with(&minus)) / (2.0 * h);
        let denom = analytic.abs().max(fd.abs());
        let rel = if denom > 1e-4 {
            (analytic - fd).abs() / denom
        } else {
            // Both below FD resolution: compare absolutely.
            (analytic - fd).abs()
        };
        worst = worst.max(rel);
        count += 1;
        if rel >= 1e-5 {
            return Err(format!("analytic {analytic} vs fd {fd} (rel {rel:.2e})"));
        }
        Ok(())
    };
    for l in 0..net.weights.len() {
        let (rows, cols) = (net.weights[l].nrows(), net.weights[l].ncols());
        for k in 0..rows * cols {
            let (i, j) = (k / cols, k % cols);
            if let Err(e) = probe(
                &|n: &mut igb_core::net::Network, d: f64| n.weights[l][[i, j]] += d,
                grads.weights[l][[i, j]],
            ) {
                return Some(Err(format!("W[{l}][{i},{j}]: {e}")));
            }
        }
        for i in 0..net.biases[l].len() {
            if let Err(e) = probe(
                &|n: &mut igb_core::net::Network, d: f64| n.biases[l][i] += d,
                grads.biases[l][i],
            ) {
                return Some(Err(format!("b[{l}][{i}]: {e}")));
            }
        }
    }
    for l in 0..net.norm_scale.len() {
        for i in 0..net.norm_scale[l].len() {
            if let Err(e) = probe(
                &|n: &mut igb_core::net::Network, d: f64| n.norm_scale[l][i] += d,
                grads.norm_scale[l][i],
            ) {
                return Some(Err(format!("alpha[{l}][{i}]: {e}")));
            }
            if let Err(e) = probe(
                &|n: &mut igb_core::net::Network, d: f64| n.norm_shift[l][i] += d,
                grads.norm_shift[l][i],
            ) {
                return Some(Err(format!("beta[{l}][{i}]: {e}")));
            }
        }
    }
    Some(Ok((count, worst)))
}

fn median(xs: &mut Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Unnormalized 1x100 MLP on the Gaussian blob: deeply prejudiced
/// initializations start with extreme per-class accuracies, neutral ones
/// start balanced, and the neutral group reaches 60% train accuracy no
/// later (in median) than the deep-prejudice group.
fn c11_filtered_dynamics() -> Result<String, String> {
    let d = 1000;
    let network = cfg(NormKind::None, NormPlacement::Absent, vec![100], d);
    let mut spec = DataSpec::blob(5000, d, 1.0);
    spec.fixed = true;
    let base_seed = 1101;
    let screen = ensemble_g0(&network, &spec, 1000, base_seed).map_err(|e| e.to_string())?;
    let thresholds = FilterThresholds::default();
    let part = filter_initializations(&screen, &thresholds).map_err(|e| e.to_string())?;
    let per_group = 10;
    ensure(
        part.neutral.len() >= per_group && part.deep_prejudice.len() >= per_group,
        &format!(
            "need {per_group} runs per group, found {} neutral / {} deep over 1000 screens",
            part.neutral.len(),
            part.deep_prejudice.len()
        ),
    )?;

    let data = spec
        .realize(igb_core::metrics::run_data_seed(base_seed, 0, true))
        .map_err(|e| e.to_string())?;
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 512,
        steps: 4000,
        eval_cadence: 20,
        relabel_dominant: true,
        seed: 0,
        stop_at_train_accuracy: Some(0.62),
    };
    let train_group = |seeds: &[u64]| -> Result<Vec<TrainTrajectory>, String> {
        use rayon::prelude::*;
        seeds[..per_group]
            .par_iter()
            .map(|&seed| {
                let net = init_network(&network, seed).map_err(|e| e.to_string())?;
                let mut cfg = tcfg.clone();
                cfg.seed = seed ^ 0x7AB1;
                let (traj, _) = train(&net, &data, None, &cfg).map_err(|e| e.to_string())?;
                Ok(traj)
            })
            .collect()
    };
    let deep = train_group(&part.deep_prejudice)?;
    let neutral = train_group(&part.neutral)?;

    for traj in &deep {
        let p0 = &traj.points[0];
        ensure(
            p0.train_class_acc[0] >= 0.9 && p0.train_class_acc[1] <= 0.1,
            &format!(
                "deep run t=0 class accuracies {:.3}/{:.3}, expected >= 0.9 / <= 0.1",
                p0.train_class_acc[0], p0.train_class_acc[1]
            ),
        )?;
    }
    for traj in &neutral {
        let p0 = &traj.points[0];
        ensure(
            p0.train_class_acc.iter().all(|&a| (0.4..=0.6).contains(&a)),
            &format!(
                "neutral run t=0 class accuracies {:.3}/{:.3}, expected both in [0.4, 0.6]",
                p0.train_class_acc[0], p0.train_class_acc[1]
            ),
        )?;
    }
    let taus = |group: &[TrainTrajectory]| -> Vec<f64> {
        group
            .iter()
            .map(|t| t.time_to_accuracy(0.6).map_or(f64::INFINITY, |s| s as f64))
            .collect()
    };
    let mut tau_n = taus(&neutral);
    let mut tau_d = taus(&deep);
    let (mn, md) = (median(&mut tau_n), median(&mut tau_d));
    ensure(
        mn <= md,
        &format!("median tau_0.6: neutral {mn} vs deep {md}, expected neutral <= deep"),
    )?;
    Ok(format!(
        "t=0 class accuracies correct for 10+10 runs; median tau_0.6 neutral {mn} <= deep {md}"
    ))
}

/// On the blob task: LayerNorm after ReLU leaves every random
/// initialization neutral (empty deep-prejudice group), while LayerNorm
/// before ReLU at depth 20 produces a nonempty deep-prejudice group over
/// 100 initializations.
fn c12_placement_regimes() -> Result<String, String> {
    let d = 1000;
    let mut spec = DataSpec::blob(5000, d, 1.0);
    spec.fixed = true;
    let thresholds = FilterThresholds::default();

    let post = cfg(NormKind::LayerNorm, NormPlacement::PostActivation, vec![100], d);
    let e_post = ensemble_g0(&post, &spec, 100, 1201).map_err(|e| e.to_string())?;
    let p_post = filter_initializations(&e_post, &thresholds).map_err(|e| e.to_string())?;
    ensure(
        p_post.neutral.len() == 100,
        &format!(
            "ReLU+LN: {} neutral / {} weak / {} deep, expected all 100 neutral",
            p_post.neutral.len(),
            p_post.weak_prejudice.len(),
            p_post.deep_prejudice.len()
        ),
    )?;

    let pre = cfg(NormKind::LayerNorm, NormPlacement::PreActivation, vec![100; 20], d);
    let e_pre = ensemble_g0(&pre, &spec, 100, 1202).map_err(|e| e.to_string())?;
    let deep_count = e_pre
        .ghat0
        .iter()
        .filter(|&&g| classify_run(g, 2, &thresholds) == RegimeLabel::DeepPrejudice)
        .count();
    ensure(
        deep_count > 0,
        "LN+ReLU depth 20: deep-prejudice group empty over 100 runs",
    )?;
    Ok(format!(
        "ReLU+LN: 100/100 neutral; LN+ReLU depth 20: {deep_count}/100 deeply prejudiced"
    ))
}

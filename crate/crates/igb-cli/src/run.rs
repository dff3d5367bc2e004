//! Experiment execution and result emission.
//!
//! Every experiment writes its numeric results as CSV/JSON plus a
//! `manifest.json` holding the fully resolved config, the seeds used, the
//! conventions baked into the numbers, and a SHA-256 for every emitted
//! file. Result files contain no timestamps, so re-running a config (or a
//! manifest) reproduces them byte-identically; the timestamp lives only
//! in the manifest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use igb_core::metrics::{
    self, classify_run, ensemble_g0_with_gamma, estimate_gamma_scan, filter_initializations,
    RegimeLabel,
};
use igb_core::net::{init_network, BnBatchSize, NetworkConfig, NormKind, NormPlacement};
use igb_core::theory::{self, GammaSpec};
use igb_core::train::train;
use igb_core::norm::{batch_norm_loo, relu};

use crate::config::{DynamicsSection, ExperimentConfig, ExperimentKind, GroupName};

/// Seed stream separating training shuffles from weight draws.
const TRAIN_STREAM: u64 = 0x7AB1_E5EE_D000_0001;
/// Seed stream for held-out test data.
const TEST_STREAM: u64 = 0x7E57_DA7A_0000_0002;

pub struct Outcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes.len() as u64))
}

fn conventions() -> serde_json::Value {
    json!({
        "bn_variance": "biased, divide by B",
        "loo_variance": "divide by B-1 over the B-1 retained samples",
        "static_bn_statistics": "full batch",
        "train_partial_batch": "dropped",
        "bn_eval_statistics": "running average, momentum 0.9, primed from a full-batch pass at step 0",
        "argmax_ties": "lowest class index",
        "tau_definition": "first eval step with global train accuracy >= level",
        "histogram": "40 equal bins on [0,1]",
        "seeds": "network seed = base_seed + run index; data/train/test seeds on xor-separated streams",
    })
}

/// Write the manifest after all result files exist, hashing each one.
fn write_manifest(
    out_dir: &Path,
    config: &ExperimentConfig,
    seeds: &[u64],
    files: &[String],
) -> Result<(), String> {
    let mut entries = Vec::new();
    for name in files {
        let (sha256, bytes) = sha256_file(&out_dir.join(name))
            .map_err(|e| format!("hashing {name}: {e}"))?;
        entries.push(json!({ "name": name, "sha256": sha256, "bytes": bytes }));
    }
    let manifest = json!({
        "tool": "igb",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": config.kind.as_str(),
        "created_unix_s": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "resolved_config": config,
        "conventions": conventions(),
        "seeds": seeds,
        "files": entries,
    });
    write_text(
        out_dir,
        "manifest.json",
        &(serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())? + "\n"),
    )
}

fn write_text(out_dir: &Path, name: &str, text: &str) -> Result<(), String> {
    let path = out_dir.join(name);
    let mut f = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    f.write_all(text.as_bytes())
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<(), String> {
    write_text(
        out_dir,
        name,
        &(serde_json::to_string_pretty(value).map_err(|e| e.to_string())? + "\n"),
    )
}

fn fmt_row(fields: &[String]) -> String {
    fields.join(",")
}

pub fn execute(config: &ExperimentConfig) -> Result<Outcome, String> {
    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("igb-results/{}", config.kind.as_str())));
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let mut resolved = config.clone();
    resolved.out_dir = Some(out_dir.clone());

    let (files, seeds) = match config.kind {
        ExperimentKind::StaticEnsemble => run_static_ensemble(&resolved, &out_dir)?,
        ExperimentKind::GammaScan => run_gamma_scan(&resolved, &out_dir)?,
        ExperimentKind::TheoryTable => run_theory_table(&resolved, &out_dir)?,
        ExperimentKind::FilteredDynamics => run_filtered_dynamics(&resolved, &out_dir)?,
        ExperimentKind::DistTest => run_dist_test(&resolved, &out_dir)?,
    };
    write_manifest(&out_dir, &resolved, &seeds, &files)?;
    let mut files = files;
    files.push("manifest.json".into());
    Ok(Outcome { out_dir, files })
}

fn run_static_ensemble(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<u64>), String> {
    let network = config.network.as_ref().unwrap();
    let data = config.data.as_ref().unwrap();
    let runs = config.runs.unwrap();
    let layers = config.gamma_layers();
    let result = ensemble_g0_with_gamma(network, data, runs, config.base_seed, layers.as_deref())
        .map_err(|e| e.to_string())?;

    let mut csv = String::new();
    let mut header = vec!["seed".to_string(), "g0".into(), "ghat0".into()];
    if let Some(layers) = &layers {
        for l in layers {
            header.push(format!("l{l}_mean_sq_avg"));
            header.push(format!("l{l}_var_avg"));
        }
    }
    csv.push_str(&fmt_row(&header));
    csv.push('\n');
    for (i, ((&seed, &g0), &ghat)) in result
        .seeds
        .iter()
        .zip(&result.samples)
        .zip(&result.ghat0)
        .enumerate()
    {
        let mut row = vec![seed.to_string(), format!("{g0}"), format!("{ghat}")];
        if let Some(diag) = &result.gamma_diagnostics {
            for s in &diag[i] {
                row.push(format!("{}", s.sum_mean_sq / s.n_nodes as f64));
                row.push(format!("{}", s.sum_var / s.n_nodes as f64));
            }
        }
        csv.push_str(&fmt_row(&row));
        csv.push('\n');
    }
    write_text(out_dir, "runs.csv", &csv)?;

    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (i, &c) in result.histogram.counts.iter().enumerate() {
        hist.push_str(&format!(
            "{},{},{c}\n",
            result.histogram.edges[i],
            result.histogram.edges[i + 1]
        ));
    }
    write_text(out_dir, "histogram.csv", &hist)?;
    write_json(out_dir, "ensemble.json", &result)?;

    let mut files = vec!["runs.csv".into(), "histogram.csv".into(), "ensemble.json".into()];
    if let Some(reports) = result.gamma_reports() {
        write_json(out_dir, "gamma.json", &reports)?;
        files.push("gamma.json".into());
    }
    Ok((files, result.seeds.clone()))
}

fn gamma_csv(reports: &[metrics::VarianceRatioReport]) -> String {
    let mut csv =
        String::from("layer,gamma,gamma_per_node,var_w,var_d,jackknife_se,n_runs,n_nodes\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.layer, r.gamma, r.gamma_per_node, r.var_w, r.var_d, r.jackknife_se, r.n_runs, r.n_nodes
        ));
    }
    csv
}

fn run_gamma_scan(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<u64>), String> {
    let network = config.network.as_ref().unwrap();
    let data = config.data.as_ref().unwrap();
    let runs = config.runs.unwrap();
    let layers = config.gamma_layers().unwrap();
    let reports = estimate_gamma_scan(network, data, runs, config.base_seed, &layers)
        .map_err(|e| e.to_string())?;
    write_text(out_dir, "gamma.csv", &gamma_csv(&reports))?;
    write_json(out_dir, "gamma.json", &reports)?;
    let seeds: Vec<u64> = (0..runs)
        .map(|r| metrics::run_net_seed(config.base_seed, r))
        .collect();
    Ok((vec!["gamma.csv".into(), "gamma.json".into()], seeds))
}

fn run_theory_table(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<u64>), String> {
    let section = config.theory.as_ref().unwrap();
    let sigma_w2 = config.network.as_ref().map_or(2.0, |n| n.sigma_w2);
    let mut rows = Vec::new();
    let combos: [(NormKind, NormPlacement); 6] = [
        (NormKind::None, NormPlacement::Absent),
        (NormKind::BatchNorm, NormPlacement::PreActivation),
        (NormKind::BatchNorm, NormPlacement::PostActivation),
        (NormKind::LayerNorm, NormPlacement::PreActivation),
        (NormKind::LayerNorm, NormPlacement::PostActivation),
        (NormKind::RmsNorm, NormPlacement::PreActivation),
    ];
    for &(kind, placement) in &combos {
        let batches: Vec<BnBatchSize> =
            if kind == NormKind::BatchNorm && placement == NormPlacement::PreActivation {
                let mut b = vec![BnBatchSize::FullBatch];
                b.extend(section.batch_sizes.iter().copied());
                b
            } else {
                vec![BnBatchSize::FullBatch]
            };
        for &depth in &section.depths {
            for &bn_batch in &batches {
                let net = NetworkConfig {
                    input_dim: 1,
                    hidden_widths: vec![1; depth],
                    num_classes: 2,
                    sigma_w2,
                    norm_kind: kind,
                    placement,
                    epsilon: 0.0,
                    bn_batch,
                    loo_estimators: false,
                };
                let p = theory::gamma_prediction(&net).map_err(|e| e.to_string())?;
                rows.push(json!({
                    "norm_kind": kind,
                    "placement": placement,
                    "depth": depth,
                    "bn_batch": bn_batch,
                    "prediction": p,
                }));
            }
        }
    }
    write_json(out_dir, "theory.json", &rows)?;

    let mut csv =
        String::from("norm_kind,placement,depth,bn_batch,regime,gamma,output_var,center_var\n");
    for row in &rows {
        let p: theory::TheoryPrediction =
            serde_json::from_value(row["prediction"].clone()).unwrap();
        let gamma = match p.gamma {
            GammaSpec::Exact { value } => format!("{value}"),
            GammaSpec::SameAsUnnormalized { depth } => {
                format!("same-as-unnormalized-depth-{depth}")
            }
        };
        let output_var = p
            .output_dist
            .map_or(String::new(), |d| format!("{}", d.var));
        let center_var = match p.center_dist {
            Some(theory::CenterDist::DeltaAtZero) => "0".to_string(),
            Some(theory::CenterDist::Gaussian(g)) => format!("{}", g.var),
            None => String::new(),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row["norm_kind"].as_str().unwrap(),
            row["placement"].as_str().unwrap(),
            row["depth"],
            row["bn_batch"],
            serde_json::to_value(p.regime).unwrap().as_str().unwrap(),
            gamma,
            output_var,
            center_var,
        ));
    }
    write_text(out_dir, "theory.csv", &csv)?;
    Ok((vec!["theory.json".into(), "theory.csv".into()], vec![]))
}

fn group_label(g: GroupName) -> RegimeLabel {
    match g {
        GroupName::Neutral => RegimeLabel::Neutral,
        GroupName::WeakPrejudice => RegimeLabel::WeakPrejudice,
        GroupName::DeepPrejudice => RegimeLabel::DeepPrejudice,
    }
}

fn group_str(g: GroupName) -> &'static str {
    match g {
        GroupName::Neutral => "neutral",
        GroupName::WeakPrejudice => "weak-prejudice",
        GroupName::DeepPrejudice => "deep-prejudice",
    }
}

#[derive(Serialize)]
struct DynamicsRunSummary {
    group: String,
    seed: u64,
    g0: f64,
    ghat0: f64,
    tau: Option<usize>,
    init_class0_acc: f64,
    init_class1_acc: f64,
    final_train_acc: f64,
    trajectory_file: String,
}

fn run_filtered_dynamics(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<u64>), String> {
    let network = config.network.as_ref().unwrap();
    let data_spec = config.data.as_ref().unwrap();
    let train_cfg = config.train.as_ref().unwrap();
    let dyn_cfg: &DynamicsSection = config.dynamics.as_ref().unwrap();
    let thresholds = config.thresholds.unwrap_or_default();
    if !data_spec.is_fixed() {
        return Err("filtered-dynamics needs data.fixed = true: every run trains on the same dataset".into());
    }

    // Screen initializations on the shared dataset.
    let ensemble = ensemble_g0_with_gamma(
        network,
        data_spec,
        dyn_cfg.screen_runs,
        config.base_seed,
        None,
    )
    .map_err(|e| e.to_string())?;
    let partition = filter_initializations(&ensemble, &thresholds).map_err(|e| e.to_string())?;

    let mut screening = String::from("seed,g0,ghat0,regime\n");
    for ((&seed, &g0), &ghat) in ensemble.seeds.iter().zip(&ensemble.samples).zip(&ensemble.ghat0)
    {
        let label = match classify_run(ghat, network.num_classes, &thresholds) {
            RegimeLabel::Neutral => "neutral",
            RegimeLabel::WeakPrejudice => "weak-prejudice",
            RegimeLabel::DeepPrejudice => "deep-prejudice",
        };
        screening.push_str(&format!("{seed},{g0},{ghat},{label}\n"));
    }
    write_text(out_dir, "screening.csv", &screening)?;
    write_json(out_dir, "groups.json", &partition)?;

    let train_data = data_spec
        .realize(metrics::run_data_seed(config.base_seed, 0, true))
        .map_err(|e| e.to_string())?;
    let test_data = match &dyn_cfg.test_data {
        None => None,
        Some(spec) => Some(
            spec.realize(config.base_seed ^ TEST_STREAM)
                .map_err(|e| e.to_string())?,
        ),
    };

    // First `per_group` seeds of each requested group, in seed order.
    let mut selected: Vec<(GroupName, u64)> = Vec::new();
    for &group in &dyn_cfg.groups {
        let pool = match group_label(group) {
            RegimeLabel::Neutral => &partition.neutral,
            RegimeLabel::WeakPrejudice => &partition.weak_prejudice,
            RegimeLabel::DeepPrejudice => &partition.deep_prejudice,
        };
        if pool.len() < dyn_cfg.per_group {
            return Err(format!(
                "group {} has only {} of {} requested runs; raise dynamics.screen_runs",
                group_str(group),
                pool.len(),
                dyn_cfg.per_group
            ));
        }
        selected.extend(pool[..dyn_cfg.per_group].iter().map(|&s| (group, s)));
    }

    let g0_of = |seed: u64| -> (f64, f64) {
        let i = ensemble.seeds.iter().position(|&s| s == seed).unwrap();
        (ensemble.samples[i], ensemble.ghat0[i])
    };

    let results: Vec<Result<(DynamicsRunSummary, String), String>> = selected
        .par_iter()
        .map(|&(group, seed)| {
            let net = init_network(network, seed).map_err(|e| e.to_string())?;
            let mut cfg = train_cfg.clone();
            cfg.seed = seed ^ TRAIN_STREAM;
            let (traj, _) =
                train(&net, &train_data, test_data.as_ref(), &cfg).map_err(|e| e.to_string())?;
            let mut csv_bytes = Vec::new();
            traj.to_csv(&mut csv_bytes).map_err(|e| e.to_string())?;
            let first = &traj.points[0];
            let last = traj.points.last().unwrap();
            let (g0, ghat0) = g0_of(seed);
            let summary = DynamicsRunSummary {
                group: group_str(group).to_string(),
                seed,
                g0,
                ghat0,
                tau: traj.time_to_accuracy(dyn_cfg.tau_level),
                init_class0_acc: first.train_class_acc[0],
                init_class1_acc: first.train_class_acc.get(1).copied().unwrap_or(f64::NAN),
                final_train_acc: last.train_acc,
                trajectory_file: format!("traj_{seed}.csv"),
            };
            Ok((summary, String::from_utf8(csv_bytes).unwrap()))
        })
        .collect();

    let mut files = vec!["screening.csv".into(), "groups.json".into()];
    let mut summaries = Vec::new();
    for res in results {
        let (summary, csv) = res?;
        let name = summary.trajectory_file.clone();
        write_text(out_dir, &name, &csv)?;
        files.push(name);
        summaries.push(summary);
    }

    let mut summary_csv = String::from(
        "group,seed,g0,ghat0,tau,init_class0_acc,init_class1_acc,final_train_acc,trajectory_file\n",
    );
    for s in &summaries {
        summary_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.group,
            s.seed,
            s.g0,
            s.ghat0,
            s.tau.map_or(String::new(), |t| t.to_string()),
            s.init_class0_acc,
            s.init_class1_acc,
            s.final_train_acc,
            s.trajectory_file,
        ));
    }
    write_text(out_dir, "summary.csv", &summary_csv)?;
    write_json(out_dir, "summary.json", &summaries)?;
    files.push("summary.csv".into());
    files.push("summary.json".into());
    Ok((files, ensemble.seeds.clone()))
}

fn run_dist_test(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<u64>), String> {
    let section = config.dist_test.as_ref().unwrap();
    let b = section.batch_size_b;
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);

    // Leave-one-out normalization of Gaussian columns.
    let mut samples = Vec::with_capacity(section.columns * b);
    let mut var_estimates = Vec::with_capacity(section.columns);
    for _ in 0..section.columns {
        let col: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (out, stats) = batch_norm_loo(&col, 0.0).map_err(|e| e.to_string())?;
        if let igb_core::norm::NormStats::LeaveOneOut { stds, .. } = stats {
            var_estimates.push(stds.iter().map(|s| s * s).sum::<f64>() / b as f64);
        }
        samples.extend(out);
    }
    let n = samples.len() as f64;

    let mean_var_obs = var_estimates.iter().sum::<f64>() / var_estimates.len() as f64;
    let mean_var_exp = theory::loo_var_expectation(1.0, b).map_err(|e| e.to_string())?;
    let var_se = {
        let m = mean_var_obs;
        let v = var_estimates.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            / (var_estimates.len() as f64 - 1.0);
        (v / var_estimates.len() as f64).sqrt()
    };

    let mean_b = samples.iter().sum::<f64>() / n;
    let var_b = samples.iter().map(|x| (x - mean_b) * (x - mean_b)).sum::<f64>() / (n - 1.0);
    let var_b_exp = b as f64 / (b as f64 - 4.0);

    let ks = metrics::ks_statistic_pdf(
        &samples,
        |z| theory::bn_unit_pdf(z, b).unwrap(),
        -60.0,
        60.0,
        600_000,
    )
    .map_err(|e| e.to_string())?;
    // 99.99th percentile of the Kolmogorov distribution is ~1.94/sqrt(n).
    let ks_tol = 1.94 / n.sqrt();

    // Rectified moments: ReLU of the same normalized samples.
    let draws = section.relu_draws.min(samples.len());
    let (mut s1, mut s2) = (0.0, 0.0);
    for &v in &samples[..draws] {
        let g = relu(v);
        s1 += g;
        s2 += g * g;
    }
    let relu_mean_obs = s1 / draws as f64;
    let relu_var_obs = s2 / draws as f64 - relu_mean_obs * relu_mean_obs;
    let (relu_mean_exp, relu_var_exp) = theory::bn_relu_moments(b).map_err(|e| e.to_string())?;
    let relu_mean_se = (relu_var_obs / draws as f64).sqrt();

    let check = |name: &str, observed: f64, expected: f64, tol: f64| {
        json!({
            "name": name,
            "observed": observed,
            "expected": expected,
            "tolerance": tol,
            "pass": (observed - expected).abs() <= tol,
        })
    };
    let report = json!({
        "batch_size_b": b,
        "columns": section.columns,
        "samples": samples.len(),
        "checks": [
            check("loo_variance_expectation", mean_var_obs, mean_var_exp, 4.0 * var_se),
            check("loo_normalized_variance", var_b, var_b_exp, 0.02f64.max(8.0 * var_b_exp / n.sqrt())),
            check("ks_vs_unit_pdf", ks, 0.0, ks_tol),
            check("relu_mean", relu_mean_obs, relu_mean_exp, 4.0 * relu_mean_se),
            check("relu_variance", relu_var_obs, relu_var_exp, 0.01f64.max(8.0 * relu_var_exp / (draws as f64).sqrt())),
        ],
    });
    write_json(out_dir, "report.json", &report)?;

    let hist = metrics::Histogram::new(&samples, 80, -6.0, 6.0);
    let mut csv = String::from("bin_lo,bin_hi,count,theory_pdf_at_center\n");
    for (i, &c) in hist.counts.iter().enumerate() {
        let (lo, hi) = (hist.edges[i], hist.edges[i + 1]);
        let p = theory::bn_unit_pdf(0.5 * (lo + hi), b).map_err(|e| e.to_string())?;
        csv.push_str(&format!("{lo},{hi},{c},{p}\n"));
    }
    write_text(out_dir, "loo_hist.csv", &csv)?;
    Ok((
        vec!["report.json".into(), "loo_hist.csv".into()],
        vec![config.base_seed],
    ))
}

/// Structured comparison of two result directories of the same kind.
pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<serde_json::Value, String> {
    let load = |dir: &Path| -> Result<serde_json::Value, String> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    };
    let ma = load(dir_a)?;
    let mb = load(dir_b)?;
    let kind_a = ma["kind"].as_str().unwrap_or("?").to_string();
    let kind_b = mb["kind"].as_str().unwrap_or("?").to_string();
    if kind_a != kind_b {
        return Err(format!("cannot compare {kind_a} with {kind_b}"));
    }
    let mut diff = BTreeMap::new();
    diff.insert("kind".to_string(), json!(kind_a));
    diff.insert("a".to_string(), json!(dir_a.display().to_string()));
    diff.insert("b".to_string(), json!(dir_b.display().to_string()));

    match kind_a.as_str() {
        "static-ensemble" => {
            let ea: metrics::EnsembleResult = read_json(&dir_a.join("ensemble.json"))?;
            let eb: metrics::EnsembleResult = read_json(&dir_b.join("ensemble.json"))?;
            let ks = metrics::ks_statistic_two_sample(&ea.samples, &eb.samples)
                .map_err(|e| e.to_string())?;
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            diff.insert("ks_distance".into(), json!(ks));
            diff.insert("g0_mean_delta".into(), json!(mean(&ea.samples) - mean(&eb.samples)));
            diff.insert(
                "ghat0_mean_delta".into(),
                json!(mean(&ea.ghat0) - mean(&eb.ghat0)),
            );
            if let (Some(ra), Some(rb)) = (ea.gamma_reports(), eb.gamma_reports()) {
                diff.insert("gamma_deltas".into(), gamma_deltas(&ra, &rb));
            }
        }
        "gamma-scan" => {
            let ra: Vec<metrics::VarianceRatioReport> = read_json(&dir_a.join("gamma.json"))?;
            let rb: Vec<metrics::VarianceRatioReport> = read_json(&dir_b.join("gamma.json"))?;
            diff.insert("gamma_deltas".into(), gamma_deltas(&ra, &rb));
        }
        "filtered-dynamics" => {
            let sa: Vec<serde_json::Value> = read_json(&dir_a.join("summary.json"))?;
            let sb: Vec<serde_json::Value> = read_json(&dir_b.join("summary.json"))?;
            let medians = |rows: &[serde_json::Value]| -> BTreeMap<String, f64> {
                let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                for r in rows {
                    if let Some(tau) = r["tau"].as_u64() {
                        by_group
                            .entry(r["group"].as_str().unwrap_or("?").to_string())
                            .or_default()
                            .push(tau as f64);
                    }
                }
                by_group
                    .into_iter()
                    .map(|(g, mut taus)| {
                        taus.sort_by(|x, y| x.partial_cmp(y).unwrap());
                        (g, taus[taus.len() / 2])
                    })
                    .collect()
            };
            let (ta, tb) = (medians(&sa), medians(&sb));
            let mut deltas = BTreeMap::new();
            for (g, va) in &ta {
                if let Some(vb) = tb.get(g) {
                    deltas.insert(format!("tau_median_delta_{g}"), va - vb);
                }
            }
            diff.insert("tau_deltas".into(), json!(deltas));
        }
        other => {
            return Err(format!("compare does not support kind {other}"));
        }
    }
    Ok(json!(diff))
}

fn gamma_deltas(
    a: &[metrics::VarianceRatioReport],
    b: &[metrics::VarianceRatioReport],
) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = a
        .iter()
        .filter_map(|ra| {
            b.iter().find(|rb| rb.layer == ra.layer).map(|rb| {
                json!({
                    "layer": ra.layer,
                    "gamma_a": ra.gamma,
                    "gamma_b": rb.gamma,
                    "delta": ra.gamma - rb.gamma,
                })
            })
        })
        .collect();
    json!(rows)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

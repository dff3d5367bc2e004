//! `igb` — reproducible experiment runner for initialization-bias studies
//! of normalized ReLU MLPs.
//!
//! Subcommands map one-to-one onto experiment kinds; every run emits a
//! manifest that can be fed back through `--config` to reproduce the
//! result files byte-identically.

mod config;
mod run;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::PathBuf;

use config::{load_config, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "igb", version, about = "Initialization-bias experiments on ReLU MLPs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo ensemble of the class-0 guess fraction at initialization.
    StaticEnsemble(RunArgs),
    /// Layer-wise variance-ratio estimation over an initialization ensemble.
    GammaScan(RunArgs),
    /// Closed-form predictions per normalization kind, placement, and depth.
    TheoryTable(RunArgs),
    /// Filter initializations by regime and train each group with SGD.
    FilteredDynamics(RunArgs),
    /// Distribution checks of the leave-one-out BatchNorm estimators.
    DistTest(RunArgs),
    /// Diff two result directories of the same experiment kind.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML) or a manifest.json to reproduce.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config and IGB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides config and IGB_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble run count (overrides config and IGB_RUNS).
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads (overrides config and IGB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// First result directory.
    #[arg(long)]
    a: PathBuf,
    /// Second result directory.
    #[arg(long)]
    b: PathBuf,
    /// Directory for diff.json; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_var<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn fail_config(violations: Vec<String>) -> ! {
    let report = json!({ "error": "config", "violations": violations });
    eprintln!("{}", serde_json::to_string_pretty(&report).unwrap());
    std::process::exit(2);
}

fn fail_runtime(message: String) -> ! {
    let report = json!({ "error": "runtime", "message": message });
    eprintln!("{}", serde_json::to_string_pretty(&report).unwrap());
    std::process::exit(1);
}

fn resolve(mut cfg: ExperimentConfig, expected: ExperimentKind, args: &RunArgs) -> ExperimentConfig {
    if cfg.kind != expected {
        fail_config(vec![format!(
            "config kind {} does not match subcommand {}",
            cfg.kind.as_str(),
            expected.as_str()
        )]);
    }
    // Precedence: flag > IGB_* environment > config file.
    if let Some(seed) = args.seed.or_else(|| env_var("IGB_SEED")) {
        cfg.base_seed = seed;
    }
    if let Some(runs) = args.runs.or_else(|| env_var("IGB_RUNS")) {
        cfg.runs = Some(runs);
    }
    if let Some(threads) = args.threads.or_else(|| env_var("IGB_THREADS")) {
        cfg.threads = Some(threads);
    }
    if let Some(out) = args
        .out
        .clone()
        .or_else(|| std::env::var("IGB_OUT").ok().map(PathBuf::from))
    {
        cfg.out_dir = Some(out);
    }
    cfg
}

fn run_experiment(kind: ExperimentKind, args: RunArgs) {
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => fail_config(vec![e]),
    };
    let cfg = resolve(cfg, kind, &args);
    if let Err(violations) = cfg.validate() {
        fail_config(violations);
    }
    let execute = || match run::execute(&cfg) {
        Ok(outcome) => {
            println!("wrote {} files to {}", outcome.files.len(), outcome.out_dir.display());
            for f in &outcome.files {
                println!("  {f}");
            }
        }
        Err(e) => fail_runtime(e),
    };
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap_or_else(|e| fail_runtime(e.to_string()));
            pool.install(execute);
        }
        None => execute(),
    }
}

fn main() {
    igb_core::configure_blas_runtime();
    match Cli::parse().cmd {
        Cmd::StaticEnsemble(args) => run_experiment(ExperimentKind::StaticEnsemble, args),
        Cmd::GammaScan(args) => run_experiment(ExperimentKind::GammaScan, args),
        Cmd::TheoryTable(args) => run_experiment(ExperimentKind::TheoryTable, args),
        Cmd::FilteredDynamics(args) => run_experiment(ExperimentKind::FilteredDynamics, args),
        Cmd::DistTest(args) => run_experiment(ExperimentKind::DistTest, args),
        Cmd::Compare(args) => match run::compare(&args.a, &args.b) {
            Ok(diff) => {
                let text = serde_json::to_string_pretty(&diff).unwrap() + "\n";
                match args.out {
                    Some(dir) => {
                        if let Err(e) = std::fs::create_dir_all(&dir)
                            .map_err(|e| e.to_string())
                            .and_then(|_| {
                                std::fs::write(dir.join("diff.json"), &text)
                                    .map_err(|e| e.to_string())
                            })
                        {
                            fail_runtime(e);
                        }
                        println!("wrote {}", dir.join("diff.json").display());
                    }
                    None => print!("{text}"),
                }
            }
            Err(e) => {
                let report = json!({ "error": "compare", "message": e });
                eprintln!("{}", serde_json::to_string_pretty(&report).unwrap());
                std::process::exit(2);
            }
        },
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use phasefb::allocation::{allocate_bruteforce, allocate_greedy, allocate_uniform, AllocationProblem};
use phasefb::sim::{
    diagnostic_matrix, emit_csv, emit_matrix_csv, load_config, run_experiment, run_precode, with_workers,
    DiagnosticMatrix, Experiment, PrecoderChoice, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "phasefb", version, about = "Phase-feedback channel reconstruction and precoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign and write aggregated records as CSV.
    Sim {
        #[arg(value_enum)]
        experiment: ExperimentArg,
        #[command(flatten)]
        run: RunArgs,
        /// 16 users on a 256-element array.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Allocate feedback bits across paths and print the result as JSON.
    Allocate {
        /// Per-path weights (path powers), comma separated.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        weights: Vec<f64>,
        #[arg(long)]
        budget: u32,
        #[arg(long, value_enum, default_value_t = AllocMethod::Greedy)]
        method: AllocMethod,
    },
    /// Evaluate one precoder on every drop and write per-drop sum-SE as CSV.
    Precode {
        #[arg(long, value_enum)]
        method: PrecodeMethod,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Export a user's error covariance or outer-product error matrix as CSV.
    Diag {
        #[arg(long, value_enum)]
        matrix: MatrixArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        drop: usize,
        #[arg(long, default_value_t = 0)]
        user: usize,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Mse,
    Delta,
    Se,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocMethod {
    Greedy,
    Uniform,
    Bruteforce,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecodeMethod {
    Gpip,
    Zf,
    Wmmse,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    Phi,
    Delta,
}

fn scenario(path: Option<&PathBuf>, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_on_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> phasefb::Result<T> + Send) -> anyhow::Result<T> {
    Ok(match workers {
        Some(w) => with_workers(w, f)??,
        None => f()?,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sim { experiment, run, paper_scale } => {
            let mut cfg = scenario(run.config.as_ref(), run.seed)?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            let kind = match experiment {
                ExperimentArg::Mse => Experiment::Mse,
                ExperimentArg::Delta => Experiment::Delta,
                ExperimentArg::Se => Experiment::Se,
            };
            let records = run_on_workers(run.workers, || run_experiment(kind, &cfg))?;
            emit_csv(&records, &run.out).with_context(|| format!("writing {}", run.out.display()))?;
            log::info!("{} records written to {}", records.len(), run.out.display());
        }
        Command::Allocate { weights, budget, method } => {
            let p = AllocationProblem::new(weights.clone(), budget)?;
            let (name, a) = match method {
                AllocMethod::Greedy => ("greedy", allocate_greedy(&p)),
                AllocMethod::Uniform => ("uniform", allocate_uniform(&p)),
                AllocMethod::Bruteforce => ("bruteforce", allocate_bruteforce(&p)?),
            };
            let out = json!({
                "method": name,
                "budget": budget,
                "weights": weights,
                "bits": a.bits,
                "objective": a.objective,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Precode { method, run } => {
            let cfg = scenario(run.config.as_ref(), run.seed)?;
            let choice = match method {
                PrecodeMethod::Gpip => PrecoderChoice::Gpip,
                PrecodeMethod::Zf => PrecoderChoice::Zf,
                PrecodeMethod::Wmmse => PrecoderChoice::Wmmse,
            };
            let records = run_on_workers(run.workers, || run_precode(&cfg, choice))?;
            emit_csv(&records, &run.out).with_context(|| format!("writing {}", run.out.display()))?;
        }
        Command::Diag { matrix, config, out, seed, drop, user } => {
            let cfg = scenario(config.as_ref(), seed)?;
            let which = match matrix {
                MatrixArg::Phi => DiagnosticMatrix::ErrorCovariance,
                MatrixArg::Delta => DiagnosticMatrix::OuterProductError,
            };
            let m = diagnostic_matrix(&cfg, drop, user, which)?;
            emit_matrix_csv(&m, &out).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let domain = err.chain().find_map(|e| e.downcast_ref::<phasefb::Error>());
    json!({
        "error": {
            "kind": domain.map_or("other", |e| e.kind()),
            "field": domain.and_then(|e| e.field()),
            "message": format!("{err:#}"),
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}

//! Command-line workflow: train a baseline, prune it, quantize it, evaluate
//! and report compression. See `aecz --help`.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use aecz_core::quantization::QuantScheme;
use aecz_core::Exec;

use commands::Context;
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "aecz", version, about = "Prune and quantize time-series anomaly detection autoencoders")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially. Defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run file (TOML). Omitted: built-in defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a baseline autoencoder.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Lottery-ticket pruning search on a baseline model.
    Prune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Linear or codebook quantization of a baseline or pruned model.
    Quantize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<QuantScheme>,
        #[arg(long)]
        bits: Option<u32>,
        /// Codebook entries (nonlinear); default 2^bits.
        #[arg(long)]
        omega: Option<usize>,
        /// Centroid width (nonlinear); default bits.
        #[arg(long)]
        psi: Option<u32>,
    },
    /// Evaluate a model file on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long)]
        point_adjust: bool,
        /// Write the per-timestep anomaly scores here.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Compression table for model files.
    Report {
        files: Vec<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the synthetic dataset as CSV.
    SynthData {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn parse_scheme(s: &str) -> Result<QuantScheme, String> {
    match s {
        "linear" => Ok(QuantScheme::Linear),
        "nonlinear" => Ok(QuantScheme::Nonlinear),
        other => Err(format!("unknown scheme {other:?} (linear|nonlinear)")),
    }
}

fn resolve(run: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(d) = &run.out_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn exec_for(jobs: Option<usize>) -> Result<Exec, CliError> {
    match jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            {
                // a pool can only be installed once per process
                let _ = rayon::ThreadPoolBuilder::new().num_threads(_n).build_global();
            }
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::default()),
    }
}

/// Runs one command, printing its human-readable summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let exec = exec_for(cli.jobs)?;
    let ctx = |run: &RunArgs, command| -> Result<Context, CliError> {
        Ok(Context {
            cfg: resolve(run)?,
            exec,
            command,
        })
    };
    match cli.command {
        Command::Train { run, output } => {
            let o = commands::cmd_train(&ctx(&run, "train")?, output)?;
            println!("{}  f1={:.4}", o.model_path.display(), o.eval.f1);
        }
        Command::Prune { run, model, output } => {
            let p = commands::cmd_prune(&ctx(&run, "prune")?, &model, output)?;
            println!(
                "{}  f1={:.4}  density={:.4}  selected candidate {} of {}",
                p.outcome.model_path.display(),
                p.outcome.eval.f1,
                p.search.weighted_density,
                p.search.selected,
                p.search.population_size
            );
        }
        Command::Quantize {
            run,
            model,
            output,
            scheme,
            bits,
            omega,
            psi,
        } => {
            let mut c = ctx(&run, "quantize")?;
            let q = &mut c.cfg.quantize;
            if let Some(s) = scheme {
                q.scheme = s;
            }
            if let Some(b) = bits {
                q.bits = b;
            }
            if omega.is_some() {
                q.omega = omega;
            }
            if psi.is_some() {
                q.psi = psi;
            }
            let o = commands::cmd_quantize(&c, &model, output)?;
            println!("{}  f1={:.4}", o.model_path.display(), o.eval.f1);
        }
        Command::Eval {
            run,
            model,
            point_adjust,
            scores,
        } => {
            let mut c = ctx(&run, "eval")?;
            c.cfg.eval.point_adjust |= point_adjust;
            let o = commands::cmd_eval(&c, &model, scores.as_deref())?;
            println!(
                "{}  stage={}  f1={:.4}  precision={:.4}  recall={:.4}  threshold={}",
                model.display(),
                o.row.stage,
                o.eval.f1,
                o.eval.precision,
                o.eval.recall,
                o.eval.threshold
            );
        }
        Command::Report { files, json } => {
            if files.is_empty() {
                return Err(CliError::Config("report needs at least one model file".into()));
            }
            let entries = commands::cmd_report(&files)?;
            print!("{}", commands::render_report(&entries));
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&entries).expect("report serializes"))
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            }
        }
        Command::SynthData { run } => {
            for p in commands::cmd_synth_data(&ctx(&run, "synth-data")?)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

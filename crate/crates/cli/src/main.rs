mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ganomaly_core::eval::{ScoreDistance, DEFAULT_WARMUP};

use commands::{EvalOptions, Scaling, CHECKPOINT_FILE};
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "ganomaly",
    version,
    about = "Adversarial encoder-decoder-encoder anomaly detection"
)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (output file for `synth`)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Extra KEY=VALUE config overrides, applied after the file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic rectangles-vs-crosses dataset
    Synth {
        /// Images per class
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Train on the normal classes of the configured dataset
    Train,
    /// Score the held-out test split and write ROC, histogram and scores
    Eval(EvalArgs),
    /// Measure per-sample scoring latency
    Bench {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Train and evaluate over a list of latent sizes or loss weights
    Sweep {
        /// Comma-separated latent sizes, e.g. 16,64,100
        #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
        latent: Option<String>,
        /// Comma-separated w_adv:w_con:w_enc triples, e.g. 1:50:1,1:25:1
        #[arg(long)]
        weights: Option<String>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Distance::L1)]
    distance: Distance,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = ScalingArg::PerSet)]
    scaling: ScalingArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    PerSet,
    Reference,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let default_ckpt = || cfg.out_dir.join(CHECKPOINT_FILE);
    match cli.command {
        Command::Synth { n, size } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| ConfigError("synth needs --out FILE".into()))?;
            commands::synth(n, size, cfg.seed, &out)?;
        }
        Command::Train => {
            let outcome = commands::train(&cfg, &cfg.out_dir, true)?;
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Eval(args) => {
            if args.bins == 0 {
                return Err(ConfigError("--bins must be positive".into()).into());
            }
            let ckpt = args.checkpoint.clone().unwrap_or_else(default_ckpt);
            let opts = EvalOptions {
                distance: match args.distance {
                    Distance::L1 => ScoreDistance::L1,
                    Distance::L2 => ScoreDistance::L2,
                },
                bins: args.bins,
                scaling: match args.scaling {
                    ScalingArg::PerSet => Scaling::PerSet,
                    ScalingArg::Reference => Scaling::Reference,
                },
            };
            let outcome = commands::eval(&cfg, &ckpt, &cfg.out_dir, &opts)?;
            println!("{}", serde_json::to_string(&outcome.summary)?);
            println!("auc {}", outcome.auc);
        }
        Command::Bench {
            checkpoint,
            repetitions,
            warmup,
            batch,
        } => {
            let ckpt = checkpoint.unwrap_or_else(default_ckpt);
            let report =
                commands::bench(&ckpt, &cfg.out_dir, batch, repetitions, warmup, cfg.seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep { latent, weights } => {
            let points = match (latent, weights) {
                (Some(l), _) => commands::parse_latent_list(&l)?,
                (None, Some(w)) => commands::parse_weight_grid(&w)?,
                (None, None) => unreachable!("clap requires one of --latent or --weights"),
            };
            let failed = commands::sweep(&cfg, &points, &cfg.out_dir)?;
            if failed > 0 {
                eprintln!("{failed} of {} sweep points failed", points.len());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

//! `san` — synthesize features, train the three stages, evaluate retrieval,
//! and verify gradients.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{EvaluateArgs, SynthArgs};
use config::RunConfig;
use san_core::dataset::SplitMode;
use san_core::error::{Result, SanError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "san", version, about = "Stacked adversarial feature synthesis for zero-shot sketch-based image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cross-domain feature file (SANF)
    Synth {
        /// Number of classes
        #[arg(long, default_value_t = 20)]
        classes: usize,
        /// Sketches per class
        #[arg(long, default_value_t = 25)]
        sketches: usize,
        /// Images per class
        #[arg(long, default_value_t = 50)]
        images: usize,
        /// Feature dimension
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Sketch noise standard deviation (images get half)
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Intrinsic dimension of the class-mean layout (0 = full sphere)
        #[arg(long, default_value_t = 3)]
        latent: usize,
        /// Use the identity cross-domain map instead of a random rotation
        #[arg(long)]
        identity_map: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one pipeline stage (1: generator, 2: refiner, 3: projector)
    Train {
        /// Config file (key=value lines)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Feature file (overrides the config)
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output directory (overrides the config)
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Epoch budget for the selected stage (overrides the config)
        #[arg(long)]
        epochs: Option<usize>,
        /// Run seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate retrieval quality against the stored split
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// zsl or gzsl; must match the trained split
        #[arg(long, default_value = "zsl")]
        mode: String,
        /// Ranking depth K
        #[arg(long)]
        k: Option<usize>,
        /// Noise draws averaged per query
        #[arg(long)]
        n_z: Option<usize>,
        /// Run the four-row ablation matrix (training missing variants)
        #[arg(long)]
        ablation_matrix: bool,
        /// Rank raw stage-1 features (skip the refiner and projector)
        #[arg(long)]
        no_stage2: bool,
        /// Rank raw refined features (skip the projector)
        #[arg(long)]
        no_siamese: bool,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check every analytic gradient against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run a deliberately corrupted gradient (must fail)
        #[arg(long, hide = true)]
        mutate: bool,
    },
}

fn effective_config(
    config: Option<PathBuf>,
    features: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(&path)?,
        None => {
            let mut c = RunConfig::default_with_seed(0);
            if let Ok(env_seed) = std::env::var("SAN_SEED") {
                let s = env_seed
                    .parse::<u64>()
                    .map_err(|e| SanError::InvalidConfig(format!("SAN_SEED: {e}")))?;
                c.set_seed(s);
            }
            c
        }
    };
    if let Some(f) = features {
        cfg.features = Some(f);
    }
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            classes,
            sketches,
            images,
            dim,
            noise,
            latent,
            identity_map,
            seed,
            out,
        } => commands::cmd_synth(&SynthArgs {
            classes,
            sketches,
            images,
            dim,
            noise,
            latent,
            identity_map,
            seed,
            out,
        }),
        Command::Train {
            config,
            stage,
            features,
            out_dir,
            epochs,
            seed,
        } => {
            let mut cfg = effective_config(config, features, out_dir, seed)?;
            if let Some(epochs) = epochs {
                match stage {
                    1 => cfg.stage1.epochs = epochs,
                    2 => cfg.stage2.epochs = epochs,
                    _ => cfg.stage3.epochs = epochs,
                }
            }
            commands::cmd_train(&cfg, stage)
        }
        Command::Evaluate {
            config,
            mode,
            k,
            n_z,
            ablation_matrix,
            no_stage2,
            no_siamese,
            features,
            out_dir,
            seed,
        } => {
            let mut cfg = effective_config(config, features, out_dir, seed)?;
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(n_z) = n_z {
                cfg.n_z = n_z;
            }
            cfg.validate()?;
            commands::cmd_evaluate(
                &cfg,
                &EvaluateArgs {
                    mode: SplitMode::parse(&mode)?,
                    ablation_matrix,
                    no_stage2,
                    no_siamese,
                },
            )
        }
        Command::Gradcheck { eps, seed, mutate } => commands::cmd_gradcheck(eps, seed, mutate),
    }
}

/// 2: config, 3: data/format, 4: numeric, 5: missing prerequisite.
fn exit_code(e: &SanError) -> i32 {
    match e {
        SanError::InvalidConfig(_) => 2,
        SanError::Numeric(_) => 4,
        SanError::Prerequisite(_) => 5,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

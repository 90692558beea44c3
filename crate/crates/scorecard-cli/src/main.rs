//! Command-line front end for the credit-scoring pipeline: generate a
//! synthetic cohort, build features, train bureau-only and bureau-plus-app
//! models, explain them, and compare them under a bootstrap, whole-cohort
//! and per segment. Every run is driven by one TOML config plus a seed,
//! and every output lands in the provenance manifest.

mod artifacts;
mod commands;
mod config;

use anyhow::Result;
use clap::{Parser, Subcommand};
use commands::Ctx;
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "scorecard", version, about = "Desk-scale credit scorecard pipeline")]
struct Cli {
    /// TOML run config; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size of the worker thread pool (default: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: users, their event history and the
    /// ground-truth sidecar.
    Generate {
        /// Cohort preset (country_a, country_b, fast); beats the config.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Build the feature matrix and segmentation scores from users and
    /// events.
    Featurize,
    /// Fit the boosted-tree model for each configured variant.
    Train {
        /// Train only this variant (bureau_only or bureau_plus_app).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score the cohort in-sample and report threshold, cost and rank
    /// metrics.
    Evaluate {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Per-user feature attributions plus the importance ranking.
    Explain {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Bootstrap comparison of the variants, whole cohort and per
    /// segment side.
    Compare {
        /// Comma-separated segmentations to run (besides the whole
        /// cohort); defaults to the config list.
        #[arg(long)]
        segments: Option<String>,
        /// Compare two existing iteration-metrics files instead of
        /// refitting.
        #[arg(long, requires = "iterations_b")]
        iterations_a: Option<PathBuf>,
        #[arg(long, requires = "iterations_a")]
        iterations_b: Option<PathBuf>,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("worker pool is configured before first use");
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out.display().to_string();
    }
    let resolved = cfg.to_toml_string()?;
    let ctx = Ctx {
        config_hash: artifacts::sha256_hex(&resolved),
        cfg,
    };
    log::debug!("config hash {}", ctx.config_hash);

    match &cli.command {
        Command::Generate { preset } => commands::cmd_generate(&ctx, preset.as_deref()),
        Command::Featurize => commands::cmd_featurize(&ctx),
        Command::Train { variant } => commands::cmd_train(&ctx, variant.as_deref()),
        Command::Evaluate { variant } => commands::cmd_evaluate(&ctx, variant.as_deref()),
        Command::Explain { variant } => commands::cmd_explain(&ctx, variant.as_deref()),
        Command::Compare {
            segments,
            iterations_a,
            iterations_b,
        } => commands::cmd_compare(
            &ctx,
            segments.as_deref(),
            iterations_a.as_deref(),
            iterations_b.as_deref(),
        ),
        Command::PrintConfig => {
            print!("{resolved}");
            Ok(())
        }
    }
}

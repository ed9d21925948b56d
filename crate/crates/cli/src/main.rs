use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panfuse_cli::commands::{run, Command};
use panfuse_cli::{Overrides, RunConfig};

/// Panoptic fusion, ensembling and evaluation.
///
/// Settings come from the TOML file given with --config; flags override it.
/// Set PANFUSE_LOG (error, warn, info, debug) for log verbosity.
#[derive(Parser)]
#[command(name = "panfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(short = 'j', long, global = true)]
    parallelism: Option<usize>,
    #[arg(short, long = "output", global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    gt_json: Option<PathBuf>,
    #[arg(long, global = true)]
    gt_png_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pred_json: Option<PathBuf>,
    #[arg(long, global = true)]
    pred_png_dir: Option<PathBuf>,
    /// Instance results as NAME=PATH; repeat for several experts.
    #[arg(long, global = true, value_parser = parse_named)]
    instances: Vec<(String, PathBuf)>,
    /// Folder of `.pscm` confidence maps; repeat to ensemble.
    #[arg(long, global = true)]
    semantic: Vec<PathBuf>,
    #[arg(long, global = true)]
    score_threshold: Option<f64>,
    #[arg(long, global = true)]
    overlap_threshold: Option<f64>,
    #[arg(long, global = true)]
    stuff_area_min: Option<u64>,
    /// Number of synthetic images.
    #[arg(long, global = true)]
    images: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic dataset with degraded predictions.
    Synth,
    /// Merge experts, ensemble semantic maps and fuse into panoptic output.
    Fuse,
    /// Panoptic quality of a prediction against ground truth.
    EvalPq,
    /// Semantic mIoU from a panoptic prediction or semantic maps.
    EvalMiou,
    /// COCO-style box and mask mAP of instance results.
    EvalMap,
    /// Score the four combination strategies on a synthetic dataset.
    Matrix,
    /// Colorize panoptic images and write a legend.
    Visualize,
    /// Check datasets and routing for consistency.
    Validate,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_owned(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Synth => Command::Synth,
        Cmd::Fuse => Command::Fuse,
        Cmd::EvalPq => Command::EvalPq,
        Cmd::EvalMiou => Command::EvalMiou,
        Cmd::EvalMap => Command::EvalMap,
        Cmd::Matrix => Command::Matrix,
        Cmd::Visualize => Command::Visualize,
        Cmd::Validate => Command::Validate,
    };
    let overrides = Overrides {
        seed: cli.seed,
        parallelism: cli.parallelism,
        output_dir: cli.output_dir,
        gt_json: cli.gt_json,
        gt_png_dir: cli.gt_png_dir,
        pred_json: cli.pred_json,
        pred_png_dir: cli.pred_png_dir,
        instances: cli.instances,
        semantic: cli.semantic,
        score_threshold: cli.score_threshold,
        overlap_threshold: cli.overlap_threshold,
        stuff_area_min: cli.stuff_area_min,
        images: cli.images,
    };
    let result = (|| {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&overrides)?;
        run(command, &cfg)
    })();
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

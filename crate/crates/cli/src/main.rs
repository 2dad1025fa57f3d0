use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exemvad_cli::{CliError, Overrides, Pipeline, PipelineConfig};
use exemvad_core::eval::EvalReport;

/// Exemplar-based video anomaly detection pipeline.
#[derive(Debug, Parser)]
#[command(name = "exemvad", version)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root of all stage outputs; overrides `paths.stage_dir`.
    #[arg(long, global = true)]
    stage_dir: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every random choice (synthetic data generation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Description backend: `mock` or the base URL of a /describe service.
    #[arg(long, global = true, value_name = "URL|mock")]
    backend_describe: Option<String>,
    /// Embedding backend: `mock` or the base URL of an /embed service.
    #[arg(long, global = true, value_name = "URL|mock")]
    backend_embed: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the seeded synthetic scene suite.
    Synth,
    /// Validate and normalize detections, ground truth and video metadata.
    Ingest,
    /// Form pair and single units at every anchor frame.
    Pair,
    /// Cut and annotate the crop windows of every unit.
    Crop,
    /// Describe every unit with the description backend.
    Describe,
    /// Build the nominal exemplar model from the training videos.
    Build,
    /// Score the test videos against the nominal model.
    Score,
    /// Build the attribute-fused exemplar model.
    FuseBuild,
    /// Score the test videos against the fused model.
    FuseScore,
    /// Evaluate scored test videos (RBDC, TBDC, frame AUC).
    Eval {
        /// Evaluate the fused scores instead of the base scores.
        #[arg(long)]
        fused: bool,
    },
    /// Print the highest-scoring units with their nearest exemplar.
    Explain {
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long)]
        fused: bool,
    },
    /// Run every stage in order.
    Run {
        /// Generate the synthetic suite first and use it as input.
        #[arg(long)]
        synth: bool,
        /// Also build, score and evaluate the fused model.
        #[arg(long)]
        fuse: bool,
    },
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: rbdc {:.4}  tbdc {:.4}  frame_auc {:.4}  ({} frames, {} gt regions, {} gt tracks)",
        r.rbdc, r.tbdc, r.frame_auc, r.frames, r.gt_regions, r.gt_tracks
    );
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        stage_dir: cli.stage_dir,
        workers: cli.workers,
        seed: cli.seed,
        backend_describe: cli.backend_describe,
        backend_embed: cli.backend_embed,
    };
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    if matches!(cli.command, Command::Synth | Command::Run { synth: true, .. }) {
        cfg.synth.enabled = true;
    }
    let pipeline = Pipeline::new(cfg);
    let manifest = match cli.command {
        Command::Synth => pipeline.synth()?,
        Command::Ingest => pipeline.ingest()?,
        Command::Pair => pipeline.pair()?,
        Command::Crop => pipeline.crop()?,
        Command::Describe => pipeline.describe()?,
        Command::Build => pipeline.build()?,
        Command::Score => pipeline.score()?,
        Command::FuseBuild => pipeline.fuse_build()?,
        Command::FuseScore => pipeline.fuse_score()?,
        Command::Eval { fused } => {
            print_report(if fused { "fused" } else { "base" }, &pipeline.eval(fused)?);
            return Ok(());
        }
        Command::Explain { top, fused } => {
            for block in pipeline.explain(top, fused)? {
                println!("{block}");
            }
            return Ok(());
        }
        Command::Run { fuse, .. } => {
            let outcome = pipeline.run(fuse)?;
            if let Some(r) = &outcome.report {
                print_report("base", r);
            }
            if let Some(r) = &outcome.fused_report {
                print_report("fused", r);
            }
            return Ok(());
        }
    };
    println!("{}: {} outputs", manifest.stage, manifest.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

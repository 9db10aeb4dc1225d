//! `tsra` — simulate weakly misaligned RGB/IR rotated-box datasets, train
//! the alignment head, and evaluate the correction.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 numeric failures during
//! training, 4 artifact mismatches (datasets/checkpoints). The `TSRA_SEED`
//! environment variable overrides the configured seed everywhere.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{parse_box, CliError};
use std::path::PathBuf;
use tsra::evaluation::DeviationThresholds;
use tsra::modality::Polarity;

#[derive(Parser)]
#[command(
    name = "tsra",
    version,
    about = "Translation-scale-rotation alignment toolkit for weakly misaligned RGB/IR rotated boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolarityArg {
    Bright,
    Dark,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Bright => Polarity::Bright,
            PolarityArg::Dark => Polarity::Dark,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired RGB/IR dataset with known deviations.
    Simulate {
        /// JSON run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes (overrides the config).
        #[arg(long)]
        scenes: Option<u64>,
        /// Seed (overrides the config; TSRA_SEED beats this flag).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the alignment head on a simulated dataset.
    TrainAlign {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint file to write; loss_curve.csv and
        /// effective_config.json land next to it.
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Ablation: always use infrared as the reference modality.
        #[arg(long)]
        no_ms: bool,
        /// Ablation: skip jitter augmentation.
        #[arg(long)]
        no_jitter: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate alignment on the held-out split of a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Trained checkpoint (optional with --oracle).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report directory for report.csv and aligned.jsonl.
        #[arg(long)]
        report: PathBuf,
        /// Config override; defaults to the echo stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_ms: bool,
        /// Bypass the head and decode ground-truth deviations instead.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deviation statistics of a paired dataset (CSV per class).
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        pos_px: f64,
        #[arg(long, default_value_t = 3.0)]
        size_px: f64,
        #[arg(long, default_value_t = 3.0)]
        angle_deg: f64,
    },
    /// Modality-selection score of one annotation on one image (PGM/PPM).
    MsScore {
        #[arg(long)]
        image: PathBuf,
        /// Box as cx,cy,w,h,theta (theta in radians).
        #[arg(long = "box")]
        bbox: String,
        #[arg(long, default_value_t = 1.25)]
        extend: f64,
        #[arg(long, value_enum, default_value_t = PolarityArg::Bright)]
        polarity: PolarityArg,
    },
    /// Exact rotated IoU of two boxes.
    Iou {
        /// Box as cx,cy,w,h,theta (theta in radians).
        #[arg(long)]
        box_a: String,
        #[arg(long)]
        box_b: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            scenes,
            seed,
        } => commands::cmd_simulate(config.as_deref(), &out, scenes, seed),
        Command::TrainAlign {
            dataset,
            config,
            out_checkpoint,
            no_ms,
            no_jitter,
            seed,
        } => commands::cmd_train_align(
            &dataset,
            config.as_deref(),
            &out_checkpoint,
            no_ms,
            no_jitter,
            seed,
        ),
        Command::Eval {
            dataset,
            checkpoint,
            report,
            config,
            no_ms,
            oracle,
            seed,
        } => commands::cmd_eval(
            &dataset,
            checkpoint.as_deref(),
            &report,
            config.as_deref(),
            no_ms,
            oracle,
            seed,
        ),
        Command::Stats {
            dataset,
            out,
            pos_px,
            size_px,
            angle_deg,
        } => commands::cmd_stats(
            &dataset,
            out.as_deref(),
            DeviationThresholds {
                pos_px,
                size_px,
                angle_deg,
            },
        ),
        Command::MsScore {
            image,
            bbox,
            extend,
            polarity,
        } => {
            let bbox = parse_box(&bbox)?;
            commands::cmd_ms_score(&image, &bbox, extend, polarity.into())
        }
        Command::Iou { box_a, box_b } => {
            let a = parse_box(&box_a)?;
            let b = parse_box(&box_b)?;
            commands::cmd_iou(&a, &b)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}

//! Pipeline driver for the thermopose toolkit.
//!
//! Stages, in order: `synth-gen` renders the phantom dataset,
//! `cycaug-train` learns the uncovered->covered translators, `augment`
//! builds the translated and occlusion-heavy training pools, `pose-train`
//! fits a heatmap pose estimator over the chosen variant mix, `distill`
//! self-distills it on unlabeled covered frames, `eval` scores any
//! checkpoint as PCKh on the test split, and `plot` renders the report
//! charts.
//!
//! Exit codes: 0 success, 2 invalid configuration or data, 3 missing
//! prerequisite artifact, 4 training failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermopose::error::Error;

use thermopose_cli::config::{OutLayout, PipelineConfig, Profile};
use thermopose_cli::stages::{self, VariantSet};

#[derive(Parser)]
#[command(name = "thermopose", about = "Cross-domain in-bed pose estimation pipeline", version)]
struct Cli {
    /// JSON run configuration; defaults to the profile preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed override (re-derives every stage seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "runs/toy")]
    out: PathBuf,

    /// Built-in configuration preset.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Toy)]
    profile: Profile,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic phantom dataset.
    SynthGen,
    /// Train the thin and thick translation generator pairs.
    CycaugTrain,
    /// Apply translators + occlusion pipeline to the labeled source split.
    Augment,
    /// Train a pose estimator over a variant mix.
    PoseTrain {
        /// Which augmentation variants enter training.
        #[arg(long, value_enum, default_value_t = VariantSet::CycaugExtreme)]
        variants: VariantSet,
        /// Checkpoint label; defaults to the variant set name.
        #[arg(long)]
        label: Option<String>,
    },
    /// Self-distill a trained model on unlabeled covered frames.
    Distill {
        /// Teacher checkpoint base path (without extension).
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Score a checkpoint on the labeled test split.
    Eval {
        /// Checkpoint base path (without extension).
        #[arg(long)]
        ckpt: PathBuf,
        /// Method label for the report and ablation table.
        #[arg(long)]
        label: String,
        /// Row position in the ablation table.
        #[arg(long, default_value_t = 0)]
        order: usize,
    },
    /// Render PCKh curve and per-joint charts from the reports.
    Plot,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => PipelineConfig::preset(cli.profile, 7),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    let layout = OutLayout::new(&cli.out);

    let result = match &cli.command {
        Command::SynthGen => stages::synth_gen(&cfg, &layout),
        Command::CycaugTrain => stages::cycaug_train(&cfg, &layout),
        Command::Augment => stages::augment(&cfg, &layout),
        Command::PoseTrain { variants, label } => {
            let label = label.clone().unwrap_or_else(|| variants.default_label().to_string());
            stages::pose_train(&cfg, &layout, *variants, &label)
        }
        Command::Distill { teacher } => stages::distill_stage(&cfg, &layout, teacher),
        Command::Eval { ckpt, label, order } => stages::eval_stage(&cfg, &layout, ckpt, label, *order),
        Command::Plot => stages::plot_stage(&cfg, &layout),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::MissingPrerequisite(_)) => 3,
        Some(Error::TrainingFailure(_)) => 4,
        Some(Error::InvalidArgument(_))
        | Some(Error::MalformedDataset { .. })
        | Some(Error::CheckpointIncompatible(_))
        | Some(Error::Json { .. }) => 2,
        _ => 1,
    }
}

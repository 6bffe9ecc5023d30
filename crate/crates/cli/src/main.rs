use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use detkit::commands::{
    cmd_augment, cmd_eval, cmd_export_trainer, cmd_split, cmd_synth, EvalPhase,
};
use detkit::config::PipelineConfig;
use detkit::CliError;

#[derive(Parser)]
#[command(
    name = "detkit",
    version,
    about = "Detection-dataset engineering: augmentation, synthetic color variants, patient-aware splits, trainer export, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the dataset variant (WL, WL+GAN, WL50+GAN).
    #[arg(long)]
    variant: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize augmented image/label pairs for the configured variant.
    Augment(CommonArgs),
    /// Synthesize color variants of every WL frame.
    Synth(CommonArgs),
    /// Build the configured variant and split it into train+val and test.
    Split(CommonArgs),
    /// Evaluate prediction files against ground-truth manifests.
    Eval(EvalArgs),
    /// Write the trainer hyperparameter export.
    ExportTrainer(CommonArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ground-truth manifest for a single-phase evaluation.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Prediction directory holding `<stem>.pred.txt` files.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Phase name for the single-phase form.
    #[arg(long, default_value = "Test")]
    phase_name: String,
    /// Additional phases as NAME=GT_MANIFEST=PRED_DIR (repeatable).
    #[arg(long)]
    phase: Vec<String>,
    /// Treat missing prediction files as zero detections.
    #[arg(long)]
    allow_missing: bool,
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &common.variant {
        let wl_fraction = cfg.variant.wl_fraction;
        cfg.variant = detkit_core::datasetops::VariantSpec::by_name(name).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown variant '{name}' (expected WL, WL+GAN, or WL50+GAN)"
            ))
        })?;
        // a config-provided fraction still applies to a downsampling variant
        if cfg.variant.wl_fraction < 1.0 && wl_fraction < 1.0 {
            cfg.variant.wl_fraction = wl_fraction;
        }
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(workers) = common.workers {
        if workers == 0 {
            return Err(CliError::Validation("--workers must be >= 1".into()));
        }
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn parse_phase(spec: &str) -> Result<EvalPhase, CliError> {
    let parts: Vec<&str> = spec.splitn(3, '=').collect();
    if parts.len() != 3 {
        return Err(CliError::Validation(format!(
            "--phase expects NAME=GT_MANIFEST=PRED_DIR, got '{spec}'"
        )));
    }
    Ok(EvalPhase {
        name: parts[0].to_string(),
        gt_manifest: PathBuf::from(parts[1]),
        pred_dir: PathBuf::from(parts[2]),
    })
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap renders its own message; keep it verbatim
        let _ = e.print();
        CliError::Validation(String::new())
    })?;

    match cli.command {
        Command::Augment(common) => {
            let cfg = load_config(&common)?;
            let outcome = cmd_augment(&cfg)?;
            println!(
                "augment: wrote {} frame(s), skipped {}; manifest {}",
                outcome.written,
                outcome.skipped.len(),
                outcome.manifest_path.display()
            );
        }
        Command::Synth(common) => {
            let cfg = load_config(&common)?;
            let outcome = cmd_synth(&cfg)?;
            println!(
                "synth: wrote {} frame(s), skipped {}; manifest {}",
                outcome.written,
                outcome.skipped.len(),
                outcome.manifest_path.display()
            );
        }
        Command::Split(common) => {
            let cfg = load_config(&common)?;
            let outcome = cmd_split(&cfg)?;
            println!(
                "split: {} train+val / {} test; manifests {} and {}",
                outcome.train_val,
                outcome.test,
                outcome.train_val_path.display(),
                outcome.test_path.display()
            );
        }
        Command::Eval(args) => {
            let cfg = load_config(&args.common)?;
            let mut phases = Vec::new();
            match (&args.gt, &args.pred) {
                (Some(gt), Some(pred)) => phases.push(EvalPhase {
                    name: args.phase_name.clone(),
                    gt_manifest: gt.clone(),
                    pred_dir: pred.clone(),
                }),
                (None, None) => {}
                _ => {
                    return Err(CliError::Validation(
                        "--gt and --pred must be given together".into(),
                    ))
                }
            }
            for spec in &args.phase {
                phases.push(parse_phase(spec)?);
            }
            let rows = cmd_eval(&cfg, &phases, args.allow_missing)?;
            print!("{}", detkit::report::render_table(&rows));
        }
        Command::ExportTrainer(common) => {
            let cfg = load_config(&common)?;
            let path = cmd_export_trainer(&cfg)?;
            println!("export-trainer: wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Validation(msg) if msg.is_empty() => {}
                _ => eprintln!("error: {err}"),
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

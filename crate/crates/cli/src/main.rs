use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use adaseg_cli::config::PipelineConfig;
use adaseg_cli::stages::{
    cmd_build_records, cmd_eval, cmd_infer, cmd_synth, cmd_train_generator, cmd_train_segmentor, cmd_translate,
    StageContext,
};

/// Cross-modality domain adaptation pipeline for 3D segmentation:
/// synthesize a dual-domain benchmark, train slice translators, train the
/// dual-domain pseudo-label generator, filter pseudo labels, train the
/// final segmentor, and evaluate on the target domain.
#[derive(Parser)]
#[command(name = "adaseg", version, about)]
struct Cli {
    /// TOML configuration file; defaults apply for every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Working directory holding all stage artifacts.
    #[arg(long, global = true, default_value = "work")]
    workdir: PathBuf,

    /// Skip stages whose artifacts are already complete.
    #[arg(long, global = true)]
    resume: bool,

    /// Redo stages even when their artifacts exist.
    #[arg(long, global = true)]
    force: bool,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dual-domain dataset.
    Synth,
    /// Train the slice translators and write the augmented training sets.
    Translate,
    /// Train the dual-domain pseudo-label generator on the augmented sets.
    TrainGenerator,
    /// Predict the unlabeled target cohort and build filtered pseudo-label
    /// records.
    BuildRecords,
    /// Train the final segmentor jointly on source labels and weighted
    /// pseudo labels.
    TrainSegmentor,
    /// Run target-domain inference with the trained segmentor.
    Infer,
    /// Compute Dice/ASSD metrics and write the report.
    Eval,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        anyhow::bail!("no subcommand given; see --help");
    };
    let ctx = StageContext::new(&cli.workdir, config, cli.resume, cli.force);
    match command {
        Command::Synth => cmd_synth(&ctx),
        Command::Translate => cmd_translate(&ctx),
        Command::TrainGenerator => cmd_train_generator(&ctx),
        Command::BuildRecords => cmd_build_records(&ctx),
        Command::TrainSegmentor => cmd_train_segmentor(&ctx),
        Command::Infer => cmd_infer(&ctx),
        Command::Eval => cmd_eval(&ctx),
    }
    .context("pipeline stage failed")?;
    Ok(())
}

//! Argument parsing and dispatch for the `dummynet` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dummynet_core::pipeline::{Pipeline, PipelineConfig, SampleMode, StageStatus};
use dummynet_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_ARTIFACT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dummynet", version, about = "Pedestrian data augmentation with controlled pose and appearance")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "dummynet.toml")]
    pub config: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for data-parallel work inside a stage.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use only appearance sources whose mean intensity is at most this value.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "0.35")]
    pub max_brightness: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural toy dataset to the data directory.
    MakeToyData,
    /// Cluster the keypoint corpus and fit per-cluster pose models.
    FitPoses,
    /// Train the keypoint-to-mask network.
    TrainMask,
    /// Train the appearance autoencoder.
    TrainVae,
    /// Train the generator and critic.
    TrainGan,
    /// Generate positives for the classification task.
    Sample {
        #[arg(long, default_value = "default", value_parser = parse_mode)]
        mode: SampleMode,
    },
    /// Insert one generated person into every scene.
    Augment,
    /// Train and evaluate the classifier, optionally with generated positives.
    Eval {
        #[arg(long, value_parser = parse_mode)]
        samples: Option<SampleMode>,
    },
    /// Compare sampling modes against the real-only baseline over several seeds.
    Ablate {
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<SampleMode>,
    },
}

fn parse_mode(s: &str) -> Result<SampleMode, String> {
    SampleMode::parse(s).map_err(|e| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::MissingArtifact { .. } => EXIT_MISSING_ARTIFACT,
        _ => EXIT_FAILURE,
    }
}

fn status(name: &str, s: StageStatus) {
    match s {
        StageStatus::Ran => println!("{name}: done"),
        StageStatus::UpToDate => println!("{name}: up to date"),
    }
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if cli.max_brightness.is_some() {
        config.max_brightness = cli.max_brightness;
    }
    let seed = config.seed;
    let p = Pipeline::new(config)?;
    match &cli.command {
        Command::MakeToyData => {
            p.make_toy_data()?;
            println!("toy data written to {}", p.config.data_dir.display());
        }
        Command::FitPoses => status("fit-poses", p.fit_poses()?),
        Command::TrainMask => status("train-mask", p.train_mask()?),
        Command::TrainVae => status("train-vae", p.train_vae()?),
        Command::TrainGan => status("train-gan", p.train_gan()?),
        Command::Sample { mode } => status("sample", p.sample(*mode, seed)?),
        Command::Augment => status("augment", p.augment(seed)?),
        Command::Eval { samples } => {
            let out = p.eval(*samples, seed)?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
        }
        Command::Ablate { modes } => {
            let mut modes = if modes.is_empty() { p.config.ablation.modes.clone() } else { modes.clone() };
            if !modes.contains(&SampleMode::Default) {
                modes.insert(0, SampleMode::Default);
            }
            let report = p.ablate(&modes)?;
            print!("{}", report.to_markdown());
        }
    }
    Ok(())
}

/// Runs the command and maps failures to exit codes.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

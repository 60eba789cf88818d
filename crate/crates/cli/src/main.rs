//! `mslm`: build multimodal spatial maps from RGB-D/audio datasets, query
//! them, and navigate with language.
//!
//! Exit status is 0 on success, 1 when the pipeline reports an error and 2
//! for malformed command lines or configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::ProviderArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

macro_rules! domain_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        })*
    };
}

domain_errors!(
    std::io::Error,
    csv::Error,
    serde_json::Error,
    mslm::featmap::FeatMapError,
    mslm::query::QueryError,
    mslm::heatmap::HeatmapError,
    mslm::providers::ProviderError,
    mslm::posedb::PoseDbError,
    mslm::visloc::VislocError,
    mslm::instruct::InstructError,
    mslm::instruct::ExecError,
    mslm::plan::PlanError,
    mslm::audio::AudioError,
    mslm::simharness::SimError,
);

#[derive(Debug, Parser)]
#[command(name = "mslm", version, about = "Multimodal spatial language maps")]
pub struct Cli {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a dataset into a feature map (and optionally an audio database).
    BuildMap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cell size in meters.
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Cells per side; derived from the camera track when omitted.
        #[arg(long)]
        cells: Option<u32>,
        #[arg(long, default_value_t = 20)]
        layers: u32,
        /// Also segment the dataset audio and write its pose-indexed database.
        #[arg(long = "audio-db")]
        audio_db: Option<PathBuf>,
    },
    /// Segment a map against labels and write the top-down label image.
    Query {
        #[arg(long)]
        map: PathBuf,
        /// Comma-separated labels; the standard object classes by default.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmap for an object, a sound, an image, or their fusion.
    Heatmap {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        object: Option<String>,
        #[arg(long)]
        sound: Option<String>,
        #[arg(long = "audio-db")]
        audio_db: Option<PathBuf>,
        /// Query image manifest.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long = "ref-db")]
        ref_db: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Decay per cell for the first modality; later ones use the auxiliary decay.
        #[arg(long)]
        decay: Option<f64>,
        /// Top-down PGM; the raw volume goes next to it with a `.raw` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embodiment obstacle map from the segmented map.
    Obstacles {
        #[arg(long)]
        map: PathBuf,
        /// Classes the embodiment can pass over or under.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn an instruction into a navigation program.
    Plan {
        #[arg(long)]
        instruction: String,
        /// Prompt context: multimodal or spatial.
        #[arg(long, default_value = "multimodal")]
        prompt: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a program (or an instruction) on a map.
    Navigate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, conflicts_with = "instruction")]
        program: Option<PathBuf>,
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long, default_value = "multimodal")]
        prompt: String,
        /// Start as `x,y,heading` in map cells and degrees; nearest free
        /// cell to the map center by default.
        #[arg(long)]
        start: Option<String>,
        /// Action profile: vlmaps, avlmaps or codegen.
        #[arg(long, default_value = "avlmaps")]
        profile: String,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long = "audio-db")]
        audio_db: Option<PathBuf>,
        #[arg(long = "ref-db")]
        ref_db: Option<PathBuf>,
        /// Action list, one per line.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a benchmark suite on generated scenes and write a CSV report.
    Bench {
        /// spatial, disambiguation or embodiment.
        #[arg(long)]
        suite: String,
        /// Number of scenes.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long = "first-seed", default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scene and its synthetic dataset.
    GenScene {
        /// small, medium or large.
        #[arg(long, default_value = "medium")]
        profile: String,
        /// Plant this many instances of one class with a sound cue.
        #[arg(long)]
        duplicate: Option<usize>,
        #[arg(long, default_value_t = 0)]
        sounds: usize,
        /// Output directory (scene.json, dataset.txt and frame files).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

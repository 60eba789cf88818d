//! Procedural indoor scenes, synthetic sensor streams and the benchmark
//! suites that run the full pipeline over them.

use thiserror::Error;

use crate::audio::AudioError;
use crate::blob::BlobError;
use crate::featmap::FeatMapError;
use crate::geometry::GeometryError;
use crate::plan::PlanError;
use crate::posedb::PoseDbError;
use crate::providers::ProviderError;
use crate::query::QueryError;

mod bench;
mod dataset;
mod metrics;
mod pipeline;
mod render;
mod scene;

pub use bench::{
    ambiguous_scene, blocked_route_scene, run_disambiguation, run_embodiment, run_episode, run_spatial, sample_episodes, DisambiguationReport, EmbodimentRow,
    MappedScene, RecallRow, SpatialClause, SpatialConfig, SpatialEpisode, SpatialReport, SpatialRow, BENCH_DIM,
};
pub use dataset::{load_dataset, save_dataset, DATASET_MAGIC};
pub use metrics::{eval_recall, eval_sr_spl, in_a_row, recall_from_distances, spl_term, EpisodeResult, RecallReport, SrSpl, RECALL_THRESHOLDS, SUCCESS_RADIUS_M};
pub use pipeline::{build_audio_database, build_feature_map, MapProducts, MAP_LAYERS, MAP_SCALE, MIN_INSTANCE_CELLS, OBSTACLE_BAND};
pub use render::{coverage_trajectory, render_frame, synth_stream, Dataset, SoundEvent, StreamParams, SynthFrame, Waypoint, CAMERA_HEIGHT, MAX_DEPTH, SAMPLE_RATE};
pub use scene::{
    generate_scene, Aabb, Duplicate, SceneConfig, SceneObject, SizeProfile, SoundSource, SyntheticScene, CORRIDOR, CUE_OFFSET, FLOOR, OBJECT_CLASSES,
    WALL_MARGIN,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene: {0}")]
    Scene(String),
    #[error("dataset manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    PoseDb(#[from] PoseDbError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    FeatMap(#[from] FeatMapError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

//! Dataset to map products: fused features, segmentation, obstacle maps and
//! the audio database.

use rayon::prelude::*;

use super::render::Dataset;
use super::scene::{FLOOR, OBJECT_CLASSES};
use super::SimError;
use crate::audio::{build_audio_db, noise_gate, split_on_silence, GateParams, SilenceParams};
use crate::featmap::{FeatureGrid, PosedFrame};
use crate::geometry::GridSpec;
use crate::instruct::SceneWorld;
use crate::posedb::PoseFeatureDb;
use crate::providers::Provider;
use crate::query::{obstacle_map_from_segmentation, obstacle_mask, segment_grid, LabelSet, ObstacleGrid, SegmentationGrid, Similarity};

pub const MAP_SCALE: f64 = 0.1;
/// Vertical layers; 2 m of height at [`MAP_SCALE`].
pub const MAP_LAYERS: u32 = 20;
/// Heights (meters) whose points count towards the geometric obstacle map.
pub const OBSTACLE_BAND: (f64, f64) = (0.1, 2.0);
/// Smaller connected components are treated as segmentation noise.
pub const MIN_INSTANCE_CELLS: usize = 3;

/// Fuses every frame of `dataset` into a feature grid, in parallel chunks
/// merged in frame order.
pub fn build_feature_map(dataset: &Dataset, provider: &dyn Provider, spec: GridSpec) -> Result<FeatureGrid, SimError> {
    let dim = provider.dim();
    let partials = dataset
        .frames
        .par_chunks(16)
        .map(|chunk| {
            let mut grid = FeatureGrid::new(spec, dim);
            for f in chunk {
                let frame = PosedFrame {
                    features: provider.embed_pixels(&f.raster)?,
                    depth: f.depth.clone(),
                    intrinsics: dataset.intrinsics,
                    pose: f.pose,
                };
                grid.fuse_frame(&frame)?;
            }
            Ok(grid)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    partials.into_iter().try_fold(FeatureGrid::new(spec, dim), |acc, g| Ok(acc.merge(&g)?))
}

/// Open-vocabulary products of one feature map.
#[derive(Debug, Clone)]
pub struct MapProducts {
    pub spec: GridSpec,
    pub labels: LabelSet,
    pub segmentation: SegmentationGrid,
    /// Geometric obstacle map from point heights.
    pub base: ObstacleGrid,
}

impl MapProducts {
    /// Segments `grid` against `classes` (the floor is always added first).
    pub fn build(grid: &FeatureGrid, provider: &dyn Provider, classes: &[String]) -> Result<Self, SimError> {
        let mut names = vec![FLOOR.to_string()];
        names.extend(classes.iter().filter(|c| *c != FLOOR).cloned());
        let labels = LabelSet::new(names.clone(), provider.embed_text(&names)?)?;
        let segmentation = segment_grid(grid, &labels, Similarity::Cosine)?;
        let base = obstacle_mask(&grid.occupied_points(), grid.spec(), OBSTACLE_BAND.0, OBSTACLE_BAND.1)?;
        Ok(Self { spec: *grid.spec(), labels, segmentation, base })
    }

    /// Segments against the standard scene vocabulary.
    pub fn standard(grid: &FeatureGrid, provider: &dyn Provider) -> Result<Self, SimError> {
        let classes: Vec<String> = OBJECT_CLASSES.iter().map(|c| c.to_string()).collect();
        Self::build(grid, provider, &classes)
    }

    /// Embodiment obstacle map: every non-floor class except `exclude`.
    pub fn obstacles(&self, exclude: &[&str]) -> Result<ObstacleGrid, SimError> {
        let subset: Vec<usize> = self
            .labels
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_str() != FLOOR && !exclude.contains(&l.as_str()))
            .map(|(i, _)| i)
            .collect();
        Ok(obstacle_map_from_segmentation(&self.segmentation, &self.base, &subset)?)
    }

    /// Interpreter world backed by these products.
    pub fn world(&self) -> Result<SceneWorld, SimError> {
        Ok(SceneWorld::new(self.spec, self.obstacles(&[])?).with_segmentation(&self.segmentation, &self.labels, MIN_INSTANCE_CELLS))
    }
}

/// Gates the dataset audio, splits it on silence and embeds each segment.
/// `None` when the dataset has no audio.
pub fn build_audio_database(dataset: &Dataset, provider: &dyn Provider) -> Result<Option<PoseFeatureDb>, SimError> {
    let Some(track) = &dataset.audio else { return Ok(None) };
    let gated = noise_gate(track, &GateParams::default());
    let segments = split_on_silence(&gated, &SilenceParams::default());
    Ok(Some(build_audio_db(&gated, &segments, provider, &dataset.odometry()?)?))
}

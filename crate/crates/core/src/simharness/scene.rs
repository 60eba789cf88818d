//! Box-world scenes: a floor plus axis-aligned boxes, with optional sound
//! sources.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{project_to_grid, Cell, GridSpec, Vec3};
use crate::plan::{Instance, InstanceIndex};
use crate::providers::SOUND_CLASSES;
use crate::query::ObstacleGrid;

pub const FLOOR: &str = "floor";

/// Object classes scenes draw from.
pub const OBJECT_CLASSES: &[&str] = &[
    "chair",
    "table",
    "sofa",
    "counter",
    "sink",
    "oven",
    "bookshelf",
    "laptop",
    "television",
    "refrigerator",
    "toilet",
    "backpack",
    "bed",
    "cabinet",
    "plant",
    "desk",
];

/// Minimum free gap between any two boxes, in meters.
pub const CORRIDOR: f64 = 0.8;
/// Minimum gap between a box and the room boundary.
pub const WALL_MARGIN: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Box standing on the floor, centered at `(x, z)`.
    pub fn on_floor(x: f64, z: f64, half_x: f64, half_z: f64, height: f64) -> Self {
        Self { min: [x - half_x, 0.0, z - half_z], max: [x + half_x, height, z + half_z] }
    }

    pub fn center_ground(&self) -> (f64, f64) {
        ((self.min[0] + self.max[0]) / 2.0, (self.min[2] + self.max[2]) / 2.0)
    }

    /// Ground-plane distance from `(x, z)` to the footprint; 0 inside.
    pub fn ground_distance(&self, x: f64, z: f64) -> f64 {
        let dx = (self.min[0] - x).max(0.0).max(x - self.max[0]);
        let dz = (self.min[2] - z).max(0.0).max(z - self.max[2]);
        dx.hypot(dz)
    }

    /// Ground-plane gap between two footprints (0 when they overlap).
    pub fn ground_gap(&self, o: &Aabb) -> f64 {
        let dx = (o.min[0] - self.max[0]).max(self.min[0] - o.max[0]).max(0.0);
        let dz = (o.min[2] - self.max[2]).max(self.min[2] - o.max[2]).max(0.0);
        dx.hypot(dz)
    }

    /// Nearest ray parameter `t > 0` where `origin + t * dir` enters the box.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (t1, t2) = ((self.min[a] - origin[a]) / dir[a], (self.max[a] - origin[a]) / dir[a]);
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
        (lo <= hi && lo > 0.0).then_some(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: String,
    pub bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundSource {
    pub class: String,
    pub position: [f64; 3],
}

/// Square room of side `extent` centered on the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub seed: u64,
    pub extent: f64,
    pub objects: Vec<SceneObject>,
    pub sounds: Vec<SoundSource>,
    /// Index into `objects` of the instance a duplicate-mode query targets.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeProfile {
    Small,
    Medium,
    Large,
}

impl SizeProfile {
    pub fn extent(self) -> f64 {
        match self {
            SizeProfile::Small => 6.0,
            SizeProfile::Medium => 8.0,
            SizeProfile::Large => 10.0,
        }
    }

    pub fn object_count(self) -> usize {
        match self {
            SizeProfile::Small => 5,
            SizeProfile::Medium => 8,
            SizeProfile::Large => 11,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "small" => Some(SizeProfile::Small),
            "medium" => Some(SizeProfile::Medium),
            "large" => Some(SizeProfile::Large),
            _ => None,
        }
    }
}

/// Plants `count` instances of one class at least `min_separation` meters
/// apart (center to center), ordered by increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Duplicate {
    pub count: usize,
    pub min_separation: f64,
    /// Sound class placed beside the target instance.
    pub cue: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub profile: SizeProfile,
    pub duplicate: Option<Duplicate>,
    /// Sound sources at random free positions.
    pub sounds: usize,
}

impl SceneConfig {
    pub fn new(profile: SizeProfile) -> Self {
        Self { profile, duplicate: None, sounds: 0 }
    }
}

const PLACEMENT_TRIES: usize = 2000;
/// Distance from the target box face to its sound cue.
pub const CUE_OFFSET: f64 = 0.4;

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> Aabb {
    let (hx, hz) = (rng.random_range(0.25..0.5), rng.random_range(0.25..0.5));
    let h = rng.random_range(0.4..1.1);
    let lim_x = extent / 2.0 - WALL_MARGIN - hx;
    let lim_z = extent / 2.0 - WALL_MARGIN - hz;
    Aabb::on_floor(rng.random_range(-lim_x..lim_x), rng.random_range(-lim_z..lim_z), hx, hz, h)
}

fn fits(b: &Aabb, placed: &[SceneObject]) -> bool {
    placed.iter().all(|o| o.bounds.ground_gap(b) >= CORRIDOR)
}

impl SyntheticScene {
    /// Scene with the given boxes and no sounds.
    pub fn with_objects(seed: u64, extent: f64, objects: Vec<SceneObject>) -> Result<Self, SimError> {
        let scene = Self { seed, extent, objects, sounds: Vec::new(), target: None };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let half = self.extent / 2.0;
        for o in &self.objects {
            let b = &o.bounds;
            if b.min[0] < -half || b.max[0] > half || b.min[2] < -half || b.max[2] > half || b.min[1] < 0.0 {
                return Err(SimError::Scene(format!("{} lies outside the room", o.class)));
            }
        }
        for s in &self.sounds {
            if self.clearance(s.position[0], s.position[2]) <= 0.0 {
                return Err(SimError::Scene(format!("sound {} lies inside an object", s.class)));
            }
        }
        Ok(())
    }

    /// Ground distance from `(x, z)` to the nearest box; infinite when empty.
    pub fn clearance(&self, x: f64, z: f64) -> f64 {
        self.objects.iter().map(|o| o.bounds.ground_distance(x, z)).fold(f64::INFINITY, f64::min)
    }

    /// Class vocabulary seen by the renderer: the floor first, then object
    /// classes in order of first appearance.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v = vec![FLOOR.to_string()];
        for o in &self.objects {
            if !v.contains(&o.class) {
                v.push(o.class.clone());
            }
        }
        v
    }

    /// Grid covering the room plus a one-meter border.
    pub fn grid_spec(&self, scale: f64, layers: u32) -> Result<GridSpec, SimError> {
        let n = ((self.extent + 2.0) / scale).ceil() as u32;
        Ok(GridSpec::new(n, n, layers, scale)?)
    }

    /// Cells whose centers lie inside a box footprint of a selected class.
    pub fn footprint(&self, spec: &GridSpec, object: usize) -> Vec<Cell> {
        let b = &self.objects[object].bounds;
        let lo = project_to_grid(&Vec3::new(b.min[0], 0.0, b.max[2]), spec).ok();
        let hi = project_to_grid(&Vec3::new(b.max[0], 0.0, b.min[2]), spec).ok();
        let (Some(lo), Some(hi)) = (lo, hi) else { return Vec::new() };
        let mut cells = Vec::new();
        for px in lo.x..=hi.x {
            for py in lo.y..=hi.y {
                let (x, z) = spec.cell_center(px as f64, py as f64);
                if b.ground_distance(x, z) == 0.0 {
                    cells.push(Cell::new(px, py));
                }
            }
        }
        cells
    }

    /// Ground-truth obstacle map from every box whose class passes `keep`.
    pub fn obstacle_grid(&self, spec: &GridSpec, keep: impl Fn(&str) -> bool) -> ObstacleGrid {
        let mut g = ObstacleGrid::empty(spec.h, spec.w);
        for (i, o) in self.objects.iter().enumerate() {
            if keep(&o.class) {
                self.footprint(spec, i).into_iter().for_each(|c| g.set(c, true));
            }
        }
        g
    }

    /// Ground-truth instances, one per box.
    pub fn instance_index(&self, spec: &GridSpec) -> InstanceIndex {
        let mut index = InstanceIndex::new();
        for (i, o) in self.objects.iter().enumerate() {
            let cells = self.footprint(spec, i);
            if !cells.is_empty() {
                index.insert(&o.class, Instance { cells });
            }
        }
        index
    }

    /// Random free ground position at least `clearance` from every box.
    pub fn random_free_point(&self, rng: &mut impl Rng, clearance: f64) -> Option<(f64, f64)> {
        let lim = self.extent / 2.0 - 0.3;
        (0..PLACEMENT_TRIES)
            .map(|_| (rng.random_range(-lim..lim), rng.random_range(-lim..lim)))
            .find(|&(x, z)| self.clearance(x, z) >= clearance)
    }
}

/// Deterministic scene for a seed.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SyntheticScene, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = config.profile.extent();
    let mut classes: Vec<&str> = OBJECT_CLASSES.to_vec();
    classes.shuffle(&mut rng);
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut target = None;

    if let Some(dup) = &config.duplicate {
        if dup.count < 2 {
            return Err(SimError::Scene("duplicate mode needs at least 2 instances".into()));
        }
        let class = classes.remove(0);
        let mut boxes: Vec<Aabb> = Vec::new();
        for _ in 0..dup.count {
            let b = (0..PLACEMENT_TRIES)
                .map(|_| random_box(&mut rng, extent))
                .find(|b| {
                    boxes.iter().all(|o| {
                        let (a, c) = (b.center_ground(), o.center_ground());
                        // Distinct x ranges keep the scan order of the
                        // instances unambiguous.
                        o.ground_gap(b) >= CORRIDOR
                            && (a.0 - c.0).hypot(a.1 - c.1) >= dup.min_separation
                            && (b.min[0] - o.max[0]).max(o.min[0] - b.max[0]) >= CORRIDOR
                    })
                })
                .ok_or_else(|| SimError::Scene(format!("cannot place {} separated instances", dup.count)))?;
            boxes.push(b);
        }
        boxes.sort_by(|a, b| a.min[0].total_cmp(&b.min[0]));
        objects.extend(boxes.into_iter().map(|bounds| SceneObject { class: class.to_string(), bounds }));
        target = Some((seed % dup.count as u64) as usize);
    }

    let wanted = config.profile.object_count();
    for class in classes {
        if objects.len() >= wanted {
            break;
        }
        if let Some(bounds) = (0..PLACEMENT_TRIES).map(|_| random_box(&mut rng, extent)).find(|b| fits(b, &objects)) {
            objects.push(SceneObject { class: class.to_string(), bounds });
        }
    }

    let mut scene = SyntheticScene { seed, extent, objects, sounds: Vec::new(), target };
    let mut sound_classes: Vec<&str> = SOUND_CLASSES.to_vec();
    if let Some(cue) = config.duplicate.as_ref().and_then(|d| d.cue.as_ref()) {
        let t = scene.objects[target.expect("duplicate mode sets a target")].bounds;
        let (cx, cz) = t.center_ground();
        let mut faces = [(cx, t.max[2] + CUE_OFFSET), (cx, t.min[2] - CUE_OFFSET), (t.max[0] + CUE_OFFSET, cz), (t.min[0] - CUE_OFFSET, cz)];
        faces.shuffle(&mut rng);
        let inside = |v: f64| v.abs() <= extent / 2.0 - 0.2;
        let (x, z) = faces
            .into_iter()
            .find(|&(x, z)| inside(x) && inside(z) && scene.clearance(x, z) >= CUE_OFFSET - 1e-9)
            .ok_or_else(|| SimError::Scene("no free side for the sound cue".into()))?;
        scene.sounds.push(SoundSource { class: cue.clone(), position: [x, 0.0, z] });
        sound_classes.retain(|c| c != cue);
    }
    sound_classes.shuffle(&mut rng);
    for class in sound_classes.into_iter().take(config.sounds) {
        let far_from_cue = |x: f64, z: f64| scene.sounds.iter().all(|s| (s.position[0] - x).hypot(s.position[2] - z) >= 2.5);
        let point = (0..PLACEMENT_TRIES)
            .filter_map(|_| scene.random_free_point(&mut rng, 0.4))
            .find(|&(x, z)| far_from_cue(x, z));
        if let Some((x, z)) = point {
            scene.sounds.push(SoundSource { class: class.to_string(), position: [x, 0.0, z] });
        }
    }
    scene.validate()?;
    Ok(scene)
}

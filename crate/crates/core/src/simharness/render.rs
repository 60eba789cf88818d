//! Ray-cast RGB-D stand-ins and audio synthesis along a coverage trajectory.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::SyntheticScene;
use super::SimError;
use crate::audio::AudioTrack;
use crate::featmap::DepthImage;
use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::posedb::Odometry;
use crate::providers::{tone_frequency, ClassRaster, NO_CLASS, SOUND_CLASSES};

pub const CAMERA_HEIGHT: f64 = 1.5;
pub const MAX_DEPTH: f64 = 12.0;
/// Seconds between consecutive frames.
pub const FRAME_PERIOD: f64 = 1.0;
pub const SAMPLE_RATE: u32 = 16_000;
pub const EVENT_SECONDS: f64 = 1.0;
pub const EVENT_AMPLITUDE: f64 = 0.8;
pub const NOISE_FLOOR: f64 = 0.005;
/// Frames between two sound events, so segments never merge.
const EVENT_SPACING: usize = 3;

/// Rendering and trajectory settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamParams {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    /// Spacing of boustrophedon lanes and of stops along a lane, meters.
    pub lane_spacing: f64,
    /// Minimum distance from a stop to any box.
    pub clearance: f64,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self { width: 40, height: 40, hfov_deg: 90.0, lane_spacing: 1.0, clearance: 0.35 }
    }
}

impl StreamParams {
    pub fn intrinsics(&self) -> Result<Intrinsics, SimError> {
        Ok(Intrinsics::from_hfov(self.hfov_deg, self.width, self.height)?)
    }
}

/// A camera stop: ground position and map heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

impl Waypoint {
    pub fn pose(&self) -> Pose {
        Pose::camera_looking(Vec3::new(self.x, CAMERA_HEIGHT, self.z), self.heading)
    }
}

/// Boustrophedon coverage of the free floor with a full turn (four
/// headings) at every stop.
pub fn coverage_trajectory(scene: &SyntheticScene, params: &StreamParams) -> Vec<Waypoint> {
    let half = scene.extent / 2.0;
    let stops = |step: f64| {
        let n = ((scene.extent - step) / step).floor() as usize;
        (0..=n).map(move |i| -half + step / 2.0 + i as f64 * step).collect::<Vec<_>>()
    };
    let lanes = stops(params.lane_spacing);
    let mut out = Vec::new();
    for (i, &z) in lanes.iter().enumerate() {
        let mut xs = stops(params.lane_spacing);
        if i % 2 == 1 {
            xs.reverse();
        }
        for x in xs {
            if scene.clearance(x, z) < params.clearance {
                continue;
            }
            for heading in [0.0, 90.0, 180.0, -90.0] {
                out.push(Waypoint { x, z, heading });
            }
        }
    }
    out
}

/// Nearest surface along a world ray: depth parameter and class index into
/// `vocabulary` (0 is the floor).
fn cast(scene: &SyntheticScene, vocabulary: &[String], origin: &Vec3, dir: &Vec3) -> Option<(f64, u8)> {
    let half = scene.extent / 2.0;
    let mut best: Option<(f64, u8)> = None;
    if dir.y < 0.0 {
        let t = -origin.y / dir.y;
        let p = origin + dir * t;
        if p.x.abs() <= half && p.z.abs() <= half {
            best = Some((t, 0));
        }
    }
    for o in &scene.objects {
        if let Some(t) = o.bounds.ray_hit(origin, dir) {
            if best.is_none_or(|(b, _)| t < b) {
                let label = vocabulary.iter().position(|c| *c == o.class).expect("vocabulary covers every object") as u8;
                best = Some((t, label));
            }
        }
    }
    best.filter(|(t, _)| *t <= MAX_DEPTH)
}

/// Renders the class raster and metric depth seen from `pose`. Depth is the
/// camera-frame `z` of the first surface hit; pixels that see nothing get
/// depth 0 and [`NO_CLASS`].
pub fn render_frame(scene: &SyntheticScene, vocabulary: &[String], k: &Intrinsics, pose: &Pose, frame_id: u64) -> (ClassRaster, DepthImage) {
    let n = (k.width * k.height) as usize;
    let (mut labels, mut depth) = (vec![NO_CLASS; n], vec![0.0f32; n]);
    let origin = *pose.translation();
    for v in 0..k.height {
        for u in 0..k.width {
            // Ray with unit camera-frame z, so the hit parameter is the depth.
            let d_cam = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir = pose.rotation() * d_cam;
            if let Some((t, label)) = cast(scene, vocabulary, &origin, &dir) {
                let i = (v * k.width + u) as usize;
                labels[i] = label;
                depth[i] = t as f32;
            }
        }
    }
    let raster = ClassRaster { width: k.width, height: k.height, labels, vocabulary: vocabulary.to_vec(), frame_id, region: None };
    (raster, DepthImage { width: k.width, height: k.height, data: depth })
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub time: f64,
    pub pose: Pose,
    pub raster: ClassRaster,
    pub depth: DepthImage,
}

/// A sound event as inserted into the audio track.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundEvent {
    pub class: String,
    pub position: [f64; 3],
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: Intrinsics,
    pub vocabulary: Vec<String>,
    pub frames: Vec<SynthFrame>,
    pub audio: Option<AudioTrack>,
    pub events: Vec<SoundEvent>,
}

impl Dataset {
    pub fn odometry(&self) -> Result<Odometry, SimError> {
        Ok(Odometry::new(self.frames.iter().map(|f| (f.time, f.pose)).collect())?)
    }
}

/// Frame index for each sound: the stop nearest the source, skipping frames
/// within [`EVENT_SPACING`] of an already chosen one.
fn schedule_events(scene: &SyntheticScene, trajectory: &[Waypoint]) -> Vec<usize> {
    let mut taken: Vec<usize> = Vec::new();
    for s in &scene.sounds {
        let mut order: Vec<usize> = (0..trajectory.len()).collect();
        let dist = |i: usize| (trajectory[i].x - s.position[0]).hypot(trajectory[i].z - s.position[2]);
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        if let Some(i) = order.into_iter().find(|&i| taken.iter().all(|&t| t.abs_diff(i) >= EVENT_SPACING)) {
            taken.push(i);
        }
    }
    taken
}

/// Renders every trajectory stop and, when the scene has sounds, an audio
/// track with one tone burst per source over a Gaussian noise floor.
pub fn synth_stream(scene: &SyntheticScene, trajectory: &[Waypoint], params: &StreamParams) -> Result<Dataset, SimError> {
    let k = params.intrinsics()?;
    let vocabulary = scene.vocabulary();
    let frames: Vec<SynthFrame> = trajectory
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let pose = w.pose();
            let (raster, depth) = render_frame(scene, &vocabulary, &k, &pose, i as u64);
            SynthFrame { time: i as f64 * FRAME_PERIOD, pose, raster, depth }
        })
        .collect();
    if scene.sounds.is_empty() || frames.is_empty() {
        return Ok(Dataset { intrinsics: k, vocabulary, frames, audio: None, events: Vec::new() });
    }

    let duration = frames.len() as f64 * FRAME_PERIOD + 1.0;
    let n = (duration * SAMPLE_RATE as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0xA0D1_0000);
    let noise = Normal::new(0.0, NOISE_FLOOR).map_err(|e| SimError::Scene(e.to_string()))?;
    let mut samples: Vec<f32> = (0..n).map(|_| noise.sample(&mut rng) as f32).collect();
    let mut events = Vec::new();
    for (s, frame) in scene.sounds.iter().zip(schedule_events(scene, trajectory)) {
        let class = SOUND_CLASSES
            .iter()
            .position(|c| *c == s.class)
            .ok_or_else(|| SimError::Scene(format!("unknown sound class {:?}", s.class)))?;
        let f = tone_frequency(class);
        let time = frames[frame].time;
        let start = (time * SAMPLE_RATE as f64) as usize;
        let len = (EVENT_SECONDS * SAMPLE_RATE as f64) as usize;
        for (j, x) in samples[start..(start + len).min(n)].iter_mut().enumerate() {
            *x += (EVENT_AMPLITUDE * (2.0 * PI * f * j as f64 / SAMPLE_RATE as f64).sin()) as f32;
        }
        events.push(SoundEvent { class: s.class.clone(), position: s.position, time });
    }
    let audio = AudioTrack::new(samples, SAMPLE_RATE, 0.0)?;
    Ok(Dataset { intrinsics: k, vocabulary, frames, audio: Some(audio), events })
}

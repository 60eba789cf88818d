//! Noise gating, silence segmentation and sound-text localization.
//!
//! Levels are measured as RMS over consecutive 10 ms windows and expressed
//! in dB as `20 log10(rms)`.

use std::path::Path;

use thiserror::Error;

use crate::geometry::GridSpec;
use crate::heatmap::Heatmap;
use crate::posedb::{Odometry, PoseDbError, PoseEntry, PoseFeatureDb};
use crate::providers::{Provider, ProviderError};

const WINDOW_SECONDS: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    SampleRate,
    #[error("segment {index} ({start:.3}-{end:.3} s) starts outside the odometry range")]
    SegmentOutsideOdometry { index: usize, start: f64, end: f64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    PoseDb(#[from] PoseDbError),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// Mono PCM on the shared odometry clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Seconds on the odometry clock at the first sample.
    pub start_time: f64,
}

impl AudioTrack {
    pub fn new(samples: Vec<f32>, sample_rate: u32, start_time: f64) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::SampleRate);
        }
        Ok(Self { samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(), sample_rate, start_time })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn window_len(&self) -> usize {
        ((self.sample_rate as f64 * WINDOW_SECONDS).round() as usize).max(1)
    }

    /// RMS of each 10 ms window; the last window may be short.
    pub fn window_rms(&self) -> Vec<f64> {
        self.samples
            .chunks(self.window_len())
            .map(|w| (w.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / w.len() as f64).sqrt())
            .collect()
    }

    /// Samples between two absolute times.
    pub fn slice(&self, start: f64, end: f64) -> &[f32] {
        let idx = |t: f64| (((t - self.start_time) * self.sample_rate as f64).round().max(0.0) as usize).min(self.samples.len());
        &self.samples[idx(start)..idx(end).max(idx(start))]
    }

    /// Reads 16-bit integer or 32-bit float WAV; channels are averaged.
    pub fn read_wav(path: impl AsRef<Path>, start_time: f64) -> Result<Self, AudioError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let raw: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let full = (1i64 << (spec.bits_per_sample - 1)) as f32;
                reader.samples::<i32>().map(|s| s.map(|v| v as f32 / full)).collect::<Result<_, _>>()?
            }
        };
        let ch = spec.channels.max(1) as usize;
        let mono = raw.chunks(ch).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect();
        Self::new(mono, spec.sample_rate, start_time)
    }

    /// Writes 32-bit float mono WAV.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), AudioError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(s)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    pub threshold_db: f64,
    pub attack_ms: f64,
    pub hold_ms: f64,
    pub release_ms: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self { threshold_db: -10.0, attack_ms: 250.0, hold_ms: 1000.0, release_ms: 170.0 }
    }
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.log10()
}

/// Per-sample gain of the attack/hold/release gate.
///
/// The gain starts closed. While the window level is above the threshold it
/// ramps towards 1 over the attack time and the hold counter is rearmed. Once
/// the level drops, the gain is held for the hold time, then ramps to 0 over
/// the release time.
pub fn gate_envelope(track: &AudioTrack, params: &GateParams) -> Vec<f64> {
    let sr = track.sample_rate as f64;
    let samples = |ms: f64| (ms.max(0.0) * sr / 1000.0).round();
    let step = |ms: f64| {
        let n = samples(ms);
        if n > 0.0 { 1.0 / n } else { 1.0 }
    };
    let (attack, release) = (step(params.attack_ms), step(params.release_ms));
    let hold = samples(params.hold_ms) as u64;
    let win = track.window_len();
    let open: Vec<bool> = track.window_rms().into_iter().map(|r| amplitude_to_db(r) > params.threshold_db).collect();
    let (mut gain, mut hold_left) = (0.0f64, 0u64);
    (0..track.samples.len())
        .map(|i| {
            if open[i / win] {
                hold_left = hold;
                gain = (gain + attack).min(1.0);
            } else if hold_left > 0 {
                hold_left -= 1;
            } else {
                gain = (gain - release).max(0.0);
            }
            gain
        })
        .collect()
}

pub fn noise_gate(track: &AudioTrack, params: &GateParams) -> AudioTrack {
    let env = gate_envelope(track, params);
    AudioTrack {
        samples: track.samples.iter().zip(env).map(|(&s, g)| (s as f64 * g) as f32).collect(),
        sample_rate: track.sample_rate,
        start_time: track.start_time,
    }
}

/// Silence segmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilenceParams {
    /// Window RMS amplitude above which a window counts as sound.
    pub threshold: f64,
    /// Quiet time that closes a segment.
    pub min_silence_ms: f64,
}

impl Default for SilenceParams {
    fn default() -> Self {
        Self { threshold: 0.1, min_silence_ms: 500.0 }
    }
}

/// A sound interval in absolute seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

/// Ordered, disjoint intervals of sound. A segment opens at the first loud
/// window and closes at the end of its last loud window once `min_silence`
/// of quiet follows (or the track ends).
pub fn split_on_silence(track: &AudioTrack, params: &SilenceParams) -> Vec<Segment> {
    let rms = track.window_rms();
    let win = track.window_len();
    let sr = track.sample_rate as f64;
    let gap = ((params.min_silence_ms / 1000.0) * sr / win as f64).ceil().max(1.0) as usize;
    let time = |w: usize| track.start_time + ((w * win).min(track.samples.len())) as f64 / sr;
    let mut out = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (w, &r) in rms.iter().enumerate() {
        let loud = r > params.threshold;
        current = match (current, loud) {
            (None, true) => Some((w, w)),
            (Some((s, _)), true) => Some((s, w)),
            (Some((s, last)), false) if w - last >= gap => {
                out.push(Segment { start: time(s), end: time(last + 1) });
                None
            }
            (c, _) => c,
        };
    }
    if let Some((s, last)) = current {
        out.push(Segment { start: time(s), end: time(last + 1) });
    }
    out
}

/// Embeds every segment and pairs it with the odometry pose nearest the
/// segment start.
pub fn build_audio_db(
    track: &AudioTrack,
    segments: &[Segment],
    provider: &dyn Provider,
    odometry: &Odometry,
) -> Result<PoseFeatureDb, AudioError> {
    let mut db = PoseFeatureDb::new(provider.dim());
    for (index, seg) in segments.iter().enumerate() {
        let pose = odometry
            .pose_at(seg.start)
            .map_err(|_| AudioError::SegmentOutsideOdometry { index, start: seg.start, end: seg.end })?;
        let embedding = provider.embed_audio(track.slice(seg.start, seg.end), track.sample_rate)?;
        db.push(PoseEntry { time: seg.start, pose: *pose, embedding })?;
    }
    Ok(db)
}

/// Heatmap for a sound description over an audio database.
pub fn audio_query_heatmap(
    db: &PoseFeatureDb,
    query: &str,
    provider: &dyn Provider,
    eps: f64,
    spec: &GridSpec,
) -> Result<Heatmap, AudioError> {
    if db.is_empty() {
        return Err(PoseDbError::NoTarget.into());
    }
    let q = provider.embed_label(query)?;
    Ok(db.query_heatmap(&q, eps, spec)?)
}

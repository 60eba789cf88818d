//! Embedding and code-generation backends.
//!
//! Three implementations share the [`Provider`] trait:
//!
//! * [`MockProvider`] derives every vector from a seeded hash, so runs are
//!   reproducible without model weights.
//! * [`FileProvider`] serves precomputed vectors from a descriptor blob.
//! * [`RemoteProvider`] talks JSON to a model-serving bridge.
//!
//! Pixel inputs are class rasters: one byte per pixel indexing a vocabulary.
//! The mock turns each pixel into its class vector plus optional Gaussian
//! noise. Audio inputs are decoded by locating the strongest of the known
//! class tones (see [`tone_frequency`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blob::{Blob, BlobError};
use crate::featmap::FeatureImage;

pub const DEFAULT_DIM: usize = 512;

/// Raster value for pixels without a class.
pub const NO_CLASS: u8 = 255;

/// Sound classes the mock can decode, in tone order.
pub const SOUND_CLASSES: &[&str] = &[
    "baby crying",
    "glass breaking",
    "dog barking",
    "door knocking",
    "cat meowing",
    "phone ringing",
    "water running",
    "clock ticking",
];

/// Carrier frequency in Hz used to synthesize sound class `index`.
pub fn tone_frequency(index: usize) -> f64 {
    400.0 + 250.0 * index as f64
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("{0} is not supported by this provider")]
    Unsupported(&'static str),
    #[error("remote provider unreachable: {0}")]
    Remote(String),
    #[error("bad provider response: {0}")]
    Protocol(String),
    #[error("provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-truth class image standing in for an RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRaster {
    pub width: u32,
    pub height: u32,
    /// Row-major class indices into `vocabulary`, or [`NO_CLASS`].
    pub labels: Vec<u8>,
    pub vocabulary: Vec<String>,
    /// Seeds per-frame noise.
    pub frame_id: u64,
    /// Coarse area tag seen by global (whole-image) encoders.
    pub region: Option<String>,
}

impl ClassRaster {
    pub fn class_at(&self, u: u32, v: u32) -> Option<&str> {
        let l = self.labels[(v * self.width + u) as usize];
        self.vocabulary.get(l as usize).map(String::as_str)
    }
}

pub trait Provider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
    fn embed_pixels(&self, raster: &ClassRaster) -> Result<FeatureImage, ProviderError>;
    fn embed_global(&self, raster: &ClassRaster) -> Result<Vec<f64>, ProviderError>;
    fn embed_audio(&self, samples: &[f32], sample_rate: u32) -> Result<Vec<f64>, ProviderError>;
    fn codegen(&self, prompt: &str) -> Result<String, ProviderError>;

    fn embed_label(&self, label: &str) -> Result<Vec<f64>, ProviderError> {
        let mut rows = self.embed_text(&[label.to_string()])?;
        rows.pop().ok_or_else(|| ProviderError::Protocol("empty text embedding".into()))
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Unit vector for `label`.
///
/// SHA-256 over `seed` (u64 little-endian) followed by the UTF-8 label; the
/// first 8 digest bytes (little-endian) seed SplitMix64. Uniforms are
/// `(next >> 11) * 2^-53`; each pair `(a, b)` yields the Box-Muller values
/// `r cos(2πb), r sin(2πb)` with `r = sqrt(-2 ln(1 - a))`. The first `dim`
/// values are L2-normalized.
pub fn mock_text_vector(label: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut rng = SplitMix64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    let mut v = Vec::with_capacity(dim + 1);
    while v.len() < dim {
        let (a, b) = (rng.uniform(), rng.uniform());
        let r = (-2.0 * (1.0 - a).ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * b;
        v.push(r * t.cos());
        v.push(r * t.sin());
    }
    v.truncate(dim);
    normalize(&mut v);
    v
}

/// Goertzel power of `samples` at `freq`.
pub fn goertzel_power(samples: &[f32], sample_rate: u32, freq: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in samples {
        let s0 = x as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// Index of the strongest class tone in `samples`.
pub fn decode_tone(samples: &[f32], sample_rate: u32, classes: usize) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..classes {
        let p = goertzel_power(samples, sample_rate, tone_frequency(i));
        if p > best.1 {
            best = (i, p);
        }
    }
    best.0
}

fn raster_features(
    raster: &ClassRaster,
    dim: usize,
    class_vector: impl Fn(&str) -> Result<Vec<f64>, ProviderError>,
    noise: Option<(f64, u64)>,
) -> Result<FeatureImage, ProviderError> {
    let table = raster.vocabulary.iter().map(|c| class_vector(c)).collect::<Result<Vec<_>, _>>()?;
    let mut img = FeatureImage::zeros(raster.width, raster.height, dim);
    let mut sampler = match noise {
        Some((sigma, seed)) if sigma > 0.0 => Some((
            ChaCha8Rng::seed_from_u64(seed ^ raster.frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            Normal::new(0.0, sigma).map_err(|e| ProviderError::Config(e.to_string()))?,
        )),
        _ => None,
    };
    for (i, &label) in raster.labels.iter().enumerate() {
        let Some(vec) = table.get(label as usize) else { continue };
        let px = &mut img.data[i * dim..(i + 1) * dim];
        for (out, &c) in px.iter_mut().zip(vec) {
            let n = sampler.as_mut().map_or(0.0, |(rng, d)| d.sample(rng));
            *out = (c + n) as f32;
        }
    }
    Ok(img)
}

fn raster_global(
    raster: &ClassRaster,
    dim: usize,
    class_vector: impl Fn(&str) -> Result<Vec<f64>, ProviderError>,
) -> Result<Vec<f64>, ProviderError> {
    let mut counts = vec![0usize; raster.vocabulary.len()];
    for &l in &raster.labels {
        if let Some(c) = counts.get_mut(l as usize) {
            *c += 1;
        }
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    let mut g = vec![0.0; dim];
    for (name, &n) in raster.vocabulary.iter().zip(&counts) {
        if n > 0 {
            let v = class_vector(name)?;
            g.iter_mut().zip(&v).for_each(|(a, b)| *a += b * n as f64 / total);
        }
    }
    if let Some(region) = &raster.region {
        let v = class_vector(region)?;
        g.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    normalize(&mut g);
    Ok(g)
}

/// Deterministic provider backed by [`mock_text_vector`].
#[derive(Debug, Clone)]
pub struct MockProvider {
    dim: usize,
    seed: u64,
    sigma: f64,
    sounds: Vec<String>,
}

impl MockProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, sigma: 0.0, sounds: SOUND_CLASSES.iter().map(|s| s.to_string()).collect() }
    }

    /// Standard deviation of per-pixel Gaussian noise.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_sounds(mut self, sounds: Vec<String>) -> Self {
        self.sounds = sounds;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sounds(&self) -> &[String] {
        &self.sounds
    }

    fn vector(&self, label: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(mock_text_vector(label, self.seed, self.dim))
    }
}

impl Provider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        labels.iter().map(|l| self.vector(l)).collect()
    }

    fn embed_pixels(&self, raster: &ClassRaster) -> Result<FeatureImage, ProviderError> {
        raster_features(raster, self.dim, |c| self.vector(c), Some((self.sigma, self.seed)))
    }

    fn embed_global(&self, raster: &ClassRaster) -> Result<Vec<f64>, ProviderError> {
        raster_global(raster, self.dim, |c| self.vector(c))
    }

    fn embed_audio(&self, samples: &[f32], sample_rate: u32) -> Result<Vec<f64>, ProviderError> {
        if self.sounds.is_empty() {
            return Err(ProviderError::Config("no sound classes".into()));
        }
        self.vector(&self.sounds[decode_tone(samples, sample_rate, self.sounds.len())])
    }

    fn codegen(&self, _prompt: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Unsupported("codegen"))
    }
}

/// Precomputed vectors read from disk.
///
/// The manifest is line based:
///
/// ```text
/// mslm-vectors 1
/// dim 64
/// blob vectors.bin
/// label chair
/// label glass breaking
/// sound glass breaking
/// ```
///
/// `label` lines name the rows of the rank-2 blob in order; `sound` lines
/// give the tone order used to decode audio.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    sounds: Vec<String>,
}

impl FileProvider {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let manifest = manifest.as_ref();
        let text = fs::read_to_string(manifest)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("mslm-vectors 1") {
            return Err(ProviderError::Config(format!("{}: missing 'mslm-vectors 1' header", manifest.display())));
        }
        let (mut dim, mut blob, mut labels, mut sounds) = (None, None::<PathBuf>, Vec::new(), Vec::new());
        for line in lines {
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "dim" => dim = Some(value.trim().parse::<usize>().map_err(|e| ProviderError::Config(e.to_string()))?),
                "blob" => blob = Some(manifest.parent().unwrap_or(Path::new(".")).join(value.trim())),
                "label" => labels.push(value.to_string()),
                "sound" => sounds.push(value.to_string()),
                other => return Err(ProviderError::Config(format!("unknown manifest key {other:?}"))),
            }
        }
        let dim = dim.ok_or_else(|| ProviderError::Config("manifest has no dim".into()))?;
        let blob = Blob::load(blob.ok_or_else(|| ProviderError::Config("manifest has no blob".into()))?)?;
        if blob.dims.len() != 2 || blob.dims[1] as usize != dim {
            return Err(ProviderError::DimMismatch { expected: dim, actual: *blob.dims.last().unwrap_or(&0) as usize });
        }
        if blob.dims[0] as usize != labels.len() {
            return Err(ProviderError::Config(format!("{} labels for {} rows", labels.len(), blob.dims[0])));
        }
        let vectors: BTreeMap<_, _> = labels.into_iter().zip(blob.rows()).collect();
        if let Some(s) = sounds.iter().find(|s| !vectors.contains_key(*s)) {
            return Err(ProviderError::UnknownLabel(s.clone()));
        }
        Ok(Self { dim, vectors, sounds })
    }

    /// Writes a manifest and blob holding `vectors` for `labels`.
    pub fn export(
        manifest: impl AsRef<Path>,
        dim: usize,
        labels: &[String],
        vectors: &[Vec<f64>],
        sounds: &[String],
    ) -> Result<(), ProviderError> {
        let manifest = manifest.as_ref();
        let blob_name = format!(
            "{}.bin",
            manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "vectors".into())
        );
        let values = vectors.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect();
        Blob::new(vec![labels.len() as u32, dim as u32], values)?
            .save(manifest.parent().unwrap_or(Path::new(".")).join(&blob_name))?;
        let mut text = format!("mslm-vectors 1\ndim {dim}\nblob {blob_name}\n");
        labels.iter().for_each(|l| text.push_str(&format!("label {l}\n")));
        sounds.iter().for_each(|s| text.push_str(&format!("sound {s}\n")));
        fs::write(manifest, text)?;
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    fn vector(&self, label: &str) -> Result<Vec<f64>, ProviderError> {
        self.vectors.get(label).cloned().ok_or_else(|| ProviderError::UnknownLabel(label.to_string()))
    }
}

impl Provider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        labels.iter().map(|l| self.vector(l)).collect()
    }

    fn embed_pixels(&self, raster: &ClassRaster) -> Result<FeatureImage, ProviderError> {
        raster_features(raster, self.dim, |c| self.vector(c), None)
    }

    fn embed_global(&self, raster: &ClassRaster) -> Result<Vec<f64>, ProviderError> {
        raster_global(raster, self.dim, |c| self.vector(c))
    }

    fn embed_audio(&self, samples: &[f32], sample_rate: u32) -> Result<Vec<f64>, ProviderError> {
        if self.sounds.is_empty() {
            return Err(ProviderError::Unsupported("audio without sound entries"));
        }
        self.vector(&self.sounds[decode_tone(samples, sample_rate, self.sounds.len())])
    }

    fn codegen(&self, _prompt: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Unsupported("codegen"))
    }
}

/// Request body shared by every bridge endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    /// One of `text`, `pixels`, `global`, `audio`, `codegen`.
    pub op: String,
    /// UTF-8 text, or base64 for binary payloads.
    pub payload: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BridgeResponse {
    #[serde(default)]
    pub dims: Option<Vec<u32>>,
    /// Base64 of little-endian f32 values.
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    pub model_id: String,
    #[serde(default)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HealthResponse {
    pub model_ids: Vec<String>,
    pub dim: usize,
}

impl BridgeResponse {
    /// Decodes the float payload, checking it against `dims`.
    pub fn tensor(&self) -> Result<(Vec<u32>, Vec<f32>), ProviderError> {
        if self.model_id.is_empty() {
            return Err(ProviderError::Protocol("empty modelId".into()));
        }
        let dims = self.dims.clone().ok_or_else(|| ProviderError::Protocol("missing dims".into()))?;
        let raw = B64
            .decode(self.payload.as_deref().ok_or_else(|| ProviderError::Protocol("missing payload".into()))?)
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        let count: usize = dims.iter().map(|&d| d as usize).product();
        if raw.len() != 4 * count {
            return Err(ProviderError::Protocol(format!("dims {dims:?} need {} bytes, payload has {}", 4 * count, raw.len())));
        }
        Ok((dims, raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
    }
}

/// Client for the model-serving bridge.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    dim: usize,
    model_ids: Vec<String>,
}

/// Environment variable overriding the bridge endpoint.
pub const BRIDGE_URL_ENV: &str = "MSLM_BRIDGE_URL";

impl RemoteProvider {
    /// Connects and reads the embedding size from `/health`.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let health: HealthResponse = agent
            .get(format!("{endpoint}/health"))
            .call()
            .map_err(|e| ProviderError::Remote(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if health.model_ids.is_empty() || health.model_ids.iter().any(String::is_empty) {
            return Err(ProviderError::Protocol("health reports no model ids".into()));
        }
        Ok(Self { endpoint, agent, dim: health.dim, model_ids: health.model_ids })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    fn post(&self, path: &str, req: &BridgeRequest) -> Result<BridgeResponse, ProviderError> {
        let resp: BridgeResponse = self
            .agent
            .post(format!("{}{path}", self.endpoint))
            .send_json(req)
            .map_err(|e| ProviderError::Remote(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok(resp)
    }

    fn vectors(&self, path: &str, req: &BridgeRequest, rows: usize) -> Result<Vec<Vec<f64>>, ProviderError> {
        let (dims, values) = self.post(path, req)?.tensor()?;
        let cols = *dims.last().unwrap_or(&0) as usize;
        if cols != self.dim {
            return Err(ProviderError::DimMismatch { expected: self.dim, actual: cols });
        }
        if values.len() != rows * cols {
            return Err(ProviderError::Protocol(format!("expected {rows} rows, got dims {dims:?}")));
        }
        Ok(values.chunks(cols).map(|r| r.iter().map(|&x| x as f64).collect()).collect())
    }

    fn raster_request(op: &str, raster: &ClassRaster) -> BridgeRequest {
        BridgeRequest {
            op: op.into(),
            payload: B64.encode(&raster.labels),
            params: serde_json::json!({
                "width": raster.width,
                "height": raster.height,
                "vocabulary": raster.vocabulary,
                "frameId": raster.frame_id,
                "region": raster.region,
            }),
        }
    }
}

impl Provider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let req = BridgeRequest { op: "text".into(), payload: labels.join("\n"), params: serde_json::json!({}) };
        self.vectors("/embed/text", &req, labels.len())
    }

    fn embed_pixels(&self, raster: &ClassRaster) -> Result<FeatureImage, ProviderError> {
        let n = (raster.width * raster.height) as usize;
        let rows = self.vectors("/embed/pixels", &Self::raster_request("pixels", raster), n)?;
        let mut img = FeatureImage::zeros(raster.width, raster.height, self.dim);
        img.data = rows.into_iter().flatten().map(|x| x as f32).collect();
        Ok(img)
    }

    fn embed_global(&self, raster: &ClassRaster) -> Result<Vec<f64>, ProviderError> {
        Ok(self.vectors("/embed/global", &Self::raster_request("global", raster), 1)?.remove(0))
    }

    fn embed_audio(&self, samples: &[f32], sample_rate: u32) -> Result<Vec<f64>, ProviderError> {
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        let req = BridgeRequest {
            op: "audio".into(),
            payload: B64.encode(bytes),
            params: serde_json::json!({ "sampleRate": sample_rate }),
        };
        Ok(self.vectors("/embed/audio", &req, 1)?.remove(0))
    }

    fn codegen(&self, prompt: &str) -> Result<String, ProviderError> {
        let req = BridgeRequest { op: "codegen".into(), payload: prompt.into(), params: serde_json::json!({}) };
        let resp = self.post("/codegen", &req)?;
        if resp.model_id.is_empty() {
            return Err(ProviderError::Protocol("empty modelId".into()));
        }
        resp.text.ok_or_else(|| ProviderError::Protocol("codegen response has no text".into()))
    }
}

/// Which backend to build.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderConfig {
    Mock { dim: usize, seed: u64, sigma: f64 },
    File { manifest: PathBuf },
    Remote { endpoint: String, timeout: Duration },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::Mock { dim: DEFAULT_DIM, seed: 0, sigma: 0.0 }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn Provider>, ProviderError> {
        Ok(match self {
            Self::Mock { dim, seed, sigma } => {
                if *dim == 0 {
                    return Err(ProviderError::Config("dim must be positive".into()));
                }
                Box::new(MockProvider::new(*dim, *seed).with_noise(*sigma))
            }
            Self::File { manifest } => Box::new(FileProvider::load(manifest)?),
            Self::Remote { endpoint, timeout } => Box::new(RemoteProvider::connect(endpoint, *timeout)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn mock_text_is_deterministic_and_unit() {
        let a = mock_text_vector("chair", 7, 64);
        assert_eq!(a, mock_text_vector("chair", 7, 64));
        assert_ne!(a, mock_text_vector("chair", 8, 64));
        assert!((cos(&a, &a) - 1.0).abs() < 1e-9);
        assert_eq!(mock_text_vector("x", 0, 5).len(), 5);
    }

    #[test]
    fn mock_text_reference_values() {
        // independently computed with hashlib + a SplitMix64/Box-Muller port
        let v = mock_text_vector("chair", 0, 4);
        let expected = [-0.6797634672738568, -0.5567970921781887, -0.24427787286246888, -0.4101547848453379];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn distinct_labels_are_nearly_orthogonal() {
        let labels: Vec<String> = (0..200).map(|i| format!("label-{i}")).collect();
        let vecs: Vec<_> = labels.iter().map(|l| mock_text_vector(l, 3, 64)).collect();
        let mut pairs = 0usize;
        let mut low = 0usize;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                pairs += 1;
                low += (cos(&vecs[i], &vecs[j]) < 0.3) as usize;
            }
        }
        assert!(low as f64 / pairs as f64 >= 0.99, "{low}/{pairs}");
    }

    fn raster() -> ClassRaster {
        ClassRaster {
            width: 3,
            height: 2,
            labels: vec![0, 0, 1, 1, NO_CLASS, 0],
            vocabulary: vec!["floor".into(), "table".into()],
            frame_id: 4,
            region: Some("kitchen".into()),
        }
    }

    #[test]
    fn mock_pixels_follow_classes() {
        let p = MockProvider::new(16, 1);
        let img = p.embed_pixels(&raster()).unwrap();
        let floor = mock_text_vector("floor", 1, 16);
        for (a, b) in img.pixel(0, 0).iter().zip(&floor) {
            assert_eq!(*a, *b as f32);
        }
        assert!(img.pixel(1, 1).iter().all(|&x| x == 0.0));

        let noisy = MockProvider::new(16, 1).with_noise(0.2);
        let a = noisy.embed_pixels(&raster()).unwrap();
        assert_eq!(a, noisy.embed_pixels(&raster()).unwrap());
        assert_ne!(a, img);
        let mut other = raster();
        other.frame_id = 5;
        assert_ne!(noisy.embed_pixels(&other).unwrap(), a);
    }

    #[test]
    fn global_embedding_reflects_region() {
        let p = MockProvider::new(64, 2);
        let g = p.embed_global(&raster()).unwrap();
        assert!((cos(&g, &g) - 1.0).abs() < 1e-9);
        let kitchen = p.embed_label("kitchen").unwrap();
        let bedroom = p.embed_label("bedroom").unwrap();
        assert!(cos(&g, &kitchen) > cos(&g, &bedroom) + 0.3);
    }

    #[test]
    fn audio_decodes_tone_class() {
        let sr = 16_000;
        let p = MockProvider::new(32, 0);
        for (i, name) in SOUND_CLASSES.iter().enumerate() {
            let f = tone_frequency(i);
            let samples: Vec<f32> =
                (0..sr / 2).map(|n| (0.5 * (2.0 * std::f64::consts::PI * f * n as f64 / sr as f64).sin()) as f32).collect();
            assert_eq!(p.embed_audio(&samples, sr).unwrap(), p.embed_label(name).unwrap());
        }
    }

    #[test]
    fn file_provider_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::new(8, 5);
        let labels: Vec<String> = ["floor", "table", "glass breaking"].iter().map(|s| s.to_string()).collect();
        let vectors = mock.embed_text(&labels).unwrap();
        let manifest = dir.path().join("vec.txt");
        FileProvider::export(&manifest, 8, &labels, &vectors, &labels[2..]).unwrap();
        let fp = FileProvider::load(&manifest).unwrap();
        assert_eq!(fp.dim(), 8);
        let back = fp.embed_text(&labels).unwrap();
        for (a, b) in back.iter().zip(&vectors) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert!(matches!(fp.embed_label("sofa"), Err(ProviderError::UnknownLabel(_))));
        assert!(matches!(fp.codegen("x"), Err(ProviderError::Unsupported(_))));
    }

    #[test]
    fn file_provider_rejects_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("v.txt");
        FileProvider::export(&manifest, 4, &["a".to_string()], &[vec![1.0, 0.0, 0.0, 0.0]], &[]).unwrap();
        let text = fs::read_to_string(&manifest).unwrap().replace("dim 4", "dim 5");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(FileProvider::load(&manifest), Err(ProviderError::DimMismatch { expected: 5, actual: 4 })));
    }

    #[test]
    fn response_tensor_validation() {
        let payload = B64.encode([1.0f32, 2.0].iter().flat_map(|f| f.to_le_bytes()).collect::<Vec<_>>());
        let ok = BridgeResponse {
            dims: Some(vec![1, 2]),
            payload: Some(payload.clone()),
            text: None,
            model_id: "m".into(),
            latency_ms: 1.0,
        };
        assert_eq!(ok.tensor().unwrap().1, vec![1.0, 2.0]);
        let bad = BridgeResponse { dims: Some(vec![3]), ..ok.clone() };
        assert!(bad.tensor().is_err());
        let anon = BridgeResponse { model_id: String::new(), ..ok };
        assert!(anon.tensor().is_err());
    }

    #[test]
    fn unreachable_remote_is_an_error() {
        let r = RemoteProvider::connect("http://127.0.0.1:9", Duration::from_millis(300));
        assert!(matches!(r, Err(ProviderError::Remote(_))));
    }
}

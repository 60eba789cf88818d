//! On-disk dataset layout.
//!
//! ```text
//! mslm-dataset 1
//! intrinsics <fx> <fy> <cx> <cy> <width> <height>
//! class floor
//! class chair
//! frame <time> <raster.pgm> <depth.bin> <16 row-major pose values>
//! audio <track.wav> <start time>
//! event <time> <x> <y> <z> <sound class>
//! ```
//!
//! Paths are relative to the manifest. Rasters are 8-bit PGM class indices
//! (255 = no class); depth maps are rank-2 blobs in meters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::render::{Dataset, SoundEvent, SynthFrame};
use super::SimError;
use crate::audio::AudioTrack;
use crate::blob::Blob;
use crate::featmap::DepthImage;
use crate::geometry::{Intrinsics, Pose};
use crate::providers::ClassRaster;
use crate::query::{read_pgm, write_pgm};

pub const DATASET_MAGIC: &str = "mslm-dataset 1";

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf, SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let k = &dataset.intrinsics;
    let mut m = String::new();
    writeln!(m, "{DATASET_MAGIC}").ok();
    writeln!(m, "intrinsics {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height).ok();
    for c in &dataset.vocabulary {
        writeln!(m, "class {c}").ok();
    }
    for (i, f) in dataset.frames.iter().enumerate() {
        let (raster, depth) = (format!("frame{i:05}.pgm"), format!("frame{i:05}.depth.bin"));
        write_pgm(dir.join(&raster), f.raster.height, f.raster.width, &f.raster.labels)?;
        Blob::new(vec![f.depth.height, f.depth.width], f.depth.data.clone())?.save(dir.join(&depth))?;
        let pose: Vec<String> = f.pose.to_row_major().iter().map(|v| format!("{v:?}")).collect();
        writeln!(m, "frame {:?} {raster} {depth} {}", f.time, pose.join(" ")).ok();
    }
    if let Some(a) = &dataset.audio {
        a.write_wav(dir.join("audio.wav"))?;
        writeln!(m, "audio audio.wav {:?}", a.start_time).ok();
    }
    for e in &dataset.events {
        writeln!(m, "event {:?} {:?} {:?} {:?} {}", e.time, e.position[0], e.position[1], e.position[2], e.class).ok();
    }
    let path = dir.join("dataset.txt");
    fs::write(&path, m)?;
    Ok(path)
}

fn bad(line: usize, msg: impl Into<String>) -> SimError {
    SimError::Manifest { line, msg: msg.into() }
}

fn nums(line: usize, fields: &[&str]) -> Result<Vec<f64>, SimError> {
    fields.iter().map(|f| f.parse::<f64>().map_err(|_| bad(line, format!("bad number {f:?}")))).collect()
}

/// Reads a dataset manifest written by [`save_dataset`] (or by hand).
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset, SimError> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == DATASET_MAGIC => {}
        Some((n, l)) => return Err(bad(n, format!("expected {DATASET_MAGIC:?}, found {l:?}"))),
        None => return Err(bad(0, "empty manifest")),
    }
    let mut intrinsics = None;
    let (mut vocabulary, mut frames, mut events, mut audio) = (Vec::new(), Vec::new(), Vec::new(), None);
    for (n, line) in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let fields: Vec<&str> = rest.split_whitespace().collect();
        match key {
            "intrinsics" => {
                let v = nums(n, &fields)?;
                if v.len() != 6 {
                    return Err(bad(n, "intrinsics needs fx fy cx cy width height"));
                }
                intrinsics = Some(Intrinsics::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32)?);
            }
            "class" if !rest.trim().is_empty() => vocabulary.push(rest.trim().to_string()),
            "frame" => {
                if fields.len() != 19 {
                    return Err(bad(n, format!("frame needs 19 fields, found {}", fields.len())));
                }
                let time = nums(n, &fields[..1])?[0];
                let m: [f64; 16] = nums(n, &fields[3..])?.try_into().expect("16 values");
                let pose = Pose::from_row_major(&m).map_err(|e| bad(n, e.to_string()))?;
                let (rows, cols, labels) = read_pgm(base.join(fields[1]))?;
                let depth = Blob::load(base.join(fields[2]))?;
                if depth.dims != [rows, cols] {
                    return Err(bad(n, format!("depth dims {:?} do not match raster {cols}x{rows}", depth.dims)));
                }
                let raster = ClassRaster { width: cols, height: rows, labels, vocabulary: Vec::new(), frame_id: frames.len() as u64, region: None };
                frames.push(SynthFrame { time, pose, raster, depth: DepthImage { width: cols, height: rows, data: depth.values } });
            }
            "audio" => {
                if fields.len() != 2 {
                    return Err(bad(n, "audio needs a path and a start time"));
                }
                audio = Some(AudioTrack::read_wav(base.join(fields[0]), nums(n, &fields[1..])?[0])?);
            }
            "event" => {
                if fields.len() < 5 {
                    return Err(bad(n, "event needs time, position and class"));
                }
                let v = nums(n, &fields[..4])?;
                events.push(SoundEvent { class: fields[4..].join(" "), position: [v[1], v[2], v[3]], time: v[0] });
            }
            other => return Err(bad(n, format!("unknown key {other:?}"))),
        }
    }
    let intrinsics = intrinsics.ok_or_else(|| bad(0, "missing intrinsics"))?;
    for f in &mut frames {
        if (f.raster.width, f.raster.height) != (intrinsics.width, intrinsics.height) {
            return Err(bad(0, format!("frame {} size differs from the intrinsics", f.raster.frame_id)));
        }
        f.raster.vocabulary = vocabulary.clone();
    }
    Ok(Dataset { intrinsics, vocabulary, frames, audio, events })
}

//! Dense `[0, 1]` voxel heatmaps and cross-modal fusion.
//!
//! Decay rates are expressed in heat lost per cell of distance. Point and
//! scored heatmaps decay with the ground-plane distance between voxel indices;
//! object heatmaps decay with the full 3D distance to the nearest object voxel.
//! Fusion is the element-wise product of all participating maps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{GridSpec, Voxel};
use crate::query::{write_pgm, QueryError};

/// Decay per cell for the map that locates the target itself.
pub const PRIMARY_DECAY: f64 = 0.1;
/// Decay per cell for maps that only constrain the target.
pub const AUXILIARY_DECAY: f64 = 0.01;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("decay rate must be positive and finite, got {0}")]
    InvalidDecay(f64),
    #[error("voxel ({}, {}, {}) outside the grid", .0.x, .0.y, .0.z)]
    OutOfBounds(Voxel),
    #[error("no source locations given")]
    Empty,
    #[error("heatmap specs differ")]
    SpecMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pgm(#[from] QueryError),
}

/// Converts a decay expressed per meter into the per-cell rate used here.
pub fn decay_per_cell(per_meter: f64, spec: &GridSpec) -> f64 {
    per_meter * spec.scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    spec: GridSpec,
    decay: f64,
    values: Vec<f64>,
}

/// Location and value of a heatmap maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub voxel: Voxel,
    pub score: f64,
}

/// A position with a confidence in `[0, 1]`, e.g. a frame pose or an audio
/// segment pose scored against a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPosition {
    pub voxel: Voxel,
    pub score: f64,
}

impl Heatmap {
    pub fn filled(spec: GridSpec, decay: f64, value: f64) -> Self {
        Self { spec, decay, values: vec![value; spec.voxel_count()] }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::filled(spec, 0.0, 0.0)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn index(&self, v: Voxel) -> usize {
        (v.x as usize * self.spec.w as usize + v.y as usize) * self.spec.z as usize + v.z as usize
    }

    fn voxel_at(&self, i: usize) -> Voxel {
        let z = self.spec.z as usize;
        let w = self.spec.w as usize;
        Voxel::new((i / z / w) as u32, (i / z % w) as u32, (i % z) as u32)
    }

    pub fn get(&self, v: Voxel) -> f64 {
        self.values[self.index(v)]
    }

    pub fn set(&mut self, v: Voxel, value: f64) {
        let i = self.index(v);
        self.values[i] = value;
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Highest value; ties resolve to the lexicographically smallest
    /// `(x, y, z)`. `None` when the map holds no heat at all.
    pub fn argmax(&self) -> Option<Peak> {
        let mut best = 0usize;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        let score = *self.values.get(best)?;
        (score > 0.0).then(|| Peak { voxel: self.voxel_at(best), score })
    }

    /// All voxels whose value is within `tol` of the maximum.
    pub fn argmax_set(&self, tol: f64) -> Vec<Voxel> {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.values.len()).filter(|&i| self.values[i] >= max - tol).map(|i| self.voxel_at(i)).collect()
    }

    /// Max over the vertical axis, row-major over `(px, py)`.
    pub fn max_over_z(&self) -> Vec<f64> {
        self.values.chunks(self.spec.z as usize).map(|col| col.iter().copied().fold(0.0, f64::max)).collect()
    }

    /// Raw volume: 12-byte header (`h`, `w`, `z` as u32) followed by f32
    /// values in `(x, y, z)` row-major order, all little-endian.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<(), HeatmapError> {
        let mut w = BufWriter::new(File::create(path)?);
        for d in [self.spec.h, self.spec.w, self.spec.z] {
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Top-down max projection scaled to 0..=255.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), HeatmapError> {
        let bytes: Vec<u8> = self.max_over_z().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        write_pgm(path, self.spec.h, self.spec.w, &bytes)?;
        Ok(())
    }
}

fn check_decay(eps: f64) -> Result<(), HeatmapError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(HeatmapError::InvalidDecay(eps))
    }
}

fn check_voxel(v: Voxel, spec: &GridSpec) -> Result<(), HeatmapError> {
    if v.x < spec.h && v.y < spec.w && v.z < spec.z {
        Ok(())
    } else {
        Err(HeatmapError::OutOfBounds(v))
    }
}

/// Heat 1 at `p`, decaying linearly with ground-plane distance.
pub fn point_heatmap(p: Voxel, eps: f64, spec: &GridSpec) -> Result<Heatmap, HeatmapError> {
    scored_heatmap(&[ScoredPosition { voxel: p, score: 1.0 }], eps, spec)
}

/// `H(q) = max(0, max_i(s_i - eps * dist_xy(q, p_i)))`.
pub fn scored_heatmap(entries: &[ScoredPosition], eps: f64, spec: &GridSpec) -> Result<Heatmap, HeatmapError> {
    check_decay(eps)?;
    if entries.is_empty() {
        return Err(HeatmapError::Empty);
    }
    for e in entries {
        check_voxel(e.voxel, spec)?;
    }
    let (h, w, z) = (spec.h as usize, spec.w as usize, spec.z as usize);
    let mut layer = vec![0.0f64; h * w];
    for e in entries {
        let (px, py) = (e.voxel.x as f64, e.voxel.y as f64);
        for x in 0..h {
            let dx = x as f64 - px;
            for y in 0..w {
                let dy = y as f64 - py;
                let v = e.score - eps * (dx * dx + dy * dy).sqrt();
                let cell = &mut layer[x * w + y];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    let mut values = Vec::with_capacity(h * w * z);
    for v in layer {
        values.extend(std::iter::repeat_n(v.clamp(0.0, 1.0), z));
    }
    Ok(Heatmap { spec: *spec, decay: eps, values })
}

/// Heat 1 on every object voxel, decaying linearly with the 3D distance to
/// the nearest one. Distances come from an exact squared Euclidean distance
/// transform, so values match a brute-force minimum over all object voxels.
pub fn object_heatmap(points: &[Voxel], eps: f64, spec: &GridSpec) -> Result<Heatmap, HeatmapError> {
    check_decay(eps)?;
    if points.is_empty() {
        return Err(HeatmapError::Empty);
    }
    for p in points {
        check_voxel(*p, spec)?;
    }
    let mut hm = Heatmap { spec: *spec, decay: eps, values: vec![f64::INFINITY; spec.voxel_count()] };
    for p in points {
        let i = hm.index(*p);
        hm.values[i] = 0.0;
    }
    squared_edt_3d(&mut hm.values, spec.h as usize, spec.w as usize, spec.z as usize);
    for v in hm.values.iter_mut() {
        *v = (1.0 - eps * v.sqrt()).max(0.0);
    }
    Ok(hm)
}

/// In-place squared Euclidean distance transform of a `(h, w, z)` volume
/// holding 0 at sites and `INFINITY` elsewhere.
fn squared_edt_3d(values: &mut [f64], h: usize, w: usize, z: usize) {
    let n = h.max(w).max(z);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut zs = vec![0.0; n + 1];
    let stride = |axis: usize| match axis {
        0 => w * z,
        1 => z,
        _ => 1,
    };
    let dims = [h, w, z];
    for axis in 0..3 {
        let len = dims[axis];
        let s = stride(axis);
        for start in 0..values.len() {
            // visit each line once, starting from the cell with coordinate 0 on `axis`
            if (start / s) % len != 0 {
                continue;
            }
            for k in 0..len {
                f[k] = values[start + k * s];
            }
            edt_1d(&f[..len], &mut d[..len], &mut v, &mut zs);
            for k in 0..len {
                values[start + k * s] = d[k];
            }
        }
    }
}

/// Lower envelope of parabolas (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let Some(first) = (0..n).find(|&q| f[q].is_finite()) else {
        d.fill(f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let intersect = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
        let mut s = intersect(v[k]);
        // z[0] is -inf, so this never underflows
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Element-wise product of heatmaps sharing one grid. The result keeps the
/// decay rate of the first map.
pub fn fuse(heatmaps: &[&Heatmap]) -> Result<Heatmap, HeatmapError> {
    let (first, rest) = heatmaps.split_first().ok_or(HeatmapError::Empty)?;
    if rest.iter().any(|h| h.spec != first.spec) {
        return Err(HeatmapError::SpecMismatch);
    }
    let mut out = (*first).clone();
    for h in rest {
        for (a, b) in out.values.iter_mut().zip(&h.values) {
            *a *= b;
        }
    }
    Ok(out)
}

impl std::ops::Mul for &Heatmap {
    type Output = Result<Heatmap, HeatmapError>;

    fn mul(self, rhs: &Heatmap) -> Self::Output {
        fuse(&[self, rhs])
    }
}

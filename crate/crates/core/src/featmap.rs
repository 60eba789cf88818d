//! Sparse voxel grid of running-mean embeddings.
//!
//! Each occupied voxel keeps the number of fused points and the 64-bit sum of
//! their embeddings, so the mean is exact, order-independent up to rounding,
//! and two grids built from disjoint frame partitions merge exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{back_project, to_world, voxel_index, Cell, GridSpec, Intrinsics, Pose, Vec3, Voxel};

pub const MAP_MAGIC: &[u8; 4] = b"MSLM";
pub const MAP_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FeatMapError {
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("frame size mismatch: features {feat_w}x{feat_h}, depth {depth_w}x{depth_h}")]
    FrameSize { feat_w: u32, feat_h: u32, depth_w: u32, depth_h: u32 },
    #[error("grid specs differ: {0:?} vs {1:?}")]
    SpecMismatch(GridSpec, GridSpec),
    #[error("map format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported map version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense per-pixel embeddings, row-major `height x width x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureImage {
    pub fn zeros(width: u32, height: u32, dim: usize) -> Self {
        Self { width, height, dim, data: vec![0.0; width as usize * height as usize * dim] }
    }

    pub fn pixel(&self, u: u32, v: u32) -> &[f32] {
        let i = (v as usize * self.width as usize + u as usize) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn pixel_mut(&mut self, u: u32, v: u32) -> &mut [f32] {
        let i = (v as usize * self.width as usize + u as usize) * self.dim;
        &mut self.data[i..i + self.dim]
    }
}

/// Metric depth image, row-major. A value of 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }
}

/// One RGB-D observation after the pixel encoder has run.
#[derive(Debug, Clone)]
pub struct PosedFrame {
    pub features: FeatureImage,
    pub depth: DepthImage,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Vertical filter on world `y` (inclusive on both ends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightBand {
    pub lower: f64,
    pub upper: f64,
}

impl HeightBand {
    pub const ALL: HeightBand = HeightBand { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    pub fused: usize,
    pub invalid_depth: usize,
    pub out_of_bounds: usize,
    pub out_of_band: usize,
}

impl std::ops::AddAssign for FuseStats {
    fn add_assign(&mut self, o: Self) {
        self.fused += o.fused;
        self.invalid_depth += o.invalid_depth;
        self.out_of_bounds += o.out_of_bounds;
        self.out_of_band += o.out_of_band;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAccum {
    pub count: u32,
    pub sum: Vec<f64>,
}

impl CellAccum {
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    spec: GridSpec,
    dim: usize,
    cells: BTreeMap<Voxel, CellAccum>,
}

impl FeatureGrid {
    pub fn new(spec: GridSpec, dim: usize) -> Self {
        Self { spec, dim, cells: BTreeMap::new() }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Voxel, &CellAccum)> {
        self.cells.iter()
    }

    /// Adds one embedding to a voxel.
    pub fn accumulate(&mut self, voxel: Voxel, embedding: &[f32]) -> Result<(), FeatMapError> {
        if embedding.len() != self.dim {
            return Err(FeatMapError::DimMismatch { expected: self.dim, actual: embedding.len() });
        }
        let dim = self.dim;
        let cell = self.cells.entry(voxel).or_insert_with(|| CellAccum { count: 0, sum: vec![0.0; dim] });
        cell.count += 1;
        for (s, &q) in cell.sum.iter_mut().zip(embedding) {
            *s += q as f64;
        }
        Ok(())
    }

    /// Back-projects every valid depth pixel of `frame` and accumulates its
    /// embedding at the voxel it lands in.
    pub fn fuse_frame(&mut self, frame: &PosedFrame) -> Result<FuseStats, FeatMapError> {
        self.fuse_frame_in_band(frame, HeightBand::ALL)
    }

    pub fn fuse_frame_in_band(&mut self, frame: &PosedFrame, band: HeightBand) -> Result<FuseStats, FeatMapError> {
        let f = &frame.features;
        if f.dim != self.dim {
            return Err(FeatMapError::DimMismatch { expected: self.dim, actual: f.dim });
        }
        let d = &frame.depth;
        if f.width != d.width || f.height != d.height {
            return Err(FeatMapError::FrameSize { feat_w: f.width, feat_h: f.height, depth_w: d.width, depth_h: d.height });
        }
        let mut stats = FuseStats::default();
        for v in 0..d.height {
            for u in 0..d.width {
                let Ok(p_cam) = back_project(u as f64, v as f64, d.get(u, v) as f64, &frame.intrinsics) else {
                    stats.invalid_depth += 1;
                    continue;
                };
                let p = to_world(&p_cam, &frame.pose);
                if !band.contains(p.y) {
                    stats.out_of_band += 1;
                    continue;
                }
                match voxel_index(&p, &self.spec) {
                    Ok(voxel) => {
                        self.accumulate(voxel, f.pixel(u, v))?;
                        stats.fused += 1;
                    }
                    Err(_) => stats.out_of_bounds += 1,
                }
            }
        }
        Ok(stats)
    }

    pub fn cell_mean(&self, voxel: Voxel) -> Option<Vec<f64>> {
        self.cells.get(&voxel).map(CellAccum::mean)
    }

    pub fn cell(&self, voxel: Voxel) -> Option<&CellAccum> {
        self.cells.get(&voxel)
    }

    /// Adds per-voxel counts and sums of two grids built over the same spec.
    pub fn merge(&self, other: &FeatureGrid) -> Result<FeatureGrid, FeatMapError> {
        if self.spec != other.spec {
            return Err(FeatMapError::SpecMismatch(self.spec, other.spec));
        }
        if self.dim != other.dim {
            return Err(FeatMapError::DimMismatch { expected: self.dim, actual: other.dim });
        }
        let mut out = self.clone();
        for (voxel, acc) in &other.cells {
            match out.cells.get_mut(voxel) {
                Some(mine) => {
                    mine.count += acc.count;
                    for (s, o) in mine.sum.iter_mut().zip(&acc.sum) {
                        *s += o;
                    }
                }
                None => {
                    out.cells.insert(*voxel, acc.clone());
                }
            }
        }
        Ok(out)
    }

    /// Top-down view: pools every occupied voxel of a column into one
    /// count-weighted mean, the same value a single-layer map would hold.
    pub fn top_down_means(&self) -> BTreeMap<Cell, Vec<f64>> {
        let mut pooled: BTreeMap<Cell, CellAccum> = BTreeMap::new();
        for (voxel, acc) in &self.cells {
            let entry = pooled
                .entry(voxel.cell())
                .or_insert_with(|| CellAccum { count: 0, sum: vec![0.0; self.dim] });
            entry.count += acc.count;
            for (s, o) in entry.sum.iter_mut().zip(&acc.sum) {
                *s += o;
            }
        }
        pooled.into_iter().map(|(c, acc)| (c, acc.mean())).collect()
    }

    /// World points at the centers of every occupied voxel.
    pub fn occupied_points(&self) -> Vec<Vec3> {
        self.cells.keys().map(|v| self.spec.voxel_center(*v)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatMapError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Little-endian layout: magic, u16 version, 3 x u32 dims, f64 scale,
    /// u32 feature dim, u64 cell count, then per cell 3 x u32 index,
    /// u32 count and `dim` x f64 sums.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_all(&MAP_VERSION.to_le_bytes())?;
        for d in [self.spec.h, self.spec.w, self.spec.z] {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&self.spec.scale.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.cells.len() as u64).to_le_bytes())?;
        for (v, acc) in &self.cells {
            for i in [v.x, v.y, v.z, acc.count] {
                w.write_all(&i.to_le_bytes())?;
            }
            for s in &acc.sum {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureGrid, FeatMapError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: &mut impl Read) -> Result<FeatureGrid, FeatMapError> {
        let mut r = ByteReader { inner: r, offset: 0 };
        let magic: [u8; 4] = r.array()?;
        if &magic != MAP_MAGIC {
            return Err(FeatMapError::Format { offset: 0, msg: format!("bad magic {magic:?}") });
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != MAP_VERSION {
            return Err(FeatMapError::UnsupportedVersion(version));
        }
        let spec_offset = r.offset;
        let (h, w, z) = (r.u32()?, r.u32()?, r.u32()?);
        let scale = f64::from_le_bytes(r.array()?);
        let spec = GridSpec::new(h, w, z, scale)
            .map_err(|e| FeatMapError::Format { offset: spec_offset, msg: e.to_string() })?;
        let dim = r.u32()? as usize;
        let n = u64::from_le_bytes(r.array()?);
        let mut grid = FeatureGrid::new(spec, dim);
        for _ in 0..n {
            let rec_offset = r.offset;
            let (x, y, z, count) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            if x >= spec.h || y >= spec.w || z >= spec.z || count == 0 {
                return Err(FeatMapError::Format {
                    offset: rec_offset,
                    msg: format!("invalid cell record ({x}, {y}, {z}) count {count}"),
                });
            }
            let mut sum = Vec::with_capacity(dim);
            for _ in 0..dim {
                sum.push(f64::from_le_bytes(r.array()?));
            }
            grid.cells.insert(Voxel::new(x, y, z), CellAccum { count, sum });
        }
        Ok(grid)
    }
}

struct ByteReader<'a, R: Read> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read> ByteReader<'_, R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N], FeatMapError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                FeatMapError::Format { offset: self.offset, msg: "truncated file".into() }
            }
            _ => FeatMapError::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, FeatMapError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new(40, 40, 20, 0.1).unwrap()
    }

    /// Single-pixel frame whose pixel back-projects onto `world`.
    fn frame_hitting(world: Vec3, embedding: &[f32]) -> PosedFrame {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        let pose = Pose::from_translation(world - Vec3::new(0.0, 0.0, 1.0));
        PosedFrame {
            features: FeatureImage { width: 1, height: 1, dim: embedding.len(), data: embedding.to_vec() },
            depth: DepthImage { width: 1, height: 1, data: vec![1.0] },
            intrinsics: k,
            pose,
        }
    }

    #[test]
    fn single_pixel_sets_cell_mean() {
        let mut g = FeatureGrid::new(spec(), 3);
        let stats = g.fuse_frame(&frame_hitting(Vec3::new(0.2, 0.5, -0.3), &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(stats.fused, 1);
        let v = voxel_index(&Vec3::new(0.2, 0.5, -0.3), &spec()).unwrap();
        assert_eq!(g.cell_mean(v), Some(vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn two_frames_average() {
        let mut g = FeatureGrid::new(spec(), 2);
        let p = Vec3::new(0.0, 1.0, 0.0);
        g.fuse_frame(&frame_hitting(p, &[1.0, 0.0])).unwrap();
        g.fuse_frame(&frame_hitting(p, &[0.0, 3.0])).unwrap();
        let v = voxel_index(&p, &spec()).unwrap();
        assert_eq!(g.cell_mean(v), Some(vec![0.5, 1.5]));
    }

    #[test]
    fn empty_grid_has_no_cells() {
        let g = FeatureGrid::new(spec(), 4);
        assert_eq!(g.cell_mean(Voxel::new(0, 0, 0)), None);
        assert!(g.is_empty());
    }

    #[test]
    fn dimension_and_size_mismatch() {
        let mut g = FeatureGrid::new(spec(), 4);
        let err = g.fuse_frame(&frame_hitting(Vec3::zeros(), &[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, FeatMapError::DimMismatch { expected: 4, actual: 2 }));
        let mut f = frame_hitting(Vec3::zeros(), &[0.0; 4]);
        f.depth = DepthImage { width: 2, height: 1, data: vec![1.0, 1.0] };
        assert!(matches!(g.fuse_frame(&f), Err(FeatMapError::FrameSize { .. })));
    }

    #[test]
    fn invalid_depth_and_out_of_range_are_counted() {
        let mut g = FeatureGrid::new(spec(), 1);
        let mut f = frame_hitting(Vec3::zeros(), &[1.0]);
        f.depth.data[0] = 0.0;
        assert_eq!(g.fuse_frame(&f).unwrap().invalid_depth, 1);
        let far = frame_hitting(Vec3::new(100.0, 0.5, 0.0), &[1.0]);
        assert_eq!(g.fuse_frame(&far).unwrap().out_of_bounds, 1);
        let high = frame_hitting(Vec3::new(0.0, 1.5, 0.0), &[1.0]);
        let band = HeightBand { lower: 0.0, upper: 1.0 };
        assert_eq!(g.fuse_frame_in_band(&high, band).unwrap().out_of_band, 1);
        assert!(g.is_empty());
    }

    #[test]
    fn shuffled_fusion_matches_sorted_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 8;
        let pts: Vec<Vec<f32>> = (0..100).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let voxel = Voxel::new(3, 4, 5);
        let mut sorted = FeatureGrid::new(spec(), dim);
        for p in &pts {
            sorted.accumulate(voxel, p).unwrap();
        }
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng);
        let mut other = FeatureGrid::new(spec(), dim);
        for p in &shuffled {
            other.accumulate(voxel, p).unwrap();
        }
        let (a, b) = (sorted.cell_mean(voxel).unwrap(), other.cell_mean(voxel).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn merge_identity_union_and_commutativity() {
        let mut a = FeatureGrid::new(spec(), 2);
        a.accumulate(Voxel::new(1, 1, 1), &[1.0, 2.0]).unwrap();
        let empty = FeatureGrid::new(spec(), 2);
        assert_eq!(a.merge(&empty).unwrap(), a);
        let mut b = FeatureGrid::new(spec(), 2);
        b.accumulate(Voxel::new(2, 2, 2), &[0.5, 0.25]).unwrap();
        b.accumulate(Voxel::new(1, 1, 1), &[0.1, 0.3]).unwrap();
        let ab = a.merge(&b).unwrap();
        assert_eq!(ab.len(), 2);
        assert_eq!(ab, b.merge(&a).unwrap());
        assert_eq!(ab.cell(Voxel::new(1, 1, 1)).unwrap().count, 2);
        let other_spec = FeatureGrid::new(GridSpec::new(10, 10, 10, 0.1).unwrap(), 2);
        assert!(matches!(a.merge(&other_spec), Err(FeatMapError::SpecMismatch(..))));
    }

    #[test]
    fn split_stream_merge_matches_single_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<PosedFrame> = (0..40)
            .map(|_| {
                let p = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0), rng.random_range(-0.5..0.5));
                let e: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                frame_hitting(p, &e)
            })
            .collect();
        let mut single = FeatureGrid::new(spec(), 4);
        let (mut left, mut right) = (FeatureGrid::new(spec(), 4), FeatureGrid::new(spec(), 4));
        for (i, f) in frames.iter().enumerate() {
            single.fuse_frame(f).unwrap();
            if i % 3 == 0 { left.fuse_frame(f).unwrap() } else { right.fuse_frame(f).unwrap() };
        }
        let merged = left.merge(&right).unwrap();
        assert_eq!(merged.len(), single.len());
        for (v, acc) in single.cells() {
            let m = merged.cell(*v).unwrap();
            assert_eq!(m.count, acc.count);
            for (x, y) in m.mean().iter().zip(acc.mean()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn stored_cells_never_exceed_fused_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = FeatureGrid::new(spec(), 1);
        let mut fused = 0;
        for _ in 0..200 {
            let p = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(0.0..0.5), rng.random_range(-0.3..0.3));
            fused += g.fuse_frame(&frame_hitting(p, &[1.0])).unwrap().fused;
        }
        assert!(g.len() <= fused);
    }

    #[test]
    fn collapsed_voxels_match_top_down_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let voxel_spec = spec();
        let flat_spec = GridSpec::new(40, 40, 1, 0.1).unwrap();
        let mut voxels = FeatureGrid::new(voxel_spec, 3);
        let mut flat = FeatureGrid::new(flat_spec, 3);
        for _ in 0..300 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), 0.72, rng.random_range(-1.0..1.0));
            let e: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            voxels.fuse_frame(&frame_hitting(p, &e)).unwrap();
            flat.fuse_frame(&frame_hitting(p, &e)).unwrap();
        }
        let collapsed = voxels.top_down_means();
        let flat_means: BTreeMap<Cell, Vec<f64>> = flat.cells().map(|(v, a)| (v.cell(), a.mean())).collect();
        assert_eq!(collapsed, flat_means);
    }

    #[test]
    fn save_load_round_trip_and_format_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = FeatureGrid::new(spec(), 5);
        for _ in 0..50 {
            let v = Voxel::new(rng.random_range(0..40), rng.random_range(0..40), rng.random_range(0..20));
            let e: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.accumulate(v, &e).unwrap();
        }
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        let back = FeatureGrid::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, g);
        for (a, b) in back.cells().zip(g.cells()) {
            for (x, y) in a.1.sum.iter().zip(&b.1.sum) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureGrid::read_from(&mut bad.as_slice()), Err(FeatMapError::Format { offset: 0, .. })));

        let mut v999 = bytes.clone();
        v999[4..6].copy_from_slice(&999u16.to_le_bytes());
        assert!(matches!(FeatureGrid::read_from(&mut v999.as_slice()), Err(FeatMapError::UnsupportedVersion(999))));

        let truncated = &bytes[..bytes.len() - 3];
        match FeatureGrid::read_from(&mut &truncated[..]) {
            Err(FeatMapError::Format { offset, .. }) => assert!(offset > 30),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}

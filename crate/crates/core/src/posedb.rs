//! Topological pose/feature databases for area and audio localization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{project_to_grid, GridSpec, Pose, Voxel};
use crate::heatmap::{scored_heatmap, Heatmap, HeatmapError, ScoredPosition};

const MAGIC: &[u8; 4] = b"MSPD";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum PoseDbError {
    #[error("embedding dimension mismatch: db has {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("database is empty")]
    NoTarget,
    #[error("query embedding has zero norm")]
    ZeroQuery,
    #[error("no db position falls inside the grid")]
    OutsideGrid,
    #[error("time {0} s outside the odometry range")]
    OutsideOdometry(f64),
    #[error("odometry timestamps must be strictly increasing")]
    Unsorted,
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported pose db version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time-indexed camera poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    stamps: Vec<(f64, Pose)>,
}

impl Odometry {
    pub fn new(stamps: Vec<(f64, Pose)>) -> Result<Self, PoseDbError> {
        if stamps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(PoseDbError::Unsorted);
        }
        Ok(Self { stamps })
    }

    pub fn stamps(&self) -> &[(f64, Pose)] {
        &self.stamps
    }

    /// Pose at the timestamp nearest `t` (earlier stamp on a tie).
    pub fn pose_at(&self, t: f64) -> Result<&Pose, PoseDbError> {
        let (first, last) = match (self.stamps.first(), self.stamps.last()) {
            (Some(f), Some(l)) => (f.0, l.0),
            _ => return Err(PoseDbError::OutsideOdometry(t)),
        };
        if !(first..=last).contains(&t) {
            return Err(PoseDbError::OutsideOdometry(t));
        }
        let i = self.stamps.partition_point(|s| s.0 < t);
        if i == 0 {
            return Ok(&self.stamps[0].1);
        }
        let (before, after) = (&self.stamps[i - 1], &self.stamps[i.min(self.stamps.len() - 1)]);
        Ok(if after.0 - t < t - before.0 { &after.1 } else { &before.1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub time: f64,
    pub pose: Pose,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatureDb {
    dim: usize,
    entries: Vec<PoseEntry>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>().sqrt(), b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Min-max normalization to `[0, 1]`; a constant input maps to all ones.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

impl PoseFeatureDb {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[PoseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: PoseEntry) -> Result<(), PoseDbError> {
        if entry.embedding.len() != self.dim {
            return Err(PoseDbError::DimMismatch { expected: self.dim, actual: entry.embedding.len() });
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Cosine similarity of every entry to `query`.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, PoseDbError> {
        if query.len() != self.dim {
            return Err(PoseDbError::DimMismatch { expected: self.dim, actual: query.len() });
        }
        if query.iter().all(|&x| x == 0.0) {
            return Err(PoseDbError::ZeroQuery);
        }
        Ok(self.entries.iter().map(|e| cosine(&e.embedding, query)).collect())
    }

    /// Index of the best match; ties go to the earliest entry.
    pub fn best_match(&self, query: &[f64]) -> Result<usize, PoseDbError> {
        let scores = self.scores(query)?;
        let mut best: Option<usize> = None;
        for (i, s) in scores.iter().enumerate() {
            if best.is_none_or(|b| *s > scores[b]) {
                best = Some(i);
            }
        }
        best.ok_or(PoseDbError::NoTarget)
    }

    /// Normalized scores paired with ground-plane positions. Entries whose
    /// pose falls outside the grid are left out.
    pub fn scored_positions(&self, query: &[f64], spec: &GridSpec) -> Result<Vec<ScoredPosition>, PoseDbError> {
        if self.entries.is_empty() {
            return Err(PoseDbError::NoTarget);
        }
        let scores = min_max_normalize(&self.scores(query)?);
        let positions: Vec<ScoredPosition> = self
            .entries
            .iter()
            .zip(scores)
            .filter_map(|(e, score)| {
                project_to_grid(e.pose.translation(), spec)
                    .ok()
                    .map(|c| ScoredPosition { voxel: Voxel::new(c.x, c.y, 0), score })
            })
            .collect();
        if positions.is_empty() {
            return Err(PoseDbError::OutsideGrid);
        }
        Ok(positions)
    }

    /// Scored heatmap over the entry positions (ground-plane decay).
    pub fn query_heatmap(&self, query: &[f64], eps: f64, spec: &GridSpec) -> Result<Heatmap, PoseDbError> {
        Ok(scored_heatmap(&self.scored_positions(query, spec)?, eps, spec)?)
    }

    /// Layout: `MSPD`, u16 version, u32 dim, u64 count, then per entry an f64
    /// time, 16 f64 row-major pose values and `dim` f64 embedding values.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoseDbError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&e.time.to_le_bytes())?;
            for v in e.pose.to_row_major() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &e.embedding {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoseDbError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let mut take = |n: usize| -> Result<&[u8], PoseDbError> {
            let s = bytes
                .get(off..off + n)
                .ok_or(PoseDbError::Format { offset: off as u64, msg: "unexpected end of file".into() })?;
            off += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(PoseDbError::Format { offset: 0, msg: "bad magic".into() });
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(PoseDbError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut db = Self::new(dim);
        for _ in 0..count {
            let at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
            let time = at(take(8)?);
            let mut m = [0.0; 16];
            for v in m.iter_mut() {
                *v = at(take(8)?);
            }
            let embedding = (0..dim).map(|_| take(8).map(at)).collect::<Result<Vec<_>, _>>()?;
            let pose = Pose::from_row_major(&m)
                .map_err(|e| PoseDbError::Format { offset: 0, msg: format!("invalid pose: {e}") })?;
            db.push(PoseEntry { time, pose, embedding })?;
        }
        Ok(db)
    }
}

/// Area database: one entry per frame pairing its pose with its global
/// (whole-image) embedding.
pub fn build_area_db(
    frames: impl IntoIterator<Item = (f64, Pose, Vec<f64>)>,
    dim: usize,
) -> Result<PoseFeatureDb, PoseDbError> {
    let mut db = PoseFeatureDb::new(dim);
    for (time, pose, embedding) in frames {
        db.push(PoseEntry { time, pose, embedding })?;
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn pose(x: f64, z: f64) -> Pose {
        Pose::from_translation(Vec3::new(x, 1.2, z))
    }

    fn spec() -> GridSpec {
        GridSpec::new(100, 100, 10, 0.1).unwrap()
    }

    #[test]
    fn odometry_nearest_stamp() {
        let odo = Odometry::new(vec![(0.0, pose(0.0, 0.0)), (1.0, pose(1.0, 0.0)), (2.0, pose(2.0, 0.0))]).unwrap();
        assert_eq!(odo.pose_at(1.0).unwrap().translation().x, 1.0);
        assert_eq!(odo.pose_at(1.4).unwrap().translation().x, 1.0);
        assert_eq!(odo.pose_at(1.6).unwrap().translation().x, 2.0);
        assert_eq!(odo.pose_at(0.5).unwrap().translation().x, 0.0);
        assert!(matches!(odo.pose_at(2.5), Err(PoseDbError::OutsideOdometry(_))));
        assert!(matches!(Odometry::new(vec![(1.0, pose(0.0, 0.0)), (1.0, pose(0.0, 0.0))]), Err(PoseDbError::Unsorted)));
    }

    #[test]
    fn normalization_preserves_argmax() {
        let s = [0.2, -0.4, 0.9, 0.1];
        let n = min_max_normalize(&s);
        for (a, b) in n.iter().zip([0.6 / 1.3, 0.0, 1.0, 0.5 / 1.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(min_max_normalize(&[0.3, 0.3]), vec![1.0, 1.0]);
    }

    #[test]
    fn area_query_peaks_at_matching_frame() {
        let db = build_area_db(
            vec![(0.0, pose(-2.0, 0.0), vec![1.0, 0.0, 0.0]), (1.0, pose(2.0, 1.0), vec![0.0, 1.0, 0.0])],
            3,
        )
        .unwrap();
        let h = db.query_heatmap(&[0.0, 1.0, 0.0], 0.1, &spec()).unwrap();
        let peak = h.argmax().unwrap();
        assert_eq!(peak.score, 1.0);
        assert_eq!(peak.voxel.cell(), project_to_grid(&Vec3::new(2.0, 0.0, 1.0), &spec()).unwrap());
        assert_eq!(db.best_match(&[0.0, 1.0, 0.0]).unwrap(), 1);
        assert!(matches!(PoseFeatureDb::new(3).query_heatmap(&[1.0, 0.0, 0.0], 0.1, &spec()), Err(PoseDbError::NoTarget)));
        assert!(matches!(db.scores(&[1.0]), Err(PoseDbError::DimMismatch { .. })));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.db");
        let mut db = PoseFeatureDb::new(2);
        db.push(PoseEntry { time: 0.5, pose: Pose::from_axis_angle(&Vec3::y(), 0.3, Vec3::new(1.0, 2.0, 3.0)), embedding: vec![0.25, -1.0] })
            .unwrap();
        db.save(&path).unwrap();
        assert_eq!(PoseFeatureDb::load(&path).unwrap(), db);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(PoseFeatureDb::load(&path), Err(PoseDbError::UnsupportedVersion(9))));
        bytes[4] = 1;
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(PoseFeatureDb::load(&path), Err(PoseDbError::Format { .. })));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(PoseFeatureDb::load(&path), Err(PoseDbError::Format { offset: 0, .. })));
    }
}

//! Open-vocabulary landmark indexing and embodiment-specific obstacle maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::featmap::FeatureGrid;
use crate::geometry::{project_to_grid, Cell, GridSpec, Vec3, Voxel};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("embedding dimension mismatch: map has {map}, labels have {labels}")]
    DimMismatch { map: usize, labels: usize },
    #[error("label set needs one embedding per label ({labels} labels, {rows} rows)")]
    RowCount { labels: usize, rows: usize },
    #[error("embedding for label {0:?} has zero norm")]
    ZeroEmbedding(String),
    #[error("label index {index} out of range for {count} labels")]
    BadLabelIndex { index: usize, count: usize },
    #[error("height band lower bound {t1} exceeds upper bound {t2}")]
    InvalidBand { t1: f64, t2: f64 },
    #[error("grid size mismatch")]
    SizeMismatch,
    #[error("PGM error: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Text categories with their L2-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl LabelSet {
    /// Normalizes every row to unit length.
    pub fn new(labels: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self, QueryError> {
        if labels.len() != embeddings.len() {
            return Err(QueryError::RowCount { labels: labels.len(), rows: embeddings.len() });
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(embeddings.len());
        for (label, row) in labels.iter().zip(embeddings) {
            if row.len() != dim {
                return Err(QueryError::DimMismatch { map: dim, labels: row.len() });
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(QueryError::ZeroEmbedding(label.clone()));
            }
            rows.push(row.into_iter().map(|x| x / norm).collect());
        }
        Ok(Self { labels, embeddings: rows })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Resolves label names to indices.
    pub fn indices_of<S: AsRef<str>>(&self, names: &[S]) -> Option<Vec<usize>> {
        names.iter().map(|n| self.index_of(n.as_ref())).collect()
    }
}

/// How map features are compared against label embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// Cell means are L2-normalized first.
    #[default]
    Cosine,
    /// Raw dot product of the cell mean with the label embedding.
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScore {
    pub label: usize,
    pub score: f64,
}

/// Per-voxel best label over the occupied cells of a feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationGrid {
    spec: GridSpec,
    label_count: usize,
    cells: BTreeMap<Voxel, LabelScore>,
}

impl SegmentationGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, voxel: Voxel) -> Option<LabelScore> {
        self.cells.get(&voxel).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Voxel, &LabelScore)> {
        self.cells.iter()
    }

    /// Voxels assigned to `label`.
    pub fn voxels_of(&self, label: usize) -> Vec<Voxel> {
        self.cells.iter().filter(|(_, s)| s.label == label).map(|(v, _)| *v).collect()
    }

    /// Top-down union of the masks of the given labels.
    pub fn top_down_mask(&self, labels: &[usize]) -> ObstacleGrid {
        let wanted: BTreeSet<usize> = labels.iter().copied().collect();
        let mut grid = ObstacleGrid::empty(self.spec.h, self.spec.w);
        for (v, s) in &self.cells {
            if wanted.contains(&s.label) {
                grid.set(v.cell(), true);
            }
        }
        grid
    }

    /// Top-down label raster: for each column the label of the highest
    /// occupied voxel, `None` where the column is empty.
    pub fn top_down_labels(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<(u32, usize)>> = vec![None; self.spec.cell_count()];
        for (v, s) in &self.cells {
            let i = v.x as usize * self.spec.w as usize + v.y as usize;
            if out[i].is_none_or(|(z, _)| v.z >= z) {
                out[i] = Some((v.z, s.label));
            }
        }
        out.into_iter().map(|o| o.map(|(_, l)| l)).collect()
    }

    /// Writes the top-down label raster as an 8-bit PGM. Empty columns are 255.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), QueryError> {
        let bytes: Vec<u8> = self
            .top_down_labels()
            .into_iter()
            .map(|l| l.map_or(255, |l| l.min(254) as u8))
            .collect();
        write_pgm(path, self.spec.h, self.spec.w, &bytes)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best label for one embedding: argmax of the similarity row, ties broken
/// by the lowest label index.
pub fn best_label(embedding: &[f64], labels: &LabelSet, sim: Similarity) -> LabelScore {
    let norm = match sim {
        Similarity::Cosine => {
            let n = dot(embedding, embedding).sqrt();
            if n > 0.0 { n } else { 1.0 }
        }
        Similarity::Dot => 1.0,
    };
    let mut best = LabelScore { label: 0, score: f64::NEG_INFINITY };
    for (i, e) in labels.embeddings.iter().enumerate() {
        let s = dot(embedding, e) / norm;
        if s > best.score {
            best = LabelScore { label: i, score: s };
        }
    }
    best
}

/// Assigns every occupied voxel of `grid` its most similar label.
pub fn segment_grid(grid: &FeatureGrid, labels: &LabelSet, sim: Similarity) -> Result<SegmentationGrid, QueryError> {
    if !labels.is_empty() && grid.dim() != labels.dim() {
        return Err(QueryError::DimMismatch { map: grid.dim(), labels: labels.dim() });
    }
    let cells: Vec<(Voxel, Vec<f64>)> = grid.cells().map(|(v, acc)| (*v, acc.mean())).collect();
    let scored: BTreeMap<Voxel, LabelScore> = if labels.is_empty() {
        BTreeMap::new()
    } else {
        cells.par_iter().map(|(v, mean)| (*v, best_label(mean, labels, sim))).collect::<Vec<_>>().into_iter().collect()
    };
    Ok(SegmentationGrid { spec: *grid.spec(), label_count: labels.len(), cells: scored })
}

/// Binary top-down occupancy grid, row-major over `(px, py)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObstacleGrid {
    h: u32,
    w: u32,
    occupied: Vec<bool>,
}

impl ObstacleGrid {
    pub fn empty(h: u32, w: u32) -> Self {
        Self { h, w, occupied: vec![false; h as usize * w as usize] }
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.h as i64 && y < self.w as i64
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[c.x as usize * self.w as usize + c.y as usize]
    }

    pub fn set(&mut self, c: Cell, value: bool) {
        self.occupied[c.x as usize * self.w as usize + c.y as usize] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn intersect(&self, other: &ObstacleGrid) -> Result<ObstacleGrid, QueryError> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(QueryError::SizeMismatch);
        }
        let occupied = self.occupied.iter().zip(&other.occupied).map(|(a, b)| *a && *b).collect();
        Ok(ObstacleGrid { h: self.h, w: self.w, occupied })
    }

    pub fn is_subset_of(&self, other: &ObstacleGrid) -> bool {
        (self.h, self.w) == (other.h, other.w) && self.occupied.iter().zip(&other.occupied).all(|(a, b)| !*a || *b)
    }

    /// 8-bit PGM, 0 free and 255 occupied; image rows are `px`.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), QueryError> {
        let bytes: Vec<u8> = self.occupied.iter().map(|&o| if o { 255 } else { 0 }).collect();
        write_pgm(path, self.h, self.w, &bytes)
    }

    /// Reads a binary PGM; any non-zero byte is occupied.
    pub fn read_pgm(path: impl AsRef<Path>) -> Result<ObstacleGrid, QueryError> {
        let (h, w, bytes) = read_pgm(path)?;
        Ok(ObstacleGrid { h, w, occupied: bytes.into_iter().map(|b| b != 0).collect() })
    }
}

pub(crate) fn write_pgm(path: impl AsRef<Path>, rows: u32, cols: u32, bytes: &[u8]) -> Result<(), QueryError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n{cols} {rows}\n255\n")?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Returns `(rows, cols, bytes)` of a binary 8-bit PGM.
pub(crate) fn read_pgm(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>), QueryError> {
    let data = fs::read(path)?;
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(QueryError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(QueryError::Pgm(format!("unsupported magic {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| QueryError::Pgm(format!("bad header field {s:?}")));
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval > 255 {
        return Err(QueryError::Pgm("only 8-bit PGM supported".into()));
    }
    let body = &data[i + 1..];
    let n = rows as usize * cols as usize;
    if body.len() < n {
        return Err(QueryError::Pgm(format!("expected {n} pixels, found {}", body.len())));
    }
    Ok((rows, cols, body[..n].to_vec()))
}

/// Marks every cell that receives a point whose height lies in `[t1, t2]`.
pub fn obstacle_mask(points: &[Vec3], spec: &GridSpec, t1: f64, t2: f64) -> Result<ObstacleGrid, QueryError> {
    if t1 > t2 {
        return Err(QueryError::InvalidBand { t1, t2 });
    }
    let mut grid = ObstacleGrid::empty(spec.h, spec.w);
    for p in points {
        if t1 <= p.y && p.y <= t2 {
            if let Ok(c) = project_to_grid(p, spec) {
                grid.set(c, true);
            }
        }
    }
    Ok(grid)
}

/// Obstacle map for one embodiment: the top-down union of the segmentation
/// masks of `obstacle_subset`, intersected with the geometric base map.
pub fn embodiment_obstacle_map(
    grid: &FeatureGrid,
    base: &ObstacleGrid,
    potential: &LabelSet,
    obstacle_subset: &[usize],
    sim: Similarity,
) -> Result<ObstacleGrid, QueryError> {
    let seg = segment_grid(grid, potential, sim)?;
    obstacle_map_from_segmentation(&seg, base, obstacle_subset)
}

pub fn obstacle_map_from_segmentation(
    seg: &SegmentationGrid,
    base: &ObstacleGrid,
    obstacle_subset: &[usize],
) -> Result<ObstacleGrid, QueryError> {
    if let Some(&index) = obstacle_subset.iter().find(|&&i| i >= seg.label_count) {
        return Err(QueryError::BadLabelIndex { index, count: seg.label_count });
    }
    seg.top_down_mask(obstacle_subset).intersect(base)
}

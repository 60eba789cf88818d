//! Pinhole back-projection, rigid transforms and world-to-grid indexing.
//!
//! Axis convention: `y` is the height axis, `x` and `z` span the ground plane.
//! The world origin sits at the horizontal center of the grid, so a point at
//! `(0, ·, 0)` lands in cell `(h/2, w/2)`. Map row `px` grows with world `+x`
//! and map column `py` grows with world `-z`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0} (must be > 0 and finite)")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with unit determinant (residual {0:e})")]
    InvalidRotation(f64),
    #[error("invalid grid spec: {0}")]
    InvalidGridSpec(String),
}

/// Pinhole intrinsics of the depth camera, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be non-zero".into()));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics for a camera with the given horizontal field of view and
    /// the principal point at the image center.
    pub fn from_hfov(hfov_deg: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Projects a camera-frame point to pixel coordinates. Returns `None` for
    /// points at or behind the image plane.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Back-projects pixel `(u, v)` with metric depth into the camera frame:
/// `P = D(u) * K^-1 * (u, v, 1)`.
pub fn back_project(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok(Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth))
}

/// Rigid camera-to-world transform, `P_W = R * P_k + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = (rotation.determinant() - 1.0).abs();
        let residual = ortho.max(det);
        if !(residual <= ROTATION_TOL) {
            return Err(GeometryError::InvalidRotation(residual));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self { rotation: *r.matrix(), translation }
    }

    /// Re-orthonormalizes `rotation` (nearest rotation in Frobenius norm)
    /// before building the pose. Used after numerical estimation.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        let r = Rotation3::from_matrix(&rotation);
        Self { rotation: *r.matrix(), translation }
    }

    /// Camera pose looking horizontally along the map heading `heading_deg`
    /// (0 = north, 90 = east) from `position`, with the camera `y` axis
    /// pointing down and `z` forward.
    pub fn camera_looking(position: Vec3, heading_deg: f64) -> Self {
        let forward = heading_to_world(heading_deg);
        let down = Vec3::new(0.0, -1.0, 0.0);
        let right = down.cross(&forward);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self { rotation, translation: position }
    }

    /// Builds a pose from a row-major 4x4 homogeneous matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(r, Vec3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Angle of the relative rotation between two poses, in degrees.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

pub fn to_world(p_cam: &Vec3, pose: &Pose) -> Vec3 {
    pose.transform(p_cam)
}

/// World ground-plane unit direction for a map heading (0 = north = map `-px`).
pub fn heading_to_world(heading_deg: f64) -> Vec3 {
    let h = heading_deg.to_radians();
    Vec3::new(-h.cos(), 0.0, -h.sin())
}

/// Grid dimensions and resolution. `h` and `w` span the ground plane,
/// `z` is the vertical layer count and `scale` is meters per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub h: u32,
    pub w: u32,
    pub z: u32,
    pub scale: f64,
}

impl GridSpec {
    pub fn new(h: u32, w: u32, z: u32, scale: f64) -> Result<Self, GeometryError> {
        if h == 0 || w == 0 || z == 0 {
            return Err(GeometryError::InvalidGridSpec(format!("dims must be >= 1, got {h}x{w}x{z}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidGridSpec(format!("scale must be > 0, got {scale}")));
        }
        Ok(Self { h, w, z, scale })
    }

    pub fn voxel_count(&self) -> usize {
        self.h as usize * self.w as usize * self.z as usize
    }

    pub fn cell_count(&self) -> usize {
        self.h as usize * self.w as usize
    }

    /// A grid with a single vertical layer is a top-down 2D map: every point
    /// lands in layer 0 regardless of height.
    pub fn is_top_down(&self) -> bool {
        self.z == 1
    }

    /// World ground-plane coordinates `(x, z)` of a cell center.
    pub fn cell_center(&self, px: f64, py: f64) -> (f64, f64) {
        let x = (px - self.h as f64 / 2.0) * self.scale;
        let z = (self.w as f64 / 2.0 - py) * self.scale;
        (x, z)
    }

    /// World point at the center of a voxel.
    pub fn voxel_center(&self, v: Voxel) -> Vec3 {
        let (x, z) = self.cell_center(v.x as f64, v.y as f64);
        Vec3::new(x, v.z as f64 * self.scale, z)
    }

    pub fn contains_cell(&self, px: i64, py: i64) -> bool {
        px >= 0 && py >= 0 && px < self.h as i64 && py < self.w as i64
    }
}

/// A 2D map cell `(px, py)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// A 3D voxel `(px, py, pz)`; `z` is the height layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Voxel {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Voxel {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

/// Signed indices of a point that fell outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("grid index ({x}, {y}, {z}) out of bounds")]
pub struct OutOfBounds {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

fn ground_indices(p: &Vec3, spec: &GridSpec) -> (i64, i64) {
    let px = (spec.h as f64 / 2.0 + p.x / spec.scale + 0.5).floor() as i64;
    let py = (spec.w as f64 / 2.0 - p.z / spec.scale + 0.5).floor() as i64;
    (px, py)
}

/// Projects a world point onto the ground-plane grid.
pub fn project_to_grid(p_world: &Vec3, spec: &GridSpec) -> Result<Cell, OutOfBounds> {
    let (px, py) = ground_indices(p_world, spec);
    if spec.contains_cell(px, py) {
        Ok(Cell::new(px as u32, py as u32))
    } else {
        Err(OutOfBounds { x: px, y: py, z: 0 })
    }
}

/// Voxel index of a world point. The floor (`y = 0`) maps to layer 0.
pub fn voxel_index(p_world: &Vec3, spec: &GridSpec) -> Result<Voxel, OutOfBounds> {
    let (px, py) = ground_indices(p_world, spec);
    let pz = if spec.is_top_down() { 0 } else { (p_world.y / spec.scale + 0.5).floor() as i64 };
    if spec.contains_cell(px, py) && pz >= 0 && pz < spec.z as i64 {
        Ok(Voxel::new(px as u32, py as u32, pz as u32))
    } else {
        Err(OutOfBounds { x: px, y: py, z: pz })
    }
}

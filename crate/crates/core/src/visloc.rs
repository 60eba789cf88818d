//! Hierarchical image localization: global retrieval, local matching,
//! P3P inside RANSAC, then a point heatmap at the recovered camera position.
//!
//! Descriptors come from a synthetic landmark field ([`LandmarkField`]) so the
//! whole chain runs without learned features. All poses are camera-to-world.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix6, Vector2, Vector6};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::blob::{Blob, BlobError};
use crate::geometry::{back_project, project_to_grid, GridSpec, Intrinsics, Pose, Vec3, Voxel};
use crate::heatmap::{point_heatmap, Heatmap, HeatmapError};

#[derive(Debug, Error)]
pub enum VislocError {
    #[error("reference database is empty")]
    EmptyDb,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no pose reached consensus")]
    NoConsensus,
    #[error("descriptor dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("reference manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub pixel: Vector2<f64>,
    pub descriptor: Vec<f64>,
}

/// One database image. `depths` holds the registered depth at each keypoint
/// (0 where unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub global: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
    pub depths: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Descriptors extracted from an image to localize.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub global: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vec3,
    pub pixel: Vector2<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = (dot(a, a) * dot(b, b)).sqrt();
    if n == 0.0 { 0.0 } else { dot(a, b) / n }
}

/// Nearest reference by global-descriptor cosine; ties go to the lowest index.
pub fn retrieve_reference(query: &[f64], db: &[ReferenceFrame]) -> Result<(usize, f64), VislocError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in db.iter().enumerate() {
        if f.global.len() != query.len() {
            return Err(VislocError::DimMismatch { expected: query.len(), actual: f.global.len() });
        }
        let s = cosine(query, &f.global);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or(VislocError::EmptyDb)
}

pub const RATIO_TEST: f64 = 0.8;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest and second-nearest squared distances from `d` into `set`.
fn two_nearest(d: &[f64], set: &[Keypoint]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (i, k) in set.iter().enumerate() {
        let dist = sq_dist(d, &k.descriptor);
        match best {
            Some((_, b)) if dist >= b => second = second.min(dist),
            _ => {
                if let Some((_, b)) = best {
                    second = second.min(b);
                }
                best = Some((i, dist));
            }
        }
    }
    best.map(|(i, b)| (i, b, second))
}

/// Mutual nearest neighbours passing the ratio test, with reference
/// keypoints lifted to world points through their depth and pose.
pub fn match_local(query: &[Keypoint], reference: &ReferenceFrame) -> Vec<Correspondence> {
    let ratio2 = RATIO_TEST * RATIO_TEST;
    query
        .iter()
        .filter_map(|q| {
            let (j, d1, d2) = two_nearest(&q.descriptor, &reference.keypoints)?;
            if d1 > ratio2 * d2 {
                return None;
            }
            let (back, _, _) = two_nearest(&reference.keypoints[j].descriptor, query)?;
            if !std::ptr::eq(&query[back], q) {
                return None;
            }
            let depth = *reference.depths.get(j)?;
            let kp = &reference.keypoints[j];
            let p = back_project(kp.pixel.x, kp.pixel.y, depth, &reference.intrinsics).ok()?;
            Some(Correspondence { world: reference.pose.transform(&p), pixel: q.pixel })
        })
        .collect()
}

fn bearing(pixel: &Vector2<f64>, k: &Intrinsics) -> Vec3 {
    Vec3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0).normalize()
}

fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    let [a4, a3, a2, a1, a0] = c;
    if a4.abs() < 1e-14 {
        return Vec::new();
    }
    let companion = nalgebra::Matrix4::new(
        -a3 / a4, -a2 / a4, -a1 / a4, -a0 / a4,
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let eval = |v: f64| (((a4 * v + a3) * v + a2) * v + a1) * v + a0;
    let deriv = |v: f64| ((4.0 * a4 * v + 3.0 * a3) * v + 2.0 * a2) * v + a1;
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut v = z.re;
            for _ in 0..8 {
                let d = deriv(v);
                if d.abs() < 1e-300 {
                    break;
                }
                let step = eval(v) / d;
                v -= step;
                if step.abs() < 1e-15 * (1.0 + v.abs()) {
                    break;
                }
            }
            v
        })
        .collect()
}

/// Rigid transform `R, t` with `camera ≈ R * world + t` (Kabsch).
fn align(world: &[Vec3; 3], camera: &[Vec3; 3]) -> Option<(Matrix3<f64>, Vec3)> {
    let pw = (world[0] + world[1] + world[2]) / 3.0;
    let pc = (camera[0] + camera[1] + camera[2]) / 3.0;
    let h: Matrix3<f64> = (0..3).map(|i| (world[i] - pw) * (camera[i] - pc).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    d[(2, 2)] = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * d * u.transpose();
    Some((r, pc - r * pw))
}

/// Grunert's P3P. Returns every world-to-camera solution `(R, t)`.
pub fn p3p(world: &[Vec3; 3], bearings: &[Vec3; 3]) -> Vec<(Matrix3<f64>, Vec3)> {
    let a = (world[1] - world[2]).norm();
    let b = (world[0] - world[2]).norm();
    let c = (world[0] - world[1]).norm();
    if a < 1e-9 || b < 1e-9 || c < 1e-9 {
        return Vec::new();
    }
    let ca = bearings[1].dot(&bearings[2]);
    let cb = bearings[0].dot(&bearings[2]);
    let cg = bearings[0].dot(&bearings[1]);
    let (a2, b2, c2) = (a * a, b * b, c * c);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];
    quartic_real_roots(coeffs)
        .into_iter()
        .filter_map(|v| {
            let denom = 2.0 * (cg - v * ca);
            if v <= 0.0 || denom.abs() < 1e-12 {
                return None;
            }
            let u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
            let q = 1.0 + v * v - 2.0 * v * cb;
            if u <= 0.0 || q <= 0.0 {
                return None;
            }
            let s1 = (b2 / q).sqrt();
            let cam = [bearings[0] * s1, bearings[1] * (u * s1), bearings[2] * (v * s1)];
            align(world, &cam)
        })
        .collect()
}

fn reprojection_error(r: &Matrix3<f64>, t: &Vec3, c: &Correspondence, k: &Intrinsics) -> f64 {
    let p = r * c.world + t;
    if p.z <= 1e-9 {
        return f64::INFINITY;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    ((u - c.pixel.x).powi(2) + (v - c.pixel.y).powi(2)).sqrt()
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Levenberg-Marquardt on reprojection error over world-to-camera `(R, t)`.
fn refine(r: Matrix3<f64>, t: Vec3, corr: &[&Correspondence], k: &Intrinsics) -> (Matrix3<f64>, Vec3) {
    let cost = |r: &Matrix3<f64>, t: &Vec3| corr.iter().map(|c| reprojection_error(r, t, c, k).powi(2)).sum::<f64>();
    let (mut r, mut t) = (r, t);
    let mut current = cost(&r, &t);
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let rp = r * c.world;
            let p = rp + t;
            if p.z <= 1e-9 {
                continue;
            }
            let iz = 1.0 / p.z;
            let res = [k.fx * p.x * iz + k.cx - c.pixel.x, k.fy * p.y * iz + k.cy - c.pixel.y];
            let dproj = nalgebra::Matrix2x3::new(
                k.fx * iz, 0.0, -k.fx * p.x * iz * iz,
                0.0, k.fy * iz, -k.fy * p.y * iz * iz,
            );
            let drot = -skew(&rp);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * drot));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            let rv = nalgebra::Vector2::new(res[0], res[1]);
            jtj += j.transpose() * j;
            jtr += j.transpose() * rv;
        }
        let mut improved = false;
        while lambda < 1e8 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(delta) = a.lu().solve(&(-jtr)) else { break };
            let w = Vec3::new(delta[0], delta[1], delta[2]);
            let rot = nalgebra::Rotation3::new(w);
            let r_new = rot.matrix() * r;
            let t_new = t + Vec3::new(delta[3], delta[4], delta[5]);
            let c_new = cost(&r_new, &t_new);
            if c_new < current {
                let done = current - c_new < 1e-14 * (1.0 + current);
                r = r_new;
                t = t_new;
                current = c_new;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (r, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub reproj_tol_px: f64,
    /// Inliers needed for `localize_image` to report success.
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 1000, reproj_tol_px: 3.0, min_inliers: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    /// Camera-to-world pose.
    pub pose: Pose,
    /// Indices into the correspondence list, all within tolerance of `pose`.
    pub inliers: Vec<usize>,
}

const MIN_CONSENSUS: usize = 4;

fn inliers_of(r: &Matrix3<f64>, t: &Vec3, corr: &[Correspondence], k: &Intrinsics, tol: f64) -> Vec<usize> {
    (0..corr.len()).filter(|&i| reprojection_error(r, t, &corr[i], k) <= tol).collect()
}

/// Robust camera pose from 3D-2D correspondences.
pub fn pnp_ransac(
    corr: &[Correspondence],
    k: &Intrinsics,
    params: &RansacParams,
    rng: &mut impl Rng,
) -> Result<PnpResult, VislocError> {
    if corr.len() < MIN_CONSENSUS {
        return Err(VislocError::TooFewCorrespondences(corr.len()));
    }
    let bearings: Vec<Vec3> = corr.iter().map(|c| bearing(&c.pixel, k)).collect();
    let tol = params.reproj_tol_px;
    let mut best: Option<(Matrix3<f64>, Vec3, usize)> = None;
    let mut needed = params.iterations;
    let mut iter = 0;
    while iter < needed.min(params.iterations) {
        iter += 1;
        let idx = sample(rng, corr.len(), 3);
        let (i, j, l) = (idx.index(0), idx.index(1), idx.index(2));
        let world = [corr[i].world, corr[j].world, corr[l].world];
        if (world[1] - world[0]).cross(&(world[2] - world[0])).norm() < 1e-9 {
            continue;
        }
        for (r, t) in p3p(&world, &[bearings[i], bearings[j], bearings[l]]) {
            let count = inliers_of(&r, &t, corr, k, tol).len();
            if best.as_ref().is_none_or(|b| count > b.2) {
                best = Some((r, t, count));
                let w = count as f64 / corr.len() as f64;
                let miss = 1.0 - w.powi(3);
                needed = if miss <= 1e-12 {
                    iter
                } else {
                    ((1.0f64 - 0.9999).ln() / miss.ln()).ceil().max(iter as f64) as usize
                };
            }
        }
    }
    let (mut r, mut t, count) = best.ok_or(VislocError::NoConsensus)?;
    if count < MIN_CONSENSUS {
        return Err(VislocError::NoConsensus);
    }
    let mut inliers = inliers_of(&r, &t, corr, k, tol);
    for _ in 0..3 {
        let subset: Vec<&Correspondence> = inliers.iter().map(|&i| &corr[i]).collect();
        let (r2, t2) = refine(r, t, &subset, k);
        let next = inliers_of(&r2, &t2, corr, k, tol);
        if next.len() < inliers.len() {
            break;
        }
        let stable = next == inliers;
        (r, t, inliers) = (r2, t2, next);
        if stable {
            break;
        }
    }
    if inliers.len() < MIN_CONSENSUS {
        return Err(VislocError::NoConsensus);
    }
    let world_to_camera = Pose::from_approx(r, t);
    Ok(PnpResult { pose: world_to_camera.inverse(), inliers })
}

/// Outcome of localizing one image.
#[derive(Debug, Clone)]
pub struct Localization {
    pub heatmap: Heatmap,
    pub pose: Option<Pose>,
    pub reference: Option<usize>,
    pub inliers: usize,
    pub failed: bool,
}

fn ground_voxel(p: &Vec3, spec: &GridSpec) -> Option<Voxel> {
    project_to_grid(p, spec).ok().map(|c| Voxel::new(c.x, c.y, 0))
}

/// Retrieval, matching and PnP. On any failure, or when fewer than
/// `params.min_inliers` survive, the heatmap is all zero and `failed` is set.
pub fn localize_image(
    query: &QueryImage,
    db: &[ReferenceFrame],
    params: &RansacParams,
    rng: &mut impl Rng,
    eps: f64,
    spec: &GridSpec,
) -> Result<Localization, VislocError> {
    let fail = |reference, inliers| Localization {
        heatmap: Heatmap::zeros(*spec),
        pose: None,
        reference,
        inliers,
        failed: true,
    };
    let (ri, _) = retrieve_reference(&query.global, db)?;
    let corr = match_local(&query.keypoints, &db[ri]);
    let result = match pnp_ransac(&corr, &query.intrinsics, params, rng) {
        Ok(r) => r,
        Err(VislocError::TooFewCorrespondences(_) | VislocError::NoConsensus) => return Ok(fail(Some(ri), 0)),
        Err(e) => return Err(e),
    };
    if result.inliers.len() < params.min_inliers {
        return Ok(fail(Some(ri), result.inliers.len()));
    }
    let Some(v) = ground_voxel(result.pose.translation(), spec) else {
        return Ok(fail(Some(ri), result.inliers.len()));
    };
    Ok(Localization {
        heatmap: point_heatmap(v, eps, spec)?,
        pose: Some(result.pose),
        reference: Some(ri),
        inliers: result.inliers.len(),
        failed: false,
    })
}

/// Random 3D landmarks with unit descriptors: a stand-in for learned
/// keypoint detectors and global descriptors.
#[derive(Debug, Clone)]
pub struct LandmarkField {
    pub points: Vec<Vec3>,
    pub descriptors: Vec<Vec<f64>>,
}

/// Descriptors observed from one camera.
#[derive(Debug, Clone)]
pub struct Observation {
    pub keypoints: Vec<Keypoint>,
    pub depths: Vec<f64>,
    pub landmark_ids: Vec<usize>,
    pub global: Vec<f64>,
}

impl LandmarkField {
    /// `n` landmarks uniformly inside the axis-aligned box `[lo, hi]`.
    pub fn random(rng: &mut impl Rng, n: usize, lo: Vec3, hi: Vec3, dim: usize) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let points = (0..n)
            .map(|_| Vec3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), rng.random_range(lo.z..=hi.z)))
            .collect();
        let descriptors = (0..n).map(|_| normalized((0..dim).map(|_| normal.sample(rng)).collect())).collect();
        Self { points, descriptors }
    }

    /// Projects visible landmarks. Pixel noise and descriptor noise are
    /// Gaussian with the given standard deviations.
    pub fn observe(&self, pose: &Pose, k: &Intrinsics, pixel_sigma: f64, desc_sigma: f64, rng: &mut impl Rng) -> Observation {
        let inv = pose.inverse();
        let mut obs = Observation { keypoints: Vec::new(), depths: Vec::new(), landmark_ids: Vec::new(), global: Vec::new() };
        let dim = self.descriptors.first().map_or(0, Vec::len);
        let mut global = vec![0.0; dim];
        for (i, p) in self.points.iter().enumerate() {
            let pc = inv.transform(p);
            let Some((u, v)) = k.project(&pc).filter(|&(u, v)| k.contains(u, v)) else { continue };
            let noise = |s: f64, rng: &mut dyn rand::RngCore| if s > 0.0 { Normal::new(0.0, s).unwrap().sample(rng) } else { 0.0 };
            let pixel = Vector2::new(
                (u + noise(pixel_sigma, rng)).clamp(0.0, k.width as f64 - 1e-6),
                (v + noise(pixel_sigma, rng)).clamp(0.0, k.height as f64 - 1e-6),
            );
            let descriptor = normalized(self.descriptors[i].iter().map(|&d| d + noise(desc_sigma, rng)).collect());
            global.iter_mut().zip(&descriptor).for_each(|(g, d)| *g += d);
            obs.keypoints.push(Keypoint { pixel, descriptor });
            obs.depths.push(pc.z);
            obs.landmark_ids.push(i);
        }
        obs.global = normalized(global);
        obs
    }

    pub fn reference(&self, pose: Pose, k: &Intrinsics, rng: &mut impl Rng) -> ReferenceFrame {
        let o = self.observe(&pose, k, 0.0, 0.0, rng);
        ReferenceFrame { global: o.global, keypoints: o.keypoints, depths: o.depths, intrinsics: *k, pose }
    }

    pub fn query(&self, pose: &Pose, k: &Intrinsics, pixel_sigma: f64, desc_sigma: f64, rng: &mut impl Rng) -> QueryImage {
        let o = self.observe(pose, k, pixel_sigma, desc_sigma, rng);
        QueryImage { global: o.global, keypoints: o.keypoints, intrinsics: *k }
    }
}

fn keypoint_blob(kps: &[Keypoint], depths: Option<&[f64]>) -> Blob {
    let dim = kps.first().map_or(0, |k| k.descriptor.len());
    let values = kps
        .iter()
        .enumerate()
        .flat_map(|(i, k)| {
            let d = depths.map_or(0.0, |d| d[i]);
            [k.pixel.x, k.pixel.y, d].into_iter().chain(k.descriptor.iter().copied()).map(|x| x as f32).collect::<Vec<_>>()
        })
        .collect();
    Blob { dims: vec![kps.len() as u32, 3 + dim as u32], values }
}

fn keypoints_from_blob(b: &Blob) -> Result<(Vec<Keypoint>, Vec<f64>), VislocError> {
    if b.dims.len() != 2 || b.dims[1] < 3 {
        return Err(VislocError::Manifest(format!("keypoint blob has dims {:?}", b.dims)));
    }
    let rows = b.rows();
    let kps = rows.iter().map(|r| Keypoint { pixel: Vector2::new(r[0], r[1]), descriptor: r[3..].to_vec() }).collect();
    Ok((kps, rows.iter().map(|r| r[2]).collect()))
}

fn intrinsics_line(k: &Intrinsics) -> String {
    format!("intrinsics {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

fn parse_intrinsics(rest: &str) -> Result<Intrinsics, VislocError> {
    let f: Vec<&str> = rest.split_whitespace().collect();
    let num = |i: usize| -> Result<f64, VislocError> {
        f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| VislocError::Manifest(format!("bad intrinsics {rest:?}")))
    };
    Intrinsics::new(num(0)?, num(1)?, num(2)?, num(3)?, num(4)? as u32, num(5)? as u32)
        .map_err(|e| VislocError::Manifest(e.to_string()))
}

impl QueryImage {
    /// Writes `<path>` (text) plus `<path>.global.bin` and `<path>.kp.bin`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VislocError> {
        let path = path.as_ref();
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = path.parent().unwrap_or(Path::new("."));
        Blob::vector(&self.global).save(dir.join(format!("{name}.global.bin")))?;
        keypoint_blob(&self.keypoints, None).save(dir.join(format!("{name}.kp.bin")))?;
        fs::write(
            path,
            format!("mslm-image 1\n{}\nglobal {name}.global.bin\nkeypoints {name}.kp.bin\n", intrinsics_line(&self.intrinsics)),
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VislocError> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("mslm-image 1") {
            return Err(VislocError::Manifest(format!("{}: missing 'mslm-image 1' header", path.display())));
        }
        let (mut k, mut global, mut kps) = (None, None, None);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "intrinsics" => k = Some(parse_intrinsics(rest)?),
                "global" => global = Some(Blob::load(dir.join(rest.trim()))?.values.iter().map(|&x| x as f64).collect()),
                "keypoints" => kps = Some(keypoints_from_blob(&Blob::load(dir.join(rest.trim()))?)?.0),
                other => return Err(VislocError::Manifest(format!("unknown key {other:?}"))),
            }
        }
        let missing = |what: &str| VislocError::Manifest(format!("{}: no {what}", path.display()));
        Ok(Self {
            global: global.ok_or_else(|| missing("global"))?,
            keypoints: kps.ok_or_else(|| missing("keypoints"))?,
            intrinsics: k.ok_or_else(|| missing("intrinsics"))?,
        })
    }
}

/// Reference database manifest:
///
/// ```text
/// mslm-refdb 1
/// intrinsics fx fy cx cy width height
/// frame <global blob> <keypoint blob> p0 .. p15
/// ```
///
/// Keypoint blobs are `[N, 3 + D]` rows of `u, v, depth, descriptor`.
pub fn save_reference_db(path: impl AsRef<Path>, db: &[ReferenceFrame]) -> Result<(), VislocError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "refdb".into());
    let k = db.first().ok_or(VislocError::EmptyDb)?.intrinsics;
    let mut text = format!("mslm-refdb 1\n{}\n", intrinsics_line(&k));
    for (i, f) in db.iter().enumerate() {
        let g = format!("{stem}.{i:05}.global.bin");
        let kp = format!("{stem}.{i:05}.kp.bin");
        Blob::vector(&f.global).save(dir.join(&g))?;
        keypoint_blob(&f.keypoints, Some(&f.depths)).save(dir.join(&kp))?;
        let pose: Vec<String> = f.pose.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&format!("frame {g} {kp} {}\n", pose.join(" ")));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_reference_db(path: impl AsRef<Path>) -> Result<Vec<ReferenceFrame>, VislocError> {
    let path = path.as_ref();
    let dir: PathBuf = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("mslm-refdb 1") {
        return Err(VislocError::Manifest(format!("{}: missing 'mslm-refdb 1' header", path.display())));
    }
    let mut k = None;
    let mut frames = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "intrinsics" => k = Some(parse_intrinsics(rest)?),
            "frame" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 18 {
                    return Err(VislocError::Manifest(format!("frame line needs 18 fields: {line:?}")));
                }
                let mut m = [0.0; 16];
                for (dst, s) in m.iter_mut().zip(&f[2..]) {
                    *dst = s.parse().map_err(|_| VislocError::Manifest(format!("bad pose value {s:?}")))?;
                }
                let pose = Pose::from_row_major(&m).map_err(|e| VislocError::Manifest(e.to_string()))?;
                let global = Blob::load(dir.join(f[0]))?.values.iter().map(|&x| x as f64).collect();
                let (keypoints, depths) = keypoints_from_blob(&Blob::load(dir.join(f[1]))?)?;
                let intrinsics = k.ok_or_else(|| VislocError::Manifest("intrinsics must precede frames".into()))?;
                frames.push(ReferenceFrame { global, keypoints, depths, intrinsics, pose });
            }
            other => return Err(VislocError::Manifest(format!("unknown key {other:?}"))),
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let axis = if axis.norm() < 1e-3 { Vec3::y() } else { axis.normalize() };
        Pose::from_axis_angle(&axis, rng.random_range(-0.6..0.6), Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)))
    }

    /// World points in front of `pose` and their exact pixels.
    fn synthetic(pose: &Pose, n: usize, rng: &mut impl Rng) -> Vec<Correspondence> {
        (0..n)
            .map(|_| {
                let u = rng.random_range(20.0..620.0);
                let v = rng.random_range(20.0..460.0);
                let d = rng.random_range(2.0..8.0);
                let pc = back_project(u, v, d, &k()).unwrap();
                Correspondence { world: pose.transform(&pc), pixel: Vector2::new(u, v) }
            })
            .collect()
    }

    #[test]
    fn p3p_recovers_true_pose_among_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let c = synthetic(&pose, 3, &mut rng);
            let inv = pose.inverse();
            let world = [c[0].world, c[1].world, c[2].world];
            let b = [bearing(&c[0].pixel, &k()), bearing(&c[1].pixel, &k()), bearing(&c[2].pixel, &k())];
            let sols = p3p(&world, &b);
            let best = sols
                .iter()
                .map(|(r, t)| (r - inv.rotation()).norm() + (t - inv.translation()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "{best} from {} solutions", sols.len());
        }
    }

    #[test]
    fn noiseless_pnp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let c = synthetic(&pose, 8, &mut rng);
            let r = pnp_ransac(&c, &k(), &RansacParams::default(), &mut rng).unwrap();
            assert!(r.pose.rotation_angle_to(&pose) < 0.1);
            assert!((r.pose.translation() - pose.translation()).norm() < 1e-3);
            assert_eq!(r.inliers.len(), 8);
        }
    }

    #[test]
    fn fronto_parallel_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c: Vec<Correspondence> = [(100.0, 100.0), (500.0, 120.0), (300.0, 400.0), (150.0, 350.0), (420.0, 300.0)]
            .iter()
            .map(|&(u, v)| Correspondence { world: back_project(u, v, 4.0, &k()).unwrap(), pixel: Vector2::new(u, v) })
            .collect();
        let r = pnp_ransac(&c, &k(), &RansacParams::default(), &mut rng).unwrap();
        assert!(r.pose.rotation_angle_to(&Pose::identity()) < 1e-6);
        assert!(r.pose.translation().norm() < 1e-6);
    }

    #[test]
    fn outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pose = random_pose(&mut rng);
            let mut c = synthetic(&pose, 20, &mut rng);
            for item in c.iter_mut().take(6) {
                item.pixel = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            }
            let r = pnp_ransac(&c, &k(), &RansacParams::default(), &mut rng).unwrap();
            assert!(r.inliers.iter().all(|&i| i >= 6 || reprojection_error_of(&r.pose, &c[i]) <= 3.0));
            assert!(r.pose.rotation_angle_to(&pose) < 0.5);
            assert!((r.pose.translation() - pose.translation()).norm() < 0.01);
        }
    }

    fn reprojection_error_of(pose: &Pose, c: &Correspondence) -> f64 {
        let inv = pose.inverse();
        reprojection_error(inv.rotation(), inv.translation(), c, &k())
    }

    #[test]
    fn pnp_errors_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let c = synthetic(&pose, 3, &mut rng);
        assert!(matches!(pnp_ransac(&c, &k(), &RansacParams::default(), &mut rng), Err(VislocError::TooFewCorrespondences(3))));
        let mut c = synthetic(&pose, 12, &mut rng);
        c[0].pixel.x += 40.0;
        let a = pnp_ransac(&c, &k(), &RansacParams::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = pnp_ransac(&c, &k(), &RansacParams::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for &i in &a.inliers {
            assert!(reprojection_error_of(&a.pose, &c[i]) <= 3.0);
        }
        let junk: Vec<Correspondence> = (0..10)
            .map(|i| Correspondence {
                world: Vec3::new(i as f64, (i * i) as f64 * 0.1, 5.0 + (i % 3) as f64),
                pixel: Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
            })
            .collect();
        let r = pnp_ransac(&junk, &k(), &RansacParams { iterations: 200, ..Default::default() }, &mut rng);
        assert!(r.is_err() || r.unwrap().inliers.len() < 12);
    }

    #[test]
    fn retrieval_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = |g: Vec<f64>| ReferenceFrame { global: g, keypoints: vec![], depths: vec![], intrinsics: k(), pose: Pose::identity() };
        let db: Vec<ReferenceFrame> =
            (0..100).map(|_| frame(normalized((0..16).map(|_| rng.random_range(-1.0..1.0)).collect()))).collect();
        let (i, s) = retrieve_reference(&db[37].global, &db).unwrap();
        assert_eq!(i, 37);
        assert!((s - 1.0).abs() < 1e-12);
        let q: Vec<f64> = normalized((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let oracle = (0..db.len()).fold(0, |b, j| if cosine(&q, &db[j].global) > cosine(&q, &db[b].global) { j } else { b });
        assert_eq!(retrieve_reference(&q, &db).unwrap().0, oracle);
        let ortho = vec![frame(vec![0.0, 1.0]), frame(vec![0.0, -1.0])];
        assert_eq!(retrieve_reference(&[1.0, 0.0], &ortho).unwrap(), (0, 0.0));
        assert!(matches!(retrieve_reference(&[1.0], &[]), Err(VislocError::EmptyDb)));
    }

    fn field(rng: &mut impl Rng) -> LandmarkField {
        LandmarkField::random(rng, 400, Vec3::new(-6.0, 0.0, -6.0), Vec3::new(6.0, 3.0, 6.0), 32)
    }

    #[test]
    fn matching_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lf = field(&mut rng);
        let ref_pose = Pose::camera_looking(Vec3::new(0.0, 1.2, 6.5), 90.0);
        let r = lf.reference(ref_pose, &k(), &mut rng);
        assert_eq!(match_local(&r.keypoints, &r).len(), r.keypoints.len());
        let q_pose = Pose::camera_looking(Vec3::new(0.3, 1.2, 6.3), 95.0);
        let obs = lf.observe(&q_pose, &k(), 0.5, 0.05, &mut rng);
        let corr = match_local(&obs.keypoints, &r);
        assert!(corr.len() > 20);
        let correct = corr
            .iter()
            .filter(|c| {
                let i = obs.keypoints.iter().position(|kp| kp.pixel == c.pixel).unwrap();
                (lf.points[obs.landmark_ids[i]] - c.world).norm() < 1e-3
            })
            .count();
        assert!(correct as f64 >= 0.95 * corr.len() as f64);
        let other = LandmarkField::random(&mut rng, 50, Vec3::new(-6.0, 0.0, -6.0), Vec3::new(6.0, 3.0, 6.0), 32);
        let unrelated = other.observe(&q_pose, &k(), 0.0, 0.0, &mut rng);
        assert!(match_local(&unrelated.keypoints, &r).len() <= 1);
    }

    #[test]
    fn localize_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lf = field(&mut rng);
        let spec = GridSpec::new(300, 300, 1, 0.05).unwrap();
        let db: Vec<ReferenceFrame> = [(0.0, 90.0), (0.0, -90.0), (0.0, 0.0), (0.0, 180.0)]
            .iter()
            .map(|&(x, h)| lf.reference(Pose::camera_looking(Vec3::new(x, 1.2, 0.0), h), &k(), &mut rng))
            .collect();
        let same = QueryImage { global: db[1].global.clone(), keypoints: db[1].keypoints.clone(), intrinsics: k() };
        let loc = localize_image(&same, &db, &RansacParams::default(), &mut rng, 0.1, &spec).unwrap();
        assert!(!loc.failed);
        assert_eq!(loc.reference, Some(1));
        assert_eq!(loc.heatmap.argmax().unwrap().voxel, Voxel::new(150, 150, 0));

        let truth = Pose::camera_looking(Vec3::new(0.5, 1.2, -0.4), -80.0);
        let q = lf.query(&truth, &k(), 0.3, 0.05, &mut rng);
        let loc = localize_image(&q, &db, &RansacParams::default(), &mut rng, 0.1, &spec).unwrap();
        let want = project_to_grid(truth.translation(), &spec).unwrap();
        let got = loc.heatmap.argmax().unwrap().voxel;
        assert!((got.x as i64 - want.x as i64).abs() <= 1 && (got.y as i64 - want.y as i64).abs() <= 1);

        let blank = QueryImage { global: db[0].global.clone(), keypoints: vec![], intrinsics: k() };
        let loc = localize_image(&blank, &db, &RansacParams::default(), &mut rng, 0.1, &spec).unwrap();
        assert!(loc.failed);
        assert!(loc.heatmap.is_all_zero());
    }

    #[test]
    fn reference_db_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lf = field(&mut rng);
        let db = vec![lf.reference(Pose::camera_looking(Vec3::new(0.0, 1.2, 0.0), 30.0), &k(), &mut rng)];
        save_reference_db(dir.path().join("ref.txt"), &db).unwrap();
        let back = load_reference_db(dir.path().join("ref.txt")).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].keypoints.len(), db[0].keypoints.len());
        assert!((back[0].depths[0] - db[0].depths[0]).abs() < 1e-5);
        assert!(back[0].pose.rotation_angle_to(&db[0].pose) < 1e-9);
        let q = lf.query(&db[0].pose, &k(), 0.0, 0.0, &mut rng);
        q.save(dir.path().join("q.img")).unwrap();
        let qb = QueryImage::load(dir.path().join("q.img")).unwrap();
        assert_eq!(qb.keypoints.len(), q.keypoints.len());
        assert!(QueryImage::load(dir.path().join("ref.txt")).is_err());
    }
}

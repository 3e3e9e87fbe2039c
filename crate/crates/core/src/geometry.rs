//! Camera models, ground-plane homographies, and the incremental
//! decomposition of the frontal-to-overhead perspective change.
//!
//! Coordinate conventions used throughout the crate:
//!
//! - **Ground frame**: x forward (meters), y left, z up; the ground is the
//!   plane z = 0 and the camera sits `cam_height` above the origin.
//! - **Camera frame**: z along the optical axis, x right, y down. `pitch` is
//!   the rotation of the optical axis below horizontal; `pitch = π/2` looks
//!   straight down with image-up pointing forward.
//! - **Overhead raster**: row 0 images the farthest forward distance
//!   (`x_max`), columns increase to the vehicle's right, pixel centers at
//!   half-integer offsets.
//! - **Homographies on pixels** act on column vectors `[u, v, 1]ᵀ` with
//!   u = column, v = row.
//!
//! All math here is double precision; single precision is confined to the
//! neural core.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("pixel ({u:.3}, {v:.3}) backprojects at or above the horizon")]
    AboveHorizon { u: f64, v: f64 },
    #[error("degenerate view: {0}")]
    DegenerateView(String),
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),
    #[error("invalid bev spec: {0}")]
    InvalidBev(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// 3×3 row-major matrix helpers. Kept as free functions on plain arrays so
/// the warp kernels can use them without pulling in a matrix crate.
pub type Mat3 = [[f64; 3]; 3];

pub const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse via the adjugate; returns None when the determinant underflows.
pub fn mat3_inverse(m: &Mat3) -> Option<Mat3> {
    let det = mat3_det(m);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(out)
}

pub fn mat3_apply(m: &Mat3, x: f64, y: f64) -> [f64; 3] {
    [
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
        m[2][0] * x + m[2][1] * y + m[2][2],
    ]
}

/// A 3×3 projective map stored in a fixed normalization: `m[2][2] = 1` when
/// that entry is safely nonzero, unit Frobenius norm (with a fixed sign)
/// otherwise. Normalizing on construction makes composition tests exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography33 {
    pub m: Mat3,
}

impl Homography33 {
    pub fn new(m: Mat3) -> Self {
        Self { m: normalize_mat3(m) }
    }

    pub fn identity() -> Self {
        Self { m: MAT3_IDENTITY }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self::new(mat3_mul(&self.m, &other.m))
    }

    pub fn inverse(&self) -> Option<Self> {
        mat3_inverse(&self.m).map(Self::new)
    }

    /// Applies the map to a point and performs the homogeneous divide.
    /// Returns None when the w component is numerically zero.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let q = mat3_apply(&self.m, x, y);
        if q[2].abs() < 1e-12 {
            return None;
        }
        Some((q[0] / q[2], q[1] / q[2]))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        worst
    }
}

fn normalize_mat3(m: Mat3) -> Mat3 {
    let mut out = m;
    let pivot = m[2][2];
    if pivot.abs() > 1e-12 {
        for row in &mut out {
            for v in row.iter_mut() {
                *v /= pivot;
            }
        }
        return out;
    }
    let mut norm = 0.0;
    for row in &m {
        for v in row {
            norm += v * v;
        }
    }
    let norm = norm.sqrt();
    // Fix the sign with the largest-magnitude entry so that normalize(s·H)
    // matches normalize(H) for negative s as well.
    let mut lead = 0.0f64;
    for row in &m {
        for v in row {
            if v.abs() > lead.abs() {
                lead = *v;
            }
        }
    }
    let scale = if lead < 0.0 { -norm } else { norm };
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= scale;
        }
    }
    out
}

/// Pinhole intrinsics plus camera-to-ground extrinsics. Every homography in
/// the pipeline is derived from one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera center height above the ground plane, meters.
    pub cam_height: f64,
    /// Rotation of the optical axis below horizontal, radians.
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidRig("focal lengths must be positive".into()));
        }
        if !(self.cam_height > 0.0) {
            return Err(GeometryError::InvalidRig("cam_height must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidRig("raster must be non-empty".into()));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.pitch) {
            return Err(GeometryError::InvalidRig(format!(
                "pitch {} outside [0, π/2]",
                self.pitch
            )));
        }
        Ok(())
    }

    pub fn from_config(cfg: &Config) -> Result<Self, GeometryError> {
        let rig = Self {
            fx: cfg.require_f64("fx")?,
            fy: cfg.require_f64("fy")?,
            cx: cfg.require_f64("cx")?,
            cy: cfg.require_f64("cy")?,
            width: cfg.require_usize("width")?,
            height: cfg.require_usize("height")?,
            cam_height: cfg.require_f64("cam_height")?,
            pitch: cfg.require_f64("pitch")?,
            roll: cfg.get_f64("roll", 0.0)?,
            yaw: cfg.get_f64("yaw", 0.0)?,
        };
        rig.validate()?;
        Ok(rig)
    }

    fn with_pitch(&self, pitch: f64) -> Self {
        Self { pitch, ..*self }
    }

    /// Camera-to-world rotation: columns are the camera axes (right, down,
    /// optical) expressed in ground coordinates.
    pub fn rotation_world_from_cam(&self) -> Mat3 {
        let (sp, cp) = self.pitch.sin_cos();
        let base: Mat3 = [[0.0, -sp, cp], [-1.0, 0.0, 0.0], [0.0, -cp, -sp]];
        let (sr, cr) = self.roll.sin_cos();
        let roll: Mat3 = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        let (sy, cy) = self.yaw.sin_cos();
        let yaw: Mat3 = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
        mat3_mul(&yaw, &mat3_mul(&base, &roll))
    }

    /// World-space direction of the ray through pixel (u, v), unnormalized.
    pub fn ray_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let xn = (u - self.cx) / self.fx;
        let yn = (v - self.cy) / self.fy;
        let r = self.rotation_world_from_cam();
        [
            r[0][0] * xn + r[0][1] * yn + r[0][2],
            r[1][0] * xn + r[1][1] * yn + r[1][2],
            r[2][0] * xn + r[2][1] * yn + r[2][2],
        ]
    }

    /// Homography mapping ground points (x, y, 1) to image pixels (u, v, 1).
    pub fn ground_to_pixel_matrix(&self) -> Mat3 {
        let r_wc = self.rotation_world_from_cam();
        // R_cw = R_wcᵀ; translation t = -R_cw · C with C = (0, 0, h).
        let mut r_cw = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r_cw[i][j] = r_wc[j][i];
            }
        }
        let h = self.cam_height;
        let t = [-r_cw[0][2] * h, -r_cw[1][2] * h, -r_cw[2][2] * h];
        let ext: Mat3 = [
            [r_cw[0][0], r_cw[0][1], t[0]],
            [r_cw[1][0], r_cw[1][1], t[1]],
            [r_cw[2][0], r_cw[2][1], t[2]],
        ];
        let k: Mat3 = [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]];
        mat3_mul(&k, &ext)
    }

    /// Depth (camera-frame z) of a ground point; positive means in front of
    /// the camera, at or below zero means the point sits at/above the horizon
    /// from this view.
    pub fn ground_point_depth(&self, x: f64, y: f64) -> f64 {
        let r_wc = self.rotation_world_from_cam();
        // Camera z row of R_cw is the third column of R_wc.
        r_wc[0][2] * x + r_wc[1][2] * y + r_wc[2][2] * (-self.cam_height)
    }
}

/// Metric overhead raster: extent ahead of the rear axle, lateral half
/// extent, and meters-per-pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_half: f64,
    pub mpp: f64,
}

impl BevSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x_max > self.x_min && self.x_min >= 0.0) {
            return Err(GeometryError::InvalidBev("need x_max > x_min >= 0".into()));
        }
        if !(self.y_half > 0.0) {
            return Err(GeometryError::InvalidBev("y_half must be positive".into()));
        }
        if !(self.mpp > 0.0) {
            return Err(GeometryError::InvalidBev("mpp must be positive".into()));
        }
        Ok(())
    }

    pub fn from_config(cfg: &Config) -> Result<Self, GeometryError> {
        let spec = Self {
            x_min: cfg.require_f64("x_min")?,
            x_max: cfg.require_f64("x_max")?,
            y_half: cfg.require_f64("y_half")?,
            mpp: cfg.require_f64("mpp")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn width_px(&self) -> usize {
        (2.0 * self.y_half / self.mpp).ceil() as usize
    }

    pub fn height_px(&self) -> usize {
        ((self.x_max - self.x_min) / self.mpp).ceil() as usize
    }

    /// Affine map from raster coordinates (u, v, 1) to ground meters
    /// (x, y, 1), using pixel centers: row 0 images x_max, column 0 images
    /// the left extent +y_half.
    pub fn raster_to_ground(&self) -> Mat3 {
        [
            [0.0, -self.mpp, self.x_max - 0.5 * self.mpp],
            [-self.mpp, 0.0, self.y_half - 0.5 * self.mpp],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn ground_to_raster(&self) -> Mat3 {
        mat3_inverse(&self.raster_to_ground()).expect("raster_to_ground is invertible for valid specs")
    }

    pub fn ground_point(&self, u: f64, v: f64) -> (f64, f64) {
        let g = mat3_apply(&self.raster_to_ground(), u, v);
        (g[0], g[1])
    }
}

/// Planar vehicle pose (x, y, yaw) of frame t expressed in frame 0's ground
/// coordinates. Yaw is wrapped to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePlanar {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PosePlanar {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, yaw: 0.0 }
    }

    /// SE(2) matrix taking local coordinates into the parent frame.
    pub fn matrix(&self) -> Mat3 {
        let (s, c) = self.yaw.sin_cos();
        [[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]]
    }

    /// self ∘ other: first apply `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    // map -π to π so the interval is (−π, π]
    if r == -PI {
        r = PI;
    }
    r
}

/// Intersects the back-projected ray of pixel (u, v) with the ground plane.
/// Errors when the ray has no downward component (at or above the horizon).
pub fn project_pixel_to_ground(rig: &CameraRig, u: f64, v: f64) -> Result<(f64, f64), GeometryError> {
    let d = rig.ray_direction(u, v);
    if d[2] >= -1e-12 {
        return Err(GeometryError::AboveHorizon { u, v });
    }
    let t = rig.cam_height / (-d[2]);
    Ok((t * d[0], t * d[1]))
}

/// Homography taking overhead raster pixels to the front-image pixels that
/// observe the same ground point. Probes a grid of raster points and rejects
/// views where any probe lands at or above the horizon.
pub fn derive_ground_homography(rig: &CameraRig, spec: &BevSpec) -> Result<Homography33, GeometryError> {
    rig.validate()?;
    spec.validate()?;
    let probes = 10usize;
    let w = spec.width_px() as f64;
    let h = spec.height_px() as f64;
    for i in 0..probes {
        for j in 0..probes {
            let u = (w - 1.0) * (j as f64) / (probes as f64 - 1.0);
            let v = (h - 1.0) * (i as f64) / (probes as f64 - 1.0);
            let (gx, gy) = spec.ground_point(u, v);
            if rig.ground_point_depth(gx, gy) <= 1e-9 {
                return Err(GeometryError::DegenerateView(format!(
                    "raster probe ({u:.1}, {v:.1}) -> ground ({gx:.2}, {gy:.2}) is at or above the horizon"
                )));
            }
        }
    }
    let m = mat3_mul(&rig.ground_to_pixel_matrix(), &spec.raster_to_ground());
    Ok(Homography33::new(m))
}

/// Maps normalized [−1, 1] coordinates to pixel coordinates for a raster of
/// the given size; −1/+1 land on the centers of the first/last pixel.
pub fn norm_to_pixel_matrix(width: usize, height: usize) -> Mat3 {
    assert!(width >= 2 && height >= 2, "normalized frame needs >= 2 px per axis");
    let sx = (width as f64 - 1.0) / 2.0;
    let sy = (height as f64 - 1.0) / 2.0;
    [[sx, 0.0, sx], [0.0, sy, sy], [0.0, 0.0, 1.0]]
}

pub fn pixel_to_norm_matrix(width: usize, height: usize) -> Mat3 {
    mat3_inverse(&norm_to_pixel_matrix(width, height)).expect("norm scale matrix is invertible")
}

/// Splits the frontal-to-overhead perspective change into `n_steps` equal
/// pitch increments of a virtual camera. Element k of the returned list is
/// the reference transform the k-th bottleneck block applies (inverse-warp
/// convention: it maps that block's output coordinates to its input
/// coordinates, in the normalized [−1, 1] frame of the feature maps).
///
/// Applying the warps in list order is the same as one warp by the product
/// `list[0] · list[1] · … · list[n-1]`, and that product, mapped back to
/// pixel coordinates, equals [`derive_ground_homography`].
pub fn decompose_incremental(
    rig: &CameraRig,
    spec: &BevSpec,
    n_steps: usize,
) -> Result<Vec<Homography33>, GeometryError> {
    assert!(n_steps >= 1, "n_steps must be >= 1");
    // Validates the end-to-end view before any virtual-view algebra.
    derive_ground_homography(rig, spec)?;

    let pitch_at = |k: usize| {
        rig.pitch + (std::f64::consts::FRAC_PI_2 - rig.pitch) * (k as f64) / (n_steps as f64)
    };
    let cam_norm = norm_to_pixel_matrix(rig.width, rig.height);
    let cam_norm_inv = pixel_to_norm_matrix(rig.width, rig.height);
    let bev_norm = norm_to_pixel_matrix(spec.width_px(), spec.height_px());

    let mut out = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let prev = rig.with_pitch(pitch_at(k - 1)).ground_to_pixel_matrix();
        // The final virtual view is the overhead raster itself; intermediate
        // views keep the camera's own raster.
        let (view_pix_to_ground, next_norm) = if k == n_steps {
            (spec.raster_to_ground(), bev_norm)
        } else {
            let p = rig.with_pitch(pitch_at(k)).ground_to_pixel_matrix();
            (
                mat3_inverse(&p).ok_or_else(|| {
                    GeometryError::DegenerateView(format!("virtual view {k} is singular"))
                })?,
                cam_norm,
            )
        };
        let step = mat3_mul(
            &cam_norm_inv,
            &mat3_mul(&prev, &mat3_mul(&view_pix_to_ground, &next_norm)),
        );
        out.push(Homography33::new(step));
    }
    Ok(out)
}

/// Affine map from frame-t overhead raster coordinates into frame-0 raster
/// coordinates implied by the planar pose: pure rotation plus translation.
pub fn pose_to_bev_shift(pose: &PosePlanar, spec: &BevSpec) -> Homography33 {
    let g = spec.raster_to_ground();
    let g_inv = spec.ground_to_raster();
    Homography33::new(mat3_mul(&g_inv, &mat3_mul(&pose.matrix(), &g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_rig(pitch: f64) -> CameraRig {
        CameraRig {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 48.0,
            width: 128,
            height: 96,
            cam_height: 1.5,
            pitch,
            roll: 0.0,
            yaw: 0.0,
        }
    }

    /// Brute-force oracle: marches the back-projected ray through 3-D space
    /// until it crosses the ground plane, then bisects. No homography, no
    /// closed-form intersection.
    fn ray_march_oracle(rig: &CameraRig, u: f64, v: f64) -> Option<(f64, f64)> {
        let d = rig.ray_direction(u, v);
        let z_at = |t: f64| rig.cam_height + t * d[2];
        if z_at(1e-9) >= rig.cam_height {
            // not descending
            if d[2] >= 0.0 {
                return None;
            }
        }
        let mut lo = 0.0f64;
        let mut hi = 1e-3;
        let mut steps = 0;
        while z_at(hi) > 0.0 {
            lo = hi;
            hi *= 1.5;
            steps += 1;
            if steps > 500 {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if z_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        Some((t * d[0], t * d[1]))
    }

    fn random_rig(rng: &mut impl Rng) -> CameraRig {
        CameraRig {
            fx: rng.gen_range(60.0..400.0),
            fy: rng.gen_range(60.0..400.0),
            cx: rng.gen_range(50.0..200.0),
            cy: rng.gen_range(40.0..160.0),
            width: 256,
            height: 192,
            cam_height: rng.gen_range(0.8..3.0),
            pitch: rng.gen_range(0.1..1.3),
            roll: rng.gen_range(-0.05..0.05),
            yaw: rng.gen_range(-0.05..0.05),
        }
    }

    #[test]
    fn nadir_principal_ray_hits_origin() {
        let rig = test_rig(std::f64::consts::FRAC_PI_2);
        let (x, y) = project_pixel_to_ground(&rig, 64.0, 48.0).unwrap();
        assert!(x.abs() < 1e-12 && y.abs() < 1e-12, "({x}, {y})");
    }

    #[test]
    fn principal_ray_trigonometry() {
        let rig = test_rig(0.2);
        let (x, y) = project_pixel_to_ground(&rig, 64.0, 48.0).unwrap();
        assert!((x - 1.5 / 0.2f64.tan()).abs() < 1e-12, "x={x}");
        assert!(y.abs() < 1e-12);
    }

    #[test]
    fn offset_pixel_matches_ray_march_oracle() {
        let rig = test_rig(0.2);
        let (x, y) = project_pixel_to_ground(&rig, 80.0, 60.0).unwrap();
        // frozen from the oracle
        assert!((x - 4.53506874).abs() < 1e-7, "x={x}");
        assert!((y - -0.75882773).abs() < 1e-7, "y={y}");
        let (ox, oy) = ray_march_oracle(&rig, 80.0, 60.0).unwrap();
        assert!((x - ox).abs() < 1e-9 && (y - oy).abs() < 1e-9, "impl ({x},{y}) vs oracle ({ox},{oy})");
    }

    #[test]
    fn above_horizon_errors() {
        let rig = test_rig(0.2);
        // pitch 0.2 puts the horizon at v = cy − fy·tan(0.2) ≈ 27.7
        let err = project_pixel_to_ground(&rig, 64.0, 10.0).unwrap_err();
        assert!(matches!(err, GeometryError::AboveHorizon { .. }));
    }

    #[test]
    fn nadir_identity_construction() {
        // With a nadir camera and the raster matched to the focal scale the
        // overhead map collapses to the identity.
        let f = 100.0;
        let h = 1.5;
        let rig = test_rig(std::f64::consts::FRAC_PI_2);
        let spec = BevSpec {
            x_min: 0.0,
            x_max: (rig.cy + 0.5) * h / f,
            y_half: (rig.cx + 0.5) * h / f,
            mpp: h / f,
        };
        let hmat = derive_ground_homography(&rig, &spec).unwrap();
        assert!(hmat.max_abs_diff(&Homography33::identity()) < 1e-12);
    }

    #[test]
    fn homography_agrees_with_oracle_on_probe_grid() {
        let rig = test_rig(0.2);
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let h = derive_ground_homography(&rig, &spec).unwrap();
        assert!((h.m[2][2] - 1.0).abs() < 1e-15);
        let mut worst = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                let u = (spec.width_px() as f64 - 1.0) * j as f64 / 9.0;
                let v = (spec.height_px() as f64 - 1.0) * i as f64 / 9.0;
                let (cu, cv) = h.apply(u, v).unwrap();
                let (gx, gy) = ray_march_oracle(&rig, cu, cv).unwrap();
                let (ex, ey) = spec.ground_point(u, v);
                let err_px = ((gx - ex).powi(2) + (gy - ey).powi(2)).sqrt() / spec.mpp;
                worst = worst.max(err_px);
            }
        }
        assert!(worst < 1e-9, "worst probe error {worst} px");
    }

    #[test]
    fn probe_agreement_over_random_rigs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let rig = random_rig(&mut rng);
            let spec = BevSpec { x_min: 4.0, x_max: 20.0, y_half: 8.0, mpp: 0.05 };
            let h = derive_ground_homography(&rig, &spec).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let u = (spec.width_px() as f64 - 1.0) * j as f64 / 4.0;
                    let v = (spec.height_px() as f64 - 1.0) * i as f64 / 4.0;
                    let (cu, cv) = h.apply(u, v).unwrap();
                    let (gx, gy) = project_pixel_to_ground(&rig, cu, cv).unwrap();
                    let (ex, ey) = spec.ground_point(u, v);
                    let err_px = ((gx - ex).powi(2) + (gy - ey).powi(2)).sqrt() / spec.mpp;
                    assert!(err_px < 1e-9, "err {err_px}");
                }
            }
        }
    }

    #[test]
    fn scaled_homography_maps_identically() {
        let rig = test_rig(0.2);
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let h = derive_ground_homography(&rig, &spec).unwrap();
        let mut scaled = h.m;
        for row in &mut scaled {
            for v in row.iter_mut() {
                *v *= 3.0;
            }
        }
        let h3 = Homography33 { m: scaled }; // bypass normalization on purpose
        for (u, v) in [(0.0, 0.0), (120.0, 77.0), (399.0, 399.0)] {
            let a = h.apply(u, v).unwrap();
            let b = h3.apply(u, v).unwrap();
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_view_detected() {
        // A forward extent always sits in front of a forward camera, so the
        // degenerate case needs the view turned away: with a large yaw most
        // probe points fall behind the camera (at/above the horizon).
        let fine = test_rig(0.3);
        let spec = BevSpec { x_min: 0.0, x_max: 10.0, y_half: 4.0, mpp: 0.05 };
        assert!(derive_ground_homography(&fine, &spec).is_ok());
        let turned = CameraRig { yaw: 2.5, ..fine };
        let err = derive_ground_homography(&turned, &spec).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateView(_)));
    }

    fn compose_chain_to_pixel(chain: &[Homography33], rig: &CameraRig, spec: &BevSpec) -> Homography33 {
        let mut prod = MAT3_IDENTITY;
        for h in chain {
            prod = mat3_mul(&prod, &h.m);
        }
        let back = mat3_mul(
            &norm_to_pixel_matrix(rig.width, rig.height),
            &mat3_mul(&prod, &pixel_to_norm_matrix(spec.width_px(), spec.height_px())),
        );
        Homography33::new(back)
    }

    #[test]
    fn decompose_single_step_is_full_homography() {
        let rig = test_rig(0.2);
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let chain = decompose_incremental(&rig, &spec, 1).unwrap();
        assert_eq!(chain.len(), 1);
        let direct = derive_ground_homography(&rig, &spec).unwrap();
        let back = compose_chain_to_pixel(&chain, &rig, &spec);
        assert!(back.max_abs_diff(&direct) < 1e-9, "dev {}", back.max_abs_diff(&direct));
    }

    #[test]
    fn decompose_composition_matches_direct() {
        let rig = test_rig(0.2);
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let direct = derive_ground_homography(&rig, &spec).unwrap();
        for n in [1usize, 2, 3, 6, 12] {
            let chain = decompose_incremental(&rig, &spec, n).unwrap();
            let back = compose_chain_to_pixel(&chain, &rig, &spec);
            let dev = back.max_abs_diff(&direct);
            assert!(dev < 1e-9, "n={n} dev={dev}");
        }
    }

    #[test]
    fn decompose_at_nadir_is_all_identity() {
        // A raster-matched overhead spec needs the principal point on the
        // bottom edge so that x_min lands at 0 with the full camera height
        // mapped; then every incremental step is exactly the identity.
        let f = 100.0;
        let h = 1.5;
        let rig = CameraRig {
            cx: 63.5,
            cy: 95.5,
            ..test_rig(std::f64::consts::FRAC_PI_2)
        };
        let spec = BevSpec {
            x_min: 0.0,
            x_max: (rig.cy + 0.5) * h / f,
            y_half: (rig.cx + 0.5) * h / f,
            mpp: h / f,
        };
        assert_eq!(spec.width_px(), rig.width);
        assert_eq!(spec.height_px(), rig.height);
        for step in decompose_incremental(&rig, &spec, 4).unwrap() {
            assert!(step.max_abs_diff(&Homography33::identity()) < 1e-9);
        }
    }

    #[test]
    fn pose_shift_identity() {
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let h = pose_to_bev_shift(&PosePlanar::identity(), &spec);
        assert!(h.max_abs_diff(&Homography33::identity()) < 1e-12);
    }

    #[test]
    fn pose_shift_forward_five_meters() {
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let h = pose_to_bev_shift(&PosePlanar::new(5.0, 0.0, 0.0), &spec);
        let (u, v) = h.apply(200.0, 300.0).unwrap();
        assert!((u - 200.0).abs() < 1e-9, "u={u}");
        assert!((v - 200.0).abs() < 1e-9, "v={v}");
    }

    #[test]
    fn pose_shift_matches_se2_oracle() {
        let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
        let pose = PosePlanar::new(3.0, 1.0, 0.1);
        let h = pose_to_bev_shift(&pose, &spec);
        // hand-rolled SE(2) oracle: raster -> metric -> rigid move -> raster
        let (uc, vc) = (57.0, 123.0);
        let gx = spec.x_max - (vc + 0.5) * spec.mpp;
        let gy = spec.y_half - (uc + 0.5) * spec.mpp;
        let (s, c) = 0.1f64.sin_cos();
        let x0 = 3.0 + c * gx - s * gy;
        let y0 = 1.0 + s * gx + c * gy;
        let eu = (spec.y_half - y0) / spec.mpp - 0.5;
        let ev = (spec.x_max - x0) / spec.mpp - 0.5;
        let (au, av) = h.apply(uc, vc).unwrap();
        assert!((au - eu).abs() < 1e-9 && (av - ev).abs() < 1e-9);
        // frozen from the oracle
        assert!((h.m[0][2] - -66.87345426).abs() < 1e-6);
        assert!((h.m[1][2] - -37.68773063).abs() < 1e-6);
        // bottom row stays affine
        assert!(h.m[2][0].abs() < 1e-15 && h.m[2][1].abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_interval() {
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pose_shift_is_a_homomorphism(
            ax in -5.0f64..5.0, ay in -3.0f64..3.0, at in -1.0f64..1.0,
            bx in -5.0f64..5.0, by in -3.0f64..3.0, bt in -1.0f64..1.0,
        ) {
            let spec = BevSpec { x_min: 4.0, x_max: 24.0, y_half: 10.0, mpp: 0.05 };
            let a = PosePlanar::new(ax, ay, at);
            let b = PosePlanar::new(bx, by, bt);
            let lhs = pose_to_bev_shift(&a.compose(&b), &spec);
            let rhs = pose_to_bev_shift(&a, &spec).compose(&pose_to_bev_shift(&b, &spec));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }

        #[test]
        fn normalization_idempotent_and_scale_invariant(
            seed in 0u64..5000,
            scale in prop::sample::select(vec![-7.5f64, -1.0, -0.2, 0.3, 2.0, 40.0]),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = [[0.0; 3]; 3];
            for row in &mut m {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-2.0..2.0);
                }
            }
            // half the cases exercise the Frobenius fallback
            if seed % 2 == 0 {
                m[2][2] = 0.0;
            }
            prop_assume!(mat3_det(&m).abs() > 1e-6);
            let h = Homography33::new(m);
            let twice = Homography33::new(h.m);
            prop_assert!(h.max_abs_diff(&twice) < 1e-12);
            let mut scaled = m;
            for row in &mut scaled {
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            let hs = Homography33::new(scaled);
            prop_assert!(h.max_abs_diff(&hs) < 1e-9, "dev {}", h.max_abs_diff(&hs));
        }
    }

    #[test]
    fn rig_config_roundtrip() {
        let cfg = Config::parse(
            "fx = 100\nfy = 100\ncx = 64\ncy = 48\nwidth = 128\nheight = 96\ncam_height = 1.5\npitch = 0.2\n",
        )
        .unwrap();
        let rig = CameraRig::from_config(&cfg).unwrap();
        assert_eq!(rig.width, 128);
        assert_eq!(rig.roll, 0.0);
        let bad = Config::parse("fx = -1\nfy = 100\ncx = 64\ncy = 48\nwidth = 128\nheight = 96\ncam_height = 1.5\npitch = 0.2\n").unwrap();
        assert!(CameraRig::from_config(&bad).is_err());
    }
}

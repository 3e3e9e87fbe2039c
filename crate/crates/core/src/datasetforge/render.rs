//! Ray-traced camera renders and orthographic overhead renders of a scene.

use super::SceneSpec;
use crate::geometry::{BevSpec, CameraRig, PosePlanar};
use crate::warp::ImageBuffer;

/// 2×2 supersampling everywhere keeps marking edges comparable between the
/// camera renders and the overhead truth.
const SS: usize = 2;

const ASPHALT: [f32; 3] = [0.33, 0.33, 0.35];
const GRASS: [f32; 3] = [0.16, 0.26, 0.13];
const MARKING: [f32; 3] = [0.88, 0.88, 0.85];
const SKY_HORIZON: [f32; 3] = [0.66, 0.72, 0.82];
const SKY_ZENITH: [f32; 3] = [0.35, 0.47, 0.70];

fn hash2(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (iy as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear lattice value noise in [0, 1), cell size 0.4 m.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let cell = 0.4;
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (smooth(fx - ix), smooth(fy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = hash2(seed, ix, iy);
    let v10 = hash2(seed, ix + 1, iy);
    let v01 = hash2(seed, ix, iy + 1);
    let v11 = hash2(seed, ix + 1, iy + 1);
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

/// Road coordinates of a ground point: arclength along the centerline and
/// signed lateral offset (positive = left of travel).
fn road_coords(scene: &SceneSpec, x: f64, y: f64) -> (f64, f64) {
    let k = scene.curvature;
    if k.abs() < 1e-9 {
        return (x, y);
    }
    let r = 1.0 / k;
    let (vx, vy) = (x, y - r);
    let dist = (vx * vx + vy * vy).sqrt();
    let lat = k.signum() * (r.abs() - dist);
    // centerline point at arclength s is (sin(ks)/k, (1−cos(ks))/k)
    let phi = f64::atan2(vx * k, -vy * k);
    (phi / k, lat)
}

fn triangle_wave(t: f64) -> f64 {
    // period 1, range [−1, 1]
    let f = t - (t + 0.5).floor();
    2.0 * (2.0 * f).abs() - 1.0
}

fn is_marking(scene: &SceneSpec, s: f64, lat: f64) -> bool {
    let m = &scene.markings;
    let w = scene.road_half_width;
    let half_line = m.line_width / 2.0;
    if lat.abs() > w {
        return false;
    }
    if m.solid_edges && ((lat.abs() - (w - 0.15)).abs() < half_line) {
        return true;
    }
    // lane separators, dashed
    let lane_w = 2.0 * w / scene.lane_count as f64;
    for kidx in 1..scene.lane_count {
        let lat_k = -w + kidx as f64 * lane_w;
        if (lat - lat_k).abs() < half_line {
            let phase = (s / m.dash_period).rem_euclid(1.0);
            if phase < m.dash_duty {
                return true;
            }
        }
    }
    for &lat_k in &m.extra_solid_lines {
        if (lat - lat_k).abs() < half_line {
            return true;
        }
    }
    if let Some(sx) = m.stop_line_x {
        if s >= sx && s <= sx + m.stop_line_width && lat.abs() < w - 0.3 {
            return true;
        }
    }
    if m.zigzag {
        let base = w - 0.55;
        for side in [-1.0, 1.0] {
            let center = side * base + 0.25 * triangle_wave(s / 2.0);
            if (lat - center).abs() < 0.05 {
                return true;
            }
        }
    }
    false
}

/// Color of the bare ground layout at a point, frame-0 world coordinates.
/// Objects and illumination never touch this; it is the quantity the
/// overhead truth renders.
pub fn paint_ground(scene: &SceneSpec, x: f64, y: f64) -> [f32; 3] {
    let (s, lat) = road_coords(scene, x, y);
    let n = (value_noise(scene.texture_seed, x, y) - 0.5) * 2.0 * scene.texture_amp;
    if is_marking(scene, s, lat) {
        let m = 0.5 * n;
        [
            (MARKING[0] as f64 + m) as f32,
            (MARKING[1] as f64 + m) as f32,
            (MARKING[2] as f64 + m) as f32,
        ]
    } else if lat.abs() <= scene.road_half_width {
        [
            (ASPHALT[0] as f64 + n) as f32,
            (ASPHALT[1] as f64 + n) as f32,
            (ASPHALT[2] as f64 + n) as f32,
        ]
    } else {
        [
            (GRASS[0] as f64 + n) as f32,
            (GRASS[1] as f64 + n * 1.5) as f32,
            (GRASS[2] as f64 + n) as f32,
        ]
    }
}

struct BoxAt {
    min: [f64; 3],
    max: [f64; 3],
    color: [f32; 3],
}

fn boxes_at_frame(scene: &SceneSpec, frame: usize) -> Vec<BoxAt> {
    scene
        .objects
        .iter()
        .map(|o| {
            let (cx, cy) = o.center_at(frame);
            let z0 = scene.slope.tan() * cx;
            BoxAt {
                min: [cx - o.half_len, cy - o.half_wid, z0],
                max: [cx + o.half_len, cy + o.half_wid, z0 + o.height],
                color: o.color,
            }
        })
        .collect()
}

/// Slab intersection; returns entry distance and the axis of the face hit.
fn ray_box(origin: &[f64; 3], dir: &[f64; 3], b: &BoxAt) -> Option<(f64, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0usize;
    for i in 0..3 {
        if dir[i].abs() < 1e-12 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let (mut t0, mut t1) = ((b.min[i] - origin[i]) * inv, (b.max[i] - origin[i]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = i;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near > 1e-9 {
        Some((t_near, axis))
    } else {
        None
    }
}

fn ray_ground(origin: &[f64; 3], dir: &[f64; 3], slope_tan: f64) -> Option<f64> {
    // plane z = slope_tan · x
    let denom = dir[2] - slope_tan * dir[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (slope_tan * origin[0] - origin[2]) / denom;
    if t > 1e-9 {
        Some(t)
    } else {
        None
    }
}

fn shade_ray(scene: &SceneSpec, boxes: &[BoxAt], origin: &[f64; 3], dir: &[f64; 3]) -> [f32; 3] {
    let slope_tan = scene.slope.tan();
    let mut best_t = f64::INFINITY;
    let mut color: Option<[f32; 3]> = None;
    if let Some(t) = ray_ground(origin, dir, slope_tan) {
        best_t = t;
        let g = [origin[0] + t * dir[0], origin[1] + t * dir[1]];
        color = Some(paint_ground(scene, g[0], g[1]));
    }
    for b in boxes {
        if let Some((t, axis)) = ray_box(origin, dir, b) {
            if t < best_t {
                best_t = t;
                let shade = match axis {
                    2 => 1.0,
                    0 => 0.75,
                    _ => 0.6,
                };
                color = Some([b.color[0] * shade, b.color[1] * shade, b.color[2] * shade]);
            }
        }
    }
    color.unwrap_or_else(|| {
        let up = (dir[2] / (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt()).clamp(0.0, 1.0) as f32;
        [
            SKY_HORIZON[0] + (SKY_ZENITH[0] - SKY_HORIZON[0]) * up,
            SKY_HORIZON[1] + (SKY_ZENITH[1] - SKY_HORIZON[1]) * up,
            SKY_HORIZON[2] + (SKY_ZENITH[2] - SKY_HORIZON[2]) * up,
        ]
    })
}

/// Pinhole render of the scene from the rig mounted on a vehicle at `pose`.
/// The vehicle moves on the z = 0 datum (odometry is planar) while the true
/// ground may slope, which is exactly the mismatch the stitcher suffers.
pub fn render_scene(
    scene: &SceneSpec,
    rig: &CameraRig,
    pose: &PosePlanar,
    frame_index: usize,
) -> ImageBuffer {
    let boxes = boxes_at_frame(scene, frame_index);
    let (sy, cy) = pose.yaw.sin_cos();
    let origin = [pose.x, pose.y, rig.cam_height];
    let mut out = ImageBuffer::new(rig.height, rig.width, 3);
    let inv_ss = 1.0 / (SS * SS) as f64;
    let gain = scene.illumination.gain(frame_index);
    let offset = scene.illumination.offset(frame_index);
    let over = scene.illumination.overexposure.as_ref().filter(|o| o.frame == frame_index);
    for py in 0..rig.height {
        for px in 0..rig.width {
            let mut acc = [0.0f64; 3];
            for suby in 0..SS {
                for subx in 0..SS {
                    let u = px as f64 + (subx as f64 + 0.5) / SS as f64 - 0.5;
                    let v = py as f64 + (suby as f64 + 0.5) / SS as f64 - 0.5;
                    let d = rig.ray_direction(u, v);
                    let dw = [cy * d[0] - sy * d[1], sy * d[0] + cy * d[1], d[2]];
                    let c = shade_ray(scene, &boxes, &origin, &dw);
                    for k in 0..3 {
                        acc[k] += c[k] as f64;
                    }
                }
            }
            let mut boost = 0.0;
            if let Some(o) = over {
                let vf = (py as f64 + 0.5) / rig.height as f64;
                if vf >= o.v_start && vf <= o.v_end {
                    boost = o.boost;
                }
            }
            for (k, a) in acc.iter().enumerate() {
                let val = (a * inv_ss * gain + offset + boost).clamp(0.0, 1.0);
                *out.at_mut(py, px, k) = val as f32;
            }
        }
    }
    out
}

/// Orthographic render of the bare road layout into the overhead raster
/// anchored at `pose`: the ground truth the network should recover. No
/// objects, no illumination changes, no slope distortion.
pub fn render_bev_truth(scene: &SceneSpec, spec: &BevSpec, pose: &PosePlanar) -> ImageBuffer {
    let (w, h) = (spec.width_px(), spec.height_px());
    let (sy, cy) = pose.yaw.sin_cos();
    let mut out = ImageBuffer::new(h, w, 3);
    let inv_ss = 1.0 / (SS * SS) as f64;
    for py in 0..h {
        for px in 0..w {
            let mut acc = [0.0f64; 3];
            for suby in 0..SS {
                for subx in 0..SS {
                    let u = px as f64 + (subx as f64 + 0.5) / SS as f64 - 0.5;
                    let v = py as f64 + (suby as f64 + 0.5) / SS as f64 - 0.5;
                    let (gx, gy) = spec.ground_point(u, v);
                    let wx = pose.x + cy * gx - sy * gy;
                    let wy = pose.y + sy * gx + cy * gy;
                    let c = paint_ground(scene, wx, wy);
                    for k in 0..3 {
                        acc[k] += c[k] as f64;
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                *out.at_mut(py, px, k) = (a * inv_ss) as f32;
            }
        }
    }
    out
}

/// Single-channel mask of overhead pixels whose ground point is hidden
/// behind an object from the camera at `pose` in the given frame.
pub fn render_occlusion_mask(
    scene: &SceneSpec,
    rig: &CameraRig,
    spec: &BevSpec,
    pose: &PosePlanar,
    frame_index: usize,
) -> ImageBuffer {
    let boxes = boxes_at_frame(scene, frame_index);
    let (w, h) = (spec.width_px(), spec.height_px());
    let (sy, cy) = pose.yaw.sin_cos();
    let origin = [pose.x, pose.y, rig.cam_height];
    let slope_tan = scene.slope.tan();
    let mut out = ImageBuffer::new(h, w, 1);
    for py in 0..h {
        for px in 0..w {
            let (gx, gy) = spec.ground_point(px as f64, py as f64);
            let wx = pose.x + cy * gx - sy * gy;
            let wy = pose.y + sy * gx + cy * gy;
            let target = [wx, wy, slope_tan * wx];
            let dir = [target[0] - origin[0], target[1] - origin[1], target[2] - origin[2]];
            let mut blocked = false;
            for b in &boxes {
                if let Some((t, _)) = ray_box(&origin, &dir, b) {
                    if t < 1.0 - 1e-6 {
                        blocked = true;
                        break;
                    }
                }
            }
            if blocked {
                *out.at_mut(py, px, 0) = 1.0;
            }
        }
    }
    out
}

//! Differentiable bilinear grid sampling and homography warping.
//!
//! Grids use normalized coordinates in [−1, 1] per axis (−1 and +1 are the
//! centers of the first and last pixel), the standard spatial-transformer
//! convention: a transform maps *output* coordinates to *input* sampling
//! locations, so warping is inverse warping and composing warps multiplies
//! their matrices in application order. Samples outside the input read zero.
//!
//! Kernels are generic over the float type: the training path runs in f32,
//! gradient tests drive the same code in f64.

use num_traits::Float;
use thiserror::Error;

use crate::geometry::{mat3_mul, norm_to_pixel_matrix, pixel_to_norm_matrix, Homography33};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("homogeneous w-component {w:.3e} at output pixel ({x}, {y}) is too close to zero")]
    NearZeroDivide { x: usize, y: usize, w: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row-major HWC float image or feature plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T = f32> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Float> ImageBuffer<T> {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![T::zero(); height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width * channels, "sample count mismatch");
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut T {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn map_precision<U: Float>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
        }
    }
}

/// Per-output-pixel source coordinates, interleaved (x, y), normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid<T = f32> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> SampleGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::zero(); height * width * 2] }
    }

    #[inline]
    pub fn coords(&self, y: usize, x: usize) -> (T, T) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, sx: T, sy: T) {
        let i = (y * self.width + x) * 2;
        self.data[i] = sx;
        self.data[i + 1] = sy;
    }
}

#[inline]
fn r<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// Normalized coordinate of pixel index i on an axis of n pixels.
#[inline]
pub fn norm_coord<T: Float>(i: usize, n: usize) -> T {
    if n <= 1 {
        return T::zero();
    }
    r::<T>((2 * i) as f64 - (n as f64 - 1.0)) / r::<T>(n as f64 - 1.0)
}

/// Evaluates `m · [x, y, 1]ᵀ` with the homogeneous divide for every output
/// pixel. The matrix maps output coordinates to input sampling locations.
pub fn grid_from_matrix<T: Float>(
    m: &[[T; 3]; 3],
    out_h: usize,
    out_w: usize,
) -> Result<SampleGrid<T>, WarpError> {
    assert!(out_h >= 1 && out_w >= 1);
    let mut grid = SampleGrid::zeros(out_h, out_w);
    let eps = r::<T>(1e-8);
    for y in 0..out_h {
        let yn = norm_coord::<T>(y, out_h);
        for x in 0..out_w {
            let xn = norm_coord::<T>(x, out_w);
            let qx = m[0][0] * xn + m[0][1] * yn + m[0][2];
            let qy = m[1][0] * xn + m[1][1] * yn + m[1][2];
            let qw = m[2][0] * xn + m[2][1] * yn + m[2][2];
            if qw.abs() < eps {
                return Err(WarpError::NearZeroDivide { x, y, w: qw.to_f64().unwrap() });
            }
            grid.set(y, x, qx / qw, qy / qw);
        }
    }
    Ok(grid)
}

/// Builds the sampling grid of a normalized-coordinate homography.
pub fn build_grid<T: Float>(
    m_loc: &Homography33,
    out_h: usize,
    out_w: usize,
) -> Result<SampleGrid<T>, WarpError> {
    let mut m = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r::<T>(m_loc.m[i][j]);
        }
    }
    grid_from_matrix(&m, out_h, out_w)
}

#[inline]
fn gather_bilinear<T: Float>(
    input: &ImageBuffer<T>,
    xn: T,
    yn: T,
) -> ([usize; 4], [T; 4], [bool; 4], T, T) {
    let half = r::<T>(0.5);
    let u = (xn + T::one()) * r::<T>(input.width as f64 - 1.0) * half;
    let v = (yn + T::one()) * r::<T>(input.height as f64 - 1.0) * half;
    let u0 = u.floor();
    let v0 = v.floor();
    let du = u - u0;
    let dv = v - v0;
    let u0i = u0.to_f64().unwrap() as i64;
    let v0i = v0.to_f64().unwrap() as i64;
    let w = input.width as i64;
    let h = input.height as i64;
    let mut idx = [0usize; 4];
    let mut valid = [false; 4];
    for (k, (dy, dx)) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
        let yy = v0i + dy;
        let xx = u0i + dx;
        if yy >= 0 && yy < h && xx >= 0 && xx < w {
            valid[k] = true;
            idx[k] = (yy as usize * input.width + xx as usize) * input.channels;
        }
    }
    let one = T::one();
    let weights = [
        (one - du) * (one - dv),
        du * (one - dv),
        (one - du) * dv,
        du * dv,
    ];
    (idx, weights, valid, du, dv)
}

/// Bilinear interpolation of `input` at the grid's locations; out-of-range
/// locations sample zero padding.
pub fn grid_sample_forward<T: Float>(input: &ImageBuffer<T>, grid: &SampleGrid<T>) -> ImageBuffer<T> {
    let ch = input.channels;
    let mut out = ImageBuffer::new(grid.height, grid.width, ch);
    for y in 0..grid.height {
        for x in 0..grid.width {
            let (xn, yn) = grid.coords(y, x);
            let (idx, wts, valid, _, _) = gather_bilinear(input, xn, yn);
            let base = (y * grid.width + x) * ch;
            for c in 0..ch {
                let mut acc = T::zero();
                for k in 0..4 {
                    if valid[k] {
                        acc = acc + wts[k] * input.data[idx[k] + c];
                    }
                }
                out.data[base + c] = acc;
            }
        }
    }
    out
}

/// Analytic gradients of the bilinear forward with respect to the input
/// samples and the grid coordinates. Subgradient zero at integer-coordinate
/// kinks and in fully padded regions.
pub fn grid_sample_backward<T: Float>(
    input: &ImageBuffer<T>,
    grid: &SampleGrid<T>,
    grad_output: &ImageBuffer<T>,
) -> (ImageBuffer<T>, SampleGrid<T>) {
    assert_eq!(grad_output.height, grid.height);
    assert_eq!(grad_output.width, grid.width);
    assert_eq!(grad_output.channels, input.channels);
    let ch = input.channels;
    let mut grad_input = ImageBuffer::new(input.height, input.width, ch);
    let mut grad_grid = SampleGrid::zeros(grid.height, grid.width);
    let half = r::<T>(0.5);
    let su = r::<T>(input.width as f64 - 1.0) * half;
    let sv = r::<T>(input.height as f64 - 1.0) * half;
    let one = T::one();
    for y in 0..grid.height {
        for x in 0..grid.width {
            let (xn, yn) = grid.coords(y, x);
            let (idx, wts, valid, du, dv) = gather_bilinear(input, xn, yn);
            let base = (y * grid.width + x) * ch;
            let mut gu = T::zero();
            let mut gv = T::zero();
            for c in 0..ch {
                let go = grad_output.data[base + c];
                let sample = |k: usize| if valid[k] { input.data[idx[k] + c] } else { T::zero() };
                let (s00, s10, s01, s11) = (sample(0), sample(1), sample(2), sample(3));
                // d/du and d/dv of the bilinear patch
                gu = gu + go * ((s10 - s00) * (one - dv) + (s11 - s01) * dv);
                gv = gv + go * ((s01 - s00) * (one - du) + (s11 - s10) * du);
                for k in 0..4 {
                    if valid[k] {
                        grad_input.data[idx[k] + c] = grad_input.data[idx[k] + c] + wts[k] * go;
                    }
                }
            }
            grad_grid.set(y, x, gu * su, gv * sv);
        }
    }
    (grad_input, grad_grid)
}

/// Warps an image by a pixel-frame homography mapping output pixels to input
/// pixels: the classical-IPM path (`h` = overhead pixel → camera pixel).
pub fn warp_image<T: Float>(
    input: &ImageBuffer<T>,
    h: &Homography33,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuffer<T>, WarpError> {
    let m_norm = pixel_homography_to_norm(h, input.width, input.height, out_w, out_h);
    let grid = build_grid::<T>(&m_norm, out_h, out_w)?;
    Ok(grid_sample_forward(input, &grid))
}

/// Rewrites a pixel-frame homography (output pixel → input pixel) into the
/// normalized frames of the two rasters.
pub fn pixel_homography_to_norm(
    h: &Homography33,
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
) -> Homography33 {
    let m = mat3_mul(
        &pixel_to_norm_matrix(in_w, in_h),
        &mat3_mul(&h.m, &norm_to_pixel_matrix(out_w, out_h)),
    );
    Homography33::new(m)
}

/// Inverse of [`pixel_homography_to_norm`].
pub fn norm_homography_to_pixel(
    m: &Homography33,
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
) -> Homography33 {
    let back = mat3_mul(
        &norm_to_pixel_matrix(in_w, in_h),
        &mat3_mul(&m.m, &pixel_to_norm_matrix(out_w, out_h)),
    );
    Homography33::new(back)
}

/// Bilinear read at raw pixel coordinates with zero padding; the stitcher
/// samples camera images through this.
pub fn sample_bilinear_pixel<T: Float>(img: &ImageBuffer<T>, u: f64, v: f64, out: &mut [T]) {
    let u0 = u.floor();
    let v0 = v.floor();
    let du = r::<T>(u - u0);
    let dv = r::<T>(v - v0);
    let one = T::one();
    let wts = [
        (one - du) * (one - dv),
        du * (one - dv),
        (one - du) * dv,
        du * dv,
    ];
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for (k, (dy, dx)) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
        let yy = v0 as i64 + dy;
        let xx = u0 as i64 + dx;
        if yy >= 0 && (yy as usize) < img.height && xx >= 0 && (xx as usize) < img.width {
            let base = (yy as usize * img.width + xx as usize) * img.channels;
            for (c, o) in out.iter_mut().enumerate() {
                *o = *o + wts[k] * img.data[base + c];
            }
        }
    }
}

pub fn mean_abs_diff<T: Float>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        acc += (x.to_f64().unwrap() - y.to_f64().unwrap()).abs();
    }
    acc / a.data.len() as f64
}

/// PSNR in dB for images in [0, 1]; equal images report the 99 dB cap.
pub fn psnr<T: Float>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x.to_f64().unwrap() - y.to_f64().unwrap();
        acc += d * d;
    }
    let mse = acc / a.data.len() as f64;
    if mse <= 1e-12 {
        return 99.0;
    }
    (10.0 * (1.0 / mse).log10()).min(99.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> ImageBuffer<f64> {
        let data = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageBuffer::from_data(h, w, c, data)
    }

    /// In-range random grid, nudged away from interpolation kinks.
    fn random_grid(rng: &mut impl Rng, h: usize, w: usize, in_h: usize, in_w: usize) -> SampleGrid<f64> {
        let mut g = SampleGrid::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let mut sx: f64 = rng.gen_range(-0.95..0.95);
                let mut sy: f64 = rng.gen_range(-0.95..0.95);
                sx = nudge_off_kink(sx, in_w);
                sy = nudge_off_kink(sy, in_h);
                g.set(y, x, sx, sy);
            }
        }
        g
    }

    fn nudge_off_kink(c: f64, n: usize) -> f64 {
        let px = (c + 1.0) * (n as f64 - 1.0) / 2.0;
        let frac = px - px.floor();
        if frac < 1e-2 || frac > 1.0 - 1e-2 {
            c + 0.04 / (n as f64)
        } else {
            c
        }
    }

    #[test]
    fn identity_grid_is_bit_exact_on_pow2_rasters() {
        // 33×65 raster: (n−1) is a power of two on both axes, so every
        // normalized coordinate round-trips exactly through f32.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..33 * 65 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = ImageBuffer::from_data(33, 65, 3, data);
        let grid = build_grid::<f32>(&Homography33::identity(), 33, 65).unwrap();
        let out = grid_sample_forward(&img, &grid);
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn translation_grid_shifts_with_zero_band() {
        // shift right by exactly 2 pixels on a 17-wide raster (16 = 2^4)
        let w = 17usize;
        let h = 9usize;
        let mut img = ImageBuffer::<f32>::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                *img.at_mut(y, x, 0) = (y * w + x) as f32;
            }
        }
        let t = 2.0 * 2.0 / (w as f64 - 1.0);
        let m = Homography33::new([[1.0, 0.0, t], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let grid = build_grid::<f32>(&m, h, w).unwrap();
        let out = grid_sample_forward(&img, &grid);
        for y in 0..h {
            for x in 0..w {
                let expect = if x + 2 < w { img.at(y, x + 2, 0) } else { 0.0 };
                assert_eq!(out.at(y, x, 0), expect, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn pure_translation_grid_values() {
        let m = Homography33::new([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let grid = build_grid::<f64>(&m, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let (sx, sy) = grid.coords(y, x);
                assert!((sx - (norm_coord::<f64>(x, 4) + 0.5)).abs() < 1e-12);
                assert!((sy - norm_coord::<f64>(y, 4)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projective_grid_matches_scalar_oracle() {
        let m = Homography33::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.3, 1.0]]);
        let grid = build_grid::<f64>(&m, 3, 3).unwrap();
        // scalar per-pixel oracle evaluating the divide by hand
        for y in 0..3 {
            for x in 0..3 {
                let xn = [-1.0, 0.0, 1.0][x];
                let yn = [-1.0, 0.0, 1.0][y];
                let w = 0.3 * yn + 1.0;
                let (sx, sy) = grid.coords(y, x);
                assert!((sx - xn / w).abs() < 1e-12);
                assert!((sy - yn / w).abs() < 1e-12);
            }
        }
        // frozen corner value: (−1,−1) → (−1/0.7, −1/0.7)
        let (sx, _) = grid.coords(0, 0);
        assert!((sx - -1.4285714285714286).abs() < 1e-12);
    }

    #[test]
    fn near_zero_divide_is_reported() {
        let m = Homography33::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]]);
        // at yn = −1 the w component hits exactly zero
        let err = build_grid::<f64>(&m, 3, 3).unwrap_err();
        assert!(matches!(err, WarpError::NearZeroDivide { .. }));
    }

    #[test]
    fn random_sampling_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img64 = random_image(&mut rng, 5, 7, 2);
        let grid64 = random_grid(&mut rng, 4, 6, 5, 7);
        let img32: ImageBuffer<f32> = img64.map_precision();
        let grid32 = SampleGrid::<f32> {
            height: grid64.height,
            width: grid64.width,
            data: grid64.data.iter().map(|&v| v as f32).collect(),
        };
        let out = grid_sample_forward(&img32, &grid32);
        // scalar double-precision oracle
        for y in 0..4 {
            for x in 0..6 {
                let (sx, sy) = grid64.coords(y, x);
                let u = (sx + 1.0) * 6.0 / 2.0;
                let v = (sy + 1.0) * 4.0 / 2.0;
                let (u0, v0) = (u.floor() as i64, v.floor() as i64);
                let (du, dv) = (u - u0 as f64, v - v0 as f64);
                for c in 0..2 {
                    let get = |yy: i64, xx: i64| -> f64 {
                        if yy >= 0 && yy < 5 && xx >= 0 && xx < 7 {
                            img64.at(yy as usize, xx as usize, c)
                        } else {
                            0.0
                        }
                    };
                    let expect = get(v0, u0) * (1.0 - du) * (1.0 - dv)
                        + get(v0, u0 + 1) * du * (1.0 - dv)
                        + get(v0 + 1, u0) * (1.0 - du) * dv
                        + get(v0 + 1, u0 + 1) * du * dv;
                    assert!(
                        (out.at(y, x, c) as f64 - expect).abs() < 1e-6,
                        "({y},{x},{c}): {} vs {expect}",
                        out.at(y, x, c)
                    );
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 6, 6, 1);
        let grid = random_grid(&mut rng, 6, 6, 6, 6);
        let go = ImageBuffer::<f64>::new(6, 6, 1);
        let (gi, gg) = grid_sample_backward(&img, &grid, &go);
        assert!(gi.data.iter().all(|&v| v == 0.0));
        assert!(gg.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_gives_zero_grid_gradient_in_interior() {
        let img = ImageBuffer::from_data(6, 6, 1, vec![0.7f64; 36]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = random_grid(&mut rng, 6, 6, 6, 6);
        let mut go = ImageBuffer::<f64>::new(6, 6, 1);
        go.data.iter_mut().for_each(|v| *v = 1.0);
        let (_, gg) = grid_sample_backward(&img, &grid, &go);
        // away from the padding boundary the interpolant is locally constant
        for y in 0..6 {
            for x in 0..6 {
                let (sx, sy) = grid.coords(y, x);
                if sx.abs() < 0.9 && sy.abs() < 0.9 {
                    let i = (y * 6 + x) * 2;
                    assert!(gg.data[i].abs() < 1e-12 && gg.data[i + 1].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let img = random_image(&mut rng, 6, 6, 2);
            let grid = random_grid(&mut rng, 5, 5, 6, 6);
            let go = {
                let mut g = ImageBuffer::<f64>::new(5, 5, 2);
                g.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                g
            };
            let (gi, gg) = grid_sample_backward(&img, &grid, &go);
            let loss = |img: &ImageBuffer<f64>, grid: &SampleGrid<f64>| -> f64 {
                let out = grid_sample_forward(img, grid);
                out.data.iter().zip(&go.data).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-4;
            for i in (0..img.data.len()).step_by(7) {
                let mut p = img.clone();
                p.data[i] += eps;
                let mut m = img.clone();
                m.data[i] -= eps;
                let fd = (loss(&p, &grid) - loss(&m, &grid)) / (2.0 * eps);
                let rel = (gi.data[i] - fd).abs() / gi.data[i].abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-4, "input grad {i}: {} vs {fd}", gi.data[i]);
            }
            for i in (0..grid.data.len()).step_by(5) {
                let mut p = grid.clone();
                p.data[i] += eps;
                let mut m = grid.clone();
                m.data[i] -= eps;
                let fd = (loss(&img, &p) - loss(&img, &m)) / (2.0 * eps);
                let rel = (gg.data[i] - fd).abs() / gg.data[i].abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-4, "grid grad {i}: {} vs {fd}", gg.data[i]);
            }
        }
    }

    #[test]
    fn sampling_is_linear_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let a = random_image(&mut rng, 5, 5, 1);
            let b = random_image(&mut rng, 5, 5, 1);
            let grid = random_grid(&mut rng, 5, 5, 5, 5);
            let (ca, cb) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mut mix = a.clone();
            for i in 0..mix.data.len() {
                mix.data[i] = ca * a.data[i] + cb * b.data[i];
            }
            let lhs = grid_sample_forward(&mix, &grid);
            let ra = grid_sample_forward(&a, &grid);
            let rb = grid_sample_forward(&b, &grid);
            for i in 0..lhs.data.len() {
                let rhs = ca * ra.data[i] + cb * rb.data[i];
                assert!((lhs.data[i] - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translation_never_increases_mass() {
        // Zero padding only removes energy under rigid shifts, where the
        // bilinear weights partition unity over the interior.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let img = random_image(&mut rng, 8, 8, 1);
            let tx: f64 = rng.gen_range(-1.5..1.5);
            let ty: f64 = rng.gen_range(-1.5..1.5);
            let m = Homography33::new([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]);
            let grid = build_grid::<f64>(&m, 8, 8).unwrap();
            let out = grid_sample_forward(&img, &grid);
            let mass_in: f64 = img.data.iter().sum();
            let mass_out: f64 = out.data.iter().sum();
            assert!(mass_out <= mass_in + 1e-9, "{mass_out} > {mass_in}");
        }
    }

    #[test]
    fn warp_identity_homography_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = random_image(&mut rng, 9, 17, 3);
        let out = warp_image(&img, &Homography33::identity(), 9, 17).unwrap();
        for i in 0..img.data.len() {
            assert!((out.data[i] - img.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_round_trip_psnr_above_40db() {
        // smooth synthetic gradient image
        let (h, w) = (64usize, 96usize);
        let mut img = ImageBuffer::<f64>::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 / w as f64;
                let fy = y as f64 / h as f64;
                *img.at_mut(y, x, 0) =
                    0.5 + 0.3 * (2.0 * std::f64::consts::PI * fx).sin() * (1.5 * fy).cos();
            }
        }
        let hm = Homography33::new([
            [0.95, 0.05, 3.0],
            [-0.02, 1.03, -2.0],
            [1e-4, -5e-5, 1.0],
        ]);
        let inv = hm.inverse().unwrap();
        let once = warp_image(&img, &hm, h, w).unwrap();
        let back = warp_image(&once, &inv, h, w).unwrap();
        // interior 80% only
        let mut interior = ImageBuffer::<f64>::new(h, w, 1);
        let mut orig = ImageBuffer::<f64>::new(h, w, 1);
        let (mh, mw) = (h / 10, w / 10);
        let mut n = 0;
        for y in mh..h - mh {
            for x in mw..w - mw {
                interior.data[n] = back.at(y, x, 0);
                orig.data[n] = img.at(y, x, 0);
                n += 1;
            }
        }
        interior.data.truncate(n);
        orig.data.truncate(n);
        let p = psnr(&interior, &orig);
        assert!(p > 40.0, "psnr {p}");
    }

    #[test]
    fn composing_warps_matches_composed_matrix() {
        let (h, w) = (48usize, 48usize);
        let mut img = ImageBuffer::<f64>::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                *img.at_mut(y, x, 0) = ((x as f64 * 0.17).sin() + (y as f64 * 0.11).cos()) * 0.25 + 0.5;
            }
        }
        let h1 = Homography33::new([[0.98, 0.01, 1.0], [0.0, 1.02, -1.5], [0.0, 1e-4, 1.0]]);
        let h2 = Homography33::new([[1.01, -0.02, -0.5], [0.01, 0.99, 2.0], [-5e-5, 0.0, 1.0]]);
        let two_step = warp_image(&warp_image(&img, &h1, h, w).unwrap(), &h2, h, w).unwrap();
        let one_step = warp_image(&img, &h1.compose(&h2), h, w).unwrap();
        // compare where both intermediate and final samples stay in bounds
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 6..h - 6 {
            for x in 6..w - 6 {
                acc += (two_step.at(y, x, 0) - one_step.at(y, x, 0)).abs();
                n += 1;
            }
        }
        let mad = acc / n as f64;
        assert!(mad < 1e-3, "mean abs dev {mad}");
    }

    #[test]
    fn norm_pixel_conversions_invert_each_other() {
        let h = Homography33::new([[0.9, 0.1, 4.0], [0.05, 1.1, -3.0], [1e-4, 2e-4, 1.0]]);
        let n = pixel_homography_to_norm(&h, 96, 64, 128, 80);
        let back = norm_homography_to_pixel(&n, 96, 64, 128, 80);
        assert!(back.max_abs_diff(&h) < 1e-9);
    }
}

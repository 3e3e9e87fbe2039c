//! Forward and backward compute kernels, generic over the float type.
//!
//! The training graph runs these in f32; gradient checks drive the same code
//! in f64. Convolution goes through im2col plus a small blocked matmul; all
//! loops are single-threaded and fixed-order, so results are bit-identical
//! across runs.

use num_traits::Float;

use crate::geometry::Mat3;
use crate::warp::{grid_from_matrix, grid_sample_backward, grid_sample_forward, ImageBuffer, SampleGrid, WarpError};

#[inline]
pub fn r<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// C += A·B with A m×k, B k×n, all row-major.
pub fn matmul_acc<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + aik * brow[j];
            }
        }
    }
}

/// C += Aᵀ·B with A k×m, B k×n.
pub fn matmul_at_acc<T: Float>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            let crow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + aki * brow[j];
            }
        }
    }
}

/// C += A·Bᵀ with A m×k, B n×k.
pub fn matmul_bt_acc<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for kk in 0..k {
                acc = acc + arow[kk] * brow[kk];
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// x: one sample [C, H, W] → col [C·kh·kw, Ho·Wo].
fn im2col<T: Float>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    let spatial = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ci * kh + ki) * kw + kj) * spatial..][..spatial];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for v in dst.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        dst[ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_acc<T: Float>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let spatial = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ci * kh + ki) * kw + kj) * spatial..][..spatial];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with bias. x [N,C,H,W], w [O,C,kh,kw], b [O].
/// Returns (out, ho, wo).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    o: usize,
    kh: usize,
    kw: usize,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> (Vec<T>, usize, usize) {
    let ho = conv_out_dim(h, kh, stride, pad).expect("kernel must fit padded input");
    let wo = conv_out_dim(w, kw, stride, pad).expect("kernel must fit padded input");
    let ckk = c * kh * kw;
    let spatial = ho * wo;
    let mut col = vec![T::zero(); ckk * spatial];
    let mut out = vec![T::zero(); n * o * spatial];
    for ni in 0..n {
        im2col(&x[ni * c * h * w..], c, h, w, kh, kw, stride, pad, ho, wo, &mut col);
        let out_n = &mut out[ni * o * spatial..(ni + 1) * o * spatial];
        matmul_acc(weight, &col, o, ckk, spatial, out_n);
        for oi in 0..o {
            let bval = bias[oi];
            for v in out_n[oi * spatial..(oi + 1) * spatial].iter_mut() {
                *v = *v + bval;
            }
        }
    }
    (out, ho, wo)
}

/// Gradients for input, weight and bias of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ho = conv_out_dim(h, kh, stride, pad).unwrap();
    let wo = conv_out_dim(w, kw, stride, pad).unwrap();
    let ckk = c * kh * kw;
    let spatial = ho * wo;
    let mut gx = vec![T::zero(); n * c * h * w];
    let mut gw = vec![T::zero(); o * ckk];
    let mut gb = vec![T::zero(); o];
    let mut col = vec![T::zero(); ckk * spatial];
    let mut gcol = vec![T::zero(); ckk * spatial];
    for ni in 0..n {
        let go_n = &grad_out[ni * o * spatial..(ni + 1) * o * spatial];
        for oi in 0..o {
            let mut acc = T::zero();
            for &g in &go_n[oi * spatial..(oi + 1) * spatial] {
                acc = acc + g;
            }
            gb[oi] = gb[oi] + acc;
        }
        im2col(&x[ni * c * h * w..], c, h, w, kh, kw, stride, pad, ho, wo, &mut col);
        matmul_bt_acc(go_n, &col, o, spatial, ckk, &mut gw);
        for v in gcol.iter_mut() {
            *v = T::zero();
        }
        matmul_at_acc(weight, go_n, o, ckk, spatial, &mut gcol);
        col2im_acc(&gcol, c, h, w, kh, kw, stride, pad, ho, wo, &mut gx[ni * c * h * w..(ni + 1) * c * h * w]);
    }
    (gx, gw, gb)
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-instance, per-channel normalization with learned gain and shift.
pub fn instance_norm_forward<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gain: &[T],
    shift: &[T],
) -> Vec<T> {
    let eps = r::<T>(INSTANCE_NORM_EPS);
    let inv_hw = r::<T>(1.0 / hw as f64);
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let sl = &x[base..base + hw];
            let mut mean = T::zero();
            for &v in sl {
                mean = mean + v;
            }
            mean = mean * inv_hw;
            let mut var = T::zero();
            for &v in sl {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_hw;
            let inv_std = (var + eps).sqrt().recip();
            let (g, s) = (gain[ci], shift[ci]);
            for (i, &v) in sl.iter().enumerate() {
                out[base + i] = (v - mean) * inv_std * g + s;
            }
        }
    }
    out
}

pub fn instance_norm_backward<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gain: &[T],
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let eps = r::<T>(INSTANCE_NORM_EPS);
    let inv_hw = r::<T>(1.0 / hw as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut ggain = vec![T::zero(); c];
    let mut gshift = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let sl = &x[base..base + hw];
            let go = &grad_out[base..base + hw];
            let mut mean = T::zero();
            for &v in sl {
                mean = mean + v;
            }
            mean = mean * inv_hw;
            let mut var = T::zero();
            for &v in sl {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_hw;
            let inv_std = (var + eps).sqrt().recip();
            let mut sum_go = T::zero();
            let mut sum_go_xhat = T::zero();
            for i in 0..hw {
                let xhat = (sl[i] - mean) * inv_std;
                sum_go = sum_go + go[i];
                sum_go_xhat = sum_go_xhat + go[i] * xhat;
            }
            ggain[ci] = ggain[ci] + sum_go_xhat;
            gshift[ci] = gshift[ci] + sum_go;
            let g = gain[ci];
            let mean_go = sum_go * inv_hw;
            let mean_go_xhat = sum_go_xhat * inv_hw;
            for i in 0..hw {
                let xhat = (sl[i] - mean) * inv_std;
                gx[base + i] = g * inv_std * (go[i] - mean_go - xhat * mean_go_xhat);
            }
        }
    }
    (gx, ggain, gshift)
}

pub fn leaky_relu_forward<T: Float>(x: &[T], slope: f64) -> Vec<T> {
    let s = r::<T>(slope);
    x.iter().map(|&v| if v > T::zero() { v } else { v * s }).collect()
}

pub fn leaky_relu_backward<T: Float>(x: &[T], slope: f64, grad_out: &[T]) -> Vec<T> {
    let s = r::<T>(slope);
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
        .collect()
}

pub fn tanh_forward<T: Float>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.tanh()).collect()
}

pub fn tanh_backward<T: Float>(y: &[T], grad_out: &[T]) -> Vec<T> {
    y.iter().zip(grad_out).map(|(&y, &g)| g * (T::one() - y * y)).collect()
}

/// 2×2 average pooling with stride 2; spatial dims must be even.
pub fn avg_down2x_forward<T: Float>(x: &[T], nc: usize, h: usize, w: usize) -> Vec<T> {
    assert!(h % 2 == 0 && w % 2 == 0, "avg_downsample2x needs even dims, got {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let quarter = r::<T>(0.25);
    let mut out = vec![T::zero(); nc * ho * wo];
    for p in 0..nc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xo in 0..wo {
                let i = 2 * y * w + 2 * xo;
                dst[y * wo + xo] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_down2x_backward<T: Float>(grad_out: &[T], nc: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = r::<T>(0.25);
    let mut gx = vec![T::zero(); nc * h * w];
    for p in 0..nc {
        let go = &grad_out[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xo in 0..wo {
                let g = go[y * wo + xo] * quarter;
                let i = 2 * y * w + 2 * xo;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    gx
}

pub fn nearest_up2x_forward<T: Float>(x: &[T], nc: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h * 2, w * 2);
    let mut out = vec![T::zero(); nc * ho * wo];
    for p in 0..nc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..h {
            for xo in 0..w {
                let v = src[y * w + xo];
                let i = 2 * y * wo + 2 * xo;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + wo] = v;
                dst[i + wo + 1] = v;
            }
        }
    }
    out
}

pub fn nearest_up2x_backward<T: Float>(grad_out: &[T], nc: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h * 2, w * 2);
    let mut gx = vec![T::zero(); nc * h * w];
    for p in 0..nc {
        let go = &grad_out[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xo in 0..w {
                let i = 2 * y * wo + 2 * xo;
                dst[y * w + xo] = go[i] + go[i + 1] + go[i + wo] + go[i + wo + 1];
            }
        }
    }
    gx
}

pub fn global_avg_pool_forward<T: Float>(x: &[T], nc: usize, hw: usize) -> Vec<T> {
    let inv = r::<T>(1.0 / hw as f64);
    let mut out = vec![T::zero(); nc];
    for p in 0..nc {
        let mut acc = T::zero();
        for &v in &x[p * hw..(p + 1) * hw] {
            acc = acc + v;
        }
        out[p] = acc * inv;
    }
    out
}

pub fn global_avg_pool_backward<T: Float>(grad_out: &[T], nc: usize, hw: usize) -> Vec<T> {
    let inv = r::<T>(1.0 / hw as f64);
    let mut gx = vec![T::zero(); nc * hw];
    for p in 0..nc {
        let g = grad_out[p] * inv;
        for v in gx[p * hw..(p + 1) * hw].iter_mut() {
            *v = g;
        }
    }
    gx
}

/// x [N,K] · wᵀ [K,O] + b → [N,O], w stored [O,K].
pub fn linear_forward<T: Float>(x: &[T], n: usize, k: usize, w: &[T], o: usize, b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n * o];
    matmul_bt_acc(x, w, n, k, o, &mut out);
    for ni in 0..n {
        for oi in 0..o {
            out[ni * o + oi] = out[ni * o + oi] + b[oi];
        }
    }
    out
}

pub fn linear_backward<T: Float>(
    x: &[T],
    n: usize,
    k: usize,
    w: &[T],
    o: usize,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); n * k];
    let mut gw = vec![T::zero(); o * k];
    let mut gb = vec![T::zero(); o];
    matmul_acc(grad_out, w, n, o, k, &mut gx);
    matmul_at_acc(grad_out, x, n, o, k, &mut gw);
    for ni in 0..n {
        for oi in 0..o {
            gb[oi] = gb[oi] + grad_out[ni * o + oi];
        }
    }
    (gx, gw, gb)
}

/// The perturbation layout of a spatial-transformer block: eight raw values
/// added onto the identity entries (row-major, skipping m[2][2] which stays
/// fixed at one), scaled down to keep early training near the reference.
pub const PERT_SCALE: f64 = 0.1;

pub fn pert_to_matrix<T: Float>(pert: &[T]) -> [[T; 3]; 3] {
    debug_assert_eq!(pert.len(), 8);
    let s = r::<T>(PERT_SCALE);
    let mut m = [[T::zero(); 3]; 3];
    let mut it = pert.iter();
    for i in 0..3 {
        for j in 0..3 {
            if i == 2 && j == 2 {
                m[i][j] = T::one();
            } else {
                let raw = *it.next().unwrap();
                m[i][j] = if i == j { T::one() + raw * s } else { raw * s };
            }
        }
    }
    m
}

fn mat3_mul_t<T: Float>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat3_cast<T: Float>(m: &Mat3) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r::<T>(m[i][j]);
        }
    }
    out
}

/// Warps one sample's feature maps by `m_ref · (I + scale·pert)` in the
/// normalized frame. Returns the warped maps plus the grid that produced
/// them (saved for backward).
pub fn st_warp_forward<T: Float>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    pert: &[T],
    m_ref: &Mat3,
) -> Result<(Vec<T>, SampleGrid<T>, [[T; 3]; 3]), WarpError> {
    let m = mat3_mul_t(&mat3_cast::<T>(m_ref), &pert_to_matrix(pert));
    let grid = grid_from_matrix(&m, h, w)?;
    let hwc = chw_to_hwc(x, c, h, w);
    let img = ImageBuffer::from_data(h, w, c, hwc);
    let out = grid_sample_forward(&img, &grid);
    Ok((hwc_to_chw(&out.data, c, h, w), grid, m))
}

/// Gradients of [`st_warp_forward`] for the features and the eight raw
/// perturbation values of one sample.
#[allow(clippy::too_many_arguments)]
pub fn st_warp_backward<T: Float>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    grid: &SampleGrid<T>,
    m: &[[T; 3]; 3],
    m_ref: &Mat3,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let img = ImageBuffer::from_data(h, w, c, chw_to_hwc(x, c, h, w));
    let go = ImageBuffer::from_data(h, w, c, chw_to_hwc(grad_out, c, h, w));
    let (gi, gg) = grid_sample_backward(&img, grid, &go);
    let gx = hwc_to_chw(&gi.data, c, h, w);

    // Chain d grid / d M through the homogeneous divide, then d M / d pert.
    let mut gm = [[T::zero(); 3]; 3];
    for y in 0..h {
        let yn = crate::warp::norm_coord::<T>(y, h);
        for xpix in 0..w {
            let xn = crate::warp::norm_coord::<T>(xpix, w);
            let p = [xn, yn, T::one()];
            let qx = m[0][0] * xn + m[0][1] * yn + m[0][2];
            let qy = m[1][0] * xn + m[1][1] * yn + m[1][2];
            let qw = m[2][0] * xn + m[2][1] * yn + m[2][2];
            let inv_w = qw.recip();
            let i = (y * w + xpix) * 2;
            let gx_c = gg.data[i];
            let gy_c = gg.data[i + 1];
            for (j, &pj) in p.iter().enumerate() {
                gm[0][j] = gm[0][j] + gx_c * pj * inv_w;
                gm[1][j] = gm[1][j] + gy_c * pj * inv_w;
                gm[2][j] = gm[2][j] - (gx_c * qx + gy_c * qy) * pj * inv_w * inv_w;
            }
        }
    }
    // M = R·P ⇒ dL/dP = Rᵀ·dL/dM, and pert enters P scaled.
    let rt = {
        let rc = mat3_cast::<T>(m_ref);
        let mut t = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = rc[j][i];
            }
        }
        t
    };
    let gp = mat3_mul_t(&rt, &gm);
    let s = r::<T>(PERT_SCALE);
    let mut gpert = vec![T::zero(); 8];
    let mut idx = 0;
    for i in 0..3 {
        for j in 0..3 {
            if i == 2 && j == 2 {
                continue;
            }
            gpert[idx] = gp[i][j] * s;
            idx += 1;
        }
    }
    (gx, gpert)
}

pub fn chw_to_hwc<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for xi in 0..w {
                out[(y * w + xi) * c + ci] = x[(ci * h + y) * w + xi];
            }
        }
    }
    out
}

pub fn hwc_to_chw<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for xi in 0..w {
                out[(ci * h + y) * w + xi] = x[(y * w + xi) * c + ci];
            }
        }
    }
    out
}

/// mean((x − target)²)
pub fn mean_sq_diff_const_forward<T: Float>(x: &[T], target: f64) -> T {
    let t = r::<T>(target);
    let mut acc = T::zero();
    for &v in x {
        let d = v - t;
        acc = acc + d * d;
    }
    acc / r::<T>(x.len() as f64)
}

pub fn mean_sq_diff_const_backward<T: Float>(x: &[T], target: f64, grad: T) -> Vec<T> {
    let t = r::<T>(target);
    let scale = grad * r::<T>(2.0 / x.len() as f64);
    x.iter().map(|&v| (v - t) * scale).collect()
}

/// mean(|a − b|)
pub fn mean_abs_diff_forward<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + (x - y).abs();
    }
    acc / r::<T>(a.len() as f64)
}

pub fn mean_abs_diff_backward<T: Float>(a: &[T], b: &[T], grad: T) -> (Vec<T>, Vec<T>) {
    let scale = grad / r::<T>(a.len() as f64);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for i in 0..a.len() {
        let s = if a[i] > b[i] {
            scale
        } else if a[i] < b[i] {
            -scale
        } else {
            T::zero()
        };
        ga[i] = s;
        gb[i] = -s;
    }
    (ga, gb)
}

/// softplus(x) = ln(1 + eˣ), stable at both tails.
pub fn softplus<T: Float>(x: T) -> T {
    if x > r::<T>(30.0) {
        x
    } else if x < r::<T>(-30.0) {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

/// mean(softplus(x) − target·x): binary cross entropy with logits against a
/// constant 0/1 target.
pub fn mean_bce_logits_forward<T: Float>(x: &[T], target: f64) -> T {
    let t = r::<T>(target);
    let mut acc = T::zero();
    for &v in x {
        acc = acc + softplus(v) - t * v;
    }
    acc / r::<T>(x.len() as f64)
}

pub fn mean_bce_logits_backward<T: Float>(x: &[T], target: f64, grad: T) -> Vec<T> {
    let t = r::<T>(target);
    let scale = grad / r::<T>(x.len() as f64);
    x.iter().map(|&v| (sigmoid(v) - t) * scale).collect()
}

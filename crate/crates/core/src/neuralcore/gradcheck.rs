//! Finite-difference gradient checks for every differentiable op.
//!
//! Each case runs the generic kernels twice: analytic gradients in f64 are
//! checked against central differences of the f64 forward (tight tolerance),
//! and the f32 analytic gradients are checked against the same
//! double-precision numeric oracle (loose tolerance). Inputs are sampled
//! away from the kinks of piecewise ops.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels as k;
use crate::geometry::Mat3;
use crate::warp::{grid_sample_backward, grid_sample_forward, ImageBuffer, SampleGrid};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err_f64: f64,
    pub max_rel_err_f32: f64,
    pub tol_f64: f64,
    pub tol_f32: f64,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err_f64 < self.tol_f64 && self.max_rel_err_f32 < self.tol_f32
    }
}

pub const TOL_F64: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-3;
const FD_EPS: f64 = 1e-5;

type Fwd<T> = fn(&[Vec<T>]) -> Vec<T>;
type Bwd<T> = fn(&[Vec<T>], &[T]) -> Vec<Vec<T>>;

struct OpCase {
    name: &'static str,
    make_inputs: fn(&mut ChaCha8Rng) -> Vec<Vec<f64>>,
    fwd64: Fwd<f64>,
    bwd64: Bwd<f64>,
    bwd32: Bwd<f32>,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn cast_vecs<T: Float>(v: &[Vec<f64>]) -> Vec<Vec<T>> {
    v.iter()
        .map(|x| x.iter().map(|&e| T::from(e).unwrap()).collect())
        .collect()
}

fn check_case(case: &OpCase, rng: &mut ChaCha8Rng) -> CheckReport {
    let inputs = (case.make_inputs)(rng);
    let out = (case.fwd64)(&inputs);
    let gout: Vec<f64> = (0..out.len())
        .map(|_| {
            let mag = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let loss = |ins: &[Vec<f64>]| -> f64 {
        (case.fwd64)(ins).iter().zip(&gout).map(|(a, b)| a * b).sum()
    };

    let grads64 = (case.bwd64)(&inputs, &gout);
    let mut worst64 = 0.0f64;
    let mut fd_all: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let mut fd = vec![0.0f64; inputs[ti].len()];
        for ei in 0..inputs[ti].len() {
            let mut plus = inputs.to_vec();
            plus[ti][ei] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[ti][ei] -= FD_EPS;
            fd[ei] = (loss(&plus) - loss(&minus)) / (2.0 * FD_EPS);
            worst64 = worst64.max(rel_err(grads64[ti][ei], fd[ei]));
        }
        fd_all.push(fd);
    }

    let inputs32 = cast_vecs::<f32>(&inputs);
    let gout32: Vec<f32> = gout.iter().map(|&v| v as f32).collect();
    let grads32 = (case.bwd32)(&inputs32, &gout32);
    let mut worst32 = 0.0f64;
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].len() {
            worst32 = worst32.max(rel_err(grads32[ti][ei] as f64, fd_all[ti][ei]));
        }
    }

    CheckReport {
        name: case.name.to_string(),
        max_rel_err_f64: worst64,
        max_rel_err_f32: worst32,
        tol_f64: TOL_F64,
        tol_f32: TOL_F32,
    }
}

// conv2d: x [1,2,5,4], w [3,2,3,3], b [3], stride 1, pad 1
fn conv_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![
        (0..2 * 5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..3 * 2 * 3 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    ]
}
fn conv_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::conv2d_forward(&ins[0], 1, 2, 5, 4, &ins[1], 3, 3, 3, &ins[2], 1, 1).0
}
fn conv_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (gx, gw, gb) = k::conv2d_backward(&ins[0], 1, 2, 5, 4, &ins[1], 3, 3, 3, 1, 1, gout);
    vec![gx, gw, gb]
}

// conv2d stride 2: x [1,2,6,6], w [3,2,4,4], pad 1
fn conv_s2_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![
        (0..2 * 6 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..3 * 2 * 4 * 4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    ]
}
fn conv_s2_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::conv2d_forward(&ins[0], 1, 2, 6, 6, &ins[1], 3, 4, 4, &ins[2], 2, 1).0
}
fn conv_s2_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (gx, gw, gb) = k::conv2d_backward(&ins[0], 1, 2, 6, 6, &ins[1], 3, 4, 4, 2, 1, gout);
    vec![gx, gw, gb]
}

// instance_norm: x [2,3,4,4], gain/shift [3]
fn inorm_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![
        (0..2 * 3 * 16).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        (0..3).map(|_| rng.gen_range(0.5..1.5)).collect(),
        (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect(),
    ]
}
fn inorm_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::instance_norm_forward(&ins[0], 2, 3, 16, &ins[1], &ins[2])
}
fn inorm_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (gx, gg, gs) = k::instance_norm_backward(&ins[0], 2, 3, 16, &ins[1], gout);
    vec![gx, gg, gs]
}

// leaky_relu with inputs kept away from the kink at zero
fn lrelu_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![(0..40)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()]
}
fn lrelu_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::leaky_relu_forward(&ins[0], 0.2)
}
fn lrelu_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::leaky_relu_backward(&ins[0], 0.2, gout)]
}

fn tanh_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![(0..40).map(|_| rng.gen_range(-2.0..2.0)).collect()]
}
fn tanh_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::tanh_forward(&ins[0])
}
fn tanh_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let y = k::tanh_forward(&ins[0]);
    vec![k::tanh_backward(&y, gout)]
}

// avg down / nearest up / gap on [1,2,4,6]
fn plane_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![(0..2 * 4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect()]
}
fn down_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::avg_down2x_forward(&ins[0], 2, 4, 6)
}
fn down_bwd<T: Float>(_ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::avg_down2x_backward(gout, 2, 4, 6)]
}
fn up_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::nearest_up2x_forward(&ins[0], 2, 4, 6)
}
fn up_bwd<T: Float>(_ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::nearest_up2x_backward(gout, 2, 4, 6)]
}
fn gap_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::global_avg_pool_forward(&ins[0], 2, 24)
}
fn gap_bwd<T: Float>(_ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::global_avg_pool_backward(gout, 2, 24)]
}

// linear: x [3,5], w [4,5], b [4]
fn linear_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![
        (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..20).map(|_| rng.gen_range(-0.7..0.7)).collect(),
        (0..4).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    ]
}
fn linear_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::linear_forward(&ins[0], 3, 5, &ins[1], 4, &ins[2])
}
fn linear_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (gx, gw, gb) = k::linear_backward(&ins[0], 3, 5, &ins[1], 4, gout);
    vec![gx, gw, gb]
}

const ST_REF: Mat3 = [
    [0.95, 0.02, 0.01],
    [0.01, 0.90, -0.03],
    [0.02, 0.05, 1.0],
];
const ST_C: usize = 2;
const ST_H: usize = 6;
const ST_W: usize = 7;

// st_warp: features [2,6,7] + 8 perturbation values, retried until the grid
// sits clear of interpolation kinks
fn st_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    loop {
        let x: Vec<f64> = (0..ST_C * ST_H * ST_W).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pert: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.3..0.3)).collect();
        if let Ok((_, grid, _)) = k::st_warp_forward(&x, ST_C, ST_H, ST_W, &pert, &ST_REF) {
            let clear = grid.data.chunks(2).all(|p| {
                let u = (p[0] + 1.0) * (ST_W as f64 - 1.0) / 2.0;
                let v = (p[1] + 1.0) * (ST_H as f64 - 1.0) / 2.0;
                let fu = u - u.floor();
                let fv = v - v.floor();
                (1e-3..=0.999).contains(&fu) && (1e-3..=0.999).contains(&fv)
            });
            if clear {
                return vec![x, pert];
            }
        }
    }
}
fn st_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    k::st_warp_forward(&ins[0], ST_C, ST_H, ST_W, &ins[1], &ST_REF).unwrap().0
}
fn st_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (_, grid, m) = k::st_warp_forward(&ins[0], ST_C, ST_H, ST_W, &ins[1], &ST_REF).unwrap();
    let (gx, gp) = k::st_warp_backward(&ins[0], ST_C, ST_H, ST_W, &grid, &m, &ST_REF, gout);
    vec![gx, gp]
}

// raw grid sampler: image [5,6,2] HWC + grid [4,5]
fn gs_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let img: Vec<f64> = (0..5 * 6 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut grid = Vec::with_capacity(4 * 5 * 2);
    for _ in 0..4 * 5 {
        for n in [6usize, 5] {
            let mut c: f64 = rng.gen_range(-0.95..0.95);
            let px = (c + 1.0) * (n as f64 - 1.0) / 2.0;
            let frac = px - px.floor();
            if frac < 5e-3 || frac > 0.995 {
                c += 0.02;
            }
            grid.push(c);
        }
    }
    vec![img, grid]
}
fn gs_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    let img = ImageBuffer::from_data(5, 6, 2, ins[0].clone());
    let grid = SampleGrid { height: 4, width: 5, data: ins[1].clone() };
    grid_sample_forward(&img, &grid).data
}
fn gs_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let img = ImageBuffer::from_data(5, 6, 2, ins[0].clone());
    let grid = SampleGrid { height: 4, width: 5, data: ins[1].clone() };
    let go = ImageBuffer::from_data(4, 5, 2, gout.to_vec());
    let (gi, gg) = grid_sample_backward(&img, &grid, &go);
    vec![gi.data, gg.data]
}

// mean((x − 1)²)
fn msq_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![(0..24).map(|_| rng.gen_range(-1.0..2.5)).collect()]
}
fn msq_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    vec![k::mean_sq_diff_const_forward(&ins[0], 1.0)]
}
fn msq_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::mean_sq_diff_const_backward(&ins[0], 1.0, gout[0])]
}

// mean(|a − b|) with the pairs separated from the kink
fn mad_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let a: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = a
        .iter()
        .map(|&v| {
            let off = rng.gen_range(0.2..0.8);
            if rng.gen_bool(0.5) {
                v + off
            } else {
                v - off
            }
        })
        .collect();
    vec![a, b]
}
fn mad_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    vec![k::mean_abs_diff_forward(&ins[0], &ins[1])]
}
fn mad_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    let (ga, gb) = k::mean_abs_diff_backward(&ins[0], &ins[1], gout[0]);
    vec![ga, gb]
}

// binary cross entropy with logits against target 1
fn bce_inputs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![(0..24).map(|_| rng.gen_range(-3.0..3.0)).collect()]
}
fn bce_fwd<T: Float>(ins: &[Vec<T>]) -> Vec<T> {
    vec![k::mean_bce_logits_forward(&ins[0], 1.0)]
}
fn bce_bwd<T: Float>(ins: &[Vec<T>], gout: &[T]) -> Vec<Vec<T>> {
    vec![k::mean_bce_logits_backward(&ins[0], 1.0, gout[0])]
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "conv2d", make_inputs: conv_inputs, fwd64: conv_fwd::<f64>, bwd64: conv_bwd::<f64>, bwd32: conv_bwd::<f32> },
        OpCase { name: "conv2d_stride2", make_inputs: conv_s2_inputs, fwd64: conv_s2_fwd::<f64>, bwd64: conv_s2_bwd::<f64>, bwd32: conv_s2_bwd::<f32> },
        OpCase { name: "instance_norm", make_inputs: inorm_inputs, fwd64: inorm_fwd::<f64>, bwd64: inorm_bwd::<f64>, bwd32: inorm_bwd::<f32> },
        OpCase { name: "leaky_relu", make_inputs: lrelu_inputs, fwd64: lrelu_fwd::<f64>, bwd64: lrelu_bwd::<f64>, bwd32: lrelu_bwd::<f32> },
        OpCase { name: "tanh_out", make_inputs: tanh_inputs, fwd64: tanh_fwd::<f64>, bwd64: tanh_bwd::<f64>, bwd32: tanh_bwd::<f32> },
        OpCase { name: "avg_downsample2x", make_inputs: plane_inputs, fwd64: down_fwd::<f64>, bwd64: down_bwd::<f64>, bwd32: down_bwd::<f32> },
        OpCase { name: "nearest_upsample2x", make_inputs: plane_inputs, fwd64: up_fwd::<f64>, bwd64: up_bwd::<f64>, bwd32: up_bwd::<f32> },
        OpCase { name: "global_avg_pool", make_inputs: plane_inputs, fwd64: gap_fwd::<f64>, bwd64: gap_bwd::<f64>, bwd32: gap_bwd::<f32> },
        OpCase { name: "linear", make_inputs: linear_inputs, fwd64: linear_fwd::<f64>, bwd64: linear_bwd::<f64>, bwd32: linear_bwd::<f32> },
        OpCase { name: "grid_sample", make_inputs: gs_inputs, fwd64: gs_fwd::<f64>, bwd64: gs_bwd::<f64>, bwd32: gs_bwd::<f32> },
        OpCase { name: "st_warp", make_inputs: st_inputs, fwd64: st_fwd::<f64>, bwd64: st_bwd::<f64>, bwd32: st_bwd::<f32> },
        OpCase { name: "mean_sq_diff_const", make_inputs: msq_inputs, fwd64: msq_fwd::<f64>, bwd64: msq_bwd::<f64>, bwd32: msq_bwd::<f32> },
        OpCase { name: "mean_abs_diff", make_inputs: mad_inputs, fwd64: mad_fwd::<f64>, bwd64: mad_bwd::<f64>, bwd32: mad_bwd::<f32> },
        OpCase { name: "mean_bce_logits", make_inputs: bce_inputs, fwd64: bce_fwd::<f64>, bwd64: bce_bwd::<f64>, bwd32: bce_bwd::<f32> },
    ]
}

/// Runs the full suite once for a seed; one report per op.
pub fn run_gradcheck(seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases().iter().map(|c| check_case(c, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass_at_twenty_seeds() {
        for seed in 0..20 {
            for report in run_gradcheck(seed) {
                assert!(
                    report.pass(),
                    "{} failed at seed {seed}: f64 {:.3e} f32 {:.3e}",
                    report.name,
                    report.max_rel_err_f64,
                    report.max_rel_err_f32
                );
            }
        }
    }
}

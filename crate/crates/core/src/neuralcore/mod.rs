//! A minimal reverse-mode differentiable tensor layer set — exactly the
//! operations the spatial-transformer GAN needs.
//!
//! Values are single precision; every op also exists as a generic kernel in
//! [`kernels`] so gradient tests can run the identical code in double
//! precision. A [`Tape`] records the fixed graph of one forward pass;
//! `backward` walks it once in reverse. Graphs are rebuilt per step and
//! confined to one thread; all kernels are fixed-order loops, so a given
//! seed reproduces parameters bit-for-bit.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};

use thiserror::Error;

use crate::geometry::Mat3;
use crate::warp::{SampleGrid, WarpError};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Up to four axes: batch, channels, height, width. Lower-rank data uses
/// size-one axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn vec2(n: usize, k: usize) -> Self {
        Shape([n, k, 1, 1])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }
    pub fn hw(&self) -> usize {
        self.0[2] * self.0[3]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Dense single-precision buffer with an optional gradient slot.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self { data: vec![0.0; shape.numel()], shape, grad: None, requires_grad: false }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), shape.numel(), "data length must match shape");
        Self { shape, data, grad: None, requires_grad: false }
    }

    pub fn scalar(v: f32) -> Self {
        Self::from_vec(Shape::scalar(), vec![v])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn item(&self) -> f32 {
        assert_eq!(self.shape.numel(), 1, "item() needs a scalar tensor");
        self.data[0]
    }

    fn ensure_grad(&mut self) -> &mut Vec<f32> {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.shape.numel()]);
        }
        self.grad.as_mut().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    InstanceNorm { x: Var, gain: Var, shift: Var },
    LeakyRelu { x: Var, slope: f64 },
    TanhOut { x: Var },
    AvgDown2x { x: Var },
    NearestUp2x { x: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
    ConcatC { a: Var, b: Var },
    Add { a: Var, b: Var },
    AffineScalar { x: Var, mul: f32 },
    StWarp { x: Var, pert: Var, m_ref: Mat3, grids: Vec<SampleGrid<f32>>, mats: Vec<[[f32; 3]; 3]> },
    MeanAll { x: Var },
    MeanSqDiffConst { x: Var, target: f64 },
    MeanBceLogits { x: Var, target: f64 },
    MeanAbsDiff { a: Var, b: Var },
    ScaledSum { terms: Vec<(Var, f32)> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::TanhOut { .. } => "tanh_out",
            Op::AvgDown2x { .. } => "avg_downsample2x",
            Op::NearestUp2x { .. } => "nearest_upsample2x",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::ConcatC { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::AffineScalar { .. } => "affine_scalar",
            Op::StWarp { .. } => "st_warp",
            Op::MeanAll { .. } => "mean_all",
            Op::MeanSqDiffConst { .. } => "mean_sq_diff_const",
            Op::MeanBceLogits { .. } => "mean_bce_logits",
            Op::MeanAbsDiff { .. } => "mean_abs_diff",
            Op::ScaledSum { .. } => "scaled_sum",
        }
    }
}

struct Node {
    t: Tensor,
    op: Op,
}

/// Records one forward pass of a fixed model graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].t
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].t.grad.as_deref()
    }

    /// The per-sample effective matrices of an `st_warp` node.
    pub fn st_mats(&self, v: Var) -> Option<&[[[f32; 3]; 3]]> {
        match &self.nodes[v.0].op {
            Op::StWarp { mats, .. } => Some(mats),
            _ => None,
        }
    }

    fn push(&mut self, t: Tensor, op: Op) -> Var {
        // NaN/Inf out of any op is a hard error in debug builds.
        #[cfg(debug_assertions)]
        if t.data.iter().any(|v| !v.is_finite()) {
            panic!("non-finite value out of {}", op.name());
        }
        self.nodes.push(Node { t, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].t.requires_grad
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, NeuralError> {
        let (xs, ws, bs) = (self.value(x).shape, self.value(w).shape, self.value(b).shape);
        if xs.c() != ws.c() {
            return Err(NeuralError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input channels {} vs kernel channels {}", xs.c(), ws.c()),
            });
        }
        if bs.numel() != ws.n() {
            return Err(NeuralError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {} vs out channels {}", bs.numel(), ws.n()),
            });
        }
        if kernels::conv_out_dim(xs.h(), ws.h(), stride, pad).is_none()
            || kernels::conv_out_dim(xs.w(), ws.w(), stride, pad).is_none()
        {
            return Err(NeuralError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {}x{} does not fit padded input {}", ws.h(), ws.w(), xs),
            });
        }
        let (out, ho, wo) = kernels::conv2d_forward(
            &self.value(x).data,
            xs.n(),
            xs.c(),
            xs.h(),
            xs.w(),
            &self.value(w).data,
            ws.n(),
            ws.h(),
            ws.w(),
            &self.value(b).data,
            stride,
            pad,
        );
        let mut t = Tensor::from_vec(Shape::nchw(xs.n(), ws.n(), ho, wo), out);
        t.requires_grad = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var, NeuralError> {
        let xs = self.value(x).shape;
        if self.value(gain).shape.numel() != xs.c() || self.value(shift).shape.numel() != xs.c() {
            return Err(NeuralError::ShapeMismatch {
                op: "instance_norm",
                detail: format!("gain/shift must have {} entries", xs.c()),
            });
        }
        let out = kernels::instance_norm_forward(
            &self.value(x).data,
            xs.n(),
            xs.c(),
            xs.hw(),
            &self.value(gain).data,
            &self.value(shift).data,
        );
        let mut t = Tensor::from_vec(xs, out);
        t.requires_grad = self.requires(x) || self.requires(gain) || self.requires(shift);
        Ok(self.push(t, Op::InstanceNorm { x, gain, shift }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = kernels::leaky_relu_forward(&self.value(x).data, slope);
        let mut t = Tensor::from_vec(self.value(x).shape, out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::LeakyRelu { x, slope })
    }

    pub fn tanh_out(&mut self, x: Var) -> Var {
        let out = kernels::tanh_forward(&self.value(x).data);
        let mut t = Tensor::from_vec(self.value(x).shape, out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::TanhOut { x })
    }

    pub fn avg_downsample2x(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape;
        let out = kernels::avg_down2x_forward(&self.value(x).data, xs.n() * xs.c(), xs.h(), xs.w());
        let mut t = Tensor::from_vec(Shape::nchw(xs.n(), xs.c(), xs.h() / 2, xs.w() / 2), out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::AvgDown2x { x })
    }

    pub fn nearest_upsample2x(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape;
        let out = kernels::nearest_up2x_forward(&self.value(x).data, xs.n() * xs.c(), xs.h(), xs.w());
        let mut t = Tensor::from_vec(Shape::nchw(xs.n(), xs.c(), xs.h() * 2, xs.w() * 2), out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::NearestUp2x { x })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape;
        let out = kernels::global_avg_pool_forward(&self.value(x).data, xs.n() * xs.c(), xs.hw());
        let mut t = Tensor::from_vec(Shape::nchw(xs.n(), xs.c(), 1, 1), out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::GlobalAvgPool { x })
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NeuralError> {
        let xs = self.value(x).shape;
        let ws = self.value(w).shape;
        let k = xs.numel() / xs.n();
        if ws.c() != k || self.value(b).shape.numel() != ws.n() {
            return Err(NeuralError::ShapeMismatch {
                op: "linear",
                detail: format!("x {} (features {k}) vs w {} b {}", xs, ws, self.value(b).shape),
            });
        }
        let out = kernels::linear_forward(&self.value(x).data, xs.n(), k, &self.value(w).data, ws.n(), &self.value(b).data);
        let mut t = Tensor::from_vec(Shape::vec2(xs.n(), ws.n()), out);
        t.requires_grad = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (sa, sb) = (self.value(a).shape, self.value(b).shape);
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(NeuralError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("{sa} vs {sb}"),
            });
        }
        let (n, hw) = (sa.n(), sa.hw());
        let (ca, cb) = (sa.c(), sb.c());
        let mut out = vec![0.0f32; n * (ca + cb) * hw];
        for ni in 0..n {
            let dst = &mut out[ni * (ca + cb) * hw..(ni + 1) * (ca + cb) * hw];
            dst[..ca * hw].copy_from_slice(&self.value(a).data[ni * ca * hw..(ni + 1) * ca * hw]);
            dst[ca * hw..].copy_from_slice(&self.value(b).data[ni * cb * hw..(ni + 1) * cb * hw]);
        }
        let mut t = Tensor::from_vec(Shape::nchw(n, ca + cb, sa.h(), sa.w()), out);
        t.requires_grad = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::ConcatC { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (sa, sb) = (self.value(a).shape, self.value(b).shape);
        if sa != sb {
            return Err(NeuralError::ShapeMismatch { op: "add", detail: format!("{sa} vs {sb}") });
        }
        let out: Vec<f32> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let mut t = Tensor::from_vec(sa, out);
        t.requires_grad = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn affine_scalar(&mut self, x: Var, mul: f32, add: f32) -> Var {
        let out: Vec<f32> = self.value(x).data.iter().map(|v| v * mul + add).collect();
        let mut t = Tensor::from_vec(self.value(x).shape, out);
        t.requires_grad = self.requires(x);
        self.push(t, Op::AffineScalar { x, mul })
    }

    /// Spatial-transformer warp: resamples each sample's feature maps by
    /// `m_ref · (I + 0.1·pert_n)` in the normalized frame.
    pub fn st_warp(&mut self, x: Var, pert: Var, m_ref: &Mat3) -> Result<Var, NeuralError> {
        let xs = self.value(x).shape;
        let ps = self.value(pert).shape;
        if ps.n() != xs.n() || ps.numel() / ps.n() != 8 {
            return Err(NeuralError::ShapeMismatch {
                op: "st_warp",
                detail: format!("pert must be [{}, 8], got {ps}", xs.n()),
            });
        }
        let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
        let mut out = vec![0.0f32; xs.numel()];
        let mut grids = Vec::with_capacity(n);
        let mut mats = Vec::with_capacity(n);
        for ni in 0..n {
            let xd = &self.value(x).data[ni * c * h * w..(ni + 1) * c * h * w];
            let pd = &self.value(pert).data[ni * 8..(ni + 1) * 8];
            let (o, grid, m) = kernels::st_warp_forward(xd, c, h, w, pd, m_ref)?;
            out[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(&o);
            grids.push(grid);
            mats.push(m);
        }
        let mut t = Tensor::from_vec(xs, out);
        t.requires_grad = self.requires(x) || self.requires(pert);
        Ok(self.push(t, Op::StWarp { x, pert, m_ref: *m_ref, grids, mats }))
    }

    /// Mean over every element, to a scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let data = &self.value(x).data;
        let v = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        let mut t = Tensor::scalar(v as f32);
        t.requires_grad = self.requires(x);
        self.push(t, Op::MeanAll { x })
    }

    pub fn mean_sq_diff_const(&mut self, x: Var, target: f64) -> Var {
        let v = kernels::mean_sq_diff_const_forward(&self.value(x).data, target);
        let mut t = Tensor::scalar(v);
        t.requires_grad = self.requires(x);
        self.push(t, Op::MeanSqDiffConst { x, target })
    }

    pub fn mean_bce_logits(&mut self, x: Var, target: f64) -> Var {
        let v = kernels::mean_bce_logits_forward(&self.value(x).data, target);
        let mut t = Tensor::scalar(v);
        t.requires_grad = self.requires(x);
        self.push(t, Op::MeanBceLogits { x, target })
    }

    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(NeuralError::ShapeMismatch {
                op: "mean_abs_diff",
                detail: format!("{} vs {}", self.value(a).shape, self.value(b).shape),
            });
        }
        let v = kernels::mean_abs_diff_forward(&self.value(a).data, &self.value(b).data);
        let mut t = Tensor::scalar(v);
        t.requires_grad = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::MeanAbsDiff { a, b }))
    }

    /// Weighted sum of scalar terms.
    pub fn scaled_sum(&mut self, terms: Vec<(Var, f32)>) -> Var {
        let mut acc = 0.0f32;
        let mut requires = false;
        for &(v, w) in &terms {
            acc += self.value(v).item() * w;
            requires |= self.requires(v);
        }
        let mut t = Tensor::scalar(acc);
        t.requires_grad = requires;
        self.push(t, Op::ScaledSum { terms })
    }

    fn acc_grad(&mut self, v: Var, g: &[f32]) {
        if !self.nodes[v.0].t.requires_grad {
            return;
        }
        let slot = self.nodes[v.0].t.ensure_grad();
        debug_assert_eq!(slot.len(), g.len());
        for (dst, src) in slot.iter_mut().zip(g) {
            *dst += src;
        }
    }

    /// Reverse sweep from a scalar loss; fills the grad slot of every node
    /// that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), NeuralError> {
        if self.value(loss).shape.numel() != 1 {
            return Err(NeuralError::ShapeMismatch {
                op: "backward",
                detail: "loss must be a scalar".into(),
            });
        }
        if !self.nodes[loss.0].t.requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].t.ensure_grad()[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].t.requires_grad || self.nodes[i].t.grad.is_none() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let go = self.nodes[i].t.grad.clone().unwrap();
            match &op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xs = self.value(*x).shape;
                    let ws = self.value(*w).shape;
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        &self.value(*x).data,
                        xs.n(),
                        xs.c(),
                        xs.h(),
                        xs.w(),
                        &self.value(*w).data,
                        ws.n(),
                        ws.h(),
                        ws.w(),
                        *stride,
                        *pad,
                        &go,
                    );
                    self.acc_grad(*x, &gx);
                    self.acc_grad(*w, &gw);
                    self.acc_grad(*b, &gb);
                }
                Op::InstanceNorm { x, gain, shift } => {
                    let xs = self.value(*x).shape;
                    let (gx, gg, gs) = kernels::instance_norm_backward(
                        &self.value(*x).data,
                        xs.n(),
                        xs.c(),
                        xs.hw(),
                        &self.value(*gain).data,
                        &go,
                    );
                    self.acc_grad(*x, &gx);
                    self.acc_grad(*gain, &gg);
                    self.acc_grad(*shift, &gs);
                }
                Op::LeakyRelu { x, slope } => {
                    let gx = kernels::leaky_relu_backward(&self.value(*x).data, *slope, &go);
                    self.acc_grad(*x, &gx);
                }
                Op::TanhOut { x } => {
                    let gx = kernels::tanh_backward(&self.nodes[i].t.data, &go);
                    self.acc_grad(*x, &gx);
                }
                Op::AvgDown2x { x } => {
                    let xs = self.value(*x).shape;
                    let gx = kernels::avg_down2x_backward(&go, xs.n() * xs.c(), xs.h(), xs.w());
                    self.acc_grad(*x, &gx);
                }
                Op::NearestUp2x { x } => {
                    let xs = self.value(*x).shape;
                    let gx = kernels::nearest_up2x_backward(&go, xs.n() * xs.c(), xs.h(), xs.w());
                    self.acc_grad(*x, &gx);
                }
                Op::GlobalAvgPool { x } => {
                    let xs = self.value(*x).shape;
                    let gx = kernels::global_avg_pool_backward(&go, xs.n() * xs.c(), xs.hw());
                    self.acc_grad(*x, &gx);
                }
                Op::Linear { x, w, b } => {
                    let xs = self.value(*x).shape;
                    let ws = self.value(*w).shape;
                    let k = xs.numel() / xs.n();
                    let (gx, gw, gb) = kernels::linear_backward(
                        &self.value(*x).data,
                        xs.n(),
                        k,
                        &self.value(*w).data,
                        ws.n(),
                        &go,
                    );
                    self.acc_grad(*x, &gx);
                    self.acc_grad(*w, &gw);
                    self.acc_grad(*b, &gb);
                }
                Op::ConcatC { a, b } => {
                    let (sa, sb) = (self.value(*a).shape, self.value(*b).shape);
                    let (n, hw) = (sa.n(), sa.hw());
                    let (ca, cb) = (sa.c(), sb.c());
                    let mut ga = vec![0.0f32; sa.numel()];
                    let mut gb = vec![0.0f32; sb.numel()];
                    for ni in 0..n {
                        let src = &go[ni * (ca + cb) * hw..(ni + 1) * (ca + cb) * hw];
                        ga[ni * ca * hw..(ni + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
                        gb[ni * cb * hw..(ni + 1) * cb * hw].copy_from_slice(&src[ca * hw..]);
                    }
                    self.acc_grad(*a, &ga);
                    self.acc_grad(*b, &gb);
                }
                Op::Add { a, b } => {
                    self.acc_grad(*a, &go);
                    self.acc_grad(*b, &go);
                }
                Op::AffineScalar { x, mul } => {
                    let gx: Vec<f32> = go.iter().map(|g| g * mul).collect();
                    self.acc_grad(*x, &gx);
                }
                Op::StWarp { x, pert, m_ref, grids, mats } => {
                    let xs = self.value(*x).shape;
                    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
                    let mut gx = vec![0.0f32; xs.numel()];
                    let mut gp = vec![0.0f32; n * 8];
                    for ni in 0..n {
                        let xd = &self.value(*x).data[ni * c * h * w..(ni + 1) * c * h * w];
                        let (gxi, gpi) = kernels::st_warp_backward(
                            xd,
                            c,
                            h,
                            w,
                            &grids[ni],
                            &mats[ni],
                            m_ref,
                            &go[ni * c * h * w..(ni + 1) * c * h * w],
                        );
                        gx[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(&gxi);
                        gp[ni * 8..(ni + 1) * 8].copy_from_slice(&gpi);
                    }
                    self.acc_grad(*x, &gx);
                    self.acc_grad(*pert, &gp);
                }
                Op::MeanAll { x } => {
                    let n = self.value(*x).shape.numel();
                    let g = go[0] / n as f32;
                    self.acc_grad(*x, &vec![g; n]);
                }
                Op::MeanSqDiffConst { x, target } => {
                    let gx = kernels::mean_sq_diff_const_backward(&self.value(*x).data, *target, go[0]);
                    self.acc_grad(*x, &gx);
                }
                Op::MeanBceLogits { x, target } => {
                    let gx = kernels::mean_bce_logits_backward(&self.value(*x).data, *target, go[0]);
                    self.acc_grad(*x, &gx);
                }
                Op::MeanAbsDiff { a, b } => {
                    let (ga, gb) =
                        kernels::mean_abs_diff_backward(&self.value(*a).data, &self.value(*b).data, go[0]);
                    self.acc_grad(*a, &ga);
                    self.acc_grad(*b, &gb);
                }
                Op::ScaledSum { terms } => {
                    for &(v, wt) in terms {
                        self.acc_grad(v, &[go[0] * wt]);
                    }
                }
            }
            self.nodes[i].op = op;
        }
        Ok(())
    }
}

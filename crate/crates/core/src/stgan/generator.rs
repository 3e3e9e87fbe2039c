//! Generator: stride-2 encoder, a bottleneck of warp-then-sharpen blocks,
//! nearest-upsample decoder, tanh head.

use rand_chacha::ChaCha8Rng;

use super::{init_uniform, BindCtx, GeneratorConfig, ParamId, ParamSet};
use crate::geometry::Homography33;
use crate::neuralcore::{NeuralError, Shape, Tape, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;

struct ConvP {
    w: ParamId,
    b: ParamId,
}

struct NormP {
    gain: ParamId,
    shift: ParamId,
}

fn alloc_conv(
    set: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
) -> ConvP {
    let w = set.alloc(
        format!("{name}.w"),
        init_uniform(rng, Shape::nchw(out_c, in_c, k, k), in_c * k * k),
        true,
    );
    let b = set.alloc(format!("{name}.b"), Tensor::zeros(Shape::vec2(1, out_c)), true);
    ConvP { w, b }
}

fn alloc_norm(set: &mut ParamSet, name: &str, c: usize) -> NormP {
    let gain = set.alloc(format!("{name}.gain"), Tensor::from_vec(Shape::vec2(1, c), vec![1.0; c]), true);
    let shift = set.alloc(format!("{name}.shift"), Tensor::zeros(Shape::vec2(1, c)), true);
    NormP { gain, shift }
}

/// One bottleneck block: a localization head predicting a perturbation of
/// the frozen reference transform, the warp itself, then a residual
/// sharpening body. The localization output layer is zero-initialized, so at
/// init the block's effective transform equals the reference exactly.
pub struct StResBlock {
    pub m_ref: Homography33,
    loc_conv1: ConvP,
    loc_conv2: ConvP,
    loc_fc: ConvP,
    body_conv1: ConvP,
    body_norm1: NormP,
    body_conv2: ConvP,
    body_norm2: NormP,
}

impl StResBlock {
    fn new(set: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, c: usize, m_ref: Homography33) -> Self {
        let loc_c = (c / 2).max(4);
        let loc_conv1 = alloc_conv(set, rng, &format!("{name}.loc.conv1"), loc_c, c, 3);
        let loc_conv2 = alloc_conv(set, rng, &format!("{name}.loc.conv2"), loc_c, loc_c, 3);
        // zero-initialized head: the perturbation starts at identity
        let w = set.alloc(format!("{name}.loc.fc.w"), Tensor::zeros(Shape::vec2(8, loc_c)), true);
        let b = set.alloc(format!("{name}.loc.fc.b"), Tensor::zeros(Shape::vec2(1, 8)), true);
        let loc_fc = ConvP { w, b };
        let body_conv1 = alloc_conv(set, rng, &format!("{name}.body.conv1"), c, c, 3);
        let body_norm1 = alloc_norm(set, &format!("{name}.body.norm1"), c);
        let body_conv2 = alloc_conv(set, rng, &format!("{name}.body.conv2"), c, c, 3);
        let body_norm2 = alloc_norm(set, &format!("{name}.body.norm2"), c);
        Self { m_ref, loc_conv1, loc_conv2, loc_fc, body_conv1, body_norm1, body_conv2, body_norm2 }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        ctx: &mut BindCtx,
        x: Var,
    ) -> Result<(Var, [[f32; 3]; 3]), NeuralError> {
        // localization: 2 conv + global pool + linear → 8 raw values
        let w1 = ctx.var(tape, set, self.loc_conv1.w);
        let b1 = ctx.var(tape, set, self.loc_conv1.b);
        let mut loc = tape.conv2d(x, w1, b1, 1, 1)?;
        loc = tape.leaky_relu(loc, LRELU_SLOPE);
        let w2 = ctx.var(tape, set, self.loc_conv2.w);
        let b2 = ctx.var(tape, set, self.loc_conv2.b);
        loc = tape.conv2d(loc, w2, b2, 1, 1)?;
        loc = tape.leaky_relu(loc, LRELU_SLOPE);
        let pooled = tape.global_avg_pool(loc);
        let fw = ctx.var(tape, set, self.loc_fc.w);
        let fb = ctx.var(tape, set, self.loc_fc.b);
        let pert = tape.linear(pooled, fw, fb)?;

        let warped = tape.st_warp(x, pert, &self.m_ref.m)?;
        let m_eff = tape.st_mats(warped).expect("st_warp node carries its matrices")[0];

        // sharpening body: conv–norm–lrelu–conv–norm + skip
        let bw1 = ctx.var(tape, set, self.body_conv1.w);
        let bb1 = ctx.var(tape, set, self.body_conv1.b);
        let mut y = tape.conv2d(warped, bw1, bb1, 1, 1)?;
        let g1 = ctx.var(tape, set, self.body_norm1.gain);
        let s1 = ctx.var(tape, set, self.body_norm1.shift);
        y = tape.instance_norm(y, g1, s1)?;
        y = tape.leaky_relu(y, LRELU_SLOPE);
        let bw2 = ctx.var(tape, set, self.body_conv2.w);
        let bb2 = ctx.var(tape, set, self.body_conv2.b);
        y = tape.conv2d(y, bw2, bb2, 1, 1)?;
        let g2 = ctx.var(tape, set, self.body_norm2.gain);
        let s2 = ctx.var(tape, set, self.body_norm2.shift);
        y = tape.instance_norm(y, g2, s2)?;
        let out = tape.add(warped, y)?;
        Ok((out, m_eff))
    }

    /// Zeroes the sharpening body's conv weights so the block reduces to a
    /// pure warp (instance norm of an all-zero map stays zero).
    pub fn zero_body(&self, set: &mut ParamSet) {
        for id in [self.body_conv1.w, self.body_conv1.b, self.body_conv2.w, self.body_conv2.b] {
            set.tensor_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn param_ids(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        let loc = vec![
            self.loc_conv1.w,
            self.loc_conv1.b,
            self.loc_conv2.w,
            self.loc_conv2.b,
            self.loc_fc.w,
            self.loc_fc.b,
        ];
        let body = vec![
            self.body_conv1.w,
            self.body_conv1.b,
            self.body_norm1.gain,
            self.body_norm1.shift,
            self.body_conv2.w,
            self.body_conv2.b,
            self.body_norm2.gain,
            self.body_norm2.shift,
        ];
        (loc, body)
    }
}

/// What a forward pass actually did, for tests and diagnostics.
pub struct GenTrace {
    /// Effective normalized transform of every bottleneck block (reference
    /// times learned perturbation), in application order.
    pub effective_transforms: Vec<Homography33>,
}

impl GenTrace {
    /// Product of the per-block transforms in application order.
    pub fn composed(&self) -> Homography33 {
        let mut acc = Homography33::identity();
        for h in &self.effective_transforms {
            acc = acc.compose(h);
        }
        acc
    }
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    stem: (ConvP, NormP),
    downs: Vec<(ConvP, NormP)>,
    pub blocks: Vec<StResBlock>,
    ups: Vec<(ConvP, NormP)>,
    head: ConvP,
}

impl Generator {
    /// `m_refs` is the incremental reference chain in normalized feature
    /// coordinates, one entry per bottleneck block, in application order.
    pub fn new(
        set: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        cfg: GeneratorConfig,
        m_refs: Vec<Homography33>,
    ) -> Result<Self, NeuralError> {
        cfg.validate()?;
        if m_refs.len() != cfg.n_st_res {
            return Err(NeuralError::ShapeMismatch {
                op: "generator",
                detail: format!("{} reference transforms for {} blocks", m_refs.len(), cfg.n_st_res),
            });
        }
        let stem_conv = alloc_conv(set, rng, "gen.stem", cfg.channels_at(0), cfg.in_channels, 7);
        let stem_norm = alloc_norm(set, "gen.stem.norm", cfg.channels_at(0));
        let mut downs = Vec::new();
        for k in 0..cfg.n_downsample {
            let (ci, co) = (cfg.channels_at(k), cfg.channels_at(k + 1));
            let conv = alloc_conv(set, rng, &format!("gen.down{k}"), co, ci, 3);
            let norm = alloc_norm(set, &format!("gen.down{k}.norm"), co);
            downs.push((conv, norm));
        }
        let c = cfg.bottleneck_channels();
        let blocks = m_refs
            .into_iter()
            .enumerate()
            .map(|(k, m_ref)| StResBlock::new(set, rng, &format!("gen.st{k}"), c, m_ref))
            .collect();
        let mut ups = Vec::new();
        for k in 0..cfg.n_upsample {
            let ci = cfg.channels_at(cfg.n_downsample - k);
            let co = cfg.channels_at(cfg.n_downsample - k - 1);
            let conv = alloc_conv(set, rng, &format!("gen.up{k}"), co, ci, 3);
            let norm = alloc_norm(set, &format!("gen.up{k}.norm"), co);
            ups.push((conv, norm));
        }
        let head = alloc_conv(set, rng, "gen.head", cfg.out_channels, cfg.channels_at(0), 7);
        Ok(Self { cfg, stem: (stem_conv, stem_norm), downs, blocks, ups, head })
    }

    /// Frontal image in [0, 1] → overhead image in [−1, 1].
    pub fn forward(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        ctx: &mut BindCtx,
        frontal: Var,
    ) -> Result<(Var, GenTrace), NeuralError> {
        let shape = tape.value(frontal).shape;
        if shape.c() != self.cfg.in_channels
            || shape.h() != self.cfg.height
            || shape.w() != self.cfg.width
        {
            return Err(NeuralError::ShapeMismatch {
                op: "generator_forward",
                detail: format!(
                    "input {} vs configured {}x{}x{}",
                    shape, self.cfg.in_channels, self.cfg.height, self.cfg.width
                ),
            });
        }
        // [0,1] → [−1,1]
        let mut x = tape.affine_scalar(frontal, 2.0, -1.0);

        let (stem_conv, stem_norm) = &self.stem;
        let w = ctx.var(tape, set, stem_conv.w);
        let b = ctx.var(tape, set, stem_conv.b);
        x = tape.conv2d(x, w, b, 1, 3)?;
        let g = ctx.var(tape, set, stem_norm.gain);
        let s = ctx.var(tape, set, stem_norm.shift);
        x = tape.instance_norm(x, g, s)?;
        x = tape.leaky_relu(x, LRELU_SLOPE);

        for (conv, norm) in &self.downs {
            let w = ctx.var(tape, set, conv.w);
            let b = ctx.var(tape, set, conv.b);
            x = tape.conv2d(x, w, b, 2, 1)?;
            let g = ctx.var(tape, set, norm.gain);
            let s = ctx.var(tape, set, norm.shift);
            x = tape.instance_norm(x, g, s)?;
            x = tape.leaky_relu(x, LRELU_SLOPE);
        }

        let mut effective = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, m_eff) = block.forward(tape, set, ctx, x)?;
            let mut m64 = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m64[i][j] = m_eff[i][j] as f64;
                }
            }
            effective.push(Homography33::new(m64));
            x = y;
        }

        for (conv, norm) in &self.ups {
            x = tape.nearest_upsample2x(x);
            let w = ctx.var(tape, set, conv.w);
            let b = ctx.var(tape, set, conv.b);
            x = tape.conv2d(x, w, b, 1, 1)?;
            let g = ctx.var(tape, set, norm.gain);
            let s = ctx.var(tape, set, norm.shift);
            x = tape.instance_norm(x, g, s)?;
            x = tape.leaky_relu(x, LRELU_SLOPE);
        }

        let w = ctx.var(tape, set, self.head.w);
        let b = ctx.var(tape, set, self.head.b);
        x = tape.conv2d(x, w, b, 1, 3)?;
        let out = tape.tanh_out(x);
        Ok((out, GenTrace { effective_transforms: effective }))
    }

    /// Parameter groups for gradient-flow checks: encoder, each block's
    /// localization head and body, decoder.
    pub fn param_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups = Vec::new();
        let mut enc = vec![self.stem.0.w, self.stem.0.b, self.stem.1.gain, self.stem.1.shift];
        for (conv, norm) in &self.downs {
            enc.extend([conv.w, conv.b, norm.gain, norm.shift]);
        }
        groups.push(("encoder".to_string(), enc));
        for (k, block) in self.blocks.iter().enumerate() {
            let (loc, body) = block.param_ids();
            groups.push((format!("st{k}.loc"), loc));
            groups.push((format!("st{k}.body"), body));
        }
        let mut dec = Vec::new();
        for (conv, norm) in &self.ups {
            dec.extend([conv.w, conv.b, norm.gain, norm.shift]);
        }
        dec.extend([self.head.w, self.head.b]);
        groups.push(("decoder".to_string(), dec));
        groups
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.param_groups().into_iter().flat_map(|(_, ids)| ids).collect()
    }
}

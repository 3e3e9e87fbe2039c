//! Patch discriminators over an image pyramid, and the frozen feature
//! encoder backing the perceptual loss.

use rand_chacha::ChaCha8Rng;

use super::generator::LRELU_SLOPE;
use super::{init_uniform, BindCtx, ParamId, ParamSet};
use crate::neuralcore::{NeuralError, Shape, Tape, Tensor, Var};

/// One patch discriminator: four stride-2/stride-1 conv layers whose
/// activations feed the feature-matching loss, then a 1-channel logit head.
/// The k-th scale instance sees inputs downsampled (k−1) times.
pub struct Discriminator {
    layers: Vec<DLayer>,
    head_w: ParamId,
    head_b: ParamId,
    ids: Vec<ParamId>,
}

struct DLayer {
    w: ParamId,
    b: ParamId,
    norm: Option<(ParamId, ParamId)>,
    stride: usize,
}

impl Discriminator {
    pub fn new(set: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, in_channels: usize, base: usize) -> Self {
        let plan = [
            (in_channels, base, 2, false),
            (base, base * 2, 2, true),
            (base * 2, base * 4, 2, true),
            (base * 4, base * 4, 1, true),
        ];
        let mut layers = Vec::new();
        let mut ids = Vec::new();
        for (idx, &(ci, co, stride, normed)) in plan.iter().enumerate() {
            let w = set.alloc(
                format!("{name}.l{idx}.w"),
                init_uniform(rng, Shape::nchw(co, ci, 4, 4), ci * 16),
                true,
            );
            let b = set.alloc(format!("{name}.l{idx}.b"), Tensor::zeros(Shape::vec2(1, co)), true);
            ids.extend([w, b]);
            let norm = if normed {
                let gain = set.alloc(
                    format!("{name}.l{idx}.gain"),
                    Tensor::from_vec(Shape::vec2(1, co), vec![1.0; co]),
                    true,
                );
                let shift = set.alloc(format!("{name}.l{idx}.shift"), Tensor::zeros(Shape::vec2(1, co)), true);
                ids.extend([gain, shift]);
                Some((gain, shift))
            } else {
                None
            };
            layers.push(DLayer { w, b, norm, stride });
        }
        let head_w = set.alloc(
            format!("{name}.head.w"),
            init_uniform(rng, Shape::nchw(1, base * 4, 4, 4), base * 4 * 16),
            true,
        );
        let head_b = set.alloc(format!("{name}.head.b"), Tensor::zeros(Shape::vec2(1, 1)), true);
        ids.extend([head_w, head_b]);
        Self { layers, head_w, head_b, ids }
    }

    /// Patch logits plus the four per-layer activations, on the already
    /// concatenated (image ‖ condition) input.
    pub fn forward(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        ctx: &mut BindCtx,
        image: Var,
        condition: Var,
    ) -> Result<(Var, Vec<Var>), NeuralError> {
        let mut x = tape.concat_channels(image, condition)?;
        let mut feats = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = ctx.var(tape, set, layer.w);
            let b = ctx.var(tape, set, layer.b);
            x = tape.conv2d(x, w, b, layer.stride, 1)?;
            if let Some((gain, shift)) = layer.norm {
                let g = ctx.var(tape, set, gain);
                let s = ctx.var(tape, set, shift);
                x = tape.instance_norm(x, g, s)?;
            }
            x = tape.leaky_relu(x, LRELU_SLOPE);
            feats.push(x);
        }
        let w = ctx.var(tape, set, self.head_w);
        let b = ctx.var(tape, set, self.head_b);
        let logits = tape.conv2d(x, w, b, 1, 1)?;
        Ok((logits, feats))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.ids.clone()
    }

    /// Receptive field (extent, stride, left offset) of one patch logit in
    /// input pixels, from the layer stack.
    pub fn logit_receptive_field(&self) -> (usize, usize, isize) {
        let mut extent = 1usize;
        let mut jump = 1usize;
        let mut offset = 0isize;
        let strides: Vec<usize> = self.layers.iter().map(|l| l.stride).chain([1]).collect();
        for s in strides {
            extent += 3 * jump;
            offset -= jump as isize; // pad 1 at every layer
            jump *= s;
        }
        (extent, jump, offset)
    }
}

/// Frozen fixed-seed conv pyramid standing in for a pretrained feature
/// extractor: four stride-2 stages, a tap after each. Parameters are stored
/// like any others but never marked trainable, so no gradient ever reaches
/// them; gradients still flow through to the generated image.
pub struct PerceptualEncoder {
    stages: Vec<(ParamId, ParamId)>,
    ids: Vec<ParamId>,
}

impl PerceptualEncoder {
    pub fn new(set: &mut ParamSet, seed: u64, in_channels: usize) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(in_channels, 8), (8, 16), (16, 32), (32, 64)];
        let mut stages = Vec::new();
        let mut ids = Vec::new();
        for (idx, &(ci, co)) in plan.iter().enumerate() {
            let w = set.alloc(
                format!("percep.s{idx}.w"),
                init_uniform(&mut rng, Shape::nchw(co, ci, 3, 3), ci * 9),
                false,
            );
            let b = set.alloc(format!("percep.s{idx}.b"), Tensor::zeros(Shape::vec2(1, co)), false);
            ids.extend([w, b]);
            stages.push((w, b));
        }
        Self { stages, ids }
    }

    /// Four feature taps, one per stage.
    pub fn forward(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        ctx: &mut BindCtx,
        image: Var,
    ) -> Result<Vec<Var>, NeuralError> {
        let mut x = image;
        let mut taps = Vec::with_capacity(self.stages.len());
        for &(w, b) in &self.stages {
            let wv = ctx.var(tape, set, w);
            let bv = ctx.var(tape, set, b);
            x = tape.conv2d(x, wv, bv, 2, 1)?;
            x = tape.leaky_relu(x, LRELU_SLOPE);
            taps.push(x);
        }
        Ok(taps)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.ids.clone()
    }
}

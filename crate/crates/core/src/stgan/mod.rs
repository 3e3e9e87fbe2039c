//! The incremental spatial transformer GAN: a generator whose bottleneck
//! alternates reference-guided perspective warps with sharpening residual
//! blocks, three patch discriminators over an image pyramid, and the
//! feature-matching / perceptual / adversarial losses that train it.

mod discriminator;
mod generator;
mod losses;

pub use discriminator::{Discriminator, PerceptualEncoder};
pub use generator::{GenTrace, Generator, StResBlock};
pub use losses::{
    loss_d_total, loss_feature_matching, loss_gan_discriminator, loss_gan_generator,
    loss_perceptual_from_taps, loss_total, GanObjective,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::neuralcore::{NeuralError, Shape, Tape, Tensor, Var};

/// Named parameter store shared by every model in a training run. Allocation
/// order is construction order, which fixes the checkpoint layout and the
/// optimizer slot order.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    /// Restores tensors by name; every stored name must exist with the same
    /// shape.
    pub fn load_named(&mut self, stored: Vec<(String, Tensor)>) -> Result<(), NeuralError> {
        for (name, tensor) in stored {
            let entry = self
                .entries
                .iter_mut()
                .find(|e| e.name == name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("unknown parameter `{name}`")))?;
            if entry.tensor.shape != tensor.shape {
                return Err(NeuralError::Checkpoint(format!(
                    "parameter `{name}`: stored shape {} vs model shape {}",
                    tensor.shape, entry.tensor.shape
                )));
            }
            entry.tensor.data = tensor.data;
        }
        Ok(())
    }

    /// Order-stable digest of one parameter tensor, for frozen-weights checks.
    pub fn checksum(&self, id: ParamId) -> u64 {
        let mut acc: u64 = 0xcbf29ce484222325;
        for v in &self.entries[id.0].tensor.data {
            acc ^= v.to_bits() as u64;
            acc = acc.wrapping_mul(0x100000001b3);
        }
        acc
    }
}

/// Tracks which params have been inserted into the current tape so each one
/// appears as a single leaf per step.
#[derive(Clone)]
pub struct BindCtx {
    map: Vec<Option<Var>>,
}

impl BindCtx {
    pub fn new(set: &ParamSet) -> Self {
        Self { map: vec![None; set.len()] }
    }

    pub fn var(&mut self, tape: &mut Tape, set: &ParamSet, id: ParamId) -> Var {
        if let Some(v) = self.map[id.0] {
            return v;
        }
        let mut t = set.tensor(id).clone();
        t.requires_grad = set.is_trainable(id);
        let v = tape.leaf(t);
        self.map[id.0] = Some(v);
        v
    }

    /// Gradient of a bound parameter on this tape, if any was accumulated.
    pub fn grad<'t>(&self, tape: &'t Tape, id: ParamId) -> Option<&'t [f32]> {
        self.map[id.0].and_then(|v| tape.grad(v))
    }
}

/// Centered uniform with fan-in scaling.
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: Shape, fan_in: usize) -> Tensor {
    let a = (1.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel()).map(|_| rng.gen_range(-a..a) as f32).collect();
    Tensor::from_vec(shape, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub height: usize,
    pub n_st_res: usize,
    pub n_downsample: usize,
    pub n_upsample: usize,
    pub base_channels: usize,
    pub max_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            width: 128,
            height: 96,
            n_st_res: 6,
            n_downsample: 4,
            n_upsample: 4,
            base_channels: 16,
            max_channels: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.n_downsample != self.n_upsample {
            return Err(NeuralError::ShapeMismatch {
                op: "generator_config",
                detail: format!("n_downsample {} != n_upsample {}", self.n_downsample, self.n_upsample),
            });
        }
        let div = 1usize << self.n_downsample;
        if self.width % div != 0 || self.height % div != 0 {
            return Err(NeuralError::ShapeMismatch {
                op: "generator_config",
                detail: format!("{}x{} not divisible by 2^{}", self.width, self.height, self.n_downsample),
            });
        }
        if self.n_st_res == 0 || self.base_channels == 0 {
            return Err(NeuralError::ShapeMismatch {
                op: "generator_config",
                detail: "n_st_res and base_channels must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn from_config(cfg: &Config) -> Result<Self, crate::config::ConfigError> {
        let d = Self::default();
        Ok(Self {
            in_channels: cfg.get_usize("stgan.in_channels", d.in_channels)?,
            out_channels: cfg.get_usize("stgan.out_channels", d.out_channels)?,
            width: cfg.get_usize("stgan.width", d.width)?,
            height: cfg.get_usize("stgan.height", d.height)?,
            n_st_res: cfg.get_usize("stgan.n_st_res", d.n_st_res)?,
            n_downsample: cfg.get_usize("stgan.n_downsample", d.n_downsample)?,
            n_upsample: cfg.get_usize("stgan.n_upsample", d.n_upsample)?,
            base_channels: cfg.get_usize("stgan.base_channels", d.base_channels)?,
            max_channels: cfg.get_usize("stgan.max_channels", d.max_channels)?,
        })
    }

    /// Channel count after encoder stage `k` (0 = stem output).
    pub fn channels_at(&self, stage: usize) -> usize {
        (self.base_channels << stage).min(self.max_channels)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels_at(self.n_downsample)
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        let div = 1usize << self.n_downsample;
        (self.height / div, self.width / div)
    }
}

/// Loss trade-off weights and layer counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_vgg: f64,
    pub d_layers: usize,
    pub p_layers: usize,
    pub n_scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_fm: 5.0, lambda_vgg: 2.0, d_layers: 4, p_layers: 4, n_scales: 3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.lambda_fm <= 0.0
            || self.lambda_vgg <= 0.0
            || self.d_layers == 0
            || self.p_layers == 0
            || self.n_scales == 0
        {
            return Err(NeuralError::ShapeMismatch {
                op: "loss_weights",
                detail: "all loss weights and layer counts must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn from_config(cfg: &Config) -> Result<Self, crate::config::ConfigError> {
        let d = Self::default();
        Ok(Self {
            lambda_fm: cfg.get_f64("loss.lambda_fm", d.lambda_fm)?,
            lambda_vgg: cfg.get_f64("loss.lambda_vgg", d.lambda_vgg)?,
            d_layers: cfg.get_usize("loss.d_layers", d.d_layers)?,
            p_layers: cfg.get_usize("loss.p_layers", d.p_layers)?,
            n_scales: cfg.get_usize("loss.n_scales", d.n_scales)?,
        })
    }

    /// Layer coefficients 1/w_i with w_i = 2^(l−i), i = 1..=l.
    pub fn layer_coeffs(l: usize) -> Vec<f64> {
        (1..=l).map(|i| 1.0 / f64::powi(2.0, (l - i) as i32)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_coeffs_follow_the_doubling_scheme() {
        assert_eq!(LossWeights::layer_coeffs(4), vec![0.125, 0.25, 0.5, 1.0]);
        assert_eq!(LossWeights::layer_coeffs(2), vec![0.5, 1.0]);
    }

    #[test]
    fn generator_config_validation() {
        let ok = GeneratorConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.bottleneck_size(), (6, 8));
        assert_eq!(ok.bottleneck_channels(), 64);
        let bad = GeneratorConfig { width: 100, ..ok };
        assert!(bad.validate().is_err());
        let uneven = GeneratorConfig { n_upsample: 3, ..ok };
        assert!(uneven.validate().is_err());
    }

    #[test]
    fn checksum_changes_with_data() {
        let mut set = ParamSet::new();
        let id = set.alloc("w", Tensor::from_vec(Shape::vec2(1, 3), vec![1.0, 2.0, 3.0]), true);
        let before = set.checksum(id);
        set.tensor_mut(id).data[1] = 2.5;
        assert_ne!(before, set.checksum(id));
    }
}

#[cfg(test)]
mod model_tests {
    use super::*;
    use crate::geometry::{decompose_incremental, BevSpec, CameraRig, Homography33};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_rig() -> CameraRig {
        CameraRig {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
            cam_height: 1.5,
            pitch: 0.3,
            roll: 0.0,
            yaw: 0.0,
        }
    }

    fn small_bev() -> BevSpec {
        BevSpec { x_min: 2.0, x_max: 6.8, y_half: 3.2, mpp: 0.1 }
    }

    fn small_gen_cfg(n_st_res: usize) -> GeneratorConfig {
        GeneratorConfig {
            width: 64,
            height: 48,
            n_st_res,
            n_downsample: 2,
            n_upsample: 2,
            base_channels: 8,
            max_channels: 16,
            ..GeneratorConfig::default()
        }
    }

    fn rand_image_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(Shape::nchw(1, c, h, w), data)
    }

    fn build_small(n_st_res: usize) -> (ParamSet, Generator, Vec<Homography33>) {
        let rig = small_rig();
        let bev = small_bev();
        let m_refs = decompose_incremental(&rig, &bev, n_st_res).unwrap();
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gen = Generator::new(&mut set, &mut rng, small_gen_cfg(n_st_res), m_refs.clone()).unwrap();
        (set, gen, m_refs)
    }

    #[test]
    fn init_composed_transform_equals_reference_chain() {
        let (set, gen, m_refs) = build_small(4);
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(&set);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = tape.leaf(rand_image_tensor(&mut rng, 3, 48, 64));
        let (_, trace) = gen.forward(&mut tape, &set, &mut ctx, input).unwrap();
        assert_eq!(trace.effective_transforms.len(), 4);
        // zero-initialized localization heads: every effective transform is
        // its reference, so the compositions agree
        let mut chain = Homography33::identity();
        for m in &m_refs {
            chain = chain.compose(m);
        }
        let dev = trace.composed().max_abs_diff(&chain);
        assert!(dev < 1e-6, "dev {dev}");
        for (eff, reference) in trace.effective_transforms.iter().zip(&m_refs) {
            assert!(eff.max_abs_diff(reference) < 1e-6);
        }
    }

    #[test]
    fn single_block_reduces_to_full_perspective() {
        // the no-increment ablation: one block carries the whole transform
        let (set, gen, m_refs) = build_small(1);
        assert_eq!(m_refs.len(), 1);
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(&set);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = tape.leaf(rand_image_tensor(&mut rng, 3, 48, 64));
        let (out, trace) = gen.forward(&mut tape, &set, &mut ctx, input).unwrap();
        assert_eq!(trace.effective_transforms.len(), 1);
        assert_eq!(tape.value(out).shape, Shape::nchw(1, 3, 48, 64));
        // matches the direct decomposition at a single step
        let direct = decompose_incremental(&small_rig(), &small_bev(), 1).unwrap();
        assert!(trace.effective_transforms[0].max_abs_diff(&direct[0]) < 1e-6);
    }

    #[test]
    fn zeroed_body_makes_a_block_a_pure_warp() {
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m_ref = Homography33::new([[0.9, 0.05, 0.02], [0.01, 0.84, -0.1], [0.02, 0.08, 1.0]]);
        let block = StResBlock::new_for_test(&mut set, &mut rng, "blk", 6, m_ref);
        block.zero_body(&mut set);
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(&set);
        let x = tape.leaf(rand_image_tensor(&mut rng, 6, 10, 12));
        let (out, m_eff) = block.forward_for_test(&mut tape, &set, &mut ctx, x).unwrap();
        // oracle: plain grid sample of the input by the reference matrix
        let mut m32 = [[0.0f32; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m32[i][j] = m_ref.m[i][j] as f32;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((m_eff[i][j] - m32[i][j]).abs() < 1e-6);
            }
        }
        let xv = tape.value(x).data.clone();
        let (expect, _, _) =
            crate::neuralcore::kernels::st_warp_forward(&xv, 6, 10, 12, &[0.0f32; 8], &m_ref.m)
                .unwrap();
        let got = &tape.value(out).data;
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn generator_shape_contract_at_desk_scale() {
        let rig = CameraRig {
            fx: 90.0,
            fy: 90.0,
            cx: 63.5,
            cy: 47.5,
            width: 128,
            height: 96,
            cam_height: 1.5,
            pitch: 0.25,
            roll: 0.0,
            yaw: 0.0,
        };
        let bev = BevSpec { x_min: 3.0, x_max: 12.6, y_half: 6.4, mpp: 0.1 };
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.bottleneck_size(), (6, 8));
        let m_refs = decompose_incremental(&rig, &bev, cfg.n_st_res).unwrap();
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gen = Generator::new(&mut set, &mut rng, cfg, m_refs).unwrap();
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(&set);
        let input = tape.leaf(rand_image_tensor(&mut rng, 3, 96, 128));
        let (out, trace) = gen.forward(&mut tape, &set, &mut ctx, input).unwrap();
        // output spatial size equals input spatial size; values in [−1, 1]
        assert_eq!(tape.value(out).shape, Shape::nchw(1, 3, 96, 128));
        assert_eq!(trace.effective_transforms.len(), 6);
        assert!(tape.value(out).data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn discriminator_is_deterministic_and_shrinks_by_scale() {
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Discriminator::new(&mut set, &mut rng, "d", 6, 8);
        let run = |set: &ParamSet| -> Vec<f32> {
            let mut tape = Tape::new();
            let mut ctx = BindCtx::new(set);
            let mut r2 = ChaCha8Rng::seed_from_u64(10);
            let img = tape.leaf(rand_image_tensor(&mut r2, 3, 96, 128));
            let cond = tape.leaf(rand_image_tensor(&mut r2, 3, 96, 128));
            // scale-3 entry: two pyramid halvings first
            let i3a = tape.avg_downsample2x(img);
            let i3 = tape.avg_downsample2x(i3a);
            let c3a = tape.avg_downsample2x(cond);
            let c3 = tape.avg_downsample2x(c3a);
            assert_eq!(tape.value(i3).shape, Shape::nchw(1, 3, 24, 32));
            let (logits, feats) = d.forward(&mut tape, set, &mut ctx, i3, c3).unwrap();
            assert_eq!(feats.len(), 4);
            tape.value(logits).data.clone()
        };
        let a = run(&set);
        let b = run(&set);
        assert_eq!(a, b);
    }

    #[test]
    fn patch_logit_receptive_field_matches_probe() {
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = Discriminator::new(&mut set, &mut rng, "d", 6, 8);
        let (extent, stride, offset) = d.logit_receptive_field();
        assert_eq!((extent, stride, offset), (70, 8, -23));

        let (h, w) = (48usize, 64usize);
        let mut base_rng = ChaCha8Rng::seed_from_u64(14);
        let image = rand_image_tensor(&mut base_rng, 3, h, w);
        let cond = rand_image_tensor(&mut base_rng, 3, h, w);
        let logits_for = |img: &Tensor| -> (Vec<f32>, Shape) {
            let mut tape = Tape::new();
            let mut ctx = BindCtx::new(&set);
            let iv = tape.leaf(img.clone());
            let cv = tape.leaf(cond.clone());
            let (lg, _) = d.forward(&mut tape, &set, &mut ctx, iv, cv).unwrap();
            (tape.value(lg).data.clone(), tape.value(lg).shape)
        };
        let (base, lshape) = logits_for(&image);
        for &(py, px) in &[(10usize, 17usize), (30, 50), (44, 5)] {
            let mut pert = image.clone();
            pert.data[(py * w + px)] += 0.5; // channel 0
            let (after, _) = logits_for(&pert);
            for ly in 0..lshape.h() {
                for lx in 0..lshape.w() {
                    let changed =
                        (base[ly * lshape.w() + lx] - after[ly * lshape.w() + lx]).abs() > 0.0;
                    let x0 = lx as isize * stride as isize + offset;
                    let y0 = ly as isize * stride as isize + offset;
                    let in_window = (px as isize) >= x0
                        && (px as isize) < x0 + extent as isize
                        && (py as isize) >= y0
                        && (py as isize) < y0 + extent as isize;
                    if changed {
                        assert!(in_window, "logit ({ly},{lx}) outside window changed for ({py},{px})");
                    }
                }
            }
            // the logit centered nearest the perturbed pixel must respond
            let half = (extent / 2) as isize;
            let cx = ((px as isize - offset - half) as f64 / stride as f64).round() as isize;
            let cy = ((py as isize - offset - half) as f64 / stride as f64).round() as isize;
            let cx = cx.clamp(0, lshape.w() as isize - 1) as usize;
            let cy = cy.clamp(0, lshape.h() as isize - 1) as usize;
            assert!(
                (base[cy * lshape.w() + cx] - after[cy * lshape.w() + cx]).abs() > 0.0,
                "central logit did not react for pixel ({py},{px})"
            );
        }
    }
}

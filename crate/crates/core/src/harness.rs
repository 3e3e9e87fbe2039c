//! Training loop, evaluation metrics, checkpoint lifecycle.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::datasetforge::{load_manifest, load_png, ForgeError, ManifestMeta, SceneRecord};
use crate::geometry::{decompose_incremental, BevSpec, CameraRig, GeometryError, Homography33};
use crate::neuralcore::{
    load_checkpoint, save_checkpoint, AdamState, CheckpointMeta, NeuralError, Shape, Tape, Tensor,
};
use crate::stgan::{
    loss_d_total, loss_feature_matching, loss_gan_discriminator, loss_gan_generator,
    loss_perceptual_from_taps, loss_total, BindCtx, Discriminator, GanObjective, GenTrace,
    Generator, GeneratorConfig, LossWeights, ParamId, ParamSet, PerceptualEncoder,
};
use crate::warp::ImageBuffer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("non-finite loss at iteration {iter}")]
    NanLoss { iter: usize },
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reference-scale settings; the desk run prints how it deviates from them.
const REFERENCE_EPOCHS: usize = 200;
const REFERENCE_LR: f64 = 0.0002;
const REFERENCE_BATCH: usize = 1;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_iters: Option<usize>,
    pub ckpt_every: usize,
    pub eval_every: usize,
    pub weights: LossWeights,
    pub objective: GanObjective,
    pub n_st_res: usize,
    pub n_downsample: usize,
    pub n_upsample: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub d_base_channels: usize,
    pub perceptual_seed: u64,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            batch_size: 1,
            epochs: 20,
            seed: 0,
            max_iters: None,
            ckpt_every: 1000,
            eval_every: 250,
            weights: LossWeights::default(),
            objective: GanObjective::LeastSquares,
            n_st_res: 6,
            n_downsample: 4,
            n_upsample: 4,
            base_channels: 16,
            max_channels: 64,
            d_base_channels: 16,
            perceptual_seed: 1000,
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, HarnessError> {
        let d = Self::default();
        let objective = {
            let raw = cfg.get_str("stgan.gan_objective", "least_squares");
            GanObjective::parse(raw)
                .ok_or_else(|| HarnessError::BadConfig(format!("unknown gan_objective `{raw}`")))?
        };
        let max_iters = cfg.get_usize("train.max_iters", 0)?;
        let out = Self {
            lr: cfg.get_f64("train.lr", d.lr)?,
            batch_size: cfg.get_usize("train.batch_size", d.batch_size)?,
            epochs: cfg.get_usize("train.epochs", d.epochs)?,
            seed: cfg.get_u64("train.seed", d.seed)?,
            max_iters: if max_iters == 0 { None } else { Some(max_iters) },
            ckpt_every: cfg.get_usize("train.ckpt_every", d.ckpt_every)?,
            eval_every: cfg.get_usize("train.eval_every", d.eval_every)?,
            weights: LossWeights::from_config(cfg)?,
            objective,
            n_st_res: cfg.get_usize("stgan.n_st_res", d.n_st_res)?,
            n_downsample: cfg.get_usize("stgan.n_downsample", d.n_downsample)?,
            n_upsample: cfg.get_usize("stgan.n_upsample", d.n_upsample)?,
            base_channels: cfg.get_usize("stgan.base_channels", d.base_channels)?,
            max_channels: cfg.get_usize("stgan.max_channels", d.max_channels)?,
            d_base_channels: cfg.get_usize("stgan.d_base_channels", d.d_base_channels)?,
            perceptual_seed: cfg.get_u64("stgan.perceptual_seed", d.perceptual_seed)?,
            manifest: PathBuf::from(cfg.get_str("train.manifest", "")),
            out_dir: PathBuf::from(cfg.get_str("train.out", "train_out")),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.lr > 0.0) {
            return Err(HarnessError::BadConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::BadConfig("batch_size must be at least 1".into()));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Everything needed to rebuild the models; stored in every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub gen: GeneratorConfig,
    pub m_refs: Vec<Homography33>,
    pub weights: LossWeights,
    pub objective: GanObjective,
    pub d_base_channels: usize,
    pub perceptual_seed: u64,
    pub rig: CameraRig,
    pub bev: BevSpec,
}

pub struct Models {
    pub set: ParamSet,
    pub gen: Generator,
    pub discs: Vec<Discriminator>,
    pub percep: PerceptualEncoder,
    pub spec: ModelSpec,
}

impl Models {
    /// Fresh initialization from the spec; `seed` drives all weight draws.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, HarnessError> {
        spec.gen.validate()?;
        spec.weights.validate()?;
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let gen = Generator::new(&mut set, &mut rng, spec.gen, spec.m_refs.clone())?;
        let mut discs = Vec::new();
        for k in 0..spec.weights.n_scales {
            let d_in = spec.gen.out_channels * 2; // candidate ‖ conditioning view
            discs.push(Discriminator::new(&mut set, &mut rng, &format!("disc{k}"), d_in, spec.d_base_channels));
        }
        let percep = PerceptualEncoder::new(&mut set, spec.perceptual_seed, spec.gen.out_channels);
        Ok(Self { set, gen, discs, percep, spec })
    }

    pub fn from_checkpoint(path: &Path) -> Result<(Self, CheckpointMeta), HarnessError> {
        let (meta, stored) = load_checkpoint(path)?;
        let spec: ModelSpec = serde_json::from_value(meta.config.clone())
            .map_err(|e| HarnessError::BadConfig(format!("checkpoint config: {e}")))?;
        let mut models = Self::build(spec, meta.seed)?;
        models.set.load_named(stored)?;
        Ok((models, meta))
    }

    pub fn save(&self, path: &Path, seed: u64, step: u64) -> Result<(), HarnessError> {
        let meta = CheckpointMeta {
            seed,
            step,
            config: serde_json::to_value(&self.spec)
                .map_err(|e| HarnessError::BadConfig(format!("spec encode: {e}")))?,
        };
        let named: Vec<(String, &Tensor)> = self
            .set
            .iter_named()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        save_checkpoint(path, &meta, &named)?;
        Ok(())
    }

    /// Single forward pass on one frontal image in [0, 1]; returns the
    /// overhead estimate in [0, 1].
    pub fn generate(&self, frontal: &ImageBuffer) -> Result<(ImageBuffer, GenTrace), HarnessError> {
        let input = image_to_tensor(frontal);
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(&self.set);
        let v = tape.leaf(input);
        let (out, trace) = self.gen.forward(&mut tape, &self.set, &mut ctx, v)?;
        let rescaled = tape.affine_scalar(out, 0.5, 0.5);
        Ok((tensor_to_image(tape.value(rescaled)), trace))
    }
}

pub fn image_to_tensor(img: &ImageBuffer) -> Tensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let chw = crate::neuralcore::kernels::hwc_to_chw(&img.data, c, h, w);
    Tensor::from_vec(Shape::nchw(1, c, h, w), chw)
}

pub fn tensor_to_image(t: &Tensor) -> ImageBuffer {
    let s = t.shape;
    assert_eq!(s.n(), 1, "one image per tensor");
    let hwc = crate::neuralcore::kernels::chw_to_hwc(&t.data, s.c(), s.h(), s.w());
    ImageBuffer::from_data(s.h(), s.w(), s.c(), hwc)
}

/// One training sample, all images in [0, 1].
pub struct TrainSample {
    pub frontal: Tensor,
    pub label: Tensor,
    pub ipm: Tensor,
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_gan_g: f64,
    pub loss_fm: f64,
    pub loss_vgg: f64,
    /// L2 gradient norm per named parameter group, generator then
    /// discriminators.
    pub group_grad_norms: Vec<(String, f64)>,
}

pub struct Trainer {
    pub models: Models,
    adam_g: AdamState,
    adam_d: AdamState,
    g_ids: Vec<ParamId>,
    d_ids: Vec<ParamId>,
    pub iter: usize,
}

impl Trainer {
    pub fn new(models: Models, lr: f64) -> Self {
        let g_ids = models.gen.param_ids();
        let d_ids: Vec<ParamId> = models.discs.iter().flat_map(|d| d.param_ids()).collect();
        let g_sizes: Vec<usize> = g_ids.iter().map(|&id| models.set.tensor(id).shape.numel()).collect();
        let d_sizes: Vec<usize> = d_ids.iter().map(|&id| models.set.tensor(id).shape.numel()).collect();
        Self {
            adam_g: AdamState::new(lr, &g_sizes),
            adam_d: AdamState::new(lr, &d_sizes),
            g_ids,
            d_ids,
            models,
            iter: 0,
        }
    }

    /// One alternation: a discriminator step over all scales on the detached
    /// generator output, then a generator step against the updated
    /// discriminators.
    pub fn step(&mut self, sample: &TrainSample) -> Result<StepStats, HarnessError> {
        let set = &self.models.set;
        let weights = self.models.spec.weights;
        let objective = self.models.spec.objective;
        let n_scales = weights.n_scales;

        // Generator forward (shared by both phases).
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(set);
        let frontal = tape.leaf(sample.frontal.clone());
        let (fake, _trace) = self.models.gen.forward(&mut tape, set, &mut ctx, frontal)?;
        let fake_detached = tape.value(fake).clone();

        // Discriminator phase on its own tape.
        let loss_d_value;
        {
            let mut tb = Tape::new();
            let mut cb = BindCtx::new(set);
            let fk = tb.leaf(fake_detached);
            let lb = tb.leaf(sample.label.clone());
            let lb = tb.affine_scalar(lb, 2.0, -1.0);
            let cd = tb.leaf(sample.ipm.clone());
            let cd = tb.affine_scalar(cd, 2.0, -1.0);
            let mut gan_d = Vec::with_capacity(n_scales);
            let (mut pf, mut pl, mut pc) = (fk, lb, cd);
            for k in 0..n_scales {
                if k > 0 {
                    pf = tb.avg_downsample2x(pf);
                    pl = tb.avg_downsample2x(pl);
                    pc = tb.avg_downsample2x(pc);
                }
                let (logits_real, _) = self.models.discs[k].forward(&mut tb, set, &mut cb, pl, pc)?;
                let (logits_fake, _) = self.models.discs[k].forward(&mut tb, set, &mut cb, pf, pc)?;
                gan_d.push(loss_gan_discriminator(&mut tb, logits_real, logits_fake, objective));
            }
            let loss_d = loss_d_total(&mut tb, &gan_d);
            loss_d_value = tb.value(loss_d).item() as f64;
            if !loss_d_value.is_finite() {
                return Err(HarnessError::NanLoss { iter: self.iter });
            }
            tb.backward(loss_d)?;
            let factors = self.adam_d.begin_step();
            for (slot, &id) in self.d_ids.iter().enumerate() {
                let grad = cb.grad(&tb, id).map(|g| g.to_vec());
                self.adam_d.update_slot(
                    slot,
                    factors,
                    self.models.set.tensor_mut(id),
                    grad.as_deref(),
                );
            }
        }

        // Generator phase continues the first tape; discriminator params are
        // bound now, after their update.
        let set = &self.models.set;
        let lb = tape.leaf(sample.label.clone());
        let lb = tape.affine_scalar(lb, 2.0, -1.0);
        let cd = tape.leaf(sample.ipm.clone());
        let cd = tape.affine_scalar(cd, 2.0, -1.0);
        let mut gan_g = Vec::with_capacity(n_scales);
        let mut fm = Vec::with_capacity(n_scales);
        let (mut pf, mut pl, mut pc) = (fake, lb, cd);
        for k in 0..n_scales {
            if k > 0 {
                pf = tape.avg_downsample2x(pf);
                pl = tape.avg_downsample2x(pl);
                pc = tape.avg_downsample2x(pc);
            }
            let (_, feats_label) = self.models.discs[k].forward(&mut tape, set, &mut ctx, pl, pc)?;
            let (logits_fake, feats_fake) =
                self.models.discs[k].forward(&mut tape, set, &mut ctx, pf, pc)?;
            gan_g.push(loss_gan_generator(&mut tape, logits_fake, objective));
            fm.push(loss_feature_matching(&mut tape, &feats_label, &feats_fake, weights.d_layers)?);
        }
        // perceptual terms compare at full resolution
        let taps_label = self.models.percep.forward(&mut tape, set, &mut ctx, lb)?;
        let taps_fake = self.models.percep.forward(&mut tape, set, &mut ctx, fake)?;
        let vgg = loss_perceptual_from_taps(&mut tape, &taps_label, &taps_fake, weights.p_layers)?;
        let loss_g = loss_total(&mut tape, &gan_g, &fm, vgg, &weights);

        let gan_g_sum: f64 = gan_g.iter().map(|&v| tape.value(v).item() as f64).sum();
        let fm_sum: f64 = fm.iter().map(|&v| tape.value(v).item() as f64).sum();
        let vgg_value = tape.value(vgg).item() as f64;
        if !tape.value(loss_g).item().is_finite() {
            return Err(HarnessError::NanLoss { iter: self.iter });
        }
        tape.backward(loss_g)?;

        let mut group_grad_norms = Vec::new();
        for (name, ids) in self.models.gen.param_groups() {
            let mut acc = 0.0f64;
            for id in ids {
                if let Some(g) = ctx.grad(&tape, id) {
                    acc += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
                }
            }
            group_grad_norms.push((format!("gen.{name}"), acc.sqrt()));
        }

        let factors = self.adam_g.begin_step();
        for (slot, &id) in self.g_ids.iter().enumerate() {
            let grad = ctx.grad(&tape, id).map(|g| g.to_vec());
            self.adam_g.update_slot(slot, factors, self.models.set.tensor_mut(id), grad.as_deref());
        }

        self.iter += 1;
        Ok(StepStats {
            loss_g: gan_g_sum + weights.lambda_fm * fm_sum + weights.lambda_vgg * vgg_value,
            loss_d: loss_d_value,
            loss_gan_g: gan_g_sum,
            loss_fm: fm_sum,
            loss_vgg: vgg_value,
            group_grad_norms,
        })
    }

    /// Gradient norms of the discriminator groups from one extra
    /// discriminator-side backward, without touching any parameters.
    pub fn disc_grad_norms(&self, sample: &TrainSample) -> Result<Vec<(String, f64)>, HarnessError> {
        let set = &self.models.set;
        let objective = self.models.spec.objective;
        let mut tape = Tape::new();
        let mut ctx = BindCtx::new(set);
        let frontal = tape.leaf(sample.frontal.clone());
        let (fake, _) = self.models.gen.forward(&mut tape, set, &mut ctx, frontal)?;
        let lb = tape.leaf(sample.label.clone());
        let lb = tape.affine_scalar(lb, 2.0, -1.0);
        let cd = tape.leaf(sample.ipm.clone());
        let cd = tape.affine_scalar(cd, 2.0, -1.0);
        let mut gan_d = Vec::new();
        let (mut pf, mut pl, mut pc) = (fake, lb, cd);
        for k in 0..self.models.spec.weights.n_scales {
            if k > 0 {
                pf = tape.avg_downsample2x(pf);
                pl = tape.avg_downsample2x(pl);
                pc = tape.avg_downsample2x(pc);
            }
            let (lr_, _) = self.models.discs[k].forward(&mut tape, set, &mut ctx, pl, pc)?;
            let (lf_, _) = self.models.discs[k].forward(&mut tape, set, &mut ctx, pf, pc)?;
            gan_d.push(loss_gan_discriminator(&mut tape, lr_, lf_, objective));
        }
        let loss_d = loss_d_total(&mut tape, &gan_d);
        tape.backward(loss_d)?;
        let mut out = Vec::new();
        for (k, disc) in self.models.discs.iter().enumerate() {
            let mut acc = 0.0f64;
            for id in disc.param_ids() {
                if let Some(g) = ctx.grad(&tape, id) {
                    acc += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
                }
            }
            out.push((format!("disc{k}"), acc.sqrt()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Held,
    All,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "held" | "holdout" | "test" => Some(Self::Held),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OccludedMetrics {
    pub gen_l1: f64,
    pub baseline_l1: f64,
}

#[derive(Debug, Clone)]
pub struct SceneMetrics {
    pub index: usize,
    pub l1: f64,
    pub psnr: f64,
    pub occluded: Option<OccludedMetrics>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub scenes: Vec<SceneMetrics>,
    pub mean_l1: f64,
    pub mean_psnr: f64,
}

pub fn l1_distance(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    crate::warp::mean_abs_diff(a, b)
}

/// PSNR with equal images reported as the 99 dB cap.
pub fn psnr_capped(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    crate::warp::psnr(a, b)
}

fn masked_l1(a: &ImageBuffer, b: &ImageBuffer, mask: &ImageBuffer) -> f64 {
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for py in 0..a.height {
        for px in 0..a.width {
            if mask.at(py, px, 0) > 0.5 {
                for c in 0..a.channels {
                    acc += (a.at(py, px, c) - b.at(py, px, c)).abs() as f64;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

fn select_scenes<'a>(
    meta: &ManifestMeta,
    scenes: &'a [SceneRecord],
    split: Split,
) -> Vec<&'a SceneRecord> {
    scenes
        .iter()
        .filter(|s| match split {
            Split::Train => s.index < meta.holdout_from,
            Split::Held => s.index >= meta.holdout_from,
            Split::All => true,
        })
        .collect()
}

/// Runs the generator over a split and scores it against the clean overhead
/// truth; object-bearing scenes also get occluded-region comparisons against
/// the plain homography view.
pub fn evaluate_models(
    models: &Models,
    manifest: &Path,
    split: Split,
) -> Result<EvalReport, HarnessError> {
    let (meta, scenes) = load_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let selected = select_scenes(&meta, &scenes, split);
    let mut out = Vec::with_capacity(selected.len());
    let mut sum_l1 = 0.0f64;
    let mut sum_psnr = 0.0f64;
    for rec in &selected {
        let frontal = load_png(&root.join(&rec.frames[0]))?;
        let truth = load_png(&root.join(&rec.truth))?;
        let (generated, _) = models.generate(&frontal)?;
        let l1 = l1_distance(&generated, &truth);
        let psnr = psnr_capped(&generated, &truth);
        let occluded = match &rec.occlusion {
            Some(p) => {
                let mask = load_png(&root.join(p))?;
                let ipm = load_png(&root.join(&rec.ipm))?;
                Some(OccludedMetrics {
                    gen_l1: masked_l1(&generated, &truth, &mask),
                    baseline_l1: masked_l1(&ipm, &truth, &mask),
                })
            }
            None => None,
        };
        sum_l1 += l1;
        sum_psnr += psnr;
        out.push(SceneMetrics { index: rec.index, l1, psnr, occluded });
    }
    let n = out.len().max(1) as f64;
    Ok(EvalReport { scenes: out, mean_l1: sum_l1 / n, mean_psnr: sum_psnr / n })
}

pub fn evaluate(checkpoint: &Path, manifest: &Path, split: Split) -> Result<EvalReport, HarnessError> {
    let (models, _) = Models::from_checkpoint(checkpoint)?;
    evaluate_models(&models, manifest, split)
}

#[derive(Debug)]
pub struct InferReport {
    pub latency_ms: f64,
    pub out_path: PathBuf,
}

pub fn infer(checkpoint: &Path, input: &Path, out: &Path) -> Result<InferReport, HarnessError> {
    let (models, _) = Models::from_checkpoint(checkpoint)?;
    let frontal = load_png(input)?;
    let start = std::time::Instant::now();
    let (generated, _) = models.generate(&frontal)?;
    let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
    crate::datasetforge::save_png(out, &generated)?;
    Ok(InferReport { latency_ms, out_path: out.to_path_buf() })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub iterations: usize,
    pub l1_at_start: f64,
    pub l1_at_end: f64,
}

fn load_sample(root: &Path, rec: &SceneRecord) -> Result<TrainSample, HarnessError> {
    Ok(TrainSample {
        frontal: image_to_tensor(&load_png(&root.join(&rec.frames[0]))?),
        label: image_to_tensor(&load_png(&root.join(&rec.label))?),
        ipm: image_to_tensor(&load_png(&root.join(&rec.ipm))?),
    })
}

fn batch_samples(samples: &[&TrainSample]) -> TrainSample {
    let cat = |pick: fn(&TrainSample) -> &Tensor| -> Tensor {
        let first = pick(samples[0]);
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * samples.len());
        for sm in samples {
            data.extend_from_slice(&pick(sm).data);
        }
        Tensor::from_vec(Shape::nchw(samples.len() * s.n(), s.c(), s.h(), s.w()), data)
    };
    TrainSample { frontal: cat(|s| &s.frontal), label: cat(|s| &s.label), ipm: cat(|s| &s.ipm) }
}

fn print_scale_notes(cfg: &TrainConfig, meta: &ManifestMeta) {
    println!("training configuration (deviations from reference-scale defaults shown):");
    if cfg.lr != REFERENCE_LR {
        println!("  lr = {} (reference {})", cfg.lr, REFERENCE_LR);
    }
    if cfg.batch_size != REFERENCE_BATCH {
        println!("  batch_size = {} (reference {})", cfg.batch_size, REFERENCE_BATCH);
    }
    if cfg.epochs != REFERENCE_EPOCHS {
        println!("  epochs = {} (reference {})", cfg.epochs, REFERENCE_EPOCHS);
    }
    if let Some(m) = cfg.max_iters {
        println!("  max_iters = {m}");
    }
    println!(
        "  desk-scale raster {}x{} at base_channels {} (reference trains at full camera scale)",
        meta.bev.width_px(),
        meta.bev.height_px(),
        cfg.base_channels
    );
}

/// Full training run: alternating discriminator/generator updates over the
/// train split, per-iteration loss logging, periodic held-out evaluation and
/// checkpoints. Deterministic for a fixed seed.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let (meta, scenes) = load_manifest(&cfg.manifest)?;
    if meta.rig.width != meta.bev.width_px() || meta.rig.height != meta.bev.height_px() {
        return Err(HarnessError::BadConfig(format!(
            "generator needs matching rasters: camera {}x{} vs overhead {}x{}",
            meta.rig.width,
            meta.rig.height,
            meta.bev.width_px(),
            meta.bev.height_px()
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let root = cfg.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();

    let m_refs = decompose_incremental(&meta.rig, &meta.bev, cfg.n_st_res)?;
    let gen_cfg = GeneratorConfig {
        in_channels: 3,
        out_channels: 3,
        width: meta.bev.width_px(),
        height: meta.bev.height_px(),
        n_st_res: cfg.n_st_res,
        n_downsample: cfg.n_downsample,
        n_upsample: cfg.n_upsample,
        base_channels: cfg.base_channels,
        max_channels: cfg.max_channels,
    };
    let spec = ModelSpec {
        gen: gen_cfg,
        m_refs,
        weights: cfg.weights,
        objective: cfg.objective,
        d_base_channels: cfg.d_base_channels,
        perceptual_seed: cfg.perceptual_seed,
        rig: meta.rig,
        bev: meta.bev,
    };
    let models = Models::build(spec, cfg.seed)?;
    let mut trainer = Trainer::new(models, cfg.lr);
    print_scale_notes(cfg, &meta);

    let train_recs = select_scenes(&meta, &scenes, Split::Train);
    if train_recs.is_empty() {
        return Err(HarnessError::BadConfig("training split is empty".into()));
    }
    let samples: Vec<TrainSample> = train_recs
        .iter()
        .map(|rec| load_sample(&root, rec))
        .collect::<Result<_, _>>()?;

    let metrics_csv = cfg.out_dir.join("metrics.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&metrics_csv)?);
    writeln!(csv, "iter,loss_g,loss_d,loss_fm,loss_vgg,l1_eval")?;

    let eval_now = |trainer: &Trainer| -> Result<f64, HarnessError> {
        Ok(evaluate_models(&trainer.models, &cfg.manifest, Split::Held)?.mean_l1)
    };
    let l1_at_start = eval_now(&trainer)?;
    let mut last_eval = l1_at_start;

    let total_budget = cfg.max_iters.unwrap_or(cfg.epochs * samples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7777);
    'epochs: for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_refs: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = if batch_refs.len() == 1 {
                None
            } else {
                Some(batch_samples(&batch_refs))
            };
            let stats = match &batch {
                Some(b) => trainer.step(b)?,
                None => trainer.step(batch_refs[0])?,
            };
            let it = trainer.iter;
            if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
                last_eval = eval_now(&trainer)?;
            }
            writeln!(
                csv,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                it, stats.loss_g, stats.loss_d, stats.loss_fm, stats.loss_vgg, last_eval
            )?;
            if cfg.ckpt_every > 0 && it % cfg.ckpt_every == 0 {
                let path = cfg.out_dir.join(format!("ckpt_{it:06}.bin"));
                trainer.models.save(&path, cfg.seed, it as u64)?;
            }
            if it >= total_budget {
                break 'epochs;
            }
        }
    }
    csv.flush()?;

    let final_checkpoint = cfg.out_dir.join("final.bin");
    trainer.models.save(&final_checkpoint, cfg.seed, trainer.iter as u64)?;
    let l1_at_end = eval_now(&trainer)?;

    Ok(TrainOutcome {
        final_checkpoint,
        metrics_csv,
        iterations: trainer.iter,
        l1_at_start,
        l1_at_end,
    })
}

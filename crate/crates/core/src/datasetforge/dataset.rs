//! Dataset generation: randomized scenes, rendered sequences, stitched
//! labels, overhead truth, and a JSON-lines manifest tying them together.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_bev_truth, render_occlusion_mask, render_scene};
use super::stitch::stitch_labels;
use super::{io, BoxObject, ForgeError, IlluminationProfile, Overexposure, SceneSpec, SequenceFrame};

use crate::config::Config;
use crate::geometry::{derive_ground_homography, BevSpec, CameraRig, PosePlanar};
use crate::warp::warp_image;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub frames_per_scene: usize,
    pub frame_spacing: f64,
    pub trust_depth: f64,
    pub holdout_frac: f64,
    pub imperfect: ImperfectionConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenes: 200,
            frames_per_scene: 8,
            frame_spacing: 2.0,
            trust_depth: 6.0,
            holdout_frac: 0.2,
            imperfect: ImperfectionConfig::default(),
        }
    }
}

/// Probabilities and ranges for the label imperfections injected per scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImperfectionConfig {
    pub p_objects: f64,
    pub max_objects: usize,
    pub p_illum: f64,
    pub gain_jitter: f64,
    pub offset_jitter: f64,
    pub p_overexposure: f64,
    pub overexposure_boost: f64,
    pub p_slope: f64,
    pub max_slope_deg: f64,
    pub pose_yaw_noise_deg: f64,
}

impl Default for ImperfectionConfig {
    fn default() -> Self {
        Self {
            p_objects: 0.55,
            max_objects: 2,
            p_illum: 0.7,
            gain_jitter: 0.22,
            offset_jitter: 0.07,
            p_overexposure: 0.25,
            overexposure_boost: 0.5,
            p_slope: 0.25,
            max_slope_deg: 2.0,
            pose_yaw_noise_deg: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, crate::config::ConfigError> {
        let d = Self::default();
        let di = ImperfectionConfig::default();
        Ok(Self {
            n_scenes: cfg.get_usize("synth.n_scenes", d.n_scenes)?,
            frames_per_scene: cfg.get_usize("synth.frames_per_scene", d.frames_per_scene)?,
            frame_spacing: cfg.get_f64("synth.frame_spacing", d.frame_spacing)?,
            trust_depth: cfg.get_f64("synth.trust_depth", d.trust_depth)?,
            holdout_frac: cfg.get_f64("synth.holdout_frac", d.holdout_frac)?,
            imperfect: ImperfectionConfig {
                p_objects: cfg.get_f64("synth.p_objects", di.p_objects)?,
                max_objects: cfg.get_usize("synth.max_objects", di.max_objects)?,
                p_illum: cfg.get_f64("synth.p_illum", di.p_illum)?,
                gain_jitter: cfg.get_f64("synth.gain_jitter", di.gain_jitter)?,
                offset_jitter: cfg.get_f64("synth.offset_jitter", di.offset_jitter)?,
                p_overexposure: cfg.get_f64("synth.p_overexposure", di.p_overexposure)?,
                overexposure_boost: cfg.get_f64("synth.overexposure_boost", di.overexposure_boost)?,
                p_slope: cfg.get_f64("synth.p_slope", di.p_slope)?,
                max_slope_deg: cfg.get_f64("synth.max_slope_deg", di.max_slope_deg)?,
                pose_yaw_noise_deg: cfg.get_f64("synth.pose_yaw_noise_deg", di.pose_yaw_noise_deg)?,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestLine {
    Meta(ManifestMeta),
    Scene(SceneRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub version: u32,
    pub seed: u64,
    pub rig: CameraRig,
    pub bev: BevSpec,
    pub trust_depth: f64,
    pub n_scenes: usize,
    /// scene indices at and beyond this are the held-out split
    pub holdout_from: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub stream: u64,
    pub dir: String,
    pub frames: Vec<String>,
    pub poses: String,
    pub label: String,
    pub truth: String,
    pub ipm: String,
    pub occlusion: Option<String>,
    pub has_objects: bool,
    pub scene: SceneSpec,
}

#[derive(Debug)]
pub struct DatasetSummary {
    pub manifest_path: PathBuf,
    pub n_scenes: usize,
    pub elapsed_secs: f64,
}

/// A plain two-lane straight road with no imperfections.
pub fn make_default_scene(texture_seed: u64) -> SceneSpec {
    SceneSpec { texture_seed, ..SceneSpec::default() }
}

const PALETTE: [[f32; 3]; 5] = [
    [0.85, 0.15, 0.12],
    [0.15, 0.25, 0.85],
    [0.92, 0.55, 0.10],
    [0.20, 0.70, 0.30],
    [0.75, 0.75, 0.80],
];

/// Draws a randomized scene; the rng stream fully determines it.
pub fn randomize_scene(rng: &mut ChaCha8Rng, imp: &ImperfectionConfig, spec: &BevSpec, frames: usize) -> SceneSpec {
    let road_half_width = rng.gen_range(4.0..6.5);
    let lane_count = rng.gen_range(1..=3usize);
    let markings = super::MarkingLayout {
        solid_edges: rng.gen_bool(0.9),
        dash_period: rng.gen_range(2.0..4.0),
        dash_duty: rng.gen_range(0.3..0.5),
        line_width: 0.12,
        stop_line_x: if rng.gen_bool(0.3) {
            Some(rng.gen_range(spec.x_min + 1.0..spec.x_max * 0.8))
        } else {
            None
        },
        stop_line_width: 0.3,
        zigzag: rng.gen_bool(0.2),
        extra_solid_lines: Vec::new(),
    };
    let curvature = if rng.gen_bool(0.5) { rng.gen_range(-0.02..0.02) } else { 0.0 };
    let texture_seed: u64 = rng.gen();
    let texture_amp = rng.gen_range(0.03..0.08);

    let mut objects = Vec::new();
    if rng.gen_bool(imp.p_objects) {
        let count = rng.gen_range(1..=imp.max_objects.max(1));
        for i in 0..count {
            let moving = rng.gen_bool(0.5);
            objects.push(BoxObject {
                x: rng.gen_range(spec.x_min + 1.0..spec.x_min + 7.0),
                y: rng.gen_range(-road_half_width + 1.0..road_half_width - 1.0),
                half_len: rng.gen_range(0.3..0.6),
                half_wid: rng.gen_range(0.25..0.5),
                height: rng.gen_range(0.5..1.5),
                vel_x: if moving { rng.gen_range(-0.3..0.8) } else { 0.0 },
                vel_y: if moving { rng.gen_range(-0.12..0.12) } else { 0.0 },
                color: PALETTE[(i + rng.gen_range(0..PALETTE.len())) % PALETTE.len()],
            });
        }
    }

    let illumination = if rng.gen_bool(imp.p_illum) {
        IlluminationProfile {
            gains: (0..frames).map(|_| 1.0 + rng.gen_range(-imp.gain_jitter..imp.gain_jitter)).collect(),
            offsets: (0..frames)
                .map(|_| rng.gen_range(-imp.offset_jitter..imp.offset_jitter))
                .collect(),
            overexposure: if rng.gen_bool(imp.p_overexposure) {
                Some(Overexposure {
                    frame: rng.gen_range(1..frames.max(2)),
                    v_start: rng.gen_range(0.1..0.3),
                    v_end: rng.gen_range(0.4..0.7),
                    boost: imp.overexposure_boost,
                })
            } else {
                None
            },
        }
    } else {
        IlluminationProfile::default()
    };

    let slope = if rng.gen_bool(imp.p_slope) {
        let mag = rng.gen_range(0.5..imp.max_slope_deg.max(0.6)).to_radians();
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    } else {
        0.0
    };

    SceneSpec {
        road_half_width,
        lane_count,
        markings,
        curvature,
        texture_seed,
        texture_amp,
        objects,
        illumination,
        slope,
    }
}

/// Poses along the scene's centerline at the configured spacing.
pub fn drive_poses(scene: &SceneSpec, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(PosePlanar, f64)> {
    let k = scene.curvature;
    let noise = cfg.imperfect.pose_yaw_noise_deg.to_radians();
    (0..cfg.frames_per_scene)
        .map(|j| {
            let s = j as f64 * cfg.frame_spacing;
            let base = if k.abs() < 1e-9 {
                PosePlanar::new(s, 0.0, 0.0)
            } else {
                PosePlanar::new((k * s).sin() / k, (1.0 - (k * s).cos()) / k, k * s)
            };
            let pose = if noise > 0.0 && j > 0 {
                PosePlanar::new(base.x, base.y, base.yaw + rng.gen_range(-noise..noise))
            } else {
                base
            };
            (pose, j as f64 * 0.5)
        })
        .collect()
}

/// Renders, stitches and writes one scene; returns its manifest record.
pub fn build_scene(
    index: usize,
    master_seed: u64,
    cfg: &SynthConfig,
    rig: &CameraRig,
    spec: &BevSpec,
    out_dir: &Path,
) -> Result<SceneRecord, ForgeError> {
    let stream = 1000 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    let scene = randomize_scene(&mut rng, &cfg.imperfect, spec, cfg.frames_per_scene);
    scene.validate()?;
    let poses = drive_poses(&scene, cfg, &mut rng);

    let dir_name = format!("scene_{index:04}");
    let dir = out_dir.join(&dir_name);
    std::fs::create_dir_all(&dir)?;

    let frames: Vec<SequenceFrame> = poses
        .iter()
        .enumerate()
        .map(|(j, (pose, t))| SequenceFrame {
            image: render_scene(&scene, rig, pose, j),
            pose: *pose,
            timestamp: *t,
        })
        .collect();

    let mut frame_files = Vec::with_capacity(frames.len());
    for (j, frame) in frames.iter().enumerate() {
        let name = format!("frame_{j:02}.png");
        io::save_png(&dir.join(&name), &frame.image)?;
        frame_files.push(format!("{dir_name}/{name}"));
    }
    io::write_poses_csv(&dir.join("poses.csv"), &poses)?;

    let (label, _mask) = stitch_labels(&frames, rig, spec, cfg.trust_depth)?;
    io::save_png(&dir.join("label.png"), &label)?;

    let truth = render_bev_truth(&scene, spec, &PosePlanar::identity());
    io::save_png(&dir.join("truth.png"), &truth)?;

    let h = derive_ground_homography(rig, spec)?;
    let ipm = warp_image(&frames[0].image, &h, spec.height_px(), spec.width_px())?;
    io::save_png(&dir.join("ipm.png"), &ipm)?;

    let occlusion = if scene.objects.is_empty() {
        None
    } else {
        let mask = render_occlusion_mask(&scene, rig, spec, &PosePlanar::identity(), 0);
        io::save_png(&dir.join("occlusion.png"), &mask)?;
        Some(format!("{dir_name}/occlusion.png"))
    };

    Ok(SceneRecord {
        index,
        stream,
        dir: dir_name.clone(),
        frames: frame_files,
        poses: format!("{dir_name}/poses.csv"),
        label: format!("{dir_name}/label.png"),
        truth: format!("{dir_name}/truth.png"),
        ipm: format!("{dir_name}/ipm.png"),
        occlusion,
        has_objects: !scene.objects.is_empty(),
        scene,
    })
}

/// Builds the full dataset under `out_dir` and writes `manifest.jsonl`.
/// Scene builds run on the worker pool; the manifest is written in index
/// order afterwards, so output bytes are independent of thread count.
pub fn make_dataset(
    cfg: &SynthConfig,
    rig: &CameraRig,
    spec: &BevSpec,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetSummary, ForgeError> {
    let start = std::time::Instant::now();
    rig.validate()?;
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let records: Result<Vec<SceneRecord>, ForgeError> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| build_scene(i, master_seed, cfg, rig, spec, out_dir))
        .collect();
    let mut records = records?;
    records.sort_by_key(|r| r.index);

    let holdout_from = ((cfg.n_scenes as f64) * (1.0 - cfg.holdout_frac)).round() as usize;
    let meta = ManifestMeta {
        version: 1,
        seed: master_seed,
        rig: *rig,
        bev: *spec,
        trust_depth: cfg.trust_depth,
        n_scenes: cfg.n_scenes,
        holdout_from,
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut text = String::new();
    text.push_str(&serde_json::to_string(&ManifestLine::Meta(meta)).map_err(to_manifest_err)?);
    text.push('\n');
    for r in &records {
        text.push_str(&serde_json::to_string(&ManifestLine::Scene(r.clone())).map_err(to_manifest_err)?);
        text.push('\n');
    }
    std::fs::write(&manifest_path, text)?;

    Ok(DatasetSummary {
        manifest_path,
        n_scenes: cfg.n_scenes,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn to_manifest_err(e: serde_json::Error) -> ForgeError {
    ForgeError::Manifest(e.to_string())
}

pub fn load_manifest(path: &Path) -> Result<(ManifestMeta, Vec<SceneRecord>), ForgeError> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = None;
    let mut scenes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line)
            .map_err(|e| ForgeError::Manifest(format!("line {}: {e}", n + 1)))?;
        match parsed {
            ManifestLine::Meta(m) => meta = Some(m),
            ManifestLine::Scene(s) => scenes.push(s),
        }
    }
    let meta = meta.ok_or_else(|| ForgeError::Manifest("missing meta line".into()))?;
    scenes.sort_by_key(|s| s.index);
    Ok((meta, scenes))
}

//! Synthetic road scenes with exact overhead ground truth, and the
//! odometry-based stitcher that turns frame sequences into training labels.
//!
//! The scene model is deliberately small: a textured ground plane carrying a
//! marking layout, extruded boxes standing on it, a per-frame illumination
//! profile, and an optional road slope that violates the flat-ground
//! assumption the stitcher makes. Those four knobs reproduce the four ways
//! real stitched labels go wrong: geometric drift at lateral distance,
//! illumination seams, ghosted dynamic objects, and smeared tall objects.

mod dataset;
mod io;
mod render;
mod stitch;

pub use dataset::{
    load_manifest, make_dataset, make_default_scene, randomize_scene, DatasetSummary,
    ImperfectionConfig, ManifestMeta, SceneRecord, SynthConfig,
};
pub use io::{load_png, read_poses_csv, save_png, write_poses_csv};
pub use render::{paint_ground, render_bev_truth, render_occlusion_mask, render_scene};
pub use stitch::stitch_labels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PosePlanar};
use crate::warp::{ImageBuffer, WarpError};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("bad sequence: {0}")]
    BadSequence(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error("image {path}: {detail}")]
    Image { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// One camera frame of a drive, posed relative to frame 0.
#[derive(Debug, Clone)]
pub struct SequenceFrame {
    pub image: ImageBuffer,
    pub pose: PosePlanar,
    pub timestamp: f64,
}

/// Axis-aligned box standing on the road, moving with a per-frame velocity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BoxObject {
    pub x: f64,
    pub y: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub height: f64,
    /// displacement per frame, meters
    pub vel_x: f64,
    pub vel_y: f64,
    pub color: [f32; 3],
}

impl BoxObject {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        (self.x + self.vel_x * frame as f64, self.y + self.vel_y * frame as f64)
    }
}

/// Per-frame photometric perturbations; entries cycle if a sequence is
/// longer than the profile.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct IlluminationProfile {
    pub gains: Vec<f64>,
    pub offsets: Vec<f64>,
    pub overexposure: Option<Overexposure>,
}

impl IlluminationProfile {
    pub fn gain(&self, frame: usize) -> f64 {
        if self.gains.is_empty() {
            1.0
        } else {
            self.gains[frame % self.gains.len()]
        }
    }

    pub fn offset(&self, frame: usize) -> f64 {
        if self.offsets.is_empty() {
            0.0
        } else {
            self.offsets[frame % self.offsets.len()]
        }
    }
}

/// A saturated band across part of one frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Overexposure {
    pub frame: usize,
    /// band limits as fractions of image height
    pub v_start: f64,
    pub v_end: f64,
    pub boost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MarkingLayout {
    pub solid_edges: bool,
    pub dash_period: f64,
    pub dash_duty: f64,
    pub line_width: f64,
    pub stop_line_x: Option<f64>,
    pub stop_line_width: f64,
    pub zigzag: bool,
    /// extra solid longitudinal lines at these lateral offsets
    pub extra_solid_lines: Vec<f64>,
}

impl Default for MarkingLayout {
    fn default() -> Self {
        Self {
            solid_edges: true,
            dash_period: 3.0,
            dash_duty: 0.4,
            line_width: 0.12,
            stop_line_x: None,
            stop_line_width: 0.3,
            zigzag: false,
            extra_solid_lines: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub road_half_width: f64,
    pub lane_count: usize,
    pub markings: MarkingLayout,
    /// centerline curvature, 1/m; 0 = straight
    pub curvature: f64,
    pub texture_seed: u64,
    pub texture_amp: f64,
    pub objects: Vec<BoxObject>,
    pub illumination: IlluminationProfile,
    /// road slope in radians; the true ground is z = tan(slope)·x while the
    /// stitcher assumes z = 0
    pub slope: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            road_half_width: 5.0,
            lane_count: 2,
            markings: MarkingLayout::default(),
            curvature: 0.0,
            texture_seed: 0,
            texture_amp: 0.05,
            objects: Vec::new(),
            illumination: IlluminationProfile::default(),
            slope: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if !(self.road_half_width > 0.0) || self.lane_count == 0 {
            return Err(ForgeError::BadSequence("road geometry must be positive".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.half_len <= 0.0 || o.half_wid <= 0.0 || o.height <= 0.0 {
                return Err(ForgeError::BadSequence(format!("object {i} has non-positive size")));
            }
            if o.y.abs() > self.road_half_width {
                return Err(ForgeError::BadSequence(format!(
                    "object {i} starts off-road at y = {}",
                    o.y
                )));
            }
        }
        Ok(())
    }
}

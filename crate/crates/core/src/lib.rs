//! Boosted inverse perspective mapping at desk scale.
//!
//! The crate is organized around the pipeline it implements:
//!
//! - [`geometry`] — camera rigs, ground-plane homographies, and the
//!   incremental decomposition of the frontal-to-overhead perspective change.
//! - [`warp`] — differentiable bilinear grid sampling and homography warps.
//! - [`neuralcore`] — a minimal reverse-mode tensor layer set (convolutions,
//!   normalization, Adam) sized for the generator and discriminators here.
//! - [`stgan`] — the incremental spatial transformer GAN: generator with a
//!   warp-then-sharpen bottleneck, multi-scale discriminators, and losses.
//! - [`datasetforge`] — synthetic road scenes with exact ground truth, plus
//!   the odometry-based label stitcher that builds training pairs.
//! - [`harness`] — training loop, evaluation metrics, checkpoints.

pub mod config;
pub mod datasetforge;
pub mod geometry;
pub mod harness;
pub mod neuralcore;
pub mod stgan;
pub mod warp;

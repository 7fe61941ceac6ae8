//! Two-stage pose-to-video human motion transfer at desk scale.
//!
//! The pipeline turns per-frame 2D skeletons into multi-channel pose maps,
//! trains a pose-to-video generator (stage 1) and a texture refinement
//! generator (stage 2) against single-frame, temporal, and unpaired
//! discriminators, and evaluates the results with SSIM, a perceptual
//! distance, and FID. A procedural stick-figure corpus acts as a fully
//! checkable stand-in for recorded footage.

pub mod ablation;
pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod percep;
pub mod pose;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};

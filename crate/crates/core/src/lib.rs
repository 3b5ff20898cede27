//! MultiDepth: iterative refinement of monocular metric depth maps.
//!
//! An initial depth map from any upstream estimator is refined by a small
//! encoder-decoder ([`rnet`]) applied to several views of the image at once
//! (full image, pixel-unshuffled sub-grids, jittered crops, segment-masked
//! views; see [`sampling`]). The per-view predictions are aligned back to the
//! full grid and fused by a windowed median ([`mrcm`]), and the fused map is
//! fed back for further cycles.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod mrcm;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod rnet;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Reasoning-driven segmentation for synthetic aerial scenes.
//!
//! The crate implements the full stack: a dual-path gated-fusion encoder, a
//! causal mask-token reasoning backbone, a hierarchical mask decoder, the
//! composite training loss, region metrics, a synthetic corpus generator
//! with codecs and split logic, and the train/eval/ablate harness used by
//! the `uavseg` binary.

pub mod backbone;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod raster;
pub mod tensor;

pub use error::{Error, Result};

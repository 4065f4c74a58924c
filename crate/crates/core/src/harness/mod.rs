//! Training, evaluation, and ablation harness.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod evaluator;
pub mod optim;
pub mod overlay;
pub mod report;
pub mod trainer;

//! Desk-scale domain shifting pipeline.
//!
//! A cheap camera distorts dynamic range, color and sharpness enough to break
//! classifiers trained on clean images. This crate trains a small
//! image-to-image regression network on aligned (clean, degraded) pairs to
//! mimic such a camera, uses it to synthesize degraded training data, and
//! shows that a classifier trained on clean plus synthesized data recovers
//! most of the accuracy lost on degraded inputs.
//!
//! Modules:
//! - [`tensor`]: NCHW tensors and differentiable kernels (hand-derived backprop)
//! - [`optim`]: Adam / SGD updates and learning-rate schedules
//! - [`data`]: image IO, dataset folders, splits, procedural dataset generator
//! - [`camsim`]: the parameterized synthetic low-quality camera
//! - [`shiftnet`]: the 4-layer domain-shifting network
//! - [`classify`]: the small classifier, training regimes and the experiment runner

pub mod camsim;
pub mod classify;
pub mod data;
pub mod error;
pub mod optim;
pub mod rng;
pub mod shiftnet;
pub mod tensor;

pub use error::{Error, Result};

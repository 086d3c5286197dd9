//! Noise-robust classification by bidirectional learning.
//!
//! A shared backbone feeds two single-layer heads: a positive head trained
//! with cross-entropy on the given labels and a negative head trained with
//! complementary labels. The negative head's probability on each sample's
//! given label is min-max normalised over the dataset at every epoch to
//! produce per-sample loss weights, and thresholded to flag likely
//! mislabelled samples. Optional shallow heads add a self-distillation term.
//!
//! Module map:
//!
//! * [`types`]: label spaces, examples, probability vectors, weight tables.
//! * [`nn`] and [`model`]: a small CPU layer library, the two-head network,
//!   EMA averaging and checkpoints.
//! * [`losses`]: every loss term with analytic gradients.
//! * [`reweight`]: weight refresh, corrected labels, complementary labels,
//!   noise-ratio estimation.
//! * [`train`]: configuration, optimiser, schedule and the training loop.
//! * [`detect`]: threshold-based noise detection and its metrics.
//! * [`data`]: synthetic datasets, noise injection, sidecars, CIFAR loading.

pub mod data;
pub mod detect;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod reweight;
pub mod rng;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{one_hot, softmax, Example, LabelSpace, ProbabilityVector, WeightTable};

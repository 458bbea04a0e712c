//! Knowledge distillation with gradient-isolated local student blocks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: float64 tensors and a define-by-run reverse-mode tape with
//!   first-class [`Tensor::detach`].
//! - [`models`]: small residual conv nets exposing per-unit feature taps,
//!   learnable feature projections, and a binary checkpoint format.
//! - [`losses`]: hard, soft, feature, and attention losses plus the two total
//!   loss compositions.
//! - [`sdm`]: partitioning of a student into detached local blocks and the
//!   per-block training step.
//! - [`ndam`]: teacher-derived spatial weighting of student features.
//! - [`metrics`]: top-k accuracy, extracurricular knowledge, linear CKA,
//!   per-layer alignment distances, activation-memory comparison.
//! - [`data`]: CIFAR-10 binary records and a seeded synthetic image task.
//! - [`e2e`]: conventional whole-network training steps.
//! - [`experiment`]: run configuration, training regimes, sweeps, outputs.

// `!(x > 0.0)` is how NaN is rejected in config validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod e2e;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod ndam;
pub mod optim;
pub mod sdm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};

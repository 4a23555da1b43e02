//! Low-rank adapters whose per-head ranks are driven by learnable scales.
//!
//! Each attention head carries a factor pair `(B, A)` and a scale `alpha`.
//! The head's update is `alpha * B A`, and its rank is
//! `max(1, round(r0 * alpha))`. Scales are trained on the task loss plus an
//! l1 + temporal-smoothness penalty, so heads that need little capacity
//! shrink toward rank 1 while others grow.
//!
//! Module map:
//! - [`linalg`]: matrices, Jacobi SVD, best rank-r truncation
//! - [`adapter`]: one head's factors, scale and resizing
//! - [`regularizer`]: the scale penalty and its gradient
//! - [`model`]: the frozen multi-head network with exact backprop
//! - [`trainer`]: the training loop and its stability/convergence monitors
//! - [`analysis`]: approximation bounds, capacity term, rank statistics
//! - [`experiments`]: planted-rank tasks and the artifact-writing harness
//! - [`config`], [`manifest`]: run configuration and run manifests
//! - [`verify`]: oracle suites used by `ard-lora oracle-check`

pub mod adapter;
pub mod analysis;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod manifest;
pub mod model;
pub mod regularizer;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use adapter::{effective_rank, LoraAdapter};
pub use config::{parse_config, RunConfig};
pub use error::{Error, Result};
pub use linalg::{matmul, svd, truncate_rank, Matrix, SvdResult};
pub use model::{ModelConfig, ModelState};
pub use regularizer::{AlphaTrace, RegConfig};
pub use trainer::{Mode, StepRecord, Trainer, TrainerConfig};

//! Compact encoder-only transformer for windowed telemetry classification.
//!
//! The whole model — forward pass, hand-derived reverse-mode gradients, and
//! the finite-difference harness that keeps them honest — lives here. No
//! autodiff framework is involved: [`backward::loss_and_gradients`] implements
//! the chain rule explicitly for every stage, and [`gradcheck`] verifies it
//! numerically.

pub mod backward;
pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod math;
pub mod weights;

pub use backward::{loss_and_gradients, loss_value};
pub use config::ModelConfig;
pub use forward::{forward, ForwardTrace};
pub use gradcheck::{check_instance, compare_gradients, finite_difference_gradients, GradCheckReport};
pub use loss::{loss_and_dlogits, smooth_l1_loss, weighted_ce_loss, LossKind};
pub use weights::{Gradients, ModelWeights, NamedTensor};

/// Errors surfaced by model construction and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("input shape mismatch: expected {expected:?}, got {got:?}")]
    BadInputShape { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite value produced at stage `{stage}`")]
    NonFinite { stage: String },
}

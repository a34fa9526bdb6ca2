//! Differentially private two-client cyclic federated training.
//!
//! - [`accountant`]: Rényi-DP accounting of the sampled Gaussian mechanism.
//! - [`models`]: logistic regression and a shallow MLP with per-sample gradients.
//! - [`dp_sgd`]: Poisson batch sampling, clipping and the noisy descent step.
//! - [`federated`]: the two-client cyclic protocol and its per-client budget.
//! - [`data`]: expression matrices, signature-based feature selection, splits.
//! - [`harness`]: grid search, frontier CSV and budget-driven selection.

pub mod accountant;
pub mod data;
pub mod dp_sgd;
pub mod federated;
pub mod harness;
pub mod models;

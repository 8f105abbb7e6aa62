//! Debiasing engine for implicit-feedback recommendation.
//!
//! Clicks mix two causes: an item is globally popular, or it genuinely
//! matches the user. This crate separates the two and removes both the
//! popularity bias and the amplified-preference feedback loop:
//!
//! 1. [`bias`] scores every profile item by popularity and by category
//!    match, then extracts two extreme sets per user: items explained by
//!    popularity alone and items explained by preference alone.
//! 2. [`vae`] trains a variational auto-encoder with three Gaussian
//!    posteriors (profile, popularity set, preference set); the debiased
//!    user latent is the profile posterior minus the two bias posteriors
//!    under a shared noise draw. Gradients are derived by hand; the
//!    optimizer is Adam with decoupled weight decay.
//! 3. [`scm`] fits a stochastic structural causal model on the clicks,
//!    infers per-item exogenous noise by variational abduction, and
//!    generates counterfactual top-N item sets under do-interventions to
//!    densify sparse training profiles.
//! 4. [`eval`] provides Recall@K / NDCG@K, sparsity-group breakdowns and
//!    the debias-degree sweep outputs.
//! 5. [`synth`] generates logs from a known causal ground truth so the
//!    debiasing effect can be measured against true preferences.
//! 6. [`pipeline`] wires the stages into reproducible experiment commands
//!    with manifests; the `debias-rec` binary exposes them as subcommands.
//!
//! Every stage is deterministic given its seed, including under rayon
//! parallelism: reductions run in a fixed chunk order.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod bias;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod math;
pub mod pipeline;
pub mod scm;
pub mod seeds;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};

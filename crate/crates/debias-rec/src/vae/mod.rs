//! Disentangled debias variational auto-encoder.
//!
//! One shared encoder maps each of the three inputs (the full profile and
//! the two extreme sets) to a Gaussian posterior; the debiased user latent
//! is the mean/scale subtraction of the bias posteriors from the profile
//! posterior under a single shared noise draw. One shared decoder produces
//! multinomial item logits. Training maximizes the ELBO on the profile plus
//! two weighted reconstruction terms that pin the bias latents to their
//! extreme sets. All gradients are derived by hand; the optimizer is Adam
//! with decoupled weight decay.

mod adam;
mod backward;
mod forward;
mod params;
mod train;

pub use adam::AdamState;
pub use backward::{backward, VaeGrads};
pub use forward::{
    debiased_latent, decode, encode, forward_user, loss, reparameterize, Bag, LossBreakdown,
    LossWeights, UserTrace,
};
pub use params::{GaussianHead, VaeDims, VaeParams};
pub use train::{
    load_checkpoint, predict_scores, predict_scores_from_sets, save_checkpoint, train, Checkpoint,
    EpochStats, TrainConfig, TrainOutcome,
};

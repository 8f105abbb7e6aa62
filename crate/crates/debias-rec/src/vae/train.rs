//! Mini-batch training loop, prediction and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{extract_extreme_sets, UserSets};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;
use crate::math::{chunked_fold, softmax};
use crate::vae::adam::AdamState;
use crate::vae::backward::{backward, VaeGrads};
use crate::vae::forward::{
    debiased_latent, decode_raw, encode_trace, forward_user, Bag, LossWeights,
};
use crate::vae::params::{VaeDims, VaeParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Debias degree used for extreme-set extraction.
    pub k: f64,
    pub hidden: usize,
    pub latent: usize,
    pub omega_m: f64,
    pub omega_p: f64,
    /// KL weight after warm-up.
    pub kl_weight: f64,
    /// Fraction of total steps over which the KL weight ramps 0 -> kl_weight.
    pub kl_warmup_frac: f64,
    /// Regularize all three posteriors, or only the profile posterior.
    pub kl_all_heads: bool,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Validation checkpoint metric is NDCG at this cut.
    pub val_ndcg_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 0.5,
            hidden: 600,
            latent: 200,
            omega_m: 0.1,
            omega_p: 0.1,
            kl_weight: 0.2,
            kl_warmup_frac: 0.2,
            kl_all_heads: true,
            batch_size: 500,
            weight_decay: 0.01,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            val_ndcg_k: 100,
        }
    }
}

impl TrainConfig {
    /// Single-latent ablation: no extraction, no auxiliary losses. The
    /// forward pass then never touches the bias branches.
    pub fn vanilla(mut self) -> Self {
        self.k = 0.0;
        self.omega_m = 0.0;
        self.omega_p = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(Error::InvalidConfig(format!("k={} not in [0,1]", self.k)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.omega_m < 0.0 || self.omega_p < 0.0 || self.kl_weight < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::InvalidConfig("zero-sized layer".into()));
        }
        Ok(())
    }
}

/// Per-epoch means of the loss terms plus the validation metric
/// (NaN when there are no validation users).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub aux_p: f64,
    pub aux_m: f64,
    pub total: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation NDCG (final parameters when no
    /// validation users exist).
    pub params: VaeParams,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub adam: AdamState,
}

struct BatchAcc {
    grads: VaeGrads,
    recon: f64,
    kl: f64,
    aux_p: f64,
    aux_m: f64,
    total: f64,
    err: Option<Error>,
}

impl BatchAcc {
    fn new(dims: VaeDims) -> Self {
        BatchAcc {
            grads: VaeGrads::zeros(dims),
            recon: 0.0,
            kl: 0.0,
            aux_p: 0.0,
            aux_m: 0.0,
            total: 0.0,
            err: None,
        }
    }

    fn merge(&mut self, other: BatchAcc) {
        self.grads.add_assign_params(&other.grads);
        self.recon += other.recon;
        self.kl += other.kl;
        self.aux_p += other.aux_p;
        self.aux_m += other.aux_m;
        self.total += other.total;
        if self.err.is_none() {
            self.err = other.err;
        }
    }
}

impl VaeParams {
    fn add_assign_params(&mut self, other: &VaeParams) {
        let theirs = other.tensors();
        for (idx, (mine, _)) in self.tensors_mut().into_iter().enumerate() {
            for (a, b) in mine.iter_mut().zip(theirs[idx]) {
                *a += b;
            }
        }
    }

    fn scale_params(&mut self, s: f64) {
        for (t, _) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Train on the given per-user item sets with mini-batch Adam. One fresh
/// eps per user per step; batches are reshuffled every epoch under the
/// config seed; the checkpointed parameters are the ones with the best
/// validation NDCG.
pub fn train(
    dataset: &Dataset,
    split: &Split,
    sets: &BTreeMap<u32, UserSets>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = VaeDims {
        n_items: dataset.n_items,
        hidden: config.hidden,
        latent: config.latent,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = VaeParams::init(dims, &mut rng);
    let mut adam = AdamState::new(dims);

    let train_sets: Vec<&UserSets> = split
        .train_users
        .iter()
        .map(|u| {
            sets.get(u).ok_or_else(|| {
                Error::InvalidConfig(format!("no training sets for user {u}"))
            })
        })
        .collect::<Result<_>>()?;
    if train_sets.is_empty() {
        return Err(Error::EmptyInput("no training users".to_string()));
    }

    let steps_per_epoch = train_sets.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs * steps_per_epoch).max(1);
    let anneal_steps = ((config.kl_warmup_frac * total_steps as f64).round() as usize).max(1);

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, VaeParams)> = None;
    let mut order: Vec<usize> = (0..train_sets.len()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sums = [0.0f64; 5];
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let kl_eff = config.kl_weight * (step as f64 / anneal_steps as f64).min(1.0);
            let weights = LossWeights {
                kl: kl_eff,
                omega_p: config.omega_p,
                omega_m: config.omega_m,
                kl_all_heads: config.kl_all_heads,
            };
            // Noise is drawn sequentially in batch order so the parallel
            // fold below cannot perturb the random stream.
            let work: Vec<(&UserSets, Vec<f64>)> = batch
                .iter()
                .map(|&idx| {
                    let eps: Vec<f64> =
                        (0..config.latent).map(|_| rng.sample(StandardNormal)).collect();
                    (train_sets[idx], eps)
                })
                .collect();

            let acc = chunked_fold(
                &work,
                || BatchAcc::new(dims),
                |acc, (user_sets, eps)| {
                    if acc.err.is_some() {
                        return;
                    }
                    match forward_user(&params, user_sets, eps, &weights) {
                        Ok(t) => {
                            backward(&params, &t, &weights, &mut acc.grads);
                            acc.recon += t.loss.recon;
                            acc.kl += t.loss.kl;
                            acc.aux_p += t.loss.aux_p;
                            acc.aux_m += t.loss.aux_m;
                            acc.total += t.loss.total;
                        }
                        Err(e) => acc.err = Some(e),
                    }
                },
                BatchAcc::merge,
            )
            .expect("batch is nonempty");
            if let Some(e) = acc.err {
                return Err(e);
            }
            if !acc.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("batch loss sum = {}", acc.total),
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let mut grads = acc.grads;
            grads.scale_params(inv);
            adam.step(&mut params, &grads, config.learning_rate, config.weight_decay);

            epoch_sums[0] += acc.recon;
            epoch_sums[1] += acc.kl;
            epoch_sums[2] += acc.aux_p;
            epoch_sums[3] += acc.aux_m;
            epoch_sums[4] += acc.total;
        }

        let n = train_sets.len() as f64;
        let val_ndcg = validation_ndcg(&params, dataset, split, config)?;
        trace.push(EpochStats {
            epoch,
            recon: epoch_sums[0] / n,
            kl: epoch_sums[1] / n,
            aux_p: epoch_sums[2] / n,
            aux_m: epoch_sums[3] / n,
            total: epoch_sums[4] / n,
            val_ndcg,
        });
        if val_ndcg.is_finite() {
            let improved = best.as_ref().is_none_or(|(b, _, _)| val_ndcg > *b);
            if improved {
                best = Some((val_ndcg, epoch, params.clone()));
            }
        }
    }

    let (best_val_ndcg, best_epoch, best_params) = match best {
        Some((v, e, p)) => (v, e, p),
        None => (f64::NAN, config.epochs.saturating_sub(1), params.clone()),
    };
    Ok(TrainOutcome {
        params: best_params,
        trace,
        best_epoch,
        best_val_ndcg,
        adam,
    })
}

fn validation_ndcg(
    params: &VaeParams,
    dataset: &Dataset,
    split: &Split,
    config: &TrainConfig,
) -> Result<f64> {
    if split.val_users.is_empty() {
        return Ok(f64::NAN);
    }
    let scores: Vec<f64> = split
        .val_users
        .par_iter()
        .map(|u| {
            let h = split.held.get(u).ok_or_else(|| {
                Error::InvalidConfig(format!("validation user {u} has no hold-out entry"))
            })?;
            let ranking = predict_scores(params, dataset, &h.fold_in, config.k)?;
            ndcg_at_k(&ranking, &h.held_out, config.val_ndcg_k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Rank all items outside `fold_in` for a user described by their fold-in
/// profile. Extreme sets are re-extracted from the fold-in at degree `k`;
/// inference uses the posterior means (eps = 0).
pub fn predict_scores(
    params: &VaeParams,
    dataset: &Dataset,
    fold_in: &[u32],
    k: f64,
) -> Result<Vec<u32>> {
    if fold_in.is_empty() {
        return Err(Error::EmptyInput("empty fold-in profile".to_string()));
    }
    let ex = extract_extreme_sets(dataset, fold_in, k);
    let sets = UserSets {
        x: fold_in.to_vec(),
        x_p: ex.x_p,
        x_m: ex.x_m,
    };
    predict_scores_from_sets(params, &sets)
}

/// Same as [`predict_scores`] but with caller-supplied item sets.
pub fn predict_scores_from_sets(params: &VaeParams, sets: &UserSets) -> Result<Vec<u32>> {
    let x_bag = Bag::new(&sets.x)
        .ok_or_else(|| Error::EmptyInput("empty fold-in profile".to_string()))?;
    let eps = vec![0.0; params.dims.latent];
    let x = encode_trace(params, &x_bag);
    let m = Bag::new(&sets.x_m).map(|b| encode_trace(params, &b));
    let p = Bag::new(&sets.x_p).map(|b| encode_trace(params, &b));
    let z = debiased_latent(
        &x.head,
        m.as_ref().map(|t| &t.head),
        p.as_ref().map(|t| &t.head),
        &eps,
    );
    let logits = decode_raw(params, &z);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite prediction logits".to_string()));
    }
    let scores = softmax(&logits);
    let mut candidates: Vec<u32> = (0..params.dims.n_items as u32)
        .filter(|i| x_bag.items.binary_search(i).is_err())
        .collect();
    candidates.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(candidates)
}

const CHECKPOINT_MAGIC: &str = "debias-rec/checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    magic: String,
    version: u32,
    pub config: TrainConfig,
    pub params: VaeParams,
    pub adam: AdamState,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, outcome: &TrainOutcome) -> Self {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            params: outcome.params.clone(),
            adam: outcome.adam.clone(),
            best_epoch: outcome.best_epoch,
            best_val_ndcg: outcome.best_val_ndcg,
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, bincode::serialize(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        command: "train".to_string(),
    })?;
    let ckpt: Checkpoint = bincode::deserialize(&bytes)?;
    if ckpt.magic != CHECKPOINT_MAGIC {
        return Err(Error::VersionMismatch(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "checkpoint version {} != {}",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}

//! Stochastic structural causal model over clicks, with variational
//! abduction of the exogenous noise and do-interventions on the matching
//! and popularity scores.
//!
//! The model factors a click distribution C(u,·) = softmax(M(u,·) + B(u,·))
//! where M is a softmax over user-item affinity plus a weighted, noisy
//! matching score and B is a softmax over weighted, noisy popularity
//! scores. The per-item noise (alpha for matching, beta for popularity)
//! carries everything the scores miss; its Gaussian posterior is fit by
//! maximizing the ELBO with reparameterized samples. Counterfactual click
//! distributions come from fixing the noise at its posterior mean and
//! replacing the intervened score column with fresh standard-normal draws.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{matching_row, popularity_row, UserSets};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{chunked_fold, dot, rank_descending, softmax_into, Mat};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmConfig {
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Reparameterized noise draws per step.
    pub mc_samples: usize,
    /// Counterfactual set size.
    pub top_n: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            embed_dim: 64,
            learning_rate: 0.05,
            epochs: 80,
            batch_size: 500,
            mc_samples: 1,
            top_n: 100,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

/// Point-estimated model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmParams {
    /// `[n_users][embed_dim]`
    pub user_emb: Mat,
    /// `[n_items][embed_dim]`
    pub item_emb: Mat,
    /// Per-item weight on the matching-score term.
    pub w_m: Vec<f64>,
    /// Per-item weight on the popularity-score term.
    pub w_b: Vec<f64>,
}

impl ScmParams {
    fn init(n_users: usize, n_items: usize, config: &ScmConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut user_emb = Mat::zeros(n_users, config.embed_dim);
        let mut item_emb = Mat::zeros(n_items, config.embed_dim);
        for v in user_emb.data.iter_mut().chain(item_emb.data.iter_mut()) {
            *v = config.init_scale * rng.sample::<f64, _>(StandardNormal);
        }
        ScmParams {
            user_emb,
            item_emb,
            // Neutral multipliers; learned during training.
            w_m: vec![1.0; n_items],
            w_b: vec![1.0; n_items],
        }
    }
}

/// Mean-field Gaussian posteriors of the per-item exogenous noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousPosterior {
    pub mu_alpha: Vec<f64>,
    pub lv_alpha: Vec<f64>,
    pub mu_beta: Vec<f64>,
    pub lv_beta: Vec<f64>,
}

impl ExogenousPosterior {
    /// Initialization matches the N(0, 1) prior exactly.
    pub fn standard(n_items: usize) -> Self {
        ExogenousPosterior {
            mu_alpha: vec![0.0; n_items],
            lv_alpha: vec![0.0; n_items],
            mu_beta: vec![0.0; n_items],
            lv_beta: vec![0.0; n_items],
        }
    }

    fn kl_family(mu: &[f64], lv: &[f64]) -> f64 {
        mu.iter()
            .zip(lv)
            .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
            .sum()
    }

    pub fn kl_alpha(&self) -> f64 {
        Self::kl_family(&self.mu_alpha, &self.lv_alpha)
    }

    pub fn kl_beta(&self) -> f64 {
        Self::kl_family(&self.mu_beta, &self.lv_beta)
    }
}

/// The three softmax outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmDistributions {
    pub m: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Forward pass for one user with explicit noise values.
pub fn scm_forward(
    params: &ScmParams,
    user: u32,
    s_m_row: &[f64],
    s_p_row: &[f64],
    alpha: &[f64],
    beta: &[f64],
) -> ScmDistributions {
    let n_items = params.item_emb.rows;
    debug_assert_eq!(s_m_row.len(), n_items);
    debug_assert_eq!(s_p_row.len(), n_items);
    let e_u = params.user_emb.row(user as usize);
    let mut m_logits = vec![0.0; n_items];
    let mut b_logits = vec![0.0; n_items];
    for i in 0..n_items {
        m_logits[i] = dot(e_u, params.item_emb.row(i)) + params.w_m[i] * s_m_row[i] * alpha[i];
        b_logits[i] = params.w_b[i] * s_p_row[i] * beta[i];
    }
    let mut m = vec![0.0; n_items];
    let mut b = vec![0.0; n_items];
    softmax_into(&m_logits, &mut m);
    softmax_into(&b_logits, &mut b);
    let c_logits: Vec<f64> = m.iter().zip(&b).map(|(a, c)| a + c).collect();
    let mut c = vec![0.0; n_items];
    softmax_into(&c_logits, &mut c);
    ScmDistributions { m, b, c }
}

struct ScmGrads {
    user_emb: Mat,
    item_emb: Mat,
    w_m: Vec<f64>,
    w_b: Vec<f64>,
    mu_alpha: Vec<f64>,
    lv_alpha: Vec<f64>,
    mu_beta: Vec<f64>,
    lv_beta: Vec<f64>,
}

impl ScmGrads {
    fn zeros(n_users: usize, n_items: usize, d: usize) -> Self {
        ScmGrads {
            user_emb: Mat::zeros(n_users, d),
            item_emb: Mat::zeros(n_items, d),
            w_m: vec![0.0; n_items],
            w_b: vec![0.0; n_items],
            mu_alpha: vec![0.0; n_items],
            lv_alpha: vec![0.0; n_items],
            mu_beta: vec![0.0; n_items],
            lv_beta: vec![0.0; n_items],
        }
    }

    fn merge(&mut self, other: ScmGrads) {
        self.user_emb.add_assign(&other.user_emb);
        self.item_emb.add_assign(&other.item_emb);
        for (a, b) in self.w_m.iter_mut().zip(&other.w_m) {
            *a += b;
        }
        for (a, b) in self.w_b.iter_mut().zip(&other.w_b) {
            *a += b;
        }
        for (a, b) in self.mu_alpha.iter_mut().zip(&other.mu_alpha) {
            *a += b;
        }
        for (a, b) in self.lv_alpha.iter_mut().zip(&other.lv_alpha) {
            *a += b;
        }
        for (a, b) in self.mu_beta.iter_mut().zip(&other.mu_beta) {
            *a += b;
        }
        for (a, b) in self.lv_beta.iter_mut().zip(&other.lv_beta) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.user_emb.scale(s);
        self.item_emb.scale(s);
        for v in self
            .w_m
            .iter_mut()
            .chain(self.w_b.iter_mut())
            .chain(self.mu_alpha.iter_mut())
            .chain(self.lv_alpha.iter_mut())
            .chain(self.mu_beta.iter_mut())
            .chain(self.lv_beta.iter_mut())
        {
            *v *= s;
        }
    }
}

/// Plain Adam over the SCM tensors.
struct ScmAdam {
    m: ScmGrads,
    v: ScmGrads,
    t: u64,
}

impl ScmAdam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n_users: usize, n_items: usize, d: usize) -> Self {
        ScmAdam {
            m: ScmGrads::zeros(n_users, n_items, d),
            v: ScmGrads::zeros(n_users, n_items, d),
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut ScmParams,
        posterior: &mut ExogenousPosterior,
        grads: &ScmGrads,
        lr: f64,
    ) {
        self.t += 1;
        let b1c = 1.0 - Self::BETA1.powi(self.t as i32);
        let b2c = 1.0 - Self::BETA2.powi(self.t as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / b1c) / ((v[i] / b2c).sqrt() + Self::EPS);
            }
        };
        update(
            &mut params.user_emb.data,
            &grads.user_emb.data,
            &mut self.m.user_emb.data,
            &mut self.v.user_emb.data,
        );
        update(
            &mut params.item_emb.data,
            &grads.item_emb.data,
            &mut self.m.item_emb.data,
            &mut self.v.item_emb.data,
        );
        update(&mut params.w_m, &grads.w_m, &mut self.m.w_m, &mut self.v.w_m);
        update(&mut params.w_b, &grads.w_b, &mut self.m.w_b, &mut self.v.w_b);
        update(
            &mut posterior.mu_alpha,
            &grads.mu_alpha,
            &mut self.m.mu_alpha,
            &mut self.v.mu_alpha,
        );
        update(
            &mut posterior.lv_alpha,
            &grads.lv_alpha,
            &mut self.m.lv_alpha,
            &mut self.v.lv_alpha,
        );
        update(
            &mut posterior.mu_beta,
            &grads.mu_beta,
            &mut self.m.mu_beta,
            &mut self.v.mu_beta,
        );
        update(
            &mut posterior.lv_beta,
            &grads.lv_beta,
            &mut self.m.lv_beta,
            &mut self.v.lv_beta,
        );
    }
}

/// Accumulate the negative-log-likelihood gradient of one user into `out`.
/// Returns the user's log-likelihood under the given noise. The two slices
/// in `out` are the reparameterization factors d alpha / d log_var and
/// d beta / d log_var (eps * sigma / 2, per item).
fn user_loglik_grads(
    params: &ScmParams,
    dataset: &Dataset,
    user: u32,
    alpha: &[f64],
    beta: &[f64],
    out: Option<(&mut ScmGrads, &[f64], &[f64])>,
) -> f64 {
    let n_items = dataset.n_items;
    let profile = dataset.profile(user);
    let s_m_row = matching_row(dataset, profile);
    let s_p_row = popularity_row(dataset, profile);
    let dist = scm_forward(params, user, &s_m_row, &s_p_row, alpha, beta);

    let mut loglik = 0.0;
    for &i in profile {
        loglik += dist.c[i as usize].max(1e-300).ln();
    }
    let Some((grads, repar_a, repar_b)) = out else {
        return loglik;
    };

    // d(-loglik)/d c_logit_j = |X| * C_j - y_j, with c_logit = M + B.
    let nx = profile.len() as f64;
    let mut dc: Vec<f64> = dist.c.iter().map(|c| nx * c).collect();
    for &i in profile {
        dc[i as usize] -= 1.0;
    }

    // Softmax backward for M: dm_logit = M ⊙ (dc - <dc, M>).
    let dot_m = dot(&dc, &dist.m);
    let e_u = params.user_emb.row(user as usize);
    let mut de_u = vec![0.0; params.user_emb.cols];
    for i in 0..n_items {
        let dm_logit = dist.m[i] * (dc[i] - dot_m);
        if dm_logit != 0.0 {
            let e_i = params.item_emb.row(i);
            for (a, b) in de_u.iter_mut().zip(e_i) {
                *a += dm_logit * b;
            }
            let gi = grads.item_emb.row_mut(i);
            for (a, b) in gi.iter_mut().zip(e_u) {
                *a += dm_logit * b;
            }
            grads.w_m[i] += dm_logit * s_m_row[i] * alpha[i];
            let dalpha = dm_logit * params.w_m[i] * s_m_row[i];
            grads.mu_alpha[i] += dalpha;
            grads.lv_alpha[i] += dalpha * repar_a[i];
        }
    }
    let gu = grads.user_emb.row_mut(user as usize);
    for (a, b) in gu.iter_mut().zip(&de_u) {
        *a += b;
    }

    // Softmax backward for B.
    let dot_b = dot(&dc, &dist.b);
    for i in 0..n_items {
        let db_logit = dist.b[i] * (dc[i] - dot_b);
        if db_logit != 0.0 {
            grads.w_b[i] += db_logit * s_p_row[i] * beta[i];
            let dbeta = db_logit * params.w_b[i] * s_p_row[i];
            grads.mu_beta[i] += dbeta;
            grads.lv_beta[i] += dbeta * repar_b[i];
        }
    }
    loglik
}

/// Fit the SCM on the clicks of the given users by maximizing the abduction
/// ELBO with reparameterized noise and Adam. Returns the fitted model, the
/// exogenous posteriors and a per-epoch deterministic ELBO trace (noise at
/// posterior means).
pub fn train_scm(
    dataset: &Dataset,
    users: &[u32],
    config: &ScmConfig,
) -> Result<(ScmParams, ExogenousPosterior, Vec<f64>)> {
    if users.is_empty() || users.iter().all(|&u| dataset.profile(u).is_empty()) {
        return Err(Error::EmptyInput("no training interactions".to_string()));
    }
    if config.top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be >= 1".into()));
    }
    let n_users = dataset.n_users;
    let n_items = dataset.n_items;
    let d = config.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ScmParams::init(n_users, n_items, config, &mut rng);
    let mut posterior = ExogenousPosterior::standard(n_items);
    let mut adam = ScmAdam::new(n_users, n_items, d);
    let mut elbo_trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<u32> = users.to_vec();
    let kl_scale = 1.0 / users.len() as f64;

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut total = ScmGrads::zeros(n_users, n_items, d);
            for _ in 0..config.mc_samples.max(1) {
                // One shared reparameterized draw per step.
                let eps_a: Vec<f64> =
                    (0..n_items).map(|_| rng.sample(StandardNormal)).collect();
                let eps_b: Vec<f64> =
                    (0..n_items).map(|_| rng.sample(StandardNormal)).collect();
                let sigma_a: Vec<f64> =
                    (0..n_items).map(|i| (posterior.lv_alpha[i] / 2.0).exp()).collect();
                let sigma_b: Vec<f64> =
                    (0..n_items).map(|i| (posterior.lv_beta[i] / 2.0).exp()).collect();
                let alpha: Vec<f64> = (0..n_items)
                    .map(|i| posterior.mu_alpha[i] + eps_a[i] * sigma_a[i])
                    .collect();
                let beta: Vec<f64> = (0..n_items)
                    .map(|i| posterior.mu_beta[i] + eps_b[i] * sigma_b[i])
                    .collect();
                let repar_a: Vec<f64> =
                    (0..n_items).map(|i| eps_a[i] * sigma_a[i] / 2.0).collect();
                let repar_b: Vec<f64> =
                    (0..n_items).map(|i| eps_b[i] * sigma_b[i] / 2.0).collect();

                let acc = chunked_fold(
                    batch,
                    || ScmGrads::zeros(n_users, n_items, d),
                    |acc, &u| {
                        user_loglik_grads(
                            &params,
                            dataset,
                            u,
                            &alpha,
                            &beta,
                            Some((acc, &repar_a, &repar_b)),
                        );
                    },
                    ScmGrads::merge,
                )
                .expect("nonempty batch");
                total.merge(acc);
            }
            total.scale(1.0 / (config.mc_samples.max(1) as f64));

            // KL gradient, spread over batches by batch share.
            let share = batch.len() as f64 * kl_scale;
            for i in 0..n_items {
                total.mu_alpha[i] += share * posterior.mu_alpha[i];
                total.lv_alpha[i] += share * 0.5 * (posterior.lv_alpha[i].exp() - 1.0);
                total.mu_beta[i] += share * posterior.mu_beta[i];
                total.lv_beta[i] += share * 0.5 * (posterior.lv_beta[i].exp() - 1.0);
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut params, &mut posterior, &total, config.learning_rate);
        }

        let elbo = evaluate_elbo(&params, &posterior, dataset, users);
        if !elbo.is_finite() {
            return Err(Error::Diverged {
                epoch: _epoch,
                step: adam.t as usize,
                detail: format!("ELBO = {elbo}"),
            });
        }
        elbo_trace.push(elbo);
    }
    Ok((params, posterior, elbo_trace))
}

/// Deterministic ELBO proxy: log-likelihood at posterior-mean noise minus
/// the posterior KL terms.
pub fn evaluate_elbo(
    params: &ScmParams,
    posterior: &ExogenousPosterior,
    dataset: &Dataset,
    users: &[u32],
) -> f64 {
    let logliks: Vec<f64> = users
        .par_iter()
        .map(|&u| {
            user_loglik_grads(
                params,
                dataset,
                u,
                &posterior.mu_alpha,
                &posterior.mu_beta,
                None,
            )
        })
        .collect();
    logliks.iter().sum::<f64>() - posterior.kl_alpha() - posterior.kl_beta()
}

/// Which structural inputs get severed and replaced by fresh noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intervention {
    /// Randomize the matching scores: clicks driven by popularity alone.
    DoM,
    /// Randomize the popularity scores: clicks driven by preference alone.
    DoB,
    /// Randomize both.
    DoBoth,
}

const SM_STREAM_TAG: u64 = 11;
const SP_STREAM_TAG: u64 = 13;

/// Abduction-action-prediction for one user: noise fixed at the posterior
/// means, the intervened score column(s) replaced by per-(user, item)
/// standard-normal samples under `seed`, and the distributions recomputed.
pub fn intervene(
    params: &ScmParams,
    posterior: &ExogenousPosterior,
    dataset: &Dataset,
    user: u32,
    which: Intervention,
    seed: u64,
) -> ScmDistributions {
    let profile = dataset.profile(user);
    let mut s_m_row = matching_row(dataset, profile);
    let mut s_p_row = popularity_row(dataset, profile);
    if matches!(which, Intervention::DoM | Intervention::DoBoth) {
        let mut rng = seeds::substream_rng(seeds::derive(seed, SM_STREAM_TAG), user as u64);
        for v in s_m_row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    if matches!(which, Intervention::DoB | Intervention::DoBoth) {
        let mut rng = seeds::substream_rng(seeds::derive(seed, SP_STREAM_TAG), user as u64);
        for v in s_p_row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    scm_forward(
        params,
        user,
        &s_m_row,
        &s_p_row,
        &posterior.mu_alpha,
        &posterior.mu_beta,
    )
}

/// Factual forward pass at posterior-mean noise.
pub fn factual(
    params: &ScmParams,
    posterior: &ExogenousPosterior,
    dataset: &Dataset,
    user: u32,
) -> ScmDistributions {
    let profile = dataset.profile(user);
    let s_m_row = matching_row(dataset, profile);
    let s_p_row = popularity_row(dataset, profile);
    scm_forward(
        params,
        user,
        &s_m_row,
        &s_p_row,
        &posterior.mu_alpha,
        &posterior.mu_beta,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualUser {
    pub x: Vec<u32>,
    pub x_p: Vec<u32>,
    pub x_m: Vec<u32>,
}

/// Top-N counterfactual item sets per user.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CounterfactualSets {
    pub per_user: BTreeMap<u32, CounterfactualUser>,
    pub top_n: usize,
}

fn top_n_items(scores: &[f64], n: usize) -> Vec<u32> {
    rank_descending(scores).into_iter().take(n).collect()
}

/// Generate the three counterfactual sets for each user: do(M) isolates
/// popularity-driven clicks (feeding X_p), do(B) isolates preference-driven
/// clicks (feeding X_m), and intervening on both gives the debiased
/// interaction set.
pub fn generate_counterfactuals(
    params: &ScmParams,
    posterior: &ExogenousPosterior,
    dataset: &Dataset,
    users: &[u32],
    config: &ScmConfig,
) -> CounterfactualSets {
    let seed = config.seed;
    let per_user: BTreeMap<u32, CounterfactualUser> = users
        .par_iter()
        .map(|&u| {
            let do_m = intervene(params, posterior, dataset, u, Intervention::DoM, seed);
            let do_b = intervene(params, posterior, dataset, u, Intervention::DoB, seed);
            let do_both = intervene(params, posterior, dataset, u, Intervention::DoBoth, seed);
            (
                u,
                CounterfactualUser {
                    x: top_n_items(&do_both.c, config.top_n),
                    x_p: top_n_items(&do_m.c, config.top_n),
                    x_m: top_n_items(&do_b.c, config.top_n),
                },
            )
        })
        .collect();
    CounterfactualSets {
        per_user,
        top_n: config.top_n,
    }
}

/// Union the factual sets with the counterfactual ones. Users without
/// counterfactual data pass through unchanged.
pub fn augment(
    base: &BTreeMap<u32, UserSets>,
    counter: &CounterfactualSets,
) -> BTreeMap<u32, UserSets> {
    let union = |a: &[u32], b: &[u32]| -> Vec<u32> {
        let mut out = a.to_vec();
        out.extend_from_slice(b);
        out.sort_unstable();
        out.dedup();
        out
    };
    base.iter()
        .map(|(&u, sets)| {
            let enhanced = match counter.per_user.get(&u) {
                Some(c) => UserSets {
                    x: union(&sets.x, &c.x),
                    x_p: union(&sets.x_p, &c.x_p),
                    x_m: union(&sets.x_m, &c.x_m),
                },
                None => sets.clone(),
            };
            (u, enhanced)
        })
        .collect()
}

/// Write counterfactual sets as delimited text: `user<TAB>TAG<TAB>i1|i2|...`
/// with external ids, one line per (user, set).
pub fn write_counterfactual_sets(
    path: &Path,
    dataset: &Dataset,
    sets: &CounterfactualSets,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (&u, c) in &sets.per_user {
        for (tag, items) in [("X", &c.x), ("XP", &c.x_p), ("XM", &c.x_m)] {
            let joined: Vec<&str> = items
                .iter()
                .map(|&i| dataset.item_ids[i as usize].as_str())
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}",
                dataset.user_ids[u as usize],
                tag,
                joined.join("|")
            )?;
        }
    }
    Ok(())
}

/// Parse the counterfactual sets format back. Unknown users or items are an
/// error: the sets only make sense against the dataset they were generated
/// from.
pub fn load_counterfactual_sets(path: &Path, dataset: &Dataset) -> Result<CounterfactualSets> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        command: "augment".to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut per_user: BTreeMap<u32, CounterfactualUser> = BTreeMap::new();
    let mut top_n = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        let user = *dataset
            .user_index
            .get(fields[0])
            .ok_or_else(|| parse_err(format!("unknown user {:?}", fields[0])))?;
        let items: Vec<u32> = fields[2]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|s| {
                dataset
                    .item_index
                    .get(s)
                    .copied()
                    .ok_or_else(|| parse_err(format!("unknown item {s:?}")))
            })
            .collect::<Result<_>>()?;
        top_n = top_n.max(items.len());
        let entry = per_user.entry(user).or_default();
        match fields[1] {
            "X" => entry.x = items,
            "XP" => entry.x_p = items,
            "XM" => entry.x_m = items,
            other => return Err(parse_err(format!("unknown set tag {other:?}"))),
        }
    }
    Ok(CounterfactualSets { per_user, top_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;

    fn grid_dataset(n_users: usize, n_items: usize) -> Dataset {
        let users: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
        let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let profiles: Vec<Vec<u32>> = (0..n_users)
            .map(|u| {
                (0..n_items as u32)
                    .filter(|i| (u as u32 + i) % 3 == 0 || *i == u as u32 % n_items as u32)
                    .collect()
            })
            .collect();
        let cats: Vec<Vec<u32>> = (0..n_items).map(|i| vec![(i % 3) as u32]).collect();
        Dataset::from_parts(users, items, profiles, cats, vec!["a".into(), "b".into(), "c".into()])
    }

    fn tiny_config(seed: u64) -> ScmConfig {
        ScmConfig {
            embed_dim: 8,
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 16,
            top_n: 3,
            seed,
            ..ScmConfig::default()
        }
    }

    #[test]
    fn singleton_item_universe_gives_unit_distributions() {
        let cfg = tiny_config(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ScmParams::init(1, 1, &cfg, &mut rng);
        let d = scm_forward(&params, 0, &[0.4], &[0.6], &[0.1], &[0.2]);
        assert_eq!(d.m, vec![1.0]);
        assert_eq!(d.b, vec![1.0]);
        assert_eq!(d.c, vec![1.0]);
    }

    #[test]
    fn equal_logits_give_uniform_distributions() {
        let cfg = ScmConfig {
            embed_dim: 4,
            init_scale: 0.0,
            ..tiny_config(2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ScmParams::init(1, 5, &cfg, &mut rng);
        let d = scm_forward(&params, 0, &[0.3; 5], &[0.7; 5], &[1.0; 5], &[1.0; 5]);
        for v in d.m.iter().chain(&d.b).chain(&d.c) {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        let cfg = tiny_config(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ScmParams::init(2, 3, &cfg, &mut rng);
        let s_m = [0.2, -0.4, 0.9];
        let s_p = [0.5, 0.1, 0.3];
        let alpha = [0.7, -0.3, 0.2];
        let beta = [-0.1, 0.8, 0.4];
        let d = scm_forward(&params, 1, &s_m, &s_p, &alpha, &beta);

        let e_u = params.user_emb.row(1);
        let mut m_logits = [0.0; 3];
        let mut b_logits = [0.0; 3];
        for i in 0..3 {
            let mut affinity = 0.0;
            for j in 0..cfg.embed_dim {
                affinity += e_u[j] * params.item_emb.row(i)[j];
            }
            m_logits[i] = affinity + params.w_m[i] * s_m[i] * alpha[i];
            b_logits[i] = params.w_b[i] * s_p[i] * beta[i];
        }
        let sm = |l: &[f64; 3]| {
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            [l[0].exp() / z, l[1].exp() / z, l[2].exp() / z]
        };
        let m = sm(&m_logits);
        let b = sm(&b_logits);
        let c_logits = [m[0] + b[0], m[1] + b[1], m[2] + b[2]];
        let c = sm(&c_logits);
        for i in 0..3 {
            assert!((d.m[i] - m[i]).abs() < 1e-10);
            assert!((d.b[i] - b[i]).abs() < 1e-10);
            assert!((d.c[i] - c[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let ds = grid_dataset(6, 9);
        let cfg = tiny_config(4);
        let users: Vec<u32> = (0..6).collect();
        let (params, posterior, _) = train_scm(&ds, &users, &ScmConfig { epochs: 3, ..cfg }).unwrap();
        for u in 0..6u32 {
            let d = factual(&params, &posterior, &ds, u);
            assert!((d.m.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!((d.b.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!((d.c.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_click_becomes_likely_after_training() {
        // One user, one clicked item of two.
        let ds = Dataset::from_parts(
            vec!["u".into()],
            vec!["a".into(), "b".into()],
            vec![vec![0]],
            vec![vec![0], vec![1]],
            vec!["x".into(), "y".into()],
        );
        let cfg = ScmConfig {
            embed_dim: 4,
            learning_rate: 0.1,
            epochs: 120,
            batch_size: 1,
            top_n: 1,
            seed: 5,
            ..ScmConfig::default()
        };
        let (params, posterior, _) = train_scm(&ds, &[0], &cfg).unwrap();
        let d = factual(&params, &posterior, &ds, 0);
        assert!(d.c[0] > 0.5, "C(clicked) = {}", d.c[0]);
    }

    #[test]
    fn elbo_improves_on_small_log() {
        let ds = grid_dataset(10, 10);
        let users: Vec<u32> = (0..10).collect();
        let cfg = tiny_config(6);
        let (_, _, trace) = train_scm(&ds, &users, &cfg).unwrap();
        assert!(
            trace.first().unwrap() < trace.last().unwrap(),
            "ELBO did not improve: {:?} -> {:?}",
            trace.first(),
            trace.last()
        );
    }

    #[test]
    fn zero_epochs_leave_posterior_at_prior() {
        let ds = grid_dataset(4, 6);
        let cfg = ScmConfig {
            epochs: 0,
            ..tiny_config(7)
        };
        let (_, posterior, trace) = train_scm(&ds, &[0, 1, 2, 3], &cfg).unwrap();
        assert_eq!(posterior, ExogenousPosterior::standard(6));
        assert_eq!(posterior.kl_alpha(), 0.0);
        assert!(trace.is_empty());
    }

    #[test]
    fn interventions_are_dead_with_zero_weights() {
        let ds = grid_dataset(4, 6);
        let cfg = tiny_config(8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ScmParams::init(4, 6, &cfg, &mut rng);
        params.w_m = vec![0.0; 6];
        params.w_b = vec![0.0; 6];
        let posterior = ExogenousPosterior::standard(6);
        let fact = factual(&params, &posterior, &ds, 2);
        let both = intervene(&params, &posterior, &ds, 2, Intervention::DoBoth, 99);
        assert_eq!(fact, both);
    }

    #[test]
    fn interventions_are_seed_deterministic() {
        let ds = grid_dataset(4, 6);
        let cfg = tiny_config(9);
        let (params, posterior, _) =
            train_scm(&ds, &[0, 1, 2, 3], &ScmConfig { epochs: 2, ..cfg }).unwrap();
        let a = intervene(&params, &posterior, &ds, 1, Intervention::DoM, 42);
        let b = intervene(&params, &posterior, &ds, 1, Intervention::DoM, 42);
        assert_eq!(a, b);
        let c = intervene(&params, &posterior, &ds, 1, Intervention::DoM, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn do_b_leaves_matching_distribution_unchanged() {
        let ds = grid_dataset(5, 8);
        let cfg = tiny_config(10);
        let (params, posterior, _) =
            train_scm(&ds, &[0, 1, 2, 3, 4], &ScmConfig { epochs: 3, ..cfg }).unwrap();
        for u in 0..5u32 {
            let fact = factual(&params, &posterior, &ds, u);
            let do_b = intervene(&params, &posterior, &ds, u, Intervention::DoB, 7);
            assert_eq!(fact.m, do_b.m, "user {u}");
            let do_m = intervene(&params, &posterior, &ds, u, Intervention::DoM, 7);
            assert_eq!(fact.b, do_m.b, "user {u}");
        }
    }

    #[test]
    fn top_n_saturates_at_item_universe() {
        let ds = grid_dataset(3, 5);
        let cfg = ScmConfig {
            top_n: 50,
            epochs: 2,
            ..tiny_config(11)
        };
        let (params, posterior, _) = train_scm(&ds, &[0, 1, 2], &cfg).unwrap();
        let sets = generate_counterfactuals(&params, &posterior, &ds, &[0, 1, 2], &cfg);
        for c in sets.per_user.values() {
            assert_eq!(c.x.len(), 5);
            let mut sorted = c.x.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn top_n_picks_the_largest_entries() {
        let scores = [0.1, 0.9, 0.3, 0.9, 0.05];
        // Tie at 0.9 broken toward the lower index.
        assert_eq!(top_n_items(&scores, 2), vec![1, 3]);
        assert_eq!(top_n_items(&scores, 3), vec![1, 3, 2]);
    }

    #[test]
    fn augment_unions_and_bounds() {
        let mut base = BTreeMap::new();
        base.insert(
            0,
            UserSets {
                x: vec![1],
                x_p: vec![2],
                x_m: vec![],
            },
        );
        let mut counter = CounterfactualSets {
            per_user: BTreeMap::new(),
            top_n: 2,
        };
        counter.per_user.insert(
            0,
            CounterfactualUser {
                x: vec![1, 3],
                x_p: vec![2],
                x_m: vec![4, 5],
            },
        );
        let out = augment(&base, &counter);
        assert_eq!(out[&0].x, vec![1, 3]);
        assert_eq!(out[&0].x_p, vec![2]);
        assert_eq!(out[&0].x_m, vec![4, 5]);
        assert!(out[&0].x.len() <= 1 + counter.top_n);

        // Empty counterfactuals: enhanced == factual.
        let empty = CounterfactualSets::default();
        let same = augment(&base, &empty);
        assert_eq!(same[&0].x, base[&0].x);
        assert_eq!(same[&0].x_p, base[&0].x_p);
    }

    #[test]
    fn scm_gradients_match_finite_differences() {
        let ds = grid_dataset(3, 4);
        let users: Vec<u32> = vec![0, 1, 2];
        let d = 3usize;
        let cfg = ScmConfig {
            embed_dim: d,
            ..tiny_config(21)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = ScmParams::init(3, 4, &cfg, &mut rng);
        let mut posterior = ExogenousPosterior::standard(4);
        for i in 0..4 {
            posterior.mu_alpha[i] = 0.1 * (i as f64) - 0.2;
            posterior.lv_alpha[i] = 0.3 - 0.1 * (i as f64);
            posterior.mu_beta[i] = 0.05 * (i as f64);
            posterior.lv_beta[i] = -0.2 + 0.1 * (i as f64);
        }
        let eps_a = [0.4, -0.9, 0.2, 1.1];
        let eps_b = [-0.3, 0.8, -1.2, 0.5];
        let kl_share = 1.0; // whole user set in one batch

        // Scalar objective with the noise draw held fixed.
        let objective = |p: &ScmParams, q: &ExogenousPosterior| -> f64 {
            let alpha: Vec<f64> = (0..4)
                .map(|i| q.mu_alpha[i] + eps_a[i] * (q.lv_alpha[i] / 2.0).exp())
                .collect();
            let beta: Vec<f64> = (0..4)
                .map(|i| q.mu_beta[i] + eps_b[i] * (q.lv_beta[i] / 2.0).exp())
                .collect();
            let loglik: f64 = users
                .iter()
                .map(|&u| user_loglik_grads(p, &ds, u, &alpha, &beta, None))
                .sum();
            -loglik + kl_share * (q.kl_alpha() + q.kl_beta())
        };

        // Analytic gradients, assembled the same way the train loop does.
        let mut grads = ScmGrads::zeros(3, 4, d);
        let sigma_a: Vec<f64> = (0..4).map(|i| (posterior.lv_alpha[i] / 2.0).exp()).collect();
        let sigma_b: Vec<f64> = (0..4).map(|i| (posterior.lv_beta[i] / 2.0).exp()).collect();
        let alpha: Vec<f64> = (0..4).map(|i| posterior.mu_alpha[i] + eps_a[i] * sigma_a[i]).collect();
        let beta: Vec<f64> = (0..4).map(|i| posterior.mu_beta[i] + eps_b[i] * sigma_b[i]).collect();
        let repar_a: Vec<f64> = (0..4).map(|i| eps_a[i] * sigma_a[i] / 2.0).collect();
        let repar_b: Vec<f64> = (0..4).map(|i| eps_b[i] * sigma_b[i] / 2.0).collect();
        for &u in &users {
            user_loglik_grads(&params, &ds, u, &alpha, &beta, Some((&mut grads, &repar_a, &repar_b)));
        }
        for i in 0..4 {
            grads.mu_alpha[i] += kl_share * posterior.mu_alpha[i];
            grads.lv_alpha[i] += kl_share * 0.5 * (posterior.lv_alpha[i].exp() - 1.0);
            grads.mu_beta[i] += kl_share * posterior.mu_beta[i];
            grads.lv_beta[i] += kl_share * 0.5 * (posterior.lv_beta[i].exp() - 1.0);
        }

        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let mut worst: f64 = 0.0;
        // Embeddings and weights.
        for idx in 0..params.user_emb.data.len() {
            let mut plus = params.clone();
            plus.user_emb.data[idx] += h;
            let mut minus = params.clone();
            minus.user_emb.data[idx] -= h;
            let fd = (objective(&plus, &posterior) - objective(&minus, &posterior)) / (2.0 * h);
            worst = worst.max(rel(grads.user_emb.data[idx], fd));
        }
        for idx in 0..params.item_emb.data.len() {
            let mut plus = params.clone();
            plus.item_emb.data[idx] += h;
            let mut minus = params.clone();
            minus.item_emb.data[idx] -= h;
            let fd = (objective(&plus, &posterior) - objective(&minus, &posterior)) / (2.0 * h);
            worst = worst.max(rel(grads.item_emb.data[idx], fd));
        }
        for i in 0..4 {
            let mut plus = params.clone();
            plus.w_m[i] += h;
            let mut minus = params.clone();
            minus.w_m[i] -= h;
            let fd = (objective(&plus, &posterior) - objective(&minus, &posterior)) / (2.0 * h);
            worst = worst.max(rel(grads.w_m[i], fd));
            let mut plus = params.clone();
            plus.w_b[i] += h;
            let mut minus = params.clone();
            minus.w_b[i] -= h;
            let fd = (objective(&plus, &posterior) - objective(&minus, &posterior)) / (2.0 * h);
            worst = worst.max(rel(grads.w_b[i], fd));
        }
        // Posterior parameters.
        for i in 0..4 {
            for field in 0..4 {
                let mut plus = posterior.clone();
                let mut minus = posterior.clone();
                let (gp, pm) = match field {
                    0 => (grads.mu_alpha[i], (&mut plus.mu_alpha, &mut minus.mu_alpha)),
                    1 => (grads.lv_alpha[i], (&mut plus.lv_alpha, &mut minus.lv_alpha)),
                    2 => (grads.mu_beta[i], (&mut plus.mu_beta, &mut minus.mu_beta)),
                    _ => (grads.lv_beta[i], (&mut plus.lv_beta, &mut minus.lv_beta)),
                };
                pm.0[i] += h;
                pm.1[i] -= h;
                let fd = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * h);
                worst = worst.max(rel(gp, fd));
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn counterfactual_sets_round_trip_through_text() {
        let ds = grid_dataset(3, 5);
        let cfg = ScmConfig {
            epochs: 2,
            ..tiny_config(12)
        };
        let (params, posterior, _) = train_scm(&ds, &[0, 1, 2], &cfg).unwrap();
        let sets = generate_counterfactuals(&params, &posterior, &ds, &[0, 1, 2], &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counterfactual.tsv");
        write_counterfactual_sets(&path, &ds, &sets).unwrap();
        let loaded = load_counterfactual_sets(&path, &ds).unwrap();
        assert_eq!(loaded.per_user, sets.per_user);
    }
}

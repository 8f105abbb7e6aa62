//! Forward pass and loss.

use serde::{Deserialize, Serialize};

use crate::bias::UserSets;
use crate::error::{Error, Result};
use crate::math::{axpy, dot, log_sum_exp};
use crate::vae::params::{GaussianHead, VaeParams};

/// Sparse view of an L2-normalized multi-hot item set: every listed item
/// carries the same weight `1/sqrt(len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub items: Vec<u32>,
    pub weight: f64,
}

impl Bag {
    pub fn new(items: &[u32]) -> Option<Bag> {
        if items.is_empty() {
            return None;
        }
        let mut items = items.to_vec();
        items.sort_unstable();
        items.dedup();
        let weight = 1.0 / (items.len() as f64).sqrt();
        Some(Bag { items, weight })
    }

    /// The multinomial target weight: counts normalized to sum 1.
    pub fn target_weight(&self) -> f64 {
        1.0 / self.items.len() as f64
    }
}

/// Weighting of the loss terms at one training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Effective KL weight (after warm-up scaling).
    pub kl: f64,
    pub omega_p: f64,
    pub omega_m: f64,
    /// Regularize all three posteriors toward the prior, or only the
    /// profile posterior.
    pub kl_all_heads: bool,
}

/// Loss terms for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Negative multinomial log-likelihood of the profile.
    pub recon: f64,
    /// Summed KL of the regularized posteriors.
    pub kl: f64,
    pub aux_p: f64,
    pub aux_m: f64,
    /// recon + kl_weight * kl + omega_p * aux_p + omega_m * aux_m.
    pub total: f64,
}

pub(crate) struct BranchTrace {
    pub bag: Bag,
    /// tanh hidden activations.
    pub h: Vec<f64>,
    pub head: GaussianHead,
    pub sigma: Vec<f64>,
}

pub(crate) struct DecodeTrace {
    pub z: Vec<f64>,
    /// tanh hidden activations.
    pub hd: Vec<f64>,
    /// softmax over item logits.
    pub probs: Vec<f64>,
    pub target: Bag,
}

/// Everything the backward pass needs for one user.
pub struct UserTrace {
    pub(crate) x: BranchTrace,
    pub(crate) m: Option<BranchTrace>,
    pub(crate) p: Option<BranchTrace>,
    pub(crate) eps: Vec<f64>,
    pub(crate) main: DecodeTrace,
    pub(crate) aux_p: Option<DecodeTrace>,
    pub(crate) aux_m: Option<DecodeTrace>,
    pub loss: LossBreakdown,
}

pub(crate) fn encode_trace(params: &VaeParams, bag: &Bag) -> BranchTrace {
    let hidden = params.dims.hidden;
    let latent = params.dims.latent;
    let mut pre = params.enc_b1.clone();
    for &i in &bag.items {
        axpy(&mut pre, bag.weight, params.enc_w1.row(i as usize));
    }
    let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
    let mut mu = vec![0.0; latent];
    let mut lv = vec![0.0; latent];
    for l in 0..latent {
        mu[l] = dot(params.w_mu.row(l), &h) + params.b_mu[l];
        lv[l] = dot(params.w_lv.row(l), &h) + params.b_lv[l];
    }
    debug_assert_eq!(h.len(), hidden);
    let head = GaussianHead {
        mu,
        log_var: lv,
    };
    let sigma = head.sigma();
    BranchTrace {
        bag: bag.clone(),
        h,
        head,
        sigma,
    }
}

/// Encoder forward pass on a dense input of length `n_items`.
pub fn encode(params: &VaeParams, input: &[f64]) -> Result<GaussianHead> {
    if input.len() != params.dims.n_items {
        return Err(Error::DimensionMismatch(format!(
            "encode input length {} != n_items {}",
            input.len(),
            params.dims.n_items
        )));
    }
    let hidden = params.dims.hidden;
    let latent = params.dims.latent;
    let mut pre = params.enc_b1.clone();
    for (i, &v) in input.iter().enumerate() {
        if v != 0.0 {
            axpy(&mut pre, v, params.enc_w1.row(i));
        }
    }
    let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
    debug_assert_eq!(h.len(), hidden);
    let mut mu = vec![0.0; latent];
    let mut lv = vec![0.0; latent];
    for l in 0..latent {
        mu[l] = dot(params.w_mu.row(l), &h) + params.b_mu[l];
        lv[l] = dot(params.w_lv.row(l), &h) + params.b_lv[l];
    }
    let head = GaussianHead { mu, log_var: lv };
    if head.mu.iter().chain(&head.log_var).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite encoder output".to_string()));
    }
    Ok(head)
}

/// mu + eps ⊙ exp(log_var / 2).
pub fn reparameterize(head: &GaussianHead, eps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(head.mu.len(), eps.len());
    head.mu
        .iter()
        .zip(&head.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + e * (lv / 2.0).exp())
        .collect()
}

/// (mu_x - mu_m - mu_p) + eps ⊙ (sigma_x - sigma_m - sigma_p), with one
/// shared eps. `None` stands for the neutral head of an empty extreme set
/// and contributes nothing.
pub fn debiased_latent(
    head_x: &GaussianHead,
    head_m: Option<&GaussianHead>,
    head_p: Option<&GaussianHead>,
    eps: &[f64],
) -> Vec<f64> {
    let latent = head_x.mu.len();
    let mut mu = head_x.mu.clone();
    let mut sigma = head_x.sigma();
    for head in [head_m, head_p].into_iter().flatten() {
        let s = head.sigma();
        for l in 0..latent {
            mu[l] -= head.mu[l];
            sigma[l] -= s[l];
        }
    }
    (0..latent).map(|l| mu[l] + eps[l] * sigma[l]).collect()
}

/// Decoder forward pass: item logits for a latent vector.
pub fn decode(params: &VaeParams, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != params.dims.latent {
        return Err(Error::DimensionMismatch(format!(
            "decode input length {} != latent {}",
            z.len(),
            params.dims.latent
        )));
    }
    let logits = decode_raw(params, z);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite decoder output".to_string()));
    }
    Ok(logits)
}

pub(crate) fn decode_raw(params: &VaeParams, z: &[f64]) -> Vec<f64> {
    let hidden = params.dims.hidden;
    let n_items = params.dims.n_items;
    let mut hd = vec![0.0; hidden];
    for j in 0..hidden {
        hd[j] = (dot(params.dec_w1.row(j), z) + params.dec_b1[j]).tanh();
    }
    let mut logits = vec![0.0; n_items];
    for i in 0..n_items {
        logits[i] = dot(params.dec_w2.row(i), &hd) + params.dec_b2[i];
    }
    logits
}

pub(crate) fn decode_trace(params: &VaeParams, z: Vec<f64>, target: Bag) -> (DecodeTrace, f64) {
    let hidden = params.dims.hidden;
    let n_items = params.dims.n_items;
    let mut hd = vec![0.0; hidden];
    for j in 0..hidden {
        hd[j] = (dot(params.dec_w1.row(j), &z) + params.dec_b1[j]).tanh();
    }
    let mut logits = vec![0.0; n_items];
    for i in 0..n_items {
        logits[i] = dot(params.dec_w2.row(i), &hd) + params.dec_b2[i];
    }
    let lse = log_sum_exp(&logits);
    // Cross entropy against the count-normalized multinomial target.
    let tw = target.target_weight();
    let mut ce = 0.0;
    for &i in &target.items {
        ce -= tw * (logits[i as usize] - lse);
    }
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    (
        DecodeTrace {
            z,
            hd,
            probs,
            target,
        },
        ce,
    )
}

/// Full forward pass for one user: encode the profile and the nonempty
/// extreme sets, form the three latents under one shared eps, decode, and
/// assemble the loss terms.
pub fn forward_user(
    params: &VaeParams,
    sets: &UserSets,
    eps: &[f64],
    weights: &LossWeights,
) -> Result<UserTrace> {
    let x_bag = Bag::new(&sets.x).ok_or_else(|| {
        Error::EmptyInput("user has no profile items to encode".to_string())
    })?;
    let x = encode_trace(params, &x_bag);
    let m = Bag::new(&sets.x_m).map(|b| encode_trace(params, &b));
    let p = Bag::new(&sets.x_p).map(|b| encode_trace(params, &b));

    let z = debiased_latent(
        &x.head,
        m.as_ref().map(|t| &t.head),
        p.as_ref().map(|t| &t.head),
        eps,
    );
    let (main, recon) = decode_trace(params, z, x_bag);

    let mut kl = x.head.kl_to_standard_normal();
    if weights.kl_all_heads {
        if let Some(t) = &m {
            kl += t.head.kl_to_standard_normal();
        }
        if let Some(t) = &p {
            kl += t.head.kl_to_standard_normal();
        }
    }

    let (aux_p, aux_p_loss) = match &p {
        Some(t) => {
            let z_p = reparameterize(&t.head, eps);
            let (trace, ce) = decode_trace(params, z_p, t.bag.clone());
            (Some(trace), ce)
        }
        None => (None, 0.0),
    };
    let (aux_m, aux_m_loss) = match &m {
        Some(t) => {
            let z_m = reparameterize(&t.head, eps);
            let (trace, ce) = decode_trace(params, z_m, t.bag.clone());
            (Some(trace), ce)
        }
        None => (None, 0.0),
    };

    let total = recon + weights.kl * kl + weights.omega_p * aux_p_loss + weights.omega_m * aux_m_loss;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: recon={recon} kl={kl} aux_p={aux_p_loss} aux_m={aux_m_loss}"
        )));
    }
    Ok(UserTrace {
        x,
        m,
        p,
        eps: eps.to_vec(),
        main,
        aux_p,
        aux_m,
        loss: LossBreakdown {
            recon,
            kl,
            aux_p: aux_p_loss,
            aux_m: aux_m_loss,
            total,
        },
    })
}

/// Loss terms for one user's item sets under the given weights.
pub fn loss(
    params: &VaeParams,
    x: &[u32],
    x_p: &[u32],
    x_m: &[u32],
    eps: &[f64],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let sets = UserSets {
        x: x.to_vec(),
        x_p: x_p.to_vec(),
        x_m: x_m.to_vec(),
    };
    Ok(forward_user(params, &sets, eps, weights)?.loss)
}

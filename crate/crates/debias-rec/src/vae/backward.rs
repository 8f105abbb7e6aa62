//! Hand-derived gradients of the joint loss.
//!
//! The chain runs decoder -> latent -> encoder for each of the three decode
//! paths. The shared eps is a constant; the subtraction latent routes the
//! main reconstruction gradient into the bias branches with a flipped sign,
//! and the sigma path picks up an extra eps factor plus the
//! d sigma / d log_var = sigma/2 term.

use crate::math::axpy;
use crate::vae::forward::{BranchTrace, DecodeTrace, LossWeights, UserTrace};
use crate::vae::params::VaeParams;

/// Gradient storage; same shapes as the parameters.
pub type VaeGrads = VaeParams;

/// Backprop through one decoder pass whose cross entropy enters the total
/// with weight `w`. Returns d total / d z.
fn backprop_decode(params: &VaeParams, d: &DecodeTrace, w: f64, out: &mut VaeGrads) -> Vec<f64> {
    let n_items = params.dims.n_items;
    let hidden = params.dims.hidden;
    let latent = params.dims.latent;

    // d ce / d logits = probs - target (target sums to 1).
    let mut dlogits: Vec<f64> = d.probs.iter().map(|p| w * p).collect();
    let tw = w * d.target.target_weight();
    for &i in &d.target.items {
        dlogits[i as usize] -= tw;
    }

    let mut dhd = vec![0.0; hidden];
    for i in 0..n_items {
        let g = dlogits[i];
        axpy(out.dec_w2.row_mut(i), g, &d.hd);
        axpy(&mut dhd, g, params.dec_w2.row(i));
    }
    axpy(&mut out.dec_b2, 1.0, &dlogits);

    // tanh'
    let dpre: Vec<f64> = dhd
        .iter()
        .zip(&d.hd)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    let mut dz = vec![0.0; latent];
    for j in 0..hidden {
        axpy(out.dec_w1.row_mut(j), dpre[j], &d.z);
        axpy(&mut dz, dpre[j], params.dec_w1.row(j));
    }
    axpy(&mut out.dec_b1, 1.0, &dpre);
    dz
}

/// Backprop one encoder branch given gradients on its mu and log_var.
fn backprop_branch(
    params: &VaeParams,
    b: &BranchTrace,
    dmu: &[f64],
    dlv: &[f64],
    out: &mut VaeGrads,
) {
    let hidden = params.dims.hidden;
    let latent = params.dims.latent;
    let mut dh = vec![0.0; hidden];
    for l in 0..latent {
        axpy(out.w_mu.row_mut(l), dmu[l], &b.h);
        axpy(out.w_lv.row_mut(l), dlv[l], &b.h);
        axpy(&mut dh, dmu[l], params.w_mu.row(l));
        axpy(&mut dh, dlv[l], params.w_lv.row(l));
    }
    axpy(&mut out.b_mu, 1.0, dmu);
    axpy(&mut out.b_lv, 1.0, dlv);

    let dpre: Vec<f64> = dh
        .iter()
        .zip(&b.h)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    for &i in &b.bag.items {
        axpy(out.enc_w1.row_mut(i as usize), b.bag.weight, &dpre);
    }
    axpy(&mut out.enc_b1, 1.0, &dpre);
}

/// Accumulate d total / d params for one user into `out` (no batch scaling).
pub fn backward(params: &VaeParams, trace: &UserTrace, weights: &LossWeights, out: &mut VaeGrads) {
    let latent = params.dims.latent;
    let eps = &trace.eps;

    let dz_main = backprop_decode(params, &trace.main, 1.0, out);
    let dz_aux_p = match (&trace.aux_p, weights.omega_p) {
        (Some(d), w) if w != 0.0 => Some(backprop_decode(params, d, w, out)),
        _ => None,
    };
    let dz_aux_m = match (&trace.aux_m, weights.omega_m) {
        (Some(d), w) if w != 0.0 => Some(backprop_decode(params, d, w, out)),
        _ => None,
    };

    // Profile branch: z = mu_x + eps ⊙ sigma_x + (bias terms).
    {
        let b = &trace.x;
        let mut dmu = dz_main.clone();
        let mut dlv = vec![0.0; latent];
        for l in 0..latent {
            let dsig = dz_main[l] * eps[l];
            dlv[l] = dsig * b.sigma[l] / 2.0;
            // KL: d/dmu = mu, d/dlog_var = (e^lv - 1)/2.
            dmu[l] += weights.kl * b.head.mu[l];
            dlv[l] += weights.kl * 0.5 * (b.head.log_var[l].exp() - 1.0);
        }
        backprop_branch(params, b, &dmu, &dlv, out);
    }

    // Bias branches enter z negated and their own aux path positively.
    let bias_branch = |b: &BranchTrace, dz_aux: Option<&Vec<f64>>, out: &mut VaeGrads| {
        let mut dmu = vec![0.0; latent];
        let mut dlv = vec![0.0; latent];
        for l in 0..latent {
            let mut dmu_l = -dz_main[l];
            let mut dsig_l = -dz_main[l] * eps[l];
            if let Some(da) = dz_aux {
                dmu_l += da[l];
                dsig_l += da[l] * eps[l];
            }
            dmu[l] = dmu_l;
            dlv[l] = dsig_l * b.sigma[l] / 2.0;
            if weights.kl_all_heads {
                dmu[l] += weights.kl * b.head.mu[l];
                dlv[l] += weights.kl * 0.5 * (b.head.log_var[l].exp() - 1.0);
            }
        }
        backprop_branch(params, b, &dmu, &dlv, out);
    };
    if let Some(b) = &trace.m {
        bias_branch(b, dz_aux_m.as_ref(), out);
    }
    if let Some(b) = &trace.p {
        bias_branch(b, dz_aux_p.as_ref(), out);
    }
}

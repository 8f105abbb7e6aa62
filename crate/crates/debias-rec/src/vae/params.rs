//! Network parameters and initialization.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Mat;

/// Layer sizes: items -> hidden -> two parallel latent heads, and the mirror
/// decoder latent -> hidden -> items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeDims {
    pub n_items: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Gaussian posterior produced by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianHead {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (lv / 2.0).exp()).collect()
    }

    /// Closed-form KL(N(mu, sigma^2) || N(0, I)).
    pub fn kl_to_standard_normal(&self) -> f64 {
        let mut kl = 0.0;
        for (m, lv) in self.mu.iter().zip(&self.log_var) {
            kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
        kl
    }
}

/// All weights of the encoder and decoder.
///
/// Layouts are chosen for contiguous row access in the hot loops:
/// `enc_w1` is input-major (`[n_items][hidden]`) so a sparse bag forward is a
/// sum of item rows; every other matrix is output-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub dims: VaeDims,
    /// `[n_items][hidden]`
    pub enc_w1: Mat,
    pub enc_b1: Vec<f64>,
    /// `[latent][hidden]`
    pub w_mu: Mat,
    pub b_mu: Vec<f64>,
    /// `[latent][hidden]`
    pub w_lv: Mat,
    pub b_lv: Vec<f64>,
    /// `[hidden][latent]`
    pub dec_w1: Mat,
    pub dec_b1: Vec<f64>,
    /// `[n_items][hidden]`
    pub dec_w2: Mat,
    pub dec_b2: Vec<f64>,
}

fn init_mat(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Mat {
    // Uniform scaled by fan-in (variance 1/fan_in).
    let limit = (3.0 / fan_in as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.random_range(-limit..limit);
    }
    m
}

impl VaeParams {
    /// Seeded fan-in-scaled uniform weights, zero biases.
    pub fn init(dims: VaeDims, rng: &mut ChaCha8Rng) -> Self {
        let VaeDims {
            n_items,
            hidden,
            latent,
        } = dims;
        VaeParams {
            dims,
            enc_w1: init_mat(n_items, hidden, n_items, rng),
            enc_b1: vec![0.0; hidden],
            w_mu: init_mat(latent, hidden, hidden, rng),
            b_mu: vec![0.0; latent],
            w_lv: init_mat(latent, hidden, hidden, rng),
            b_lv: vec![0.0; latent],
            dec_w1: init_mat(hidden, latent, latent, rng),
            dec_b1: vec![0.0; hidden],
            dec_w2: init_mat(n_items, hidden, hidden, rng),
            dec_b2: vec![0.0; n_items],
        }
    }

    pub fn zeros(dims: VaeDims) -> Self {
        let VaeDims {
            n_items,
            hidden,
            latent,
        } = dims;
        VaeParams {
            dims,
            enc_w1: Mat::zeros(n_items, hidden),
            enc_b1: vec![0.0; hidden],
            w_mu: Mat::zeros(latent, hidden),
            b_mu: vec![0.0; latent],
            w_lv: Mat::zeros(latent, hidden),
            b_lv: vec![0.0; latent],
            dec_w1: Mat::zeros(hidden, latent),
            dec_b1: vec![0.0; hidden],
            dec_w2: Mat::zeros(n_items, hidden),
            dec_b2: vec![0.0; n_items],
        }
    }

    /// Flat views over all tensors, weights first within each layer. The
    /// boolean marks tensors that receive weight decay (matrices, not
    /// biases).
    pub fn tensors_mut(&mut self) -> [(&mut [f64], bool); 10] {
        [
            (self.enc_w1.data.as_mut_slice(), true),
            (self.enc_b1.as_mut_slice(), false),
            (self.w_mu.data.as_mut_slice(), true),
            (self.b_mu.as_mut_slice(), false),
            (self.w_lv.data.as_mut_slice(), true),
            (self.b_lv.as_mut_slice(), false),
            (self.dec_w1.data.as_mut_slice(), true),
            (self.dec_b1.as_mut_slice(), false),
            (self.dec_w2.data.as_mut_slice(), true),
            (self.dec_b2.as_mut_slice(), false),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.enc_w1.data,
            &self.enc_b1,
            &self.w_mu.data,
            &self.b_mu,
            &self.w_lv.data,
            &self.b_lv,
            &self.dec_w1.data,
            &self.dec_b1,
            &self.dec_w2.data,
            &self.dec_b2,
        ]
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_is_seed_deterministic() {
        let dims = VaeDims {
            n_items: 7,
            hidden: 5,
            latent: 3,
        };
        let a = VaeParams::init(dims, &mut ChaCha8Rng::seed_from_u64(4));
        let b = VaeParams::init(dims, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        let c = VaeParams::init(dims, &mut ChaCha8Rng::seed_from_u64(5));
        assert_ne!(a, c);
    }

    #[test]
    fn kl_is_zero_only_at_standard_normal() {
        let head = GaussianHead {
            mu: vec![0.0; 4],
            log_var: vec![0.0; 4],
        };
        assert_eq!(head.kl_to_standard_normal(), 0.0);
        let head = GaussianHead {
            mu: vec![0.3, -0.1],
            log_var: vec![0.2, -0.4],
        };
        assert!(head.kl_to_standard_normal() > 0.0);
    }
}

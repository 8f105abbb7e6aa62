//! Small dense-matrix and vector kernels.
//!
//! Everything here is plain `f64` with explicit loops. Reductions run in a
//! fixed order (chunked, then merged left to right), so results are bitwise
//! reproducible regardless of the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// `out += s * v`.
#[inline]
pub fn axpy(out: &mut [f64], s: f64, v: &[f64]) {
    debug_assert_eq!(out.len(), v.len());
    for i in 0..out.len() {
        out[i] += s * v[i];
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Softmax with max-subtraction, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// log(sum(exp(logits))), max-subtracted.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Number of accumulation chunks used by the parallel fold below. Fixed, so
/// the merge order never depends on the thread count.
pub const ACCUM_CHUNKS: usize = 4;

/// Fold `items` into accumulators chunk by chunk, in parallel, then merge the
/// chunk results left to right. Deterministic for any thread count.
pub fn chunked_fold<T, A, FI, FF, FM>(items: &[T], init: FI, fold: FF, mut merge: FM) -> Option<A>
where
    T: Sync,
    A: Send,
    FI: Fn() -> A + Sync,
    FF: Fn(&mut A, &T) + Sync,
    FM: FnMut(&mut A, A),
{
    if items.is_empty() {
        return None;
    }
    let chunk_len = items.len().div_ceil(ACCUM_CHUNKS);
    let mut parts: Vec<A> = items
        .par_chunks(chunk_len)
        .map(|chunk| {
            let mut acc = init();
            for item in chunk {
                fold(&mut acc, item);
            }
            acc
        })
        .collect();
    let mut total = parts.remove(0);
    for part in parts {
        merge(&mut total, part);
    }
    Some(total)
}

/// Indices of `scores` sorted by descending score, ties broken by ascending
/// index.
pub fn rank_descending(scores: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

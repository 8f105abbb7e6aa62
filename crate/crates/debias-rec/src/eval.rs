//! Ranking metrics, per-user evaluation, sparsity groups and sweep curves.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};

/// Fraction of the top-K ranking that hits the relevant set, normalized by
/// the best achievable number of hits.
pub fn recall_at_k(ranking: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyInput("empty relevant set".to_string()));
    }
    debug_assert!(relevant.is_sorted());
    let top = &ranking[..k.min(ranking.len())];
    let hits = top
        .iter()
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    Ok(hits as f64 / k.min(relevant.len()) as f64)
}

/// Binary-relevance NDCG with log base 2 and the ideal DCG truncated at
/// min(K, |relevant|).
pub fn ndcg_at_k(ranking: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyInput("empty relevant set".to_string()));
    }
    debug_assert!(relevant.is_sorted());
    let mut dcg = 0.0;
    for (pos, item) in ranking.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_len = k.min(relevant.len());
    let idcg: f64 = (0..ideal_len).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// One evaluation unit: the observed fold-in fed to the model and the
/// relevant items the ranking is scored against.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub user: u32,
    pub fold_in: Vec<u32>,
    /// Sorted.
    pub relevant: Vec<u32>,
}

/// Standard protocol: relevance is the held-out remainder of each profile.
pub fn cases_from_split(split: &Split, users: &[u32]) -> Vec<EvalCase> {
    users
        .iter()
        .filter_map(|u| {
            split.held.get(u).map(|h| EvalCase {
                user: *u,
                fold_in: h.fold_in.clone(),
                relevant: h.held_out.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserEval {
    pub user: u32,
    pub fold_in_len: usize,
    pub relevant_len: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub users: Vec<UserEval>,
    pub mean_recall: BTreeMap<usize, f64>,
    pub mean_ndcg: BTreeMap<usize, f64>,
    /// Cases dropped for lack of relevant items.
    pub skipped: usize,
    pub metadata: BTreeMap<String, String>,
}

/// Rank every case with `ranker` and aggregate per-user metrics. Cases with
/// an empty relevant set are skipped and counted. Per-user work runs in
/// parallel; aggregation order is fixed.
pub fn evaluate<F>(
    cases: &[EvalCase],
    ranker: F,
    recall_ks: &[usize],
    ndcg_ks: &[usize],
) -> Result<EvalReport>
where
    F: Fn(&EvalCase) -> Result<Vec<u32>> + Sync,
{
    let evaluable: Vec<&EvalCase> = cases.iter().filter(|c| !c.relevant.is_empty()).collect();
    let skipped = cases.len() - evaluable.len();
    if evaluable.is_empty() {
        return Err(Error::EmptyInput("no evaluable users".to_string()));
    }
    let users: Vec<UserEval> = evaluable
        .par_iter()
        .map(|case| {
            let ranking = ranker(case)?;
            let mut recall = BTreeMap::new();
            for &k in recall_ks {
                recall.insert(k, recall_at_k(&ranking, &case.relevant, k)?);
            }
            let mut ndcg = BTreeMap::new();
            for &k in ndcg_ks {
                ndcg.insert(k, ndcg_at_k(&ranking, &case.relevant, k)?);
            }
            Ok(UserEval {
                user: case.user,
                fold_in_len: case.fold_in.len(),
                relevant_len: case.relevant.len(),
                recall,
                ndcg,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = users.len() as f64;
    let mut mean_recall = BTreeMap::new();
    for &k in recall_ks {
        mean_recall.insert(k, users.iter().map(|u| u.recall[&k]).sum::<f64>() / n);
    }
    let mut mean_ndcg = BTreeMap::new();
    for &k in ndcg_ks {
        mean_ndcg.insert(k, users.iter().map(|u| u.ndcg[&k]).sum::<f64>() / n);
    }
    Ok(EvalReport {
        users,
        mean_recall,
        mean_ndcg,
        skipped,
        metadata: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEval {
    pub group: usize,
    pub users: Vec<u32>,
    pub mean_fold_in: f64,
    pub mean_recall: BTreeMap<usize, f64>,
    pub mean_ndcg: BTreeMap<usize, f64>,
}

/// Sort evaluated users ascending by fold-in count (ties by user index) and
/// cut them into `n_groups` contiguous near-equal groups, any remainder
/// going to the front groups.
pub fn sparsity_groups(report: &EvalReport, n_groups: usize) -> Result<Vec<GroupEval>> {
    if report.users.len() < n_groups {
        return Err(Error::InsufficientUsers {
            needed: n_groups,
            available: report.users.len(),
            context: "sparsity grouping".to_string(),
        });
    }
    let mut order: Vec<&UserEval> = report.users.iter().collect();
    order.sort_by(|a, b| a.fold_in_len.cmp(&b.fold_in_len).then(a.user.cmp(&b.user)));

    let base = order.len() / n_groups;
    let rem = order.len() % n_groups;
    let mut out = Vec::with_capacity(n_groups);
    let mut cursor = 0usize;
    for g in 0..n_groups {
        let size = base + usize::from(g < rem);
        let members = &order[cursor..cursor + size];
        cursor += size;
        let n = members.len() as f64;
        let mut mean_recall = BTreeMap::new();
        for &k in report.mean_recall.keys() {
            mean_recall.insert(k, members.iter().map(|u| u.recall[&k]).sum::<f64>() / n);
        }
        let mut mean_ndcg = BTreeMap::new();
        for &k in report.mean_ndcg.keys() {
            mean_ndcg.insert(k, members.iter().map(|u| u.ndcg[&k]).sum::<f64>() / n);
        }
        out.push(GroupEval {
            group: g,
            users: members.iter().map(|u| u.user).collect(),
            mean_fold_in: members.iter().map(|u| u.fold_in_len as f64).sum::<f64>() / n,
            mean_recall,
            mean_ndcg,
        });
    }
    debug_assert_eq!(cursor, order.len());
    Ok(out)
}

/// Ordered (k, metric) points from a debias-degree sweep.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<(f64, f64)>,
}

impl SweepCurve {
    pub fn push(&mut self, k: f64, metric: f64) {
        if let Some(&(last, _)) = self.points.last() {
            assert!(k > last, "sweep k values must be strictly increasing");
        }
        self.points.push((k, metric));
    }

    /// Index of the maximizing k (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &(_, m)) in self.points.iter().enumerate() {
            if best.is_none_or(|b| m > self.points[b].1) {
                best = Some(i);
            }
        }
        best
    }
}

pub fn write_user_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let recall_ks: Vec<usize> = report.mean_recall.keys().cloned().collect();
    let ndcg_ks: Vec<usize> = report.mean_ndcg.keys().cloned().collect();
    write!(out, "user,fold_in,relevant")?;
    for k in &recall_ks {
        write!(out, ",recall@{k}")?;
    }
    for k in &ndcg_ks {
        write!(out, ",ndcg@{k}")?;
    }
    writeln!(out)?;
    for u in &report.users {
        write!(out, "{},{},{}", u.user, u.fold_in_len, u.relevant_len)?;
        for k in &recall_ks {
            write!(out, ",{:.6}", u.recall[k])?;
        }
        for k in &ndcg_ks {
            write!(out, ",{:.6}", u.ndcg[k])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_group_report(path: &Path, groups: &[GroupEval]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let recall_ks: Vec<usize> = groups
        .first()
        .map(|g| g.mean_recall.keys().cloned().collect())
        .unwrap_or_default();
    write!(out, "group,n_users,mean_fold_in")?;
    for k in &recall_ks {
        write!(out, ",recall@{k}")?;
    }
    writeln!(out)?;
    for g in groups {
        write!(out, "{},{},{:.3}", g.group, g.users.len(), g.mean_fold_in)?;
        for k in &recall_ks {
            write!(out, ",{:.6}", g.mean_recall[k])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_sweep(path: &Path, curve: &SweepCurve, metric_name: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "k,{metric_name}")?;
    for (k, m) in &curve.points {
        writeln!(out, "{k:.3},{m:.6}")?;
    }
    Ok(())
}

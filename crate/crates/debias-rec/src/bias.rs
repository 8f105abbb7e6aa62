//! Popularity / matching scores and extreme-set extraction.
//!
//! A click can come from two causes: the item is globally popular, or it
//! matches the user's taste. Items whose popularity rank and matching rank
//! disagree strongly isolate one cause each: `x_p` holds clicks explained by
//! popularity alone, `x_m` clicks explained by preference alone. The debias
//! degree `k` bounds how far into the rank lists extraction may reach.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{dot, l2_norm};

/// Per-item score/rank row for one user profile. Ranks are 1-based,
/// descending by score, ties broken by ascending dense item index.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasScores {
    pub item: u32,
    pub s_p: f64,
    pub s_m: f64,
    pub rank_p: usize,
    pub rank_m: usize,
}

/// The two single-bias item sets extracted from one profile.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExtremeSets {
    /// Popularity-driven items: popular, poor match.
    pub x_p: Vec<u32>,
    /// Preference-driven items: good match, unpopular.
    pub x_m: Vec<u32>,
    pub k: f64,
}

/// Item sets feeding one user's model inputs: the profile and its two
/// extreme subsets (possibly counterfactually enlarged).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UserSets {
    pub x: Vec<u32>,
    pub x_p: Vec<u32>,
    pub x_m: Vec<u32>,
}

/// num(item) / sum of num over the profile. 0 when the profile has no
/// recorded clicks at all.
pub fn popularity_score(dataset: &Dataset, profile: &[u32], item: u32) -> Result<f64> {
    if !profile.contains(&item) {
        return Err(Error::ItemNotInProfile { item });
    }
    let denom: u64 = profile
        .iter()
        .map(|&j| dataset.item_click_count[j as usize])
        .sum();
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(dataset.item_click_count[item as usize] as f64 / denom as f64)
}

/// Sum of the category vectors of all profile items.
pub fn user_category_vector(dataset: &Dataset, profile: &[u32]) -> Vec<f64> {
    let mut v = vec![0.0; dataset.n_categories];
    for &i in profile {
        for &c in dataset.item_categories(i) {
            v[c as usize] += 1.0;
        }
    }
    v
}

/// (d_i · d_u) / ||d_u||_2, with 0 for a zero user vector.
pub fn matching_score(item_vector: &[f64], user_vector: &[f64]) -> Result<f64> {
    if item_vector.len() != user_vector.len() {
        return Err(Error::DimensionMismatch(format!(
            "category vectors: {} vs {}",
            item_vector.len(),
            user_vector.len()
        )));
    }
    let norm = l2_norm(user_vector);
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(item_vector, user_vector) / norm)
}

/// 1-based descending ranks over `scores`, ties by ascending `items` value.
fn ranks(items: &[u32], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(items[a].cmp(&items[b]))
    });
    let mut rank = vec![0usize; items.len()];
    for (pos, &idx) in order.iter().enumerate() {
        rank[idx] = pos + 1;
    }
    rank
}

/// Score and rank every profile item.
pub fn bias_scores(dataset: &Dataset, profile: &[u32]) -> Vec<BiasScores> {
    let denom: u64 = profile
        .iter()
        .map(|&j| dataset.item_click_count[j as usize])
        .sum();
    let s_p: Vec<f64> = profile
        .iter()
        .map(|&i| {
            if denom == 0 {
                0.0
            } else {
                dataset.item_click_count[i as usize] as f64 / denom as f64
            }
        })
        .collect();
    let d_u = user_category_vector(dataset, profile);
    let norm = l2_norm(&d_u);
    let s_m: Vec<f64> = profile
        .iter()
        .map(|&i| {
            if norm == 0.0 {
                0.0
            } else {
                dot(&dataset.item_category_vector(i), &d_u) / norm
            }
        })
        .collect();
    let rank_p = ranks(profile, &s_p);
    let rank_m = ranks(profile, &s_m);
    profile
        .iter()
        .enumerate()
        .map(|(idx, &item)| BiasScores {
            item,
            s_p: s_p[idx],
            s_m: s_m[idx],
            rank_p: rank_p[idx],
            rank_m: rank_m[idx],
        })
        .collect()
}

/// Extract the two extreme sets from one profile at debias degree `k`.
///
/// An item joins `x_p` when its popularity rank is strictly below `k|X|`
/// while its matching rank is strictly above; `x_m` is the mirror image.
/// Both sets come back sorted by item index.
pub fn extract_extreme_sets(dataset: &Dataset, profile: &[u32], k: f64) -> ExtremeSets {
    debug_assert!((0.0..=1.0).contains(&k));
    let threshold = k * profile.len() as f64;
    let mut x_p = Vec::new();
    let mut x_m = Vec::new();
    for row in bias_scores(dataset, profile) {
        let rp = row.rank_p as f64;
        let rm = row.rank_m as f64;
        if rp < threshold && rm > threshold {
            x_p.push(row.item);
        } else if rp > threshold && rm < threshold {
            x_m.push(row.item);
        }
    }
    x_p.sort_unstable();
    x_m.sort_unstable();
    ExtremeSets { x_p, x_m, k }
}

/// Build the (X, X_p, X_m) input sets for each listed user from its full
/// profile.
pub fn training_sets(dataset: &Dataset, users: &[u32], k: f64) -> BTreeMap<u32, UserSets> {
    users
        .iter()
        .map(|&u| {
            let profile = dataset.profile(u).to_vec();
            let ex = extract_extreme_sets(dataset, &profile, k);
            (
                u,
                UserSets {
                    x: profile,
                    x_p: ex.x_p,
                    x_m: ex.x_m,
                },
            )
        })
        .collect()
}

/// S_p(u, ·) over the whole item universe: num(i) over the profile's
/// click-count sum.
pub fn popularity_row(dataset: &Dataset, profile: &[u32]) -> Vec<f64> {
    let denom: u64 = profile
        .iter()
        .map(|&j| dataset.item_click_count[j as usize])
        .sum();
    (0..dataset.n_items)
        .map(|i| {
            if denom == 0 {
                0.0
            } else {
                dataset.item_click_count[i] as f64 / denom as f64
            }
        })
        .collect()
}

/// S_m(u, ·) over the whole item universe against the profile's category
/// vector.
pub fn matching_row(dataset: &Dataset, profile: &[u32]) -> Vec<f64> {
    let d_u = user_category_vector(dataset, profile);
    let norm = l2_norm(&d_u);
    (0..dataset.n_items as u32)
        .map(|i| {
            if norm == 0.0 {
                0.0
            } else {
                dot(&dataset.item_category_vector(i), &d_u) / norm
            }
        })
        .collect()
}

/// Dump per-user score tables as delimited text for inspection:
/// `user, item, s_p, s_m, rank_p, rank_m, membership`.
pub fn write_score_table(
    path: &Path,
    dataset: &Dataset,
    users: &[u32],
    k: f64,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "user,item,s_p,s_m,rank_p,rank_m,set")?;
    for &u in users {
        let profile = dataset.profile(u);
        let ex = extract_extreme_sets(dataset, profile, k);
        for row in bias_scores(dataset, profile) {
            let tag = if ex.x_p.binary_search(&row.item).is_ok() {
                "XP"
            } else if ex.x_m.binary_search(&row.item).is_ok() {
                "XM"
            } else {
                "-"
            };
            writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{}",
                dataset.user_ids[u as usize],
                dataset.item_ids[row.item as usize],
                row.s_p,
                row.s_m,
                row.rank_p,
                row.rank_m,
                tag
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;

    /// Dataset with explicit click counts and per-item category lists.
    fn toy(n_items: usize, counts: &[u64], cats: &[&[u32]], n_categories: usize) -> Dataset {
        let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let mut ds = Dataset::from_parts(
            vec!["u".into()],
            items,
            vec![(0..n_items as u32).collect()],
            cats.iter().map(|c| c.to_vec()).collect(),
            (0..n_categories).map(|c| format!("c{c}")).collect(),
        );
        ds.item_click_count = counts.to_vec();
        ds
    }

    #[test]
    fn popularity_single_item_profile_is_one() {
        let ds = toy(1, &[7], &[&[]], 0);
        assert_eq!(popularity_score(&ds, &[0], 0).unwrap(), 1.0);
    }

    #[test]
    fn popularity_direct_ratio() {
        let ds = toy(2, &[3, 1], &[&[], &[]], 0);
        assert!((popularity_score(&ds, &[0, 1], 0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn popularity_invariant_to_count_scaling() {
        let a = toy(2, &[3, 1], &[&[], &[]], 0);
        let b = toy(2, &[30, 10], &[&[], &[]], 0);
        assert_eq!(
            popularity_score(&a, &[0, 1], 0).unwrap(),
            popularity_score(&b, &[0, 1], 0).unwrap()
        );
    }

    #[test]
    fn popularity_requires_profile_membership() {
        let ds = toy(2, &[3, 1], &[&[], &[]], 0);
        assert!(matches!(
            popularity_score(&ds, &[0], 1),
            Err(Error::ItemNotInProfile { item: 1 })
        ));
    }

    #[test]
    fn popularity_zero_counts_give_zero() {
        let ds = toy(2, &[0, 0], &[&[], &[]], 0);
        assert_eq!(popularity_score(&ds, &[0, 1], 0).unwrap(), 0.0);
    }

    #[test]
    fn user_vector_sums_item_vectors() {
        let ds = toy(2, &[1, 1], &[&[0], &[0, 1]], 2);
        assert_eq!(user_category_vector(&ds, &[]), vec![0.0, 0.0]);
        assert_eq!(user_category_vector(&ds, &[0, 1]), vec![2.0, 1.0]);
    }

    #[test]
    fn matching_hand_example() {
        let s = matching_score(&[1.0, 0.0], &[2.0, 1.0]).unwrap();
        assert!((s - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matching_orthogonal_is_zero() {
        assert_eq!(matching_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn matching_scale_invariant_in_user_vector() {
        let a = matching_score(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        let b = matching_score(&[1.0, 2.0], &[6.0, 3.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matching_dimension_mismatch_is_error() {
        assert!(matching_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn extract_k_zero_is_empty() {
        let ds = toy(4, &[9, 5, 3, 1], &[&[0], &[0], &[1], &[1]], 2);
        let ex = extract_extreme_sets(&ds, &[0, 1, 2, 3], 0.0);
        assert!(ex.x_p.is_empty() && ex.x_m.is_empty());
    }

    #[test]
    fn extract_opposing_rankings() {
        // s_p ranks (1,2,3,4) by counts; categories give s_m ranks (4,3,2,1):
        // d_u = [1,3,2,1], so s_m = (1, 3, 5, 6) over the four items.
        let ds = toy(
            4,
            &[9, 5, 3, 1],
            &[&[0], &[1], &[1, 2], &[1, 2, 3]],
            4,
        );
        let profile = [0u32, 1, 2, 3];
        let rows = bias_scores(&ds, &profile);
        assert_eq!(
            rows.iter().map(|r| r.rank_p).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert_eq!(
            rows.iter().map(|r| r.rank_m).collect::<Vec<_>>(),
            vec![4, 3, 2, 1]
        );
        // k=0.5 -> threshold 2: x_p needs rank_p<2 and rank_m>2 -> item 0;
        // x_m needs rank_p>2 and rank_m<2 -> item 3.
        let ex = extract_extreme_sets(&ds, &profile, 0.5);
        assert_eq!(ex.x_p, vec![0]);
        assert_eq!(ex.x_m, vec![3]);
    }

    #[test]
    fn identical_rankings_extract_nothing() {
        // Counts and categories aligned: both scores rank items the same way,
        // so the two strict conditions contradict for every item and any k.
        // d_u = [2,2]; s_m = (4, 2, 2) with the tie broken toward item 1.
        let ds = toy(3, &[9, 5, 1], &[&[0, 1], &[0], &[1]], 2);
        let profile = [0u32, 1, 2];
        let rows = bias_scores(&ds, &profile);
        let rp: Vec<_> = rows.iter().map(|r| r.rank_p).collect();
        let rm: Vec<_> = rows.iter().map(|r| r.rank_m).collect();
        assert_eq!(rp, rm);
        for k in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let ex = extract_extreme_sets(&ds, &profile, k);
            assert!(ex.x_p.is_empty() && ex.x_m.is_empty(), "k={k}");
        }
    }

    #[test]
    fn extraction_ignores_profile_input_order() {
        let ds = toy(
            5,
            &[12, 7, 7, 2, 1],
            &[&[0], &[1], &[0, 1], &[1], &[0]],
            2,
        );
        let a = extract_extreme_sets(&ds, &[0, 1, 2, 3, 4], 0.5);
        let b = extract_extreme_sets(&ds, &[4, 2, 0, 3, 1], 0.5);
        assert_eq!(a.x_p, b.x_p);
        assert_eq!(a.x_m, b.x_m);
    }

    #[test]
    fn sets_are_disjoint_and_bounded_on_random_profiles() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = rng.random_range(1..=50usize);
            let counts: Vec<u64> = (0..n).map(|_| rng.random_range(0..40u64)).collect();
            let cats: Vec<Vec<u32>> = (0..n)
                .map(|_| {
                    (0..4u32)
                        .filter(|_| rng.random_range(0..3u32) == 0)
                        .collect()
                })
                .collect();
            let cat_refs: Vec<&[u32]> = cats.iter().map(|c| c.as_slice()).collect();
            let ds = toy(n, &counts, &cat_refs, 4);
            let profile: Vec<u32> = (0..n as u32).collect();
            let k = (trial % 11) as f64 / 10.0;
            let ex = extract_extreme_sets(&ds, &profile, k);
            for i in &ex.x_p {
                assert!(ex.x_m.binary_search(i).is_err(), "overlap at {i}");
            }
            let bound = k * n as f64 + 1.0;
            assert!((ex.x_p.len() as f64) < bound);
            assert!((ex.x_m.len() as f64) < bound);
        }
    }

    #[test]
    fn popularity_scores_sum_to_one_over_profile() {
        let ds = toy(4, &[9, 5, 3, 1], &[&[], &[], &[], &[]], 0);
        let rows = bias_scores(&ds, &[0, 1, 2, 3]);
        let total: f64 = rows.iter().map(|r| r.s_p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_extend_scores_to_full_universe() {
        let ds = toy(3, &[4, 2, 2], &[&[0], &[1], &[0]], 2);
        let profile = [0u32, 1];
        let sp = popularity_row(&ds, &profile);
        assert!((sp[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((sp[2] - 2.0 / 6.0).abs() < 1e-15, "off-profile item scored");
        let sm = matching_row(&ds, &profile);
        let d_u = user_category_vector(&ds, &profile);
        let expect = dot(&ds.item_category_vector(2), &d_u) / l2_norm(&d_u);
        assert!((sm[2] - expect).abs() < 1e-15);
    }
}

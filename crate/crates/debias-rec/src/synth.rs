//! Synthetic interaction logs with a known ground truth.
//!
//! Users get Dirichlet category preferences, items get categories and a
//! power-law popularity, and clicks are drawn from a softmax whose logits
//! add the true preference, an amplification boost on the user's dominant
//! category, and a weighted log-popularity term. The unbiased preference
//! scores are returned alongside the observed (biased) log, so debiasing
//! can be measured against what the user actually likes.

use std::fs;
use std::path::Path;

use rand::RngExt;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{rank_descending, Mat};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Weight of log-popularity in the click logits.
    pub bias_strength_pop: f64,
    /// Boost on items carrying the user's dominant category.
    pub bias_strength_match: f64,
    pub interactions_per_user: usize,
    pub seed: u64,
    /// Popularity follows rank^(-exponent).
    pub popularity_exponent: f64,
    /// Dirichlet concentration of user category preferences; small values
    /// give sharply focused users.
    pub preference_sharpness: f64,
    /// Scale of the true preference term in the logits.
    pub preference_gain: f64,
    /// Probability that an item's recorded category tags are corrupted.
    /// Clicks and the ground truth always use the true tags; only the
    /// metadata the models see is affected.
    pub category_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 200,
            n_items: 100,
            n_categories: 8,
            bias_strength_pop: 2.0,
            bias_strength_match: 0.5,
            interactions_per_user: 10,
            seed: 0,
            popularity_exponent: 1.5,
            preference_sharpness: 0.3,
            preference_gain: 6.0,
            category_noise: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items < self.interactions_per_user {
            return Err(Error::InvalidConfig(
                "n_items must be >= interactions_per_user".into(),
            ));
        }
        if self.interactions_per_user < 2 {
            return Err(Error::InvalidConfig(
                "interactions_per_user must be >= 2".into(),
            ));
        }
        if self.n_categories == 0 || self.n_users == 0 {
            return Err(Error::InvalidConfig("empty synthetic universe".into()));
        }
        if self.bias_strength_pop < 0.0 || self.bias_strength_match < 0.0 {
            return Err(Error::InvalidConfig("bias strengths must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.category_noise) {
            return Err(Error::InvalidConfig("category_noise must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// What the generator knows and the models do not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[n_users][n_items]` unbiased preference scores.
    pub preference: Mat,
    /// Ground-truth popularity weights per item (sums to 1).
    pub popularity: Vec<f64>,
}

impl GroundTruth {
    /// Top-`n` true-preference items of a user, minus `exclude`; sorted by
    /// item index.
    pub fn relevant_items(&self, user: u32, exclude: &[u32], n: usize) -> Vec<u32> {
        let row = self.preference.row(user as usize);
        let mut out: Vec<u32> = rank_descending(row)
            .into_iter()
            .filter(|i| exclude.binary_search(i).is_err())
            .take(n)
            .collect();
        out.sort_unstable();
        out
    }
}

struct World {
    /// True tags, used by the click generator and the ground truth.
    item_cats: Vec<Vec<u32>>,
    /// Tags as recorded in the dataset the models see.
    observed_cats: Vec<Vec<u32>>,
    /// Centered log-popularity per item.
    log_pop: Vec<f64>,
    pop_weights: Vec<f64>,
    /// `[n_users][n_categories]` Dirichlet rows.
    prefs: Mat,
    dominant_cat: Vec<u32>,
}

const SUB_CATS: u64 = 1;
const SUB_POP: u64 = 2;
const SUB_PREFS: u64 = 3;
const SUB_CLICKS: u64 = 4;
const SUB_TAG_NOISE: u64 = 5;

fn build_world(spec: &SynthSpec) -> World {
    let mut cat_rng = seeds::stage_rng(spec.seed, seeds::STAGE_SYNTH ^ SUB_CATS.rotate_left(17));
    let item_cats: Vec<Vec<u32>> = (0..spec.n_items)
        .map(|_| {
            let first = cat_rng.random_range(0..spec.n_categories as u32);
            let mut cats = vec![first];
            if spec.n_categories > 1 && cat_rng.random_range(0..10u32) < 3 {
                let mut second = cat_rng.random_range(0..spec.n_categories as u32);
                if second == first {
                    second = (second + 1) % spec.n_categories as u32;
                }
                cats.push(second);
            }
            cats.sort_unstable();
            cats
        })
        .collect();

    // Popularity lives on its own stream so changing it never perturbs
    // preferences or click noise.
    let mut pop_rng = seeds::stage_rng(spec.seed, seeds::STAGE_SYNTH ^ SUB_POP.rotate_left(17));
    let mut order: Vec<usize> = (0..spec.n_items).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut pop_rng);
    let mut pop_weights = vec![0.0; spec.n_items];
    for (rank, &item) in order.iter().enumerate() {
        pop_weights[item] = ((rank + 1) as f64).powf(-spec.popularity_exponent);
    }
    let total: f64 = pop_weights.iter().sum();
    pop_weights.iter_mut().for_each(|w| *w /= total);
    let mean_log: f64 =
        pop_weights.iter().map(|w| w.ln()).sum::<f64>() / spec.n_items as f64;
    let log_pop: Vec<f64> = pop_weights.iter().map(|w| w.ln() - mean_log).collect();

    let mut pref_rng = seeds::stage_rng(spec.seed, seeds::STAGE_SYNTH ^ SUB_PREFS.rotate_left(17));
    let gamma = Gamma::new(spec.preference_sharpness, 1.0).expect("valid gamma");
    let mut prefs = Mat::zeros(spec.n_users, spec.n_categories);
    let mut dominant_cat = vec![0u32; spec.n_users];
    for u in 0..spec.n_users {
        let row = prefs.row_mut(u);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            // Dirichlet via normalized gammas; tiny floor avoids an
            // all-zero row at very small concentrations.
            *v = gamma.sample(&mut pref_rng).max(1e-12);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
        let best = (0..spec.n_categories)
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        dominant_cat[u] = best as u32;
    }

    // Corrupt the recorded tags on a separate stream so turning noise on
    // or off never perturbs the click draws.
    let mut noise_rng =
        seeds::stage_rng(spec.seed, seeds::STAGE_SYNTH ^ SUB_TAG_NOISE.rotate_left(17));
    let observed_cats: Vec<Vec<u32>> = item_cats
        .iter()
        .map(|true_cats| {
            let corrupt = noise_rng.random_range(0.0..1.0) < spec.category_noise;
            let replacement = noise_rng.random_range(0..spec.n_categories as u32);
            if corrupt {
                vec![replacement]
            } else {
                true_cats.clone()
            }
        })
        .collect();

    World {
        item_cats,
        observed_cats,
        log_pop,
        pop_weights,
        prefs,
        dominant_cat,
    }
}

/// True preference score of (user, item): gain times the user's mixture
/// weight on the item's categories.
fn preference_score(spec: &SynthSpec, world: &World, u: usize, i: usize) -> f64 {
    let cats = &world.item_cats[i];
    let row = world.prefs.row(u);
    let mix: f64 = cats.iter().map(|&c| row[c as usize]).sum::<f64>() / cats.len() as f64;
    spec.preference_gain * mix
}

fn click_logit(spec: &SynthSpec, world: &World, u: usize, i: usize) -> f64 {
    let mut logit = preference_score(spec, world, u, i);
    if world.item_cats[i].contains(&world.dominant_cat[u]) {
        logit += spec.bias_strength_match;
    }
    logit + spec.bias_strength_pop * world.log_pop[i]
}

/// Click probabilities of one user over all items (softmax of the logits).
/// Exposed for distribution-level tests.
pub fn click_probabilities(spec: &SynthSpec, user: u32) -> Result<Vec<f64>> {
    spec.validate()?;
    let world = build_world(spec);
    let logits: Vec<f64> = (0..spec.n_items)
        .map(|i| click_logit(spec, &world, user as usize, i))
        .collect();
    Ok(crate::math::softmax(&logits))
}

/// Sample the observed log and return it with the generator's ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let world = build_world(spec);

    let click_seed = seeds::derive(spec.seed, seeds::STAGE_SYNTH ^ SUB_CLICKS.rotate_left(17));
    let profiles: Vec<Vec<u32>> = (0..spec.n_users)
        .map(|u| {
            // Weighted sampling without replacement via Gumbel keys.
            let mut rng = seeds::substream_rng(click_seed, u as u64);
            let mut keyed: Vec<(f64, u32)> = (0..spec.n_items)
                .map(|i| {
                    let gumbel: f64 = {
                        let v: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        -(-v.ln()).ln()
                    };
                    (click_logit(spec, &world, u, i) + gumbel, i as u32)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut items: Vec<u32> = keyed
                .into_iter()
                .take(spec.interactions_per_user)
                .map(|(_, i)| i)
                .collect();
            items.sort_unstable();
            items
        })
        .collect();

    let user_ids: Vec<String> = (0..spec.n_users).map(|u| format!("u{u:05}")).collect();
    let item_ids: Vec<String> = (0..spec.n_items).map(|i| format!("i{i:05}")).collect();
    let category_names: Vec<String> =
        (0..spec.n_categories).map(|c| format!("c{c:02}")).collect();
    let dataset = Dataset::from_parts(
        user_ids,
        item_ids,
        profiles,
        world.observed_cats.clone(),
        category_names,
    );

    let mut preference = Mat::zeros(spec.n_users, spec.n_items);
    for u in 0..spec.n_users {
        for i in 0..spec.n_items {
            preference.row_mut(u)[i] = preference_score(spec, &world, u, i);
        }
    }
    Ok((
        dataset,
        GroundTruth {
            preference,
            popularity: world.pop_weights,
        },
    ))
}

const TRUTH_MAGIC: &str = "debias-rec/ground-truth";
const TRUTH_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TruthFile {
    magic: String,
    version: u32,
    truth: GroundTruth,
}

pub fn save_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let file = TruthFile {
        magic: TRUTH_MAGIC.to_string(),
        version: TRUTH_VERSION,
        truth: truth.clone(),
    };
    fs::write(path, bincode::serialize(&file)?)?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        command: "synth".to_string(),
    })?;
    let file: TruthFile = bincode::deserialize(&bytes)?;
    if file.magic != TRUTH_MAGIC || file.version != TRUTH_VERSION {
        return Err(Error::VersionMismatch(format!(
            "{} is not a ground-truth file",
            path.display()
        )));
    }
    Ok(file.truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            n_users: 60,
            n_items: 40,
            n_categories: 5,
            interactions_per_user: 6,
            seed: 9,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, _) = generate(&spec()).unwrap();
        let (b, _) = generate(&spec()).unwrap();
        assert_eq!(
            bincode::serialize(&a).unwrap(),
            bincode::serialize(&b).unwrap()
        );
    }

    #[test]
    fn profiles_have_requested_size_and_valid_indices() {
        let (ds, _) = generate(&spec()).unwrap();
        assert_eq!(ds.n_users, 60);
        assert_eq!(ds.n_items, 40);
        for u in 0..ds.n_users as u32 {
            let p = ds.profile(u);
            assert_eq!(p.len(), 6);
            assert!(p.iter().all(|&i| (i as usize) < ds.n_items));
            assert!(p.windows(2).all(|w| w[0] < w[1]), "sorted unique");
        }
    }

    #[test]
    fn zero_bias_clicks_ignore_the_popularity_assignment() {
        let base = SynthSpec {
            bias_strength_pop: 0.0,
            bias_strength_match: 0.0,
            ..spec()
        };
        let steeper = SynthSpec {
            popularity_exponent: 3.0,
            ..base.clone()
        };
        for u in [0u32, 7, 33] {
            let a = click_probabilities(&base, u).unwrap();
            let b = click_probabilities(&steeper, u).unwrap();
            assert_eq!(a, b, "user {u}");
        }
        let (da, _) = generate(&base).unwrap();
        let (db, _) = generate(&steeper).unwrap();
        for u in 0..da.n_users as u32 {
            assert_eq!(da.profile(u), db.profile(u));
        }
    }

    #[test]
    fn strong_popularity_bias_shifts_clicks_toward_popular_items() {
        let unbiased = SynthSpec {
            bias_strength_pop: 0.0,
            ..spec()
        };
        let biased = SynthSpec {
            bias_strength_pop: 4.0,
            ..spec()
        };
        let (du, tu) = generate(&unbiased).unwrap();
        let (db, _) = generate(&biased).unwrap();
        // Top decile by ground-truth popularity.
        let mut order: Vec<usize> = (0..40).collect();
        order.sort_by(|&a, &b| tu.popularity[b].partial_cmp(&tu.popularity[a]).unwrap());
        let top: Vec<u32> = order[..4].iter().map(|&i| i as u32).collect();
        let share = |ds: &Dataset| -> f64 {
            let total: usize = (0..ds.n_users as u32).map(|u| ds.profile(u).len()).sum();
            let hits: usize = (0..ds.n_users as u32)
                .map(|u| ds.profile(u).iter().filter(|i| top.contains(i)).count())
                .sum();
            hits as f64 / total as f64
        };
        assert!(
            share(&db) > share(&du) + 0.05,
            "biased share {} vs unbiased {}",
            share(&db),
            share(&du)
        );
    }

    #[test]
    fn ground_truth_relevant_items_exclude_and_sort() {
        let (_, truth) = generate(&spec()).unwrap();
        let exclude = vec![0u32, 1, 2];
        let rel = truth.relevant_items(3, &exclude, 5);
        assert_eq!(rel.len(), 5);
        assert!(rel.windows(2).all(|w| w[0] < w[1]));
        for e in &exclude {
            assert!(!rel.contains(e));
        }
    }

    #[test]
    fn written_files_round_trip_through_the_loaders() {
        use crate::dataset::{
            filter_dataset, load_categories, load_interactions, write_categories_csv,
            write_interactions_csv, LoadOptions,
        };
        let (ds, _) = generate(&spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ipath = dir.path().join("interactions.csv");
        let cpath = dir.path().join("categories.csv");
        write_interactions_csv(&ipath, &ds).unwrap();
        write_categories_csv(&cpath, &ds).unwrap();
        let recs = load_interactions(&ipath, &LoadOptions::default()).unwrap();
        let cats = load_categories(&cpath, ",").unwrap();
        let reloaded = filter_dataset(&recs, Some(&cats), 1, 1).unwrap();
        assert_eq!(reloaded.n_users, ds.n_users);
        // Items nobody clicked cannot survive an interactions-file round
        // trip; everything observed must.
        let mut clicked: Vec<u32> = (0..ds.n_users as u32)
            .flat_map(|u| ds.profile(u).to_vec())
            .collect();
        clicked.sort_unstable();
        clicked.dedup();
        assert_eq!(reloaded.n_items, clicked.len());
        for u in 0..ds.n_users as u32 {
            let orig: Vec<&str> = ds
                .profile(u)
                .iter()
                .map(|&i| ds.item_ids[i as usize].as_str())
                .collect();
            let ext = &reloaded.user_ids[u as usize];
            let ru = reloaded.user_index[&ds.user_ids[u as usize]];
            assert_eq!(ext, &reloaded.user_ids[ru as usize]);
            let mut new: Vec<&str> = reloaded
                .profile(ru)
                .iter()
                .map(|&i| reloaded.item_ids[i as usize].as_str())
                .collect();
            let mut orig_sorted = orig.clone();
            orig_sorted.sort_unstable();
            new.sort_unstable();
            assert_eq!(orig_sorted, new);
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let (_, truth) = generate(&spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.bin");
        save_ground_truth(&path, &truth).unwrap();
        let loaded = load_ground_truth(&path).unwrap();
        assert_eq!(loaded.preference, truth.preference);
        assert_eq!(loaded.popularity, truth.popularity);
    }
}

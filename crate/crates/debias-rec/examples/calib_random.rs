//! Scratch: does set content matter, or only set size? (not a deliverable)

use std::collections::BTreeMap;

use debias_rec::bias::UserSets;
use debias_rec::dataset::split_users;
use debias_rec::eval::{cases_from_split, evaluate, EvalCase};
use debias_rec::synth::{generate, SynthSpec};
use debias_rec::vae::{predict_scores_from_sets, train, TrainConfig};
use debias_rec::{seeds, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn main() -> Result<()> {
    let spec = SynthSpec {
        n_users: 1000,
        n_items: 400,
        n_categories: 6,
        bias_strength_pop: 1.0,
        bias_strength_match: 1.0,
        interactions_per_user: 30,
        seed: 2024,
        category_noise: 0.25,
        ..SynthSpec::default()
    };
    let (mut dataset, truth) = generate(&spec)?;
    let split = split_users(&dataset, 150, 250, 0.8, spec.seed)?;
    dataset.recount_clicks(&split.train_users);

    let held_cases: Vec<EvalCase> = cases_from_split(&split, &split.test_users);
    let mut truth_cases: Vec<EvalCase> = held_cases.clone();
    for case in &mut truth_cases {
        case.relevant = truth.relevant_items(case.user, &case.fold_in, 20);
    }

    let base = TrainConfig {
        hidden: 100,
        latent: 32,
        batch_size: 100,
        epochs: 120,
        ..TrainConfig::default()
    };

    for set_size in [0usize, 2, 5, 8, 12] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77 + set_size as u64);
        let sets: BTreeMap<u32, UserSets> = split
            .train_users
            .iter()
            .map(|&u| {
                let profile = dataset.profile(u).to_vec();
                let mut shuffled = profile.clone();
                shuffled.shuffle(&mut rng);
                let s = set_size.min(profile.len() / 2);
                let mut x_p: Vec<u32> = shuffled[..s].to_vec();
                let mut x_m: Vec<u32> = shuffled[s..2 * s].to_vec();
                x_p.sort_unstable();
                x_m.sort_unstable();
                (
                    u,
                    UserSets {
                        x: profile,
                        x_p,
                        x_m,
                    },
                )
            })
            .collect();
        let cfg = TrainConfig {
            k: 0.5, // prediction-side extraction degree stays fixed
            seed: seeds::derive(spec.seed, seeds::STAGE_TRAIN),
            ..base.clone()
        };
        let cfg = if set_size == 0 { cfg.vanilla() } else { cfg };
        let outcome = train(&dataset, &split, &sets, &cfg)?;
        // Rank with the same random-set recipe applied to fold-ins.
        let mut rank_rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let fold_sets: BTreeMap<u32, UserSets> = held_cases
            .iter()
            .map(|c| {
                let mut shuffled = c.fold_in.clone();
                shuffled.shuffle(&mut rank_rng);
                let s = set_size.min(c.fold_in.len() / 2);
                let mut x_p: Vec<u32> = shuffled[..s].to_vec();
                let mut x_m: Vec<u32> = shuffled[s..2 * s].to_vec();
                x_p.sort_unstable();
                x_m.sort_unstable();
                (
                    c.user,
                    UserSets {
                        x: c.fold_in.clone(),
                        x_p,
                        x_m,
                    },
                )
            })
            .collect();
        let ranker = |case: &EvalCase| predict_scores_from_sets(&outcome.params, &fold_sets[&case.user]);
        let t = evaluate(&truth_cases, ranker, &[20], &[100])?;
        let h = evaluate(&held_cases, ranker, &[20], &[100])?;
        println!(
            "random sets size {set_size:>2}: truth r20={:.4} n100={:.4} | held r20={:.4}",
            t.mean_recall[&20], t.mean_ndcg[&100], h.mean_recall[&20]
        );
    }
    Ok(())
}

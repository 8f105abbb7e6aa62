//! End-to-end debiasing benchmark on synthetic data.
//!
//! Generates a click log with strong popularity bias from a known
//! ground-truth preference model, trains the plain single-latent VAE and
//! the disentangled debiasing model at several debias degrees, and scores
//! both against the users' true (unbiased) preferences.
//!
//! Run with: cargo run -p debias-rec --example synthetic_benchmark

use debias_rec::bias::training_sets;
use debias_rec::dataset::split_users;
use debias_rec::eval::{cases_from_split, evaluate, EvalCase};
use debias_rec::synth::{generate, SynthSpec};
use debias_rec::vae::{predict_scores, train, TrainConfig};
use debias_rec::{seeds, Result};

fn main() -> Result<()> {
    let spec = SynthSpec {
        n_users: 600,
        n_items: 300,
        n_categories: 6,
        bias_strength_pop: 1.2,
        bias_strength_match: 0.5,
        interactions_per_user: 25,
        seed: 2024,
        ..SynthSpec::default()
    };
    let (mut dataset, truth) = generate(&spec)?;
    let split = split_users(&dataset, 100, 150, 0.8, spec.seed)?;
    dataset.recount_clicks(&split.train_users);
    println!(
        "synthetic log: {} users x {} items, {} clicks",
        dataset.n_users,
        dataset.n_items,
        dataset.n_interactions()
    );

    // Score rankings against the true preference model, not the biased log:
    // the relevant set is each test user's top true-preference items.
    let mut cases: Vec<EvalCase> = cases_from_split(&split, &split.test_users);
    for case in &mut cases {
        case.relevant = truth.relevant_items(case.user, &case.fold_in, 20);
    }

    let base = TrainConfig {
        hidden: 100,
        latent: 32,
        batch_size: 250,
        epochs: 25,
        ..TrainConfig::default()
    };

    let mut run = |label: &str, cfg: TrainConfig| -> Result<f64> {
        let sets = training_sets(&dataset, &split.train_users, cfg.k);
        let outcome = train(&dataset, &split, &sets, &cfg)?;
        let report = evaluate(
            &cases,
            |case| predict_scores(&outcome.params, &dataset, &case.fold_in, cfg.k),
            &[20],
            &[100],
        )?;
        println!(
            "{label:>12}: recall@20={:.4} ndcg@100={:.4} (best val epoch {})",
            report.mean_recall[&20], report.mean_ndcg[&100], outcome.best_epoch
        );
        Ok(report.mean_ndcg[&100])
    };

    let vanilla = run(
        "vanilla",
        TrainConfig {
            seed: seeds::derive(spec.seed, seeds::STAGE_TRAIN),
            ..base.clone()
        }
        .vanilla(),
    )?;

    let mut best = f64::MIN;
    for (idx, k) in [0.2, 0.4, 0.6].into_iter().enumerate() {
        let ndcg = run(
            &format!("debias k={k}"),
            TrainConfig {
                k,
                seed: seeds::derive(spec.seed, seeds::STAGE_SWEEP_BASE + idx as u64),
                ..base.clone()
            },
        )?;
        best = best.max(ndcg);
    }

    println!(
        "\nbest debias NDCG@100 {best:.4} vs vanilla {vanilla:.4} ({:+.1}% relative)",
        (best / vanilla - 1.0) * 100.0
    );
    Ok(())
}

//! Scratch: validation vs ground-truth trajectories (not a deliverable).

use debias_rec::bias::training_sets;
use debias_rec::dataset::split_users;
use debias_rec::eval::{cases_from_split, evaluate, EvalCase};
use debias_rec::synth::{generate, SynthSpec};
use debias_rec::vae::{predict_scores, train, TrainConfig};
use debias_rec::{seeds, Result};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pop: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let sharp: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let ipu: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(120);
    let cats: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(6);
    let amp: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let noise: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let spec = SynthSpec {
        n_users: 1000,
        n_items: 400,
        n_categories: cats,
        bias_strength_pop: pop,
        bias_strength_match: amp,
        interactions_per_user: ipu,
        seed: 2024,
        preference_sharpness: sharp,
        category_noise: noise,
        ..SynthSpec::default()
    };
    let (mut dataset, truth) = generate(&spec)?;
    let split = split_users(&dataset, 150, 250, 0.8, spec.seed)?;
    dataset.recount_clicks(&split.train_users);

    // Popularity concentration of the observed log.
    let mut counts: Vec<u64> = dataset.item_click_count.clone();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = counts.iter().sum();
    let top_decile: u64 = counts.iter().take(dataset.n_items / 10).sum();
    println!(
        "pop={pop} sharp={sharp} ipu={ipu}: top-decile click share {:.1}%",
        100.0 * top_decile as f64 / total as f64
    );

    let held_cases: Vec<EvalCase> = cases_from_split(&split, &split.test_users);
    let mut cases: Vec<EvalCase> = held_cases.clone();
    for case in &mut cases {
        case.relevant = truth.relevant_items(case.user, &case.fold_in, 20);
    }

    let base = TrainConfig {
        hidden: 100,
        latent: 32,
        batch_size: 100,
        epochs,
        ..TrainConfig::default()
    };

    for k in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9] {
        let cfg = if k == 0.0 {
            TrainConfig {
                seed: seeds::derive(spec.seed, seeds::STAGE_TRAIN),
                ..base.clone()
            }
            .vanilla()
        } else {
            TrainConfig {
                k,
                seed: seeds::derive(spec.seed, seeds::STAGE_SWEEP_BASE + (k * 10.0) as u64),
                ..base.clone()
            }
        };
        let sets = training_sets(&dataset, &split.train_users, cfg.k);
        let outcome = train(&dataset, &split, &sets, &cfg)?;
        let report = evaluate(
            &cases,
            |case| predict_scores(&outcome.params, &dataset, &case.fold_in, cfg.k),
            &[20],
            &[100],
        )?;
        let held = evaluate(
            &held_cases,
            |case| predict_scores(&outcome.params, &dataset, &case.fold_in, cfg.k),
            &[20],
            &[100],
        )?;
        let val_line: Vec<String> = outcome
            .trace
            .iter()
            .step_by((epochs / 8).max(1))
            .map(|e| format!("{:.3}", e.val_ndcg))
            .collect();
        println!(
            "k={k:.1}: truth r20={:.4} n100={:.4} | held r20={:.4} n100={:.4} best_ep={} val=[{}]",
            report.mean_recall[&20],
            report.mean_ndcg[&100],
            held.mean_recall[&20],
            held.mean_ndcg[&100],
            outcome.best_epoch,
            val_line.join(" ")
        );
    }
    Ok(())
}

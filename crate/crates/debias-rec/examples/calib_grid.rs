//! Scratch calibration grid (not part of the deliverable).

use debias_rec::bias::training_sets;
use debias_rec::dataset::split_users;
use debias_rec::eval::{cases_from_split, evaluate, EvalCase};
use debias_rec::synth::{generate, SynthSpec};
use debias_rec::vae::{predict_scores, train, TrainConfig};
use debias_rec::{seeds, Result};

fn main() -> Result<()> {
    for &pop in &[1.0] {
        for &omega in &[0.1] {
            let spec = SynthSpec {
                n_users: 2000,
                n_items: 500,
                n_categories: 6,
                bias_strength_pop: pop,
                bias_strength_match: 0.5,
                interactions_per_user: 30,
                seed: 2024,
                ..SynthSpec::default()
            };
            let (mut dataset, truth) = generate(&spec)?;
            let split = split_users(&dataset, 200, 400, 0.8, spec.seed)?;
            dataset.recount_clicks(&split.train_users);

            let mut cases: Vec<EvalCase> = cases_from_split(&split, &split.test_users);
            for case in &mut cases {
                case.relevant = truth.relevant_items(case.user, &case.fold_in, 20);
            }

            let base = TrainConfig {
                hidden: 100,
                latent: 32,
                batch_size: 250,
                epochs: 120,
                omega_m: omega,
                omega_p: omega,
                ..TrainConfig::default()
            };

            let run = |cfg: TrainConfig| -> Result<(f64, f64)> {
                let sets = training_sets(&dataset, &split.train_users, cfg.k);
                let sizes: (f64, f64) = {
                    let n = sets.len() as f64;
                    (
                        sets.values().map(|s| s.x_p.len() as f64).sum::<f64>() / n,
                        sets.values().map(|s| s.x_m.len() as f64).sum::<f64>() / n,
                    )
                };
                let outcome = train(&dataset, &split, &sets, &cfg)?;
                let report = evaluate(
                    &cases,
                    |case| predict_scores(&outcome.params, &dataset, &case.fold_in, cfg.k),
                    &[20],
                    &[100],
                )?;
                eprintln!(
                    " sets {:.1}/{:.1} k={:.1} r20={:.4} n100={:.4} best_ep={}",
                    sizes.0, sizes.1, cfg.k, report.mean_recall[&20], report.mean_ndcg[&100], outcome.best_epoch
                );
                Ok((report.mean_ndcg[&100], report.mean_recall[&20]))
            };

            let (van, vr) = run(TrainConfig {
                seed: seeds::derive(spec.seed, seeds::STAGE_TRAIN),
                ..base.clone()
            }
            .vanilla())?;
            let mut best = f64::MIN;
            let mut best_k = 0.0;
            for (idx, k) in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9].into_iter().enumerate() {
                let (n, _r) = run(TrainConfig {
                    k,
                    seed: seeds::derive(spec.seed, seeds::STAGE_SWEEP_BASE + idx as u64),
                    ..base.clone()
                })?;
                if n > best {
                    best = n;
                    best_k = k;
                }
            }
            println!(
                "\npop={pop} omega={omega}: vanilla={van:.4} (r20 {vr:.4}) best={best:.4} @k={best_k} rel={:+.1}%",
                (best / van - 1.0) * 100.0
            );
        }
    }
    Ok(())
}

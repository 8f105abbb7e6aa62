use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use debias_rec::pipeline::{
    cmd_augment, cmd_evaluate, cmd_prepare, cmd_report, cmd_sweep, cmd_synth, cmd_train,
    ExperimentConfig,
};

/// Debiasing recommender pipeline: data preparation, disentangled-VAE
/// training, counterfactual augmentation, ranking evaluation and the
/// debias-degree sweep.
#[derive(Parser)]
#[command(name = "debias-rec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment directory; overrides the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Debias degree; overrides the config.
    #[arg(long, global = true)]
    k: Option<f64>,

    /// Checkpoint to evaluate (default: <out>/checkpoint.bin).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Worker threads (default: $DEBIAS_REC_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and split the dataset; cache the result.
    Prepare,
    /// Extract extreme sets and train the debiasing model.
    Train,
    /// Fit the causal model, generate counterfactual sets, retrain.
    Augment,
    /// Evaluate a checkpoint on the test users and write reports.
    Evaluate,
    /// Retrain and evaluate across debias degrees.
    Sweep {
        /// Comma-separated k values (default: the config's sweep grid).
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
    },
    /// Generate a synthetic dataset from a spec file.
    Synth {
        /// Synthetic-dataset spec (TOML).
        spec: PathBuf,
    },
    /// Collate the reports in an experiment directory.
    Report,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(k) = cli.k {
        config.train.k = k;
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("DEBIAS_REC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }

    match &cli.command {
        Command::Prepare => {
            let config = load_config(&cli)?;
            let cache = cmd_prepare(&config)?;
            println!("prepared data cached at {}", cache.display());
        }
        Command::Train => {
            let config = load_config(&cli)?;
            let ckpt = cmd_train(&config)?;
            println!("checkpoint written to {}", ckpt.display());
        }
        Command::Augment => {
            let config = load_config(&cli)?;
            let (sets, ckpt) = cmd_augment(&config)?;
            println!("counterfactual sets written to {}", sets.display());
            println!("augmented checkpoint written to {}", ckpt.display());
        }
        Command::Evaluate => {
            let config = load_config(&cli)?;
            let report = cmd_evaluate(&config, cli.checkpoint.as_deref())?;
            for (k, v) in &report.mean_recall {
                println!("recall@{k}: {v:.6}");
            }
            for (k, v) in &report.mean_ndcg {
                println!("ndcg@{k}: {v:.6}");
            }
            println!("reports written to {}", config.out_dir.display());
        }
        Command::Sweep { k_list } => {
            let config = load_config(&cli)?;
            let ks = k_list.clone().unwrap_or_else(|| config.sweep_ks.clone());
            if ks.is_empty() {
                bail!("empty k list");
            }
            let curve = cmd_sweep(&config, &ks)?;
            for (k, m) in &curve.points {
                println!("k={k:.2} recall@20={m:.6}");
            }
        }
        Command::Synth { spec } => {
            let out = match (&cli.out, &cli.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load_config(&cli)?.out_dir,
                (None, None) => bail!("synth needs --out (or a config with out_dir)"),
            };
            let (dataset, _) = cmd_synth(spec, &out)?;
            println!(
                "synthetic dataset: {} users, {} items, {} interactions -> {}",
                dataset.n_users,
                dataset.n_items,
                dataset.n_interactions(),
                out.display()
            );
        }
        Command::Report => {
            let config = load_config(&cli)?;
            let doc = cmd_report(&config.out_dir)?;
            println!("{doc}");
        }
    }
    Ok(())
}

//! Experiment orchestration: configuration, stage commands, manifests.
//!
//! Every stage writes its outputs plus a `manifest_<stage>.json` capturing
//! the seed, tool version, input hashes and output hashes. Manifests carry
//! no timestamps, so a rerun with identical inputs yields byte-identical
//! outputs and manifests. One master seed derives all stage seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::{training_sets, write_score_table};
use crate::dataset::{
    filter_dataset, load_cache, load_categories, load_interactions, save_cache, split_users,
    Dataset, LoadOptions, PrepareMeta, Split, DEFAULT_FOLD_IN_FRACTION,
    DEFAULT_MIN_ITEM_CLICKS, DEFAULT_MIN_USER_CLICKS,
};
use crate::error::{Error, Result};
use crate::eval::{
    cases_from_split, evaluate, sparsity_groups, write_group_report, write_sweep,
    write_user_report, EvalCase, EvalReport, SweepCurve,
};
use crate::scm::{
    augment, generate_counterfactuals, train_scm, write_counterfactual_sets, ScmConfig,
};
use crate::seeds;
use crate::synth::{generate, load_ground_truth, save_ground_truth, GroundTruth, SynthSpec};
use crate::vae::{
    load_checkpoint, predict_scores, save_checkpoint, train, Checkpoint, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub interactions: PathBuf,
    /// Optional category metadata file.
    pub categories: Option<PathBuf>,
    pub delimiter: String,
    pub rating_threshold: f64,
    pub min_item_clicks: usize,
    pub min_user_clicks: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            interactions: PathBuf::new(),
            categories: None,
            delimiter: ",".to_string(),
            rating_threshold: 1.0,
            min_item_clicks: DEFAULT_MIN_ITEM_CLICKS,
            min_user_clicks: DEFAULT_MIN_USER_CLICKS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n_val: usize,
    pub n_test: usize,
    pub fold_in_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n_val: 400,
            n_test: 400,
            fold_in_fraction: DEFAULT_FOLD_IN_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    /// Score rankings against synthetic ground-truth preferences instead of
    /// held-out items.
    pub ground_truth: Option<PathBuf>,
    /// Size of the ground-truth relevant set per user.
    pub ground_truth_top: usize,
    pub n_groups: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            recall_ks: vec![20],
            ndcg_ks: vec![100],
            ground_truth: None,
            ground_truth_top: 20,
            n_groups: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub scm: ScmConfig,
    pub eval: EvalConfig,
    /// Sweep grid; also reusable by the CLI --k-list flag.
    pub sweep_ks: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            scm: ScmConfig::default(),
            eval: EvalConfig::default(),
            sweep_ks: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact {
            path: path.to_path_buf(),
            command: "(write a config file)".to_string(),
        })?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(config)
    }

    /// Stage seeds all derive from the master seed; per-config seed fields
    /// in the file are ignored.
    fn train_config(&self, stage: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seeds::derive(self.seed, stage);
        t
    }

    fn scm_config(&self, stage: u64) -> ScmConfig {
        let mut s = self.scm.clone();
        s.seed = seeds::derive(self.seed, stage);
        s
    }

    fn cache_path(&self) -> PathBuf {
        self.out_dir.join("prepared.bin")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.bin")
    }

    pub fn augmented_checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint_augmented.bin")
    }
}

/// Exclusive lock on an experiment directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::DirectoryLocked(dir.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
    pub note: Option<String>,
}

impl Manifest {
    fn new(command: &str, seed: u64) -> Manifest {
        Manifest {
            schema_version: 1,
            command: command.to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            outputs: BTreeMap::new(),
            complete: false,
            note: None,
        }
    }

    fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn param<T: Serialize>(&mut self, key: &str, value: &T) {
        self.params.insert(
            key.to_string(),
            serde_json::to_string(value).unwrap_or_default(),
        );
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest_{}.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Load, filter, split, narrow the popularity counts to training users, and
/// cache the result.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<PathBuf> {
    let _lock = DirLock::acquire(&config.out_dir)?;
    let mut manifest = Manifest::new("prepare", config.seed);
    manifest.add_input(&config.data.interactions)?;
    if let Some(cats) = &config.data.categories {
        manifest.add_input(cats)?;
    }
    manifest.param("data", &config.data);
    manifest.param("split", &config.split);
    manifest.write(&config.out_dir)?;

    let opts = LoadOptions {
        delimiter: config.data.delimiter.clone(),
        rating_threshold: config.data.rating_threshold,
    };
    let interactions = load_interactions(&config.data.interactions, &opts)?;
    let categories = match &config.data.categories {
        Some(path) => Some(load_categories(path, &config.data.delimiter)?),
        None => None,
    };
    let mut dataset = filter_dataset(
        &interactions,
        categories.as_ref(),
        config.data.min_item_clicks,
        config.data.min_user_clicks,
    )?;
    let split = split_users(
        &dataset,
        config.split.n_val,
        config.split.n_test,
        config.split.fold_in_fraction,
        config.seed,
    )?;
    // Popularity statistics must never see held-out users.
    dataset.recount_clicks(&split.train_users);

    let meta = PrepareMeta {
        seed: config.seed,
        min_item_clicks: config.data.min_item_clicks,
        min_user_clicks: config.data.min_user_clicks,
        rating_threshold: config.data.rating_threshold,
    };
    let cache = config.cache_path();
    save_cache(&cache, &dataset, &split, &meta)?;

    manifest.add_output(&cache)?;
    manifest.complete = true;
    manifest.write(&config.out_dir)?;
    Ok(cache)
}

pub fn load_prepared(config: &ExperimentConfig) -> Result<(Dataset, Split)> {
    let (dataset, split, _) = load_cache(&config.cache_path())?;
    Ok((dataset, split))
}

fn write_loss_trace(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "epoch,recon,kl,aux_p,aux_m,total,val_ndcg")?;
    for e in &outcome.trace {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, e.recon, e.kl, e.aux_p, e.aux_m, e.total, e.val_ndcg
        )?;
    }
    Ok(())
}

/// Extract extreme sets at the configured debias degree and train the model.
pub fn cmd_train(config: &ExperimentConfig) -> Result<PathBuf> {
    let _lock = DirLock::acquire(&config.out_dir)?;
    let cache = config.cache_path();
    let mut manifest = Manifest::new("train", config.seed);
    manifest.add_input(&cache)?;
    let train_cfg = config.train_config(seeds::STAGE_TRAIN);
    manifest.param("train", &train_cfg);
    manifest.write(&config.out_dir)?;

    let (dataset, split) = load_prepared(config)?;
    let sets = training_sets(&dataset, &split.train_users, train_cfg.k);
    let outcome = train(&dataset, &split, &sets, &train_cfg)?;

    let ckpt_path = config.checkpoint_path();
    save_checkpoint(&ckpt_path, &Checkpoint::new(train_cfg, &outcome))?;
    let trace_path = config.out_dir.join("loss_trace.csv");
    write_loss_trace(&trace_path, &outcome)?;
    let scores_path = config.out_dir.join("bias_scores.csv");
    let sample: Vec<u32> = split.train_users.iter().take(50).cloned().collect();
    write_score_table(&scores_path, &dataset, &sample, config.train.k)?;

    manifest.add_output(&ckpt_path)?;
    manifest.add_output(&trace_path)?;
    manifest.add_output(&scores_path)?;
    manifest.complete = true;
    manifest.write(&config.out_dir)?;
    Ok(ckpt_path)
}

/// Fit the SCM, generate counterfactual sets for the training users, and
/// retrain from scratch on the enhanced sets.
pub fn cmd_augment(config: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    let _lock = DirLock::acquire(&config.out_dir)?;
    let cache = config.cache_path();
    let mut manifest = Manifest::new("augment", config.seed);
    manifest.add_input(&cache)?;
    let scm_cfg = config.scm_config(seeds::STAGE_SCM);
    let retrain_cfg = config.train_config(seeds::STAGE_RETRAIN);
    manifest.param("scm", &scm_cfg);
    manifest.param("train", &retrain_cfg);
    manifest.write(&config.out_dir)?;

    let (dataset, split) = load_prepared(config)?;
    let (params, posterior, elbo_trace) = train_scm(&dataset, &split.train_users, &scm_cfg)?;

    let mut generation_cfg = scm_cfg.clone();
    generation_cfg.seed = seeds::derive(config.seed, seeds::STAGE_COUNTERFACTUAL);
    let counter = generate_counterfactuals(
        &params,
        &posterior,
        &dataset,
        &split.train_users,
        &generation_cfg,
    );
    let sets_path = config.out_dir.join("counterfactual_sets.tsv");
    write_counterfactual_sets(&sets_path, &dataset, &counter)?;
    let elbo_path = config.out_dir.join("scm_elbo_trace.csv");
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&elbo_path)?);
        writeln!(out, "epoch,elbo")?;
        for (i, e) in elbo_trace.iter().enumerate() {
            writeln!(out, "{i},{e:.6}")?;
        }
    }

    let base = training_sets(&dataset, &split.train_users, retrain_cfg.k);
    let enhanced = augment(&base, &counter);
    let outcome = train(&dataset, &split, &enhanced, &retrain_cfg)?;
    let ckpt_path = config.augmented_checkpoint_path();
    save_checkpoint(&ckpt_path, &Checkpoint::new(retrain_cfg, &outcome))?;
    let trace_path = config.out_dir.join("loss_trace_augmented.csv");
    write_loss_trace(&trace_path, &outcome)?;

    manifest.add_output(&sets_path)?;
    manifest.add_output(&elbo_path)?;
    manifest.add_output(&ckpt_path)?;
    manifest.add_output(&trace_path)?;
    manifest.complete = true;
    manifest.write(&config.out_dir)?;
    Ok((sets_path, ckpt_path))
}

/// Build evaluation cases for the given users: held-out relevance unless a
/// ground-truth file is configured.
pub fn build_cases(
    config: &ExperimentConfig,
    split: &Split,
    users: &[u32],
) -> Result<Vec<EvalCase>> {
    let mut cases = cases_from_split(split, users);
    if let Some(truth_path) = &config.eval.ground_truth {
        let truth: GroundTruth = load_ground_truth(truth_path)?;
        for case in &mut cases {
            case.relevant =
                truth.relevant_items(case.user, &case.fold_in, config.eval.ground_truth_top);
        }
    }
    Ok(cases)
}

/// Items-by-popularity recommendation share: decile of training clicks vs
/// share of top-20 recommendation slots.
fn popularity_table(
    dataset: &Dataset,
    cases: &[EvalCase],
    ckpt: &Checkpoint,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut slot_counts = vec![0u64; dataset.n_items];
    for case in cases {
        let ranking = predict_scores(&ckpt.params, dataset, &case.fold_in, ckpt.config.k)?;
        for &i in ranking.iter().take(20) {
            slot_counts[i as usize] += 1;
        }
    }
    let mut order: Vec<usize> = (0..dataset.n_items).collect();
    order.sort_by(|&a, &b| {
        dataset.item_click_count[a]
            .cmp(&dataset.item_click_count[b])
            .then(a.cmp(&b))
    });
    let total_slots: u64 = slot_counts.iter().sum();
    let mut rows = Vec::new();
    let n_buckets = 10usize.min(dataset.n_items);
    let base = dataset.n_items / n_buckets;
    let rem = dataset.n_items % n_buckets;
    let mut cursor = 0usize;
    for b in 0..n_buckets {
        let size = base + usize::from(b < rem);
        let members = &order[cursor..cursor + size];
        cursor += size;
        let hits: u64 = members.iter().map(|&i| slot_counts[i]).sum();
        let share = if total_slots == 0 {
            0.0
        } else {
            hits as f64 / total_slots as f64
        };
        rows.push((b, size, share));
    }
    Ok(rows)
}

fn write_summary(path: &Path, report: &EvalReport, groups_ok: bool) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "evaluation summary")?;
    writeln!(out, "==================")?;
    for (key, value) in &report.metadata {
        writeln!(out, "{key}: {value}")?;
    }
    writeln!(out, "evaluated users: {}", report.users.len())?;
    writeln!(out, "skipped users: {}", report.skipped)?;
    for (k, v) in &report.mean_recall {
        writeln!(out, "recall@{k}: {v:.6}")?;
    }
    for (k, v) in &report.mean_ndcg {
        writeln!(out, "ndcg@{k}: {v:.6}")?;
    }
    if !groups_ok {
        writeln!(out, "sparsity groups: skipped (too few users)")?;
    }
    Ok(())
}

/// Evaluate a checkpoint on the test users and write all report files.
pub fn cmd_evaluate(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let _lock = DirLock::acquire(&config.out_dir)?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.checkpoint_path());
    let cache = config.cache_path();
    let mut manifest = Manifest::new("evaluate", config.seed);
    manifest.add_input(&cache)?;
    manifest.add_input(&ckpt_path)?;
    manifest.param("eval", &config.eval);
    manifest.write(&config.out_dir)?;

    let (dataset, split) = load_prepared(config)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let cases = build_cases(config, &split, &split.test_users)?;
    let mut report = evaluate(
        &cases,
        |case| predict_scores(&ckpt.params, &dataset, &case.fold_in, ckpt.config.k),
        &config.eval.recall_ks,
        &config.eval.ndcg_ks,
    )?;
    report.metadata.insert(
        "checkpoint".to_string(),
        ckpt_path.file_name().unwrap_or_default().to_string_lossy().to_string(),
    );
    report
        .metadata
        .insert("dataset_sha256".to_string(), sha256_file(&cache)?);
    report.metadata.insert("k".to_string(), format!("{}", ckpt.config.k));
    report
        .metadata
        .insert("seed".to_string(), format!("{}", config.seed));

    let users_path = config.out_dir.join("report_users.csv");
    write_user_report(&users_path, &report)?;
    let groups = sparsity_groups(&report, config.eval.n_groups);
    let groups_path = config.out_dir.join("report_groups.csv");
    if let Ok(groups) = &groups {
        write_group_report(&groups_path, groups)?;
    }
    let pop_path = config.out_dir.join("popularity_recs.csv");
    {
        let rows = popularity_table(&dataset, &cases, &ckpt)?;
        let mut out = std::io::BufWriter::new(fs::File::create(&pop_path)?);
        writeln!(out, "popularity_bucket,n_items,top20_share")?;
        for (b, n, share) in rows {
            writeln!(out, "{b},{n},{share:.6}")?;
        }
    }
    let summary_path = config.out_dir.join("summary.txt");
    write_summary(&summary_path, &report, groups.is_ok())?;

    manifest.add_output(&users_path)?;
    if groups.is_ok() {
        manifest.add_output(&groups_path)?;
    }
    manifest.add_output(&pop_path)?;
    manifest.add_output(&summary_path)?;
    manifest.complete = true;
    manifest.write(&config.out_dir)?;
    Ok(report)
}

/// Re-extract, retrain and evaluate for each debias degree; each run gets a
/// fresh stage seed offset by its index. Emits (k, Recall@20) rows.
pub fn cmd_sweep(config: &ExperimentConfig, ks: &[f64]) -> Result<SweepCurve> {
    let _lock = DirLock::acquire(&config.out_dir)?;
    let cache = config.cache_path();
    let mut manifest = Manifest::new("sweep", config.seed);
    manifest.add_input(&cache)?;
    manifest.param("ks", &ks.to_vec());
    manifest.param("train", &config.train);
    manifest.write(&config.out_dir)?;

    let (dataset, split) = load_prepared(config)?;
    let cases = build_cases(config, &split, &split.test_users)?;
    let mut curve = SweepCurve::default();
    let sweep_path = config.out_dir.join("sweep.csv");
    for (idx, &k) in ks.iter().enumerate() {
        let run = (|| -> Result<f64> {
            let mut cfg = config.train_config(seeds::STAGE_SWEEP_BASE + idx as u64);
            cfg.k = k;
            let sets = training_sets(&dataset, &split.train_users, k);
            let outcome = train(&dataset, &split, &sets, &cfg)?;
            let report = evaluate(
                &cases,
                |case| predict_scores(&outcome.params, &dataset, &case.fold_in, k),
                &[20],
                &[100],
            )?;
            Ok(report.mean_recall[&20])
        })();
        match run {
            Ok(metric) => curve.push(k, metric),
            Err(e) => {
                // Flag the partial result and surface the failure.
                write_sweep(&sweep_path, &curve, "recall@20")?;
                manifest.add_output(&sweep_path)?;
                manifest.complete = false;
                manifest.note = Some(format!("aborted at k={k}: {e}"));
                manifest.write(&config.out_dir)?;
                return Err(e);
            }
        }
    }
    write_sweep(&sweep_path, &curve, "recall@20")?;
    manifest.add_output(&sweep_path)?;
    manifest.complete = true;
    manifest.write(&config.out_dir)?;
    Ok(curve)
}

/// Generate a synthetic dataset from a spec file and write it in the
/// loader formats plus the ground-truth sidecar.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<(Dataset, GroundTruth)> {
    let _lock = DirLock::acquire(out_dir)?;
    let text = fs::read_to_string(spec_path).map_err(|_| Error::MissingArtifact {
        path: spec_path.to_path_buf(),
        command: "(write a synth spec file)".to_string(),
    })?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut manifest = Manifest::new("synth", spec.seed);
    manifest.add_input(spec_path)?;
    manifest.param("spec", &spec);
    manifest.write(out_dir)?;

    let (dataset, truth) = generate(&spec)?;
    let ipath = out_dir.join("interactions.csv");
    let cpath = out_dir.join("categories.csv");
    let tpath = out_dir.join("truth.bin");
    crate::dataset::write_interactions_csv(&ipath, &dataset)?;
    crate::dataset::write_categories_csv(&cpath, &dataset)?;
    save_ground_truth(&tpath, &truth)?;

    manifest.add_output(&ipath)?;
    manifest.add_output(&cpath)?;
    manifest.add_output(&tpath)?;
    manifest.complete = true;
    manifest.write(out_dir)?;
    Ok((dataset, truth))
}

/// Collate whatever reports exist in the experiment directory into one
/// plain-text document.
pub fn cmd_report(out_dir: &Path) -> Result<String> {
    let mut doc = String::new();
    doc.push_str(&format!("experiment report: {}\n", out_dir.display()));
    doc.push_str(&"=".repeat(60));
    doc.push('\n');
    let mut found = false;
    for (title, file) in [
        ("summary", "summary.txt"),
        ("sparsity groups", "report_groups.csv"),
        ("popularity vs recommendations", "popularity_recs.csv"),
        ("debias-degree sweep", "sweep.csv"),
        ("loss trace (last 5 epochs)", "loss_trace.csv"),
    ] {
        let path = out_dir.join(file);
        if !path.exists() {
            continue;
        }
        found = true;
        doc.push_str(&format!("\n## {title} ({file})\n"));
        let text = fs::read_to_string(&path)?;
        if file == "loss_trace.csv" {
            let lines: Vec<&str> = text.lines().collect();
            if let Some(header) = lines.first() {
                doc.push_str(header);
                doc.push('\n');
            }
            for line in lines.iter().skip(1).rev().take(5).rev() {
                doc.push_str(line);
                doc.push('\n');
            }
        } else {
            doc.push_str(&text);
        }
    }
    if !found {
        return Err(Error::MissingArtifact {
            path: out_dir.join("summary.txt"),
            command: "evaluate".to_string(),
        });
    }
    let path = out_dir.join("report.txt");
    fs::write(&path, &doc)?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.train.batch_size, config.train.batch_size);
        assert_eq!(back.sweep_ks.len(), 9);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = r#"
            seed = 7
            [data]
            interactions = "x.csv"
            delimiter = "::"
        "#;
        let config: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.data.delimiter, "::");
        assert_eq!(config.data.min_item_clicks, 5);
        assert_eq!(config.train.hidden, 600);
        assert_eq!(config.eval.recall_ks, vec![20]);
    }

    #[test]
    fn dir_lock_excludes_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            DirLock::acquire(dir.path()),
            Err(Error::DirectoryLocked(_))
        ));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn manifest_is_deterministic_json() {
        let mut m = Manifest::new("test", 3);
        m.param("k", &0.5);
        let dir = tempfile::tempdir().unwrap();
        let p1 = m.write(dir.path()).unwrap();
        let first = fs::read(&p1).unwrap();
        let p2 = m.write(dir.path()).unwrap();
        assert_eq!(first, fs::read(&p2).unwrap());
    }
}

//! Interaction ingestion, filtering, id mapping and user splits.
//!
//! The on-disk inputs are delimited text files: one interactions file with
//! `(user, item[, rating][, timestamp])` columns and an optional category
//! file with `(item, category-list)` columns where the category list is
//! `|`-separated. Ratings are binarized into clicks at a configurable
//! threshold; everything downstream works on the binary user×item matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::l2_norm;
use crate::seeds;

pub const DEFAULT_MIN_ITEM_CLICKS: usize = 5;
pub const DEFAULT_MIN_USER_CLICKS: usize = 2;
pub const DEFAULT_FOLD_IN_FRACTION: f64 = 0.8;

/// One raw click record, before id mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: Option<i64>,
}

/// Column layout options for the interactions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Column delimiter, e.g. "," or "::" or "\t".
    pub delimiter: String,
    /// Keep a record as a click when its rating column is >= this value.
    /// Files without a rating column keep every record.
    pub rating_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: ",".to_string(),
            rating_threshold: 1.0,
        }
    }
}

/// Parse the interactions file. Blank lines are skipped; anything else that
/// does not parse is an error carrying the 1-based line number.
pub fn load_interactions(path: &Path, opts: &LoadOptions) -> Result<Vec<Interaction>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split(opts.delimiter.as_str()).collect();
        if fields.len() < 2 {
            return Err(parse_err(format!(
                "expected at least 2 fields, got {}",
                fields.len()
            )));
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".to_string()));
        }
        let rating: Option<f64> = match fields.get(2) {
            Some(f) => Some(
                f.trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad rating field {f:?}")))?,
            ),
            None => None,
        };
        let timestamp: Option<i64> = match fields.get(3) {
            Some(f) => Some(
                f.trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad timestamp field {f:?}")))?,
            ),
            None => None,
        };
        if let Some(r) = rating {
            if r < opts.rating_threshold {
                continue;
            }
        }
        out.push(Interaction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no interactions in {}",
            path.display()
        )));
    }
    Ok(out)
}

/// Category metadata keyed by external item id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CategoryTable {
    /// Category names, in first-appearance order.
    pub names: Vec<String>,
    /// External item id -> category indices into `names`.
    pub by_item: BTreeMap<String, Vec<u32>>,
}

/// Parse the category file. Lines are `(item, categories)` where categories
/// are `|`-separated; when a line has more than two columns the last column
/// is taken as the category list, which tolerates an extra title column.
pub fn load_categories(path: &Path, delimiter: &str) -> Result<CategoryTable> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut names: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    let mut by_item = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(delimiter).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected at least 2 fields, got {}", fields.len()),
            });
        }
        let item = fields[0].trim().to_string();
        let cat_field = fields[fields.len() - 1].trim();
        let mut cats = Vec::new();
        for name in cat_field.split('|') {
            let name = name.trim();
            if name.is_empty() {
                continue;
            }
            let id = *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                (names.len() - 1) as u32
            });
            if !cats.contains(&id) {
                cats.push(id);
            }
        }
        cats.sort_unstable();
        by_item.insert(item, cats);
    }
    Ok(CategoryTable { names, by_item })
}

/// Id-mapped, filtered interaction data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Per-user sorted unique dense item indices.
    profiles: Vec<Vec<u32>>,
    /// Per-item sorted category indices (multi-hot, stored sparse).
    item_categories: Vec<Vec<u32>>,
    pub category_names: Vec<String>,
    /// Dense index -> external id.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// External id -> dense index.
    pub user_index: BTreeMap<String, u32>,
    pub item_index: BTreeMap<String, u32>,
    /// num(i): clicks per item. Set over all users at construction; the
    /// pipeline narrows it to training users right after splitting so
    /// popularity statistics never see held-out data.
    pub item_click_count: Vec<u64>,
    /// Category-file rows whose item was not retained.
    pub ignored_category_rows: usize,
}

impl Dataset {
    pub fn profile(&self, user: u32) -> &[u32] {
        &self.profiles[user as usize]
    }

    pub fn item_categories(&self, item: u32) -> &[u32] {
        &self.item_categories[item as usize]
    }

    /// Dense 0/1 category vector of an item.
    pub fn item_category_vector(&self, item: u32) -> Vec<f64> {
        let mut v = vec![0.0; self.n_categories];
        for &c in self.item_categories(item) {
            v[c as usize] = 1.0;
        }
        v
    }

    /// Multi-hot indicator over items, L2-normalized. The empty set encodes
    /// to the zero vector.
    pub fn encode_bag(&self, items: &[u32]) -> Vec<f64> {
        let mut v = vec![0.0; self.n_items];
        for &i in items {
            v[i as usize] = 1.0;
        }
        let norm = l2_norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Replace `item_click_count` with counts over the given users only.
    pub fn recount_clicks(&mut self, users: &[u32]) {
        let mut counts = vec![0u64; self.n_items];
        for &u in users {
            for &i in self.profile(u) {
                counts[i as usize] += 1;
            }
        }
        self.item_click_count = counts;
    }

    pub fn n_interactions(&self) -> usize {
        self.profiles.iter().map(|p| p.len()).sum()
    }

    /// Construct directly from dense-indexed parts. Profiles are deduplicated
    /// and sorted; click counts are recomputed over all users.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut profiles: Vec<Vec<u32>>,
        item_categories: Vec<Vec<u32>>,
        category_names: Vec<String>,
    ) -> Self {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        for p in &mut profiles {
            p.sort_unstable();
            p.dedup();
        }
        let mut item_click_count = vec![0u64; n_items];
        for p in &profiles {
            for &i in p {
                item_click_count[i as usize] += 1;
            }
        }
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Dataset {
            n_users,
            n_items,
            n_categories: category_names.len(),
            profiles,
            item_categories,
            category_names,
            user_ids,
            item_ids,
            user_index,
            item_index,
            item_click_count,
            ignored_category_rows: 0,
        }
    }
}

/// Alternately drop items below `min_item_clicks` and users below
/// `min_user_clicks` until nothing changes, then build dense id maps.
pub fn filter_dataset(
    interactions: &[Interaction],
    categories: Option<&CategoryTable>,
    min_item_clicks: usize,
    min_user_clicks: usize,
) -> Result<Dataset> {
    assert!(min_item_clicks >= 1 && min_user_clicks >= 1);

    // Provisional dense ids in first-appearance order.
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_map: BTreeMap<&str, u32> = BTreeMap::new();
    let mut item_map: BTreeMap<&str, u32> = BTreeMap::new();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();
    for rec in interactions {
        let u = *user_map.entry(rec.user.as_str()).or_insert_with(|| {
            user_ids.push(rec.user.clone());
            (user_ids.len() - 1) as u32
        });
        let i = *item_map.entry(rec.item.as_str()).or_insert_with(|| {
            item_ids.push(rec.item.clone());
            (item_ids.len() - 1) as u32
        });
        if seen.insert((u, i)) {
            pairs.push((u, i));
        }
    }

    let mut user_alive = vec![true; user_ids.len()];
    let mut item_alive = vec![true; item_ids.len()];
    loop {
        let mut changed = false;
        let mut item_counts = vec![0usize; item_ids.len()];
        for &(u, i) in &pairs {
            if user_alive[u as usize] && item_alive[i as usize] {
                item_counts[i as usize] += 1;
            }
        }
        for (i, &c) in item_counts.iter().enumerate() {
            if item_alive[i] && c < min_item_clicks {
                item_alive[i] = false;
                changed = true;
            }
        }
        let mut user_counts = vec![0usize; user_ids.len()];
        for &(u, i) in &pairs {
            if user_alive[u as usize] && item_alive[i as usize] {
                user_counts[u as usize] += 1;
            }
        }
        for (u, &c) in user_counts.iter().enumerate() {
            if user_alive[u] && c < min_user_clicks {
                user_alive[u] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Final dense ids, preserving first-appearance order.
    let mut user_remap = vec![u32::MAX; user_ids.len()];
    let mut item_remap = vec![u32::MAX; item_ids.len()];
    let mut final_users = Vec::new();
    let mut final_items = Vec::new();
    for (old, id) in user_ids.iter().enumerate() {
        if user_alive[old] {
            user_remap[old] = final_users.len() as u32;
            final_users.push(id.clone());
        }
    }
    for (old, id) in item_ids.iter().enumerate() {
        if item_alive[old] {
            item_remap[old] = final_items.len() as u32;
            final_items.push(id.clone());
        }
    }
    if final_users.is_empty() || final_items.is_empty() {
        return Err(Error::EmptyAfterFilter {
            min_item_clicks,
            min_user_clicks,
        });
    }

    let mut profiles: Vec<Vec<u32>> = vec![Vec::new(); final_users.len()];
    let mut item_click_count = vec![0u64; final_items.len()];
    for &(u, i) in &pairs {
        if user_alive[u as usize] && item_alive[i as usize] {
            let nu = user_remap[u as usize];
            let ni = item_remap[i as usize];
            profiles[nu as usize].push(ni);
            item_click_count[ni as usize] += 1;
        }
    }
    for p in &mut profiles {
        p.sort_unstable();
    }

    let (category_names, item_categories, ignored) = match categories {
        Some(table) => {
            let mut per_item: Vec<Vec<u32>> = vec![Vec::new(); final_items.len()];
            let mut ignored = 0usize;
            let final_index: BTreeMap<&str, u32> = final_items
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i as u32))
                .collect();
            for (ext, cats) in &table.by_item {
                match final_index.get(ext.as_str()) {
                    Some(&i) => per_item[i as usize] = cats.clone(),
                    None => ignored += 1,
                }
            }
            (table.names.clone(), per_item, ignored)
        }
        None => (Vec::new(), vec![Vec::new(); final_items.len()], 0),
    };

    let user_index = final_users
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let item_index = final_items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();

    Ok(Dataset {
        n_users: final_users.len(),
        n_items: final_items.len(),
        n_categories: category_names.len(),
        profiles,
        item_categories,
        category_names,
        user_ids: final_users,
        item_ids: final_items,
        user_index,
        item_index,
        item_click_count,
        ignored_category_rows: ignored,
    })
}

/// Fold-in/held-out partition of one evaluation user's profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldOut {
    pub fold_in: Vec<u32>,
    pub held_out: Vec<u32>,
}

/// User-level train/validation/test partition with per-user fold-in splits
/// for every held-out user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train_users: Vec<u32>,
    pub val_users: Vec<u32>,
    pub test_users: Vec<u32>,
    pub fold_in_fraction: f64,
    pub held: BTreeMap<u32, HeldOut>,
    pub seed: u64,
}

/// Deterministic shuffled user partition. Only users with at least two items
/// can be held out; the fold-in side gets `floor(fraction * n)` items,
/// clamped so both sides are nonempty.
pub fn split_users(
    dataset: &Dataset,
    n_val: usize,
    n_test: usize,
    fold_in_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if n_val + n_test >= dataset.n_users {
        return Err(Error::InsufficientUsers {
            needed: n_val + n_test + 1,
            available: dataset.n_users,
            context: "n_val + n_test must be < n_users".to_string(),
        });
    }
    if !(fold_in_fraction > 0.0 && fold_in_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fold_in_fraction must be in (0,1), got {fold_in_fraction}"
        )));
    }

    let mut order: Vec<u32> = (0..dataset.n_users as u32).collect();
    let mut rng = seeds::stage_rng(seed, seeds::STAGE_SPLIT);
    order.shuffle(&mut rng);

    let mut val_users = Vec::with_capacity(n_val);
    let mut test_users = Vec::with_capacity(n_test);
    let mut train_users = Vec::new();
    for &u in &order {
        let eligible = dataset.profile(u).len() >= 2;
        if val_users.len() < n_val && eligible {
            val_users.push(u);
        } else if test_users.len() < n_test && eligible {
            test_users.push(u);
        } else {
            train_users.push(u);
        }
    }
    if val_users.len() < n_val || test_users.len() < n_test {
        return Err(Error::InsufficientUsers {
            needed: n_val + n_test,
            available: val_users.len() + test_users.len(),
            context: "users with >= 2 items eligible for hold-out".to_string(),
        });
    }
    train_users.sort_unstable();
    val_users.sort_unstable();
    test_users.sort_unstable();

    let mut held = BTreeMap::new();
    for &u in val_users.iter().chain(test_users.iter()) {
        let mut items = dataset.profile(u).to_vec();
        let mut user_rng = seeds::substream_rng(seeds::derive(seed, seeds::STAGE_SPLIT), u as u64);
        items.shuffle(&mut user_rng);
        let n = items.len();
        let n_fold = ((fold_in_fraction * n as f64).floor() as usize).clamp(1, n - 1);
        let mut fold_in = items[..n_fold].to_vec();
        let mut held_out = items[n_fold..].to_vec();
        fold_in.sort_unstable();
        held_out.sort_unstable();
        held.insert(u, HeldOut { fold_in, held_out });
    }

    Ok(Split {
        train_users,
        val_users,
        test_users,
        fold_in_fraction,
        held,
        seed,
    })
}

/// Write a dataset back out in the interactions format `load_interactions`
/// reads (external ids, one click per line).
pub fn write_interactions_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for u in 0..dataset.n_users as u32 {
        for &i in dataset.profile(u) {
            writeln!(
                out,
                "{},{}",
                dataset.user_ids[u as usize], dataset.item_ids[i as usize]
            )?;
        }
    }
    Ok(())
}

/// Write item categories in the format `load_categories` reads.
pub fn write_categories_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for i in 0..dataset.n_items as u32 {
        let names: Vec<&str> = dataset
            .item_categories(i)
            .iter()
            .map(|&c| dataset.category_names[c as usize].as_str())
            .collect();
        writeln!(
            out,
            "{},{}",
            dataset.item_ids[i as usize],
            names.join("|")
        )?;
    }
    Ok(())
}

const CACHE_MAGIC: &str = "debias-rec/prepared";
const CACHE_VERSION: u32 = 1;

/// Filter and split parameters embedded in the cache for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareMeta {
    pub seed: u64,
    pub min_item_clicks: usize,
    pub min_user_clicks: usize,
    pub rating_threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    magic: String,
    version: u32,
    meta: PrepareMeta,
    dataset: Dataset,
    split: Split,
}

pub fn save_cache(path: &Path, dataset: &Dataset, split: &Split, meta: &PrepareMeta) -> Result<()> {
    let file = CacheFile {
        magic: CACHE_MAGIC.to_string(),
        version: CACHE_VERSION,
        meta: meta.clone(),
        dataset: dataset.clone(),
        split: split.clone(),
    };
    let bytes = bincode::serialize(&file)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<(Dataset, Split, PrepareMeta)> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        command: "prepare".to_string(),
    })?;
    let file: CacheFile = bincode::deserialize(&bytes)?;
    if file.magic != CACHE_MAGIC {
        return Err(Error::VersionMismatch(format!(
            "{} is not a prepared-data cache",
            path.display()
        )));
    }
    if file.version != CACHE_VERSION {
        return Err(Error::VersionMismatch(format!(
            "cache version {} != {}",
            file.version, CACHE_VERSION
        )));
    }
    Ok((file.dataset, file.split, file.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy_interactions(pairs: &[(&str, &str)]) -> Vec<Interaction> {
        pairs
            .iter()
            .map(|(u, i)| Interaction {
                user: u.to_string(),
                item: i.to_string(),
                timestamp: None,
            })
            .collect()
    }

    #[test]
    fn loads_three_line_file() {
        let f = write_tmp("u1,i1\nu1,i2\nu2,i1\n");
        let recs = load_interactions(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].user, "u1");
        assert_eq!(recs[2].item, "i1");
    }

    #[test]
    fn rating_threshold_filters_records() {
        let f = write_tmp("u1,i1,5,964982703\nu1,i2,3,964982704\n");
        let opts = LoadOptions {
            delimiter: ",".into(),
            rating_threshold: 4.0,
        };
        let recs = load_interactions(f.path(), &opts).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].item, "i1");
        assert_eq!(recs[0].timestamp, Some(964982703));
    }

    #[test]
    fn double_colon_delimiter() {
        let f = write_tmp("1::10::4::978300760\n1::11::5::978302109\n");
        let opts = LoadOptions {
            delimiter: "::".into(),
            rating_threshold: 1.0,
        };
        let recs = load_interactions(f.path(), &opts).unwrap();
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("u1,i1\njunk\n");
        let err = load_interactions(f.path(), &LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("");
        assert!(load_interactions(f.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn category_file_tolerates_title_column() {
        let f = write_tmp("1::Toy Story (1995)::Animation|Comedy\n2::Jumanji (1995)::Adventure\n");
        let table = load_categories(f.path(), "::").unwrap();
        assert_eq!(table.names, vec!["Animation", "Comedy", "Adventure"]);
        assert_eq!(table.by_item["1"], vec![0, 1]);
    }

    #[test]
    fn filter_removes_item_below_threshold() {
        // item j has 4 clicks < 5; the four users keep their other items.
        let mut pairs = vec![];
        for u in ["a", "b", "c", "d", "e"] {
            pairs.push((u, "common1"));
            pairs.push((u, "common2"));
        }
        for u in ["a", "b", "c", "d"] {
            pairs.push((u, "j"));
        }
        let ds = filter_dataset(&toy_interactions(&pairs), None, 5, 2).unwrap();
        assert!(ds.item_index.get("j").is_none());
        assert_eq!(ds.n_items, 2);
        assert_eq!(ds.n_users, 5);
    }

    #[test]
    fn user_at_threshold_is_retained() {
        let mut pairs = vec![];
        for u in ["a", "b", "c", "d", "e"] {
            pairs.push((u, "p1"));
            pairs.push((u, "p2"));
        }
        let ds = filter_dataset(&toy_interactions(&pairs), None, 5, 2).unwrap();
        assert_eq!(ds.n_users, 5);
        assert_eq!(ds.profile(0).len(), 2);
    }

    #[test]
    fn filter_iterates_to_fixpoint() {
        // Removing item j (3 clicks) drops user u to 1 click, so u goes too.
        // Oracle: repeated filtering by hand on this 5-user toy log reaches
        // the same fixpoint in two rounds.
        let mut pairs = vec![];
        for u in ["a", "b", "c", "d"] {
            pairs.push((u, "p1"));
            pairs.push((u, "p2"));
            pairs.push((u, "p3"));
        }
        pairs.push(("a", "j"));
        pairs.push(("b", "j"));
        pairs.push(("u", "j"));
        pairs.push(("u", "p1"));
        let ds = filter_dataset(&toy_interactions(&pairs), None, 4, 2).unwrap();
        assert!(ds.item_index.get("j").is_none(), "j below item threshold");
        assert!(ds.user_index.get("u").is_none(), "u starved after j left");
        // Rescan: every survivor satisfies both thresholds.
        let mut item_counts = vec![0usize; ds.n_items];
        for u in 0..ds.n_users as u32 {
            assert!(ds.profile(u).len() >= 2);
            for &i in ds.profile(u) {
                item_counts[i as usize] += 1;
            }
        }
        assert!(item_counts.iter().all(|&c| c >= 4));
    }

    #[test]
    fn filter_on_everything_empty_is_error() {
        let pairs = vec![("a", "x"), ("b", "y")];
        assert!(matches!(
            filter_dataset(&toy_interactions(&pairs), None, 5, 2),
            Err(Error::EmptyAfterFilter { .. })
        ));
    }

    fn ten_user_dataset() -> Dataset {
        let mut pairs = Vec::new();
        let users = ["u0", "u1", "u2", "u3", "u4", "u5", "u6", "u7", "u8", "u9"];
        let items = ["a", "b", "c", "d", "e"];
        for (ui, u) in users.iter().enumerate() {
            for (ii, i) in items.iter().enumerate() {
                if (ui + ii) % 2 == 0 || ii < 2 {
                    pairs.push((*u, *i));
                }
            }
        }
        filter_dataset(&toy_interactions(&pairs), None, 1, 1).unwrap()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let ds = ten_user_dataset();
        let split = split_users(&ds, 2, 2, 0.8, 11).unwrap();
        assert_eq!(split.train_users.len(), 6);
        assert_eq!(split.val_users.len(), 2);
        assert_eq!(split.test_users.len(), 2);
        let mut all: Vec<u32> = split
            .train_users
            .iter()
            .chain(&split.val_users)
            .chain(&split.test_users)
            .cloned()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn fold_in_uses_floor_and_partitions_profile() {
        let ds = ten_user_dataset();
        let split = split_users(&ds, 2, 2, 0.8, 3).unwrap();
        for (&u, h) in &split.held {
            let n = ds.profile(u).len();
            let expect_fold = ((0.8 * n as f64).floor() as usize).clamp(1, n - 1);
            assert_eq!(h.fold_in.len(), expect_fold);
            assert_eq!(h.fold_in.len() + h.held_out.len(), n);
            let mut merged: Vec<u32> = h.fold_in.iter().chain(&h.held_out).cloned().collect();
            merged.sort_unstable();
            assert_eq!(merged, ds.profile(u));
            assert!(!h.fold_in.is_empty() && !h.held_out.is_empty());
        }
        // 5-item profile at 0.8 -> 4/1.
        let five = split.held.iter().find(|&(&u, _)| ds.profile(u).len() == 5);
        if let Some((_, h)) = five {
            assert_eq!(h.fold_in.len(), 4);
            assert_eq!(h.held_out.len(), 1);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let ds = ten_user_dataset();
        let a = split_users(&ds, 2, 2, 0.8, 5).unwrap();
        let b = split_users(&ds, 2, 2, 0.8, 5).unwrap();
        assert_eq!(
            bincode::serialize(&a).unwrap(),
            bincode::serialize(&b).unwrap()
        );
        let c = split_users(&ds, 2, 2, 0.8, 6).unwrap();
        assert_ne!(
            bincode::serialize(&a).unwrap(),
            bincode::serialize(&c).unwrap()
        );
    }

    #[test]
    fn split_rejects_too_many_holdouts() {
        let ds = ten_user_dataset();
        assert!(split_users(&ds, 6, 4, 0.8, 1).is_err());
    }

    #[test]
    fn encode_bag_examples() {
        let ds = Dataset::from_parts(
            vec!["u".into()],
            vec!["i0".into(), "i1".into(), "i2".into()],
            vec![vec![0, 1, 2]],
            vec![vec![], vec![], vec![]],
            vec![],
        );
        assert_eq!(ds.encode_bag(&[]), vec![0.0, 0.0, 0.0]);
        assert_eq!(ds.encode_bag(&[0]), vec![1.0, 0.0, 0.0]);
        let v = ds.encode_bag(&[0, 1]);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[0] - s).abs() < 1e-15 && (v[1] - s).abs() < 1e-15 && v[2] == 0.0);
        assert!((l2_norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recount_clicks_narrows_to_given_users() {
        let ds = ten_user_dataset();
        let mut narrowed = ds.clone();
        narrowed.recount_clicks(&[0, 1]);
        let full: u64 = ds.item_click_count.iter().sum();
        let part: u64 = narrowed.item_click_count.iter().sum();
        assert!(part < full);
        let expect = ds.profile(0).len() + ds.profile(1).len();
        assert_eq!(part as usize, expect);
    }

    #[test]
    fn cache_round_trip() {
        let ds = ten_user_dataset();
        let split = split_users(&ds, 2, 2, 0.8, 5).unwrap();
        let meta = PrepareMeta {
            seed: 5,
            min_item_clicks: 1,
            min_user_clicks: 1,
            rating_threshold: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prepared.bin");
        save_cache(&path, &ds, &split, &meta).unwrap();
        let (ds2, split2, meta2) = load_cache(&path).unwrap();
        assert_eq!(ds2.n_users, ds.n_users);
        assert_eq!(split2.train_users, split.train_users);
        assert_eq!(meta2.seed, 5);
    }
}

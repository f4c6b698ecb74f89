//! Train/test partitions of cell ids.
//!
//! Dataset splitters (MATR, HUST, ...) read `<cell_data_path>/splits/<name>.json`
//! when it exists. Without that file they select the cells whose id starts
//! with one of the dataset's source prefixes and apply a fixed rule.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{parse_params, Registry};

/// Constraints a split imposes on labels and features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eol_soh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_cycles: Option<usize>,
}

impl SplitMetadata {
    fn is_empty(&self) -> bool {
        self.eol_soh.is_none() && self.observed_cycles.is_none()
    }
}

/// On-disk split list: `{train: [...], test: [...], metadata: {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "SplitMetadata::is_empty")]
    pub metadata: SplitMetadata,
}

impl Split {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackRule {
    /// Sorted ids at odd positions go to test.
    Alternating,
    /// The last third of the sorted ids goes to test.
    LastThird,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Splitter {
    Random { test_fraction: f64, seed: u64 },
    Explicit { train_ids: Vec<String>, test_ids: Vec<String> },
    File { path: PathBuf },
    Dataset { name: String, prefixes: Vec<&'static str>, rule: FallbackRule, test_fraction: f64, seed: u64, metadata: SplitMetadata },
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Split(format!("test_fraction must lie in (0, 1), got {f}")));
    }
    Ok(())
}

/// Random partition: `floor(fraction * n)` test cells, at least one.
pub fn random_split(cells: &[String], test_fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(test_fraction)?;
    let mut ids = sorted_unique(cells)?;
    let n_test = ((test_fraction * ids.len() as f64).floor() as usize).max(1);
    if n_test >= ids.len() {
        return Err(Error::Split(format!("{} cells cannot be split into non-empty train and test sets", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = ids.split_off(ids.len() - n_test);
    ids.sort();
    test.sort();
    Ok(Split { train: ids, test, metadata: SplitMetadata::default() })
}

fn sorted_unique(cells: &[String]) -> Result<Vec<String>> {
    if cells.is_empty() {
        return Err(Error::Split("no cells to split".into()));
    }
    let set: BTreeSet<&String> = cells.iter().collect();
    Ok(set.into_iter().cloned().collect())
}

/// Checks stored lists against the corpus: disjoint, non-empty, all present.
fn explicit_split(train: &[String], test: &[String], cells: &[String], metadata: SplitMetadata) -> Result<Split> {
    let available: BTreeSet<&String> = cells.iter().collect();
    let train_set: BTreeSet<&String> = train.iter().collect();
    if let Some(both) = test.iter().find(|id| train_set.contains(id)) {
        return Err(Error::Split(format!("cell {both} is listed in both train and test")));
    }
    if let Some(missing) = train.iter().chain(test).find(|id| !available.contains(id)) {
        return Err(Error::Split(format!("cell {missing} is listed in the split but absent from the corpus")));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split("split has an empty train or test set".into()));
    }
    Ok(Split { train: train.to_vec(), test: test.to_vec(), metadata })
}

impl Splitter {
    pub fn split(&self, cell_data_path: &Path, cells: &[String]) -> Result<Split> {
        match self {
            Splitter::Random { test_fraction, seed } => random_split(cells, *test_fraction, *seed),
            Splitter::Explicit { train_ids, test_ids } => explicit_split(train_ids, test_ids, cells, SplitMetadata::default()),
            Splitter::File { path } => {
                let path = if path.is_relative() { cell_data_path.join(path) } else { path.clone() };
                let s = Split::read(&path)?;
                explicit_split(&s.train, &s.test, cells, s.metadata)
            }
            Splitter::Dataset { name, prefixes, rule, test_fraction, seed, metadata } => {
                let stored = cell_data_path.join("splits").join(format!("{name}.json"));
                if stored.exists() {
                    let s = Split::read(&stored)?;
                    let mut meta = s.metadata;
                    meta.eol_soh = meta.eol_soh.or(metadata.eol_soh);
                    meta.observed_cycles = meta.observed_cycles.or(metadata.observed_cycles);
                    return explicit_split(&s.train, &s.test, cells, meta);
                }
                let members: Vec<String> = cells
                    .iter()
                    .filter(|id| prefixes.iter().any(|p| id.starts_with(&format!("{p}_"))))
                    .cloned()
                    .collect();
                if members.is_empty() {
                    return Err(Error::Split(format!(
                        "{name}: no split file at {} and no cells with prefix {}",
                        stored.display(),
                        prefixes.join("_/") + "_"
                    )));
                }
                let ids = sorted_unique(&members)?;
                let mut split = match rule {
                    FallbackRule::Alternating => {
                        let (test, train): (Vec<_>, Vec<_>) = ids.iter().enumerate().partition(|(i, _)| i % 2 == 1);
                        Split {
                            train: train.into_iter().map(|(_, s)| s.clone()).collect(),
                            test: test.into_iter().map(|(_, s)| s.clone()).collect(),
                            metadata: SplitMetadata::default(),
                        }
                    }
                    FallbackRule::LastThird => {
                        let cut = ids.len() - (ids.len() / 3).max(1);
                        Split { train: ids[..cut].to_vec(), test: ids[cut..].to_vec(), metadata: SplitMetadata::default() }
                    }
                    FallbackRule::Random => random_split(&ids, *test_fraction, *seed)?,
                };
                if split.train.is_empty() || split.test.is_empty() {
                    return Err(Error::Split(format!("{name}: too few cells ({}) for a split", ids.len())));
                }
                split.metadata = metadata.clone();
                Ok(split)
            }
        }
    }
}

fn default_fraction() -> f64 {
    0.2
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomParams {
    #[serde(default = "default_fraction")]
    test_fraction: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitParams {
    train_ids: Vec<String>,
    test_ids: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileParams {
    split_file: PathBuf,
}

const CRUH: [&str; 4] = ["CALCE", "RWTH", "UL_PUR", "HNEI"];

/// Dataset splitters and their fallback rules.
fn datasets() -> Vec<(&'static str, Vec<&'static str>, FallbackRule, SplitMetadata)> {
    let none = SplitMetadata::default;
    let mut crush: Vec<&str> = CRUH.to_vec();
    crush.push("SNL");
    let mut mix: Vec<&str> = CRUH.to_vec();
    mix.extend(["MATR", "HUST", "SNL", "CLO"]);
    vec![
        ("MATRPrimaryTestTrainTestSplitter", vec!["MATR"], FallbackRule::Alternating, none()),
        ("MATRSecondaryTestTrainTestSplitter", vec!["MATR"], FallbackRule::LastThird, none()),
        ("HUSTTrainTestSplitter", vec!["HUST"], FallbackRule::Random, none()),
        ("CLOTrainTestSplitter", vec!["CLO"], FallbackRule::Random, none()),
        ("SNLTrainTestSplitter", vec!["SNL"], FallbackRule::Random, none()),
        ("CRUHTrainTestSplitter", CRUH.to_vec(), FallbackRule::Random, none()),
        ("CRUSHTrainTestSplitter", crush, FallbackRule::Random, SplitMetadata { eol_soh: Some(90.0), observed_cycles: Some(20) }),
        ("MIXTrainTestSplitter", mix, FallbackRule::Random, none()),
    ]
}

pub fn default_registry() -> Registry<Splitter> {
    let mut reg = Registry::new("splitter");
    reg.register("RandomTrainTestSplitter", |p, _| {
        let r: RandomParams = parse_params("splitter", "RandomTrainTestSplitter", p)?;
        check_fraction(r.test_fraction)?;
        Ok(Splitter::Random { test_fraction: r.test_fraction, seed: r.seed })
    })
    .expect("unique built-in names");
    reg.register("ExplicitTrainTestSplitter", |p, _| {
        let e: ExplicitParams = parse_params("splitter", "ExplicitTrainTestSplitter", p)?;
        Ok(Splitter::Explicit { train_ids: e.train_ids, test_ids: e.test_ids })
    })
    .expect("unique built-in names");
    reg.register("FileTrainTestSplitter", |p, _| {
        let f: FileParams = parse_params("splitter", "FileTrainTestSplitter", p)?;
        Ok(Splitter::File { path: f.split_file })
    })
    .expect("unique built-in names");
    for (name, prefixes, rule, metadata) in datasets() {
        reg.register(name, move |p, _| {
            let r: RandomParams = parse_params("splitter", name, p)?;
            check_fraction(r.test_fraction)?;
            Ok(Splitter::Dataset {
                name: name.to_string(),
                prefixes: prefixes.clone(),
                rule,
                test_fraction: r.test_fraction,
                seed: r.seed,
                metadata: metadata.clone(),
            })
        })
        .expect("unique built-in names");
    }
    reg
}

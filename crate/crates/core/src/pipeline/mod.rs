//! Config-driven train and evaluate runs.
//!
//! A run directory `run-<hash>` under the workspace holds the config copy,
//! `report.json`, one `model_seed<k>.bin` per seed, `transforms.json` and
//! the extracted features (`features.bin` / `features.json`).

mod config;
mod report;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{default_seeds, PipelineConfig, SplitConfig};
pub use report::{mean_sd, EvalReport, Excluded, Prediction, SeedMetrics};

use crate::battery_data::{list_cell_ids, read_cell_by_id, CellRecord};
use crate::error::{Error, Result};
use crate::features::{self, BoxedExtractor, FeatureMatrix, Granularity, RowKey};
use crate::labels::{self, LabelSpec, LabelVector, Task};
use crate::models::{self, ModelSpec, TrainedModel, TASK_SUFFIXES};
use crate::registry::{ComponentConfig, Registry};
use crate::splitters::{self, Split, Splitter};
use crate::stats;
use crate::transforms::{self, Transform};

pub const CONFIG_FILE: &str = "config.yaml";
pub const REPORT_FILE: &str = "report.json";
pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const FEATURES_STEM: &str = "features";
pub const LABELS_FILE: &str = "labels.json";

pub fn model_file(seed: u64) -> String {
    format!("model_seed{seed}.bin")
}

/// One registry per component kind.
pub struct Registries {
    pub splitters: Registry<Splitter>,
    pub features: Registry<BoxedExtractor>,
    pub labels: Registry<LabelSpec>,
    pub transforms: Registry<Transform>,
    pub models: Registry<ModelSpec>,
}

impl Default for Registries {
    fn default() -> Self {
        Self {
            splitters: splitters::default_registry(),
            features: features::default_registry(),
            labels: labels::default_registry(),
            transforms: transforms::default_registry(),
            models: models::default_registry(),
        }
    }
}

struct Components {
    splitter: Splitter,
    extractor: BoxedExtractor,
    label: LabelSpec,
    feature_tf: Option<Transform>,
    label_tf: Option<Transform>,
    model: ModelSpec,
}

fn granularity_for(task: Task) -> Granularity {
    match task {
        Task::Rul => Granularity::Cell,
        Task::Soh => Granularity::Cycle,
        Task::Soc => Granularity::Step,
    }
}

fn task_suffix(task: Task) -> &'static str {
    match task {
        Task::Rul => TASK_SUFFIXES[0],
        Task::Soh => TASK_SUFFIXES[1],
        Task::Soc => TASK_SUFFIXES[2],
    }
}

impl Registries {
    fn build(&self, cfg: &PipelineConfig) -> Result<Components> {
        let build_tf = |c: &Option<ComponentConfig>| c.as_ref().map(|c| self.transforms.build(c)).transpose();
        let c = Components {
            splitter: self.splitters.build(&cfg.train_test_split.component())?,
            extractor: self.features.build(&cfg.feature)?,
            label: self.labels.build(&cfg.label)?,
            feature_tf: build_tf(&cfg.feature_transformation)?,
            label_tf: build_tf(&cfg.label_transformation)?,
            model: self.models.build(&cfg.model)?,
        };
        let want = granularity_for(c.label.task);
        if c.extractor.granularity() != want {
            return Err(Error::Config(format!(
                "feature {:?} produces {:?}-level rows but label {:?} needs {want:?}-level rows",
                cfg.feature.name,
                c.extractor.granularity(),
                cfg.label.name
            )));
        }
        let own = task_suffix(c.label.task);
        if let Some(other) = TASK_SUFFIXES.iter().find(|s| **s != own && cfg.model.name.ends_with(*s)) {
            return Err(Error::Config(format!(
                "model {:?} is a {other} but the label task is {:?}",
                cfg.model.name, c.label.task
            )));
        }
        Ok(c)
    }
}

/// Row counts seen by each fit call, kept to prove the test split never
/// reaches a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitAudit {
    pub fit_rows: Vec<RowKey>,
    pub feature_transform_fit_rows: usize,
    pub label_transform_fit_rows: usize,
    /// `n_samples` of each trained model, in seed order.
    pub model_fit_rows: Vec<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub report: EvalReport,
    pub audit: FitAudit,
}

/// Settings applied on top of a checkpoint's stored config at evaluation.
#[derive(Debug, Clone, Default)]
pub struct EvalOverrides {
    pub train_test_split: Option<SplitConfig>,
    pub label: Option<ComponentConfig>,
    /// Accept a feature/label hash that differs from the one stored at
    /// train time.
    pub force: bool,
}

#[derive(Serialize, Deserialize)]
struct StoredTransforms {
    feature_transformation: Option<Transform>,
    label_transformation: Option<Transform>,
}

/// Joined feature rows and labels for the cells of one split.
struct Prepared {
    features: FeatureMatrix,
    labels: Vec<f64>,
    is_train: Vec<bool>,
    excluded: Vec<Excluded>,
    overrides: Vec<String>,
}

impl Prepared {
    fn rows(&self, train: bool) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.is_train[i] == train).collect()
    }
}

/// Labels keyed like the extractor rows of the same task.
pub fn label_rows(cell: &CellRecord, spec: &LabelSpec) -> Result<Vec<(RowKey, f64)>> {
    let id = &cell.cell_id;
    match spec.task {
        Task::Rul => Ok(vec![(RowKey::cell(id), labels::rul_label(cell, spec)? as f64)]),
        Task::Soh => {
            let soh = labels::soh_per_cycle(cell)?;
            Ok(cell.cycle_data.iter().zip(soh).map(|(c, s)| (RowKey::cycle(id, c.cycle_number), s)).collect())
        }
        Task::Soc => {
            let mut rows = Vec::new();
            for c in &cell.cycle_data {
                let soc = labels::soc_for_cycle(c)?;
                rows.extend(soc.into_iter().enumerate().map(|(k, s)| (RowKey::step(id, c.cycle_number, k), s)));
            }
            Ok(rows)
        }
    }
}

fn load_cells(dir: &Path, ids: &[String]) -> Result<Vec<CellRecord>> {
    ids.par_iter().map(|id| read_cell_by_id(dir, id)).collect()
}

fn prepare(c: &Components, cell_dir: &Path, split: &Split) -> Result<Prepared> {
    let mut overrides = Vec::new();
    let mut label = c.label.clone();
    if let Some(eol) = split.metadata.eol_soh {
        if label.task == Task::Rul && eol != label.eol_soh_percent {
            overrides.push(format!("label eol_soh_percent {} -> {eol} (split metadata)", label.eol_soh_percent));
            label.eol_soh_percent = eol;
        }
    }
    let observed = split.metadata.observed_cycles;
    if let Some(n) = observed {
        overrides.push(format!("features restricted to the first {n} cycles (split metadata)"));
    }

    let ids: Vec<String> = split.train.iter().chain(&split.test).cloned().collect();
    let train_set: BTreeSet<&String> = split.train.iter().collect();
    let cells = load_cells(cell_dir, &ids)?;

    type CellRows = Result<(Vec<(RowKey, f64)>, Vec<(RowKey, Vec<f64>)>)>;
    let per_cell: Vec<CellRows> = cells
        .par_iter()
        .map(|cell| {
            let y = label_rows(cell, &label)?;
            let x = match observed {
                Some(n) if n < cell.cycle_data.len() => {
                    let mut head = cell.clone();
                    head.cycle_data.truncate(n);
                    c.extractor.process_cell(&head)?
                }
                _ => c.extractor.process_cell(cell)?,
            };
            Ok((y, x))
        })
        .collect();

    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut is_train = Vec::new();
    let mut excluded = Vec::new();
    for (cell, res) in cells.iter().zip(per_cell) {
        let in_train = train_set.contains(&cell.cell_id);
        let side = if in_train { "train" } else { "test" };
        let exclude = |reason: String| Excluded { cell_id: cell.cell_id.clone(), split: side.into(), reason };
        match res {
            Err(e) => excluded.push(exclude(e.to_string())),
            Ok((y, x)) => {
                let by_key: HashMap<RowKey, f64> = y.into_iter().collect();
                let before = rows.len();
                for (key, feat) in x {
                    if let Some(&v) = by_key.get(&key) {
                        rows.push((key, feat));
                        values.push(v);
                        is_train.push(in_train);
                    }
                }
                if rows.len() == before {
                    excluded.push(exclude("no feature row matches a label".into()));
                }
            }
        }
    }
    for e in &excluded {
        log::warn!("excluding {} ({}): {}", e.cell_id, e.split, e.reason);
    }
    let features = FeatureMatrix::from_rows(rows, c.extractor.col_names())?;
    Ok(Prepared { features, labels: values, is_train, excluded, overrides })
}

fn apply(tf: &Option<Transform>, data: &[f64], n_cols: usize) -> Result<Vec<f64>> {
    match tf {
        Some(t) => t.transform(data, n_cols),
        None => Ok(data.to_vec()),
    }
}

fn design(values: Vec<f64>, n_cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(values.len() / n_cols.max(1), n_cols, &values)
}

/// Predicts the test rows with every model and scores them in label units.
fn score(
    prep: &Prepared,
    feature_tf: &Option<Transform>,
    label_tf: &Option<Transform>,
    models: &[TrainedModel],
) -> Result<(Vec<SeedMetrics>, Vec<Prediction>)> {
    let test = prep.rows(false);
    if test.is_empty() {
        return Err(Error::Split("no test rows remain after exclusions".into()));
    }
    let fm = prep.features.select_rows(&test);
    let n_cols = fm.n_cols();
    let x = design(apply(feature_tf, fm.values(), n_cols)?, n_cols);
    let y_true: Vec<f64> = test.iter().map(|&i| prep.labels[i]).collect();
    let scored: Vec<Result<(SeedMetrics, Vec<Prediction>)>> = models
        .par_iter()
        .map(|m| {
            let raw = m.predict(&x)?;
            let y_pred = match label_tf {
                Some(t) => t.inverse_transform(&raw, 1)?,
                None => raw,
            };
            let metrics = SeedMetrics { seed: m.seed, rmse: stats::rmse(&y_true, &y_pred), mae: stats::mae(&y_true, &y_pred) };
            let preds = fm
                .row_keys
                .iter()
                .zip(y_true.iter().zip(&y_pred))
                .map(|(k, (&t, &p))| Prediction { cell_id: k.cell_id.clone(), cycle: k.cycle, step: k.step, y_true: t, y_pred: p, seed: m.seed })
                .collect();
            Ok((metrics, preds))
        })
        .collect();
    let mut per_seed = Vec::new();
    let mut predictions = Vec::new();
    for r in scored {
        let (m, p) = r?;
        per_seed.push(m);
        predictions.extend(p);
    }
    Ok((per_seed, predictions))
}

fn build_report(
    cfg: &PipelineConfig,
    task: Task,
    split: &Split,
    prep: &Prepared,
    models: &[TrainedModel],
    per_seed: Vec<SeedMetrics>,
    predictions: Vec<Prediction>,
) -> EvalReport {
    let mut report = EvalReport {
        task,
        model: cfg.model.name.clone(),
        config_hash: cfg.run_hash(),
        feature_label_hash: cfg.feature_label_hash(),
        per_seed,
        mean_rmse: 0.0,
        sd_rmse: 0.0,
        mean_mae: 0.0,
        sd_mae: 0.0,
        n_train_rows: prep.rows(true).len(),
        n_test_rows: prep.rows(false).len(),
        predictions,
        excluded: prep.excluded.clone(),
        overrides: prep.overrides.clone(),
        warnings: models.iter().filter_map(|m| m.warning.as_ref().map(|w| format!("seed {}: {w}", m.seed))).collect(),
        train_ids: split.train.clone(),
        test_ids: split.test.clone(),
        split_metadata: split.metadata.clone(),
    };
    report.summarize();
    report
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs experiments against a set of registries.
#[derive(Default)]
pub struct Pipeline {
    pub registries: Registries,
}

impl Pipeline {
    pub fn new(registries: Registries) -> Self {
        Self { registries }
    }

    /// Split, label, extract, fit transforms and one model per seed on the
    /// training rows, score the test rows and write the run directory.
    pub fn train(&self, cfg: &PipelineConfig, workspace: &Path) -> Result<TrainOutcome> {
        cfg.check()?;
        let comps = self.registries.build(cfg)?;
        let cell_dir = &cfg.train_test_split.cell_data_path;
        let corpus = list_cell_ids(cell_dir)?;
        let split = comps.splitter.split(cell_dir, &corpus)?;
        log::info!("split: {} train / {} test cells", split.train.len(), split.test.len());

        let prep = prepare(&comps, cell_dir, &split)?;
        if prep.labels.is_empty() {
            return Err(Error::Label("every cell was excluded".into()));
        }
        let train = prep.rows(true);
        if train.is_empty() {
            return Err(Error::Split("no training rows remain after exclusions".into()));
        }
        let train_fm = prep.features.select_rows(&train);
        let n_cols = train_fm.n_cols();
        let mut audit = FitAudit { fit_rows: train_fm.row_keys.clone(), ..Default::default() };

        let mut feature_tf = comps.feature_tf.clone();
        if let Some(t) = feature_tf.as_mut() {
            t.fit(train_fm.values(), n_cols)?;
            audit.feature_transform_fit_rows = train_fm.values().len() / n_cols.max(1);
        }
        let x = design(apply(&feature_tf, train_fm.values(), n_cols)?, n_cols);

        let y_raw: Vec<f64> = train.iter().map(|&i| prep.labels[i]).collect();
        let mut label_tf = comps.label_tf.clone();
        if let Some(t) = label_tf.as_mut() {
            t.fit(&y_raw, 1)?;
            audit.label_transform_fit_rows = y_raw.len();
        }
        let y = apply(&label_tf, &y_raw, 1)?;

        let models: Vec<TrainedModel> =
            cfg.seeds.par_iter().map(|&s| models::fit(&comps.model, &x, &y, s)).collect::<Result<_>>()?;
        audit.model_fit_rows = models.iter().map(|m| m.n_samples).collect();

        let (per_seed, predictions) = score(&prep, &feature_tf, &label_tf, &models)?;
        let report = build_report(cfg, comps.label.task, &split, &prep, &models, per_seed, predictions);

        let dir = workspace.join(format!("run-{}", &report.config_hash[..12]));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join(CONFIG_FILE), cfg.to_yaml().as_bytes())?;
        let tfs = StoredTransforms { feature_transformation: feature_tf, label_transformation: label_tf };
        write_file(&dir.join(TRANSFORMS_FILE), serde_json::to_string_pretty(&tfs).expect("transforms serialize").as_bytes())?;
        for m in &models {
            m.save(&dir.join(model_file(m.seed)))?;
        }
        prep.features.write(&dir.join(FEATURES_STEM))?;
        let labels = LabelVector { values: prep.labels.clone(), row_keys: prep.features.row_keys.clone() };
        write_file(&dir.join(LABELS_FILE), serde_json::to_string(&labels).expect("labels serialize").as_bytes())?;
        write_file(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
        log::info!("mean test RMSE {:.4} (sd {:.4}) over {} seeds", report.mean_rmse, report.sd_rmse, report.per_seed.len());
        Ok(TrainOutcome { checkpoint: dir, report, audit })
    }

    /// Re-scores a run directory from its stored transforms and models.
    pub fn evaluate(&self, checkpoint: &Path, overrides: &EvalOverrides) -> Result<EvalReport> {
        let stored = EvalReport::read(&checkpoint.join(REPORT_FILE))?;
        let mut cfg = PipelineConfig::from_file(&checkpoint.join(CONFIG_FILE))?;
        let mut notes = Vec::new();
        if cfg.feature_label_hash() != stored.feature_label_hash && !overrides.force {
            return Err(Error::Checkpoint(format!(
                "{} no longer matches the feature/label settings the models were trained with",
                checkpoint.join(CONFIG_FILE).display()
            )));
        }
        if let Some(label) = &overrides.label {
            cfg.label = label.clone();
            if cfg.feature_label_hash() != stored.feature_label_hash && !overrides.force {
                return Err(Error::Checkpoint("label override changes the feature/label hash; force is required".into()));
            }
            notes.push(format!("label overridden: {}", label.name));
        }
        let split_cfg = overrides.train_test_split.clone();
        if let Some(s) = &split_cfg {
            notes.push(format!("train_test_split overridden: {} on {}", s.name, s.cell_data_path.display()));
            cfg.train_test_split = s.clone();
        }
        let comps = self.registries.build(&cfg)?;
        let cell_dir = &cfg.train_test_split.cell_data_path;
        let split = match split_cfg {
            Some(_) => comps.splitter.split(cell_dir, &list_cell_ids(cell_dir)?)?,
            None => Split { train: stored.train_ids.clone(), test: stored.test_ids.clone(), metadata: stored.split_metadata.clone() },
        };

        let mut prep = prepare(&comps, cell_dir, &split)?;
        prep.overrides.extend(notes);

        let tf_path = checkpoint.join(TRANSFORMS_FILE);
        let text = fs::read_to_string(&tf_path).map_err(|e| Error::io(&tf_path, e))?;
        let tfs: StoredTransforms =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", tf_path.display())))?;
        let models: Vec<TrainedModel> =
            cfg.seeds.iter().map(|&s| TrainedModel::load(&checkpoint.join(model_file(s)))).collect::<Result<_>>()?;

        let (per_seed, predictions) = score(&prep, &tfs.feature_transformation, &tfs.label_transformation, &models)?;
        Ok(build_report(&cfg, comps.label.task, &split, &prep, &models, per_seed, predictions))
    }
}

pub fn run_train(cfg: &PipelineConfig, workspace: &Path) -> Result<TrainOutcome> {
    Pipeline::default().train(cfg, workspace)
}

pub fn run_evaluate(checkpoint: &Path, overrides: &EvalOverrides) -> Result<EvalReport> {
    Pipeline::default().evaluate(checkpoint, overrides)
}

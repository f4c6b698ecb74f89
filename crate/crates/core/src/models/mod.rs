//! Regression models with a shared fit / predict contract and a binary
//! checkpoint format.

mod forest;
mod linear;
mod mlp;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, Forest, ForestParams, Tree};
pub use linear::{ols, pcr, plsr, ridge, LinearModel, NIPALS_MAX_ITER, NIPALS_TOL};
pub use mlp::{fit_mlp, gradient_check, gradient_check_at, Activation, Layer, Mlp, MlpParams, Optimizer, FD_STEP};

use crate::error::{Error, Result};
use crate::registry::{parse_params, Params, Registry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Dummy,
    Linear,
    Ridge { alpha: f64 },
    Pcr { n_components: usize },
    Plsr { n_components: usize },
    RandomForest(ForestParams),
    Mlp(MlpParams),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Dummy => "dummy",
            ModelSpec::Linear => "linear",
            ModelSpec::Ridge { .. } => "ridge",
            ModelSpec::Pcr { .. } => "pcr",
            ModelSpec::Plsr { .. } => "plsr",
            ModelSpec::RandomForest(_) => "random_forest",
            ModelSpec::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Dummy { mean: f64 },
    Linear(LinearModel),
    Forest(Forest),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    /// Run seed the model was trained with.
    pub seed: u64,
    pub n_features: usize,
    pub n_samples: usize,
    /// Set when the solver had to fall back, e.g. on a singular system.
    pub warning: Option<String>,
    pub fitted: Fitted,
}

/// Fits `spec` on `x` / `y`. A `seed` in the model's own parameters is
/// added to the run seed.
pub fn fit(spec: &ModelSpec, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<TrainedModel> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("X has {} rows but y has {} values", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Model("cannot fit on zero samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Model("training data contains non-finite values".into()));
    }
    let mut warning = None;
    let fitted = match spec {
        ModelSpec::Dummy => Fitted::Dummy { mean: y.iter().sum::<f64>() / y.len() as f64 },
        ModelSpec::Linear => {
            let (m, w) = ols(x, y)?;
            warning = w;
            Fitted::Linear(m)
        }
        ModelSpec::Ridge { alpha } => Fitted::Linear(ridge(x, y, *alpha)?),
        ModelSpec::Pcr { n_components } => {
            let (m, w) = pcr(x, y, *n_components)?;
            warning = w;
            Fitted::Linear(m)
        }
        ModelSpec::Plsr { n_components } => {
            let (m, w) = plsr(x, y, *n_components)?;
            warning = w;
            Fitted::Linear(m)
        }
        ModelSpec::RandomForest(p) => Fitted::Forest(fit_forest(x, y, p, p.seed.wrapping_add(seed), true)?),
        ModelSpec::Mlp(p) => Fitted::Mlp(fit_mlp(x, y, p, p.seed.wrapping_add(seed))?),
    };
    if let Some(w) = &warning {
        log::warn!("{}: {w}", spec.kind());
    }
    Ok(TrainedModel { spec: spec.clone(), seed, n_features: x.ncols(), n_samples: y.len(), warning, fitted })
}

impl TrainedModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!("model expects {} features, got {}", self.n_features, x.ncols())));
        }
        Ok(match &self.fitted {
            Fitted::Dummy { mean } => vec![*mean; x.nrows()],
            Fitted::Linear(m) => m.predict(x),
            Fitted::Forest(f) => f.predict(x),
            Fitted::Mlp(m) => m.predict(x),
        })
    }
}

const MAGIC: &[u8; 8] = b"CFMODEL1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    spec: ModelSpec,
    seed: u64,
    n_features: usize,
    n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
    blocks: Vec<BlockInfo>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
}

struct Block {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn block(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Block {
    Block { name: name.into(), shape, data }
}

fn index_f64(i: usize) -> f64 {
    i as f64
}

impl TrainedModel {
    fn blocks(&self) -> Vec<Block> {
        match &self.fitted {
            Fitted::Dummy { mean } => vec![block("mean", vec![1], vec![*mean])],
            Fitted::Linear(m) => vec![
                block("intercept", vec![1], vec![m.intercept]),
                block("coef", vec![m.coef.len()], m.coef.clone()),
            ],
            Fitted::Forest(f) => f
                .trees
                .iter()
                .enumerate()
                .flat_map(|(t, tree)| {
                    let n = tree.value.len();
                    let feature = tree.feature.iter().map(|f| f.map_or(-1.0, index_f64)).collect();
                    vec![
                        block(format!("tree{t}.feature"), vec![n], feature),
                        block(format!("tree{t}.threshold"), vec![n], tree.threshold.clone()),
                        block(format!("tree{t}.left"), vec![n], tree.left.iter().copied().map(index_f64).collect()),
                        block(format!("tree{t}.right"), vec![n], tree.right.iter().copied().map(index_f64).collect()),
                        block(format!("tree{t}.value"), vec![n], tree.value.clone()),
                    ]
                })
                .collect(),
            Fitted::Mlp(m) => m
                .layers
                .iter()
                .enumerate()
                .flat_map(|(k, l)| {
                    let (r, c) = l.weight.shape();
                    let row_major = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| l.weight[(i, j)]).collect();
                    vec![
                        block(format!("layer{k}.weight"), vec![r, c], row_major),
                        block(format!("layer{k}.bias"), vec![r], l.bias.iter().copied().collect()),
                    ]
                })
                .collect(),
        }
    }

    /// `CFMODEL1`, u64 LE header length, JSON header, then each block as
    /// little-endian f64 in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let blocks = self.blocks();
        let header = Header {
            kind: self.spec.kind().to_string(),
            spec: self.spec.clone(),
            seed: self.seed,
            n_features: self.n_features,
            n_samples: self.n_samples,
            warning: self.warning.clone(),
            blocks: blocks.iter().map(|b| BlockInfo { name: b.name.clone(), shape: b.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + blocks.iter().map(|b| 8 * b.data.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &blocks {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a model checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut offset = 16 + len;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in &header.blocks {
            let count: usize = info.shape.iter().product();
            let raw = bytes.get(offset..offset + 8 * count).ok_or_else(|| bad("truncated parameter block"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            blocks.push(block(info.name.clone(), info.shape.clone(), data));
            offset += 8 * count;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after parameter blocks"));
        }
        let take = |name: &str| -> Result<&Block> {
            blocks.iter().find(|b| b.name == name).ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
        };
        let as_index = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("invalid node index {v}")))
            }
        };
        let fitted = match &header.spec {
            ModelSpec::Dummy => Fitted::Dummy { mean: take("mean")?.data[0] },
            ModelSpec::Linear | ModelSpec::Ridge { .. } | ModelSpec::Pcr { .. } | ModelSpec::Plsr { .. } => {
                Fitted::Linear(LinearModel { intercept: take("intercept")?.data[0], coef: take("coef")?.data.clone() })
            }
            ModelSpec::RandomForest(p) => {
                let mut trees = Vec::with_capacity(p.n_trees);
                for t in 0..p.n_trees {
                    let feature = take(&format!("tree{t}.feature"))?
                        .data
                        .iter()
                        .map(|&f| if f < 0.0 { Ok(None) } else { as_index(f).map(Some) })
                        .collect::<Result<_>>()?;
                    trees.push(Tree {
                        feature,
                        threshold: take(&format!("tree{t}.threshold"))?.data.clone(),
                        left: take(&format!("tree{t}.left"))?.data.iter().map(|&v| as_index(v)).collect::<Result<_>>()?,
                        right: take(&format!("tree{t}.right"))?.data.iter().map(|&v| as_index(v)).collect::<Result<_>>()?,
                        value: take(&format!("tree{t}.value"))?.data.clone(),
                    });
                }
                Fitted::Forest(Forest { trees })
            }
            ModelSpec::Mlp(p) => {
                let mut layers = Vec::new();
                for k in 0..=p.hidden_dims.len() {
                    let w = take(&format!("layer{k}.weight"))?;
                    let b = take(&format!("layer{k}.bias"))?;
                    if w.shape.len() != 2 {
                        return Err(bad("weight block is not 2-D"));
                    }
                    layers.push(Layer {
                        weight: DMatrix::from_row_slice(w.shape[0], w.shape[1], &w.data),
                        bias: DVector::from_vec(b.data.clone()),
                    });
                }
                Fitted::Mlp(Mlp { layers, activation: p.activation })
            }
        };
        Ok(TrainedModel {
            spec: header.spec,
            seed: header.seed,
            n_features: header.n_features,
            n_samples: header.n_samples,
            warning: header.warning,
            fitted,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RidgeParams {
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentParams {
    #[serde(default = "default_components")]
    n_components: usize,
}

fn default_components() -> usize {
    1
}

pub const MODEL_FAMILIES: [&str; 7] = ["Dummy", "LinearRegression", "Ridge", "PCR", "PLSR", "RandomForest", "MLP"];
pub const TASK_SUFFIXES: [&str; 3] = ["RULPredictor", "SOHPredictor", "SOCPredictor"];

fn spec_for(family: &str, name: &str, p: &Params) -> Result<ModelSpec> {
    let kind = "model";
    Ok(match family {
        "Dummy" => {
            parse_params::<NoParams>(kind, name, p)?;
            ModelSpec::Dummy
        }
        "LinearRegression" => {
            parse_params::<NoParams>(kind, name, p)?;
            ModelSpec::Linear
        }
        "Ridge" => {
            let r: RidgeParams = parse_params(kind, name, p)?;
            if !(r.alpha >= 0.0) {
                return Err(Error::Config(format!("{name}: alpha must be >= 0")));
            }
            ModelSpec::Ridge { alpha: r.alpha }
        }
        "PCR" => ModelSpec::Pcr { n_components: parse_params::<ComponentParams>(kind, name, p)?.n_components },
        "PLSR" => ModelSpec::Plsr { n_components: parse_params::<ComponentParams>(kind, name, p)?.n_components },
        "RandomForest" => {
            let f: ForestParams = parse_params(kind, name, p)?;
            f.check()?;
            ModelSpec::RandomForest(f)
        }
        "MLP" => {
            let m: MlpParams = parse_params(kind, name, p)?;
            m.check()?;
            ModelSpec::Mlp(m)
        }
        other => unreachable!("unknown family {other}"),
    })
}

/// Every family under `<Family>RULPredictor`, `<Family>SOHPredictor` and
/// `<Family>SOCPredictor`.
pub fn default_registry() -> Registry<ModelSpec> {
    let mut reg = Registry::new("model");
    for family in MODEL_FAMILIES {
        for suffix in TASK_SUFFIXES {
            let name = format!("{family}{suffix}");
            let n = name.clone();
            reg.register(&name, move |p, _| spec_for(family, &n, p)).expect("unique built-in names");
        }
    }
    reg
}

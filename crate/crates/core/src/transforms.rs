//! Fit / transform / inverse-transform for features and labels.
//!
//! Data is passed as a row-major slice plus a column count. All kinds
//! except [`Transform::ColumnZScore`] use whole-tensor statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{parse_params, ComponentConfig, Params, Registry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Transform {
    ZScore { state: Option<Moments> },
    ColumnZScore { state: Option<Vec<Moments>> },
    LogScale,
    MinMax { state: Option<Range> },
    Sequential { children: Vec<Transform>, fitted: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

fn not_fitted() -> Error {
    Error::Transform("transformation not fitted".into())
}

fn check_input(data: &[f64], n_cols: usize) -> Result<()> {
    if n_cols == 0 || data.len() % n_cols != 0 {
        return Err(Error::Shape(format!("{} values are not a whole number of {n_cols}-column rows", data.len())));
    }
    Ok(())
}

fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Result<Moments> {
    let n = values.clone().count();
    if n == 0 {
        return Err(Error::Transform("cannot fit on empty data".into()));
    }
    if values.clone().any(|v| !v.is_finite()) {
        return Err(Error::Transform("cannot fit on non-finite data".into()));
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Transform("degenerate data: standard deviation is zero".into()));
    }
    Ok(Moments { mean, sd })
}

impl Transform {
    pub fn zscore() -> Self {
        Transform::ZScore { state: None }
    }

    pub fn column_zscore() -> Self {
        Transform::ColumnZScore { state: None }
    }

    pub fn min_max() -> Self {
        Transform::MinMax { state: None }
    }

    pub fn sequential(children: Vec<Transform>) -> Self {
        Transform::Sequential { children, fitted: false }
    }

    pub fn is_fitted(&self) -> bool {
        match self {
            Transform::ZScore { state } => state.is_some(),
            Transform::ColumnZScore { state } => state.is_some(),
            Transform::LogScale => true,
            Transform::MinMax { state } => state.is_some(),
            Transform::Sequential { fitted, .. } => *fitted,
        }
    }

    pub fn fit(&mut self, data: &[f64], n_cols: usize) -> Result<()> {
        check_input(data, n_cols)?;
        if data.is_empty() {
            return Err(Error::Transform("cannot fit on empty data".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Transform("cannot fit on non-finite data".into()));
        }
        match self {
            Transform::ZScore { state } => *state = Some(moments(data.iter())?),
            Transform::ColumnZScore { state } => {
                let cols = (0..n_cols)
                    .map(|j| moments(data.iter().skip(j).step_by(n_cols)))
                    .collect::<Result<Vec<_>>>()?;
                *state = Some(cols);
            }
            Transform::LogScale => {}
            Transform::MinMax { state } => {
                let min = data.iter().copied().fold(f64::INFINITY, f64::min);
                let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(max > min) {
                    return Err(Error::Transform("degenerate data: max equals min".into()));
                }
                *state = Some(Range { min, max });
            }
            Transform::Sequential { children, fitted } => {
                let mut current = data.to_vec();
                let last = children.len().saturating_sub(1);
                for (i, child) in children.iter_mut().enumerate() {
                    child.fit(&current, n_cols)?;
                    if i < last {
                        current = child.transform(&current, n_cols)?;
                    }
                }
                *fitted = true;
            }
        }
        Ok(())
    }

    pub fn transform(&self, data: &[f64], n_cols: usize) -> Result<Vec<f64>> {
        check_input(data, n_cols)?;
        match self {
            Transform::ZScore { state } => {
                let m = state.ok_or_else(not_fitted)?;
                Ok(data.iter().map(|v| (v - m.mean) / m.sd).collect())
            }
            Transform::ColumnZScore { state } => {
                let cols = state.as_ref().ok_or_else(not_fitted)?;
                check_cols(cols.len(), n_cols)?;
                Ok(data.iter().enumerate().map(|(k, v)| (v - cols[k % n_cols].mean) / cols[k % n_cols].sd).collect())
            }
            Transform::LogScale => data
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        Ok(v.log10())
                    } else {
                        Err(Error::Transform(format!("log scale of non-positive value {v}")))
                    }
                })
                .collect(),
            Transform::MinMax { state } => {
                let r = state.ok_or_else(not_fitted)?;
                Ok(data.iter().map(|v| (v - r.min) / (r.max - r.min)).collect())
            }
            Transform::Sequential { children, fitted } => {
                if !fitted {
                    return Err(not_fitted());
                }
                children.iter().try_fold(data.to_vec(), |acc, c| c.transform(&acc, n_cols))
            }
        }
    }

    pub fn inverse_transform(&self, data: &[f64], n_cols: usize) -> Result<Vec<f64>> {
        check_input(data, n_cols)?;
        match self {
            Transform::ZScore { state } => {
                let m = state.ok_or_else(not_fitted)?;
                Ok(data.iter().map(|v| v * m.sd + m.mean).collect())
            }
            Transform::ColumnZScore { state } => {
                let cols = state.as_ref().ok_or_else(not_fitted)?;
                check_cols(cols.len(), n_cols)?;
                Ok(data.iter().enumerate().map(|(k, v)| v * cols[k % n_cols].sd + cols[k % n_cols].mean).collect())
            }
            Transform::LogScale => Ok(data.iter().map(|v| 10f64.powf(*v)).collect()),
            Transform::MinMax { state } => {
                let r = state.ok_or_else(not_fitted)?;
                Ok(data.iter().map(|v| v * (r.max - r.min) + r.min).collect())
            }
            Transform::Sequential { children, fitted } => {
                if !fitted {
                    return Err(not_fitted());
                }
                children.iter().rev().try_fold(data.to_vec(), |acc, c| c.inverse_transform(&acc, n_cols))
            }
        }
    }
}

fn check_cols(fitted: usize, given: usize) -> Result<()> {
    if fitted != given {
        return Err(Error::Shape(format!("transform fitted on {fitted} columns, applied to {given}")));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequentialParams {
    transformations: Vec<ComponentConfig>,
}

/// Registry with the built-in transformations.
pub fn default_registry() -> Registry<Transform> {
    let mut reg = Registry::new("transformation");
    let simple: [(&str, fn() -> Transform); 4] = [
        ("ZScoreDataTransformation", Transform::zscore),
        ("ColumnZScoreDataTransformation", Transform::column_zscore),
        ("LogScaleDataTransformation", || Transform::LogScale),
        ("MinMaxDataTransformation", Transform::min_max),
    ];
    for (name, make) in simple {
        reg.register(name, move |p: &Params, _: &Registry<Transform>| {
            parse_params::<NoParams>("transformation", name, p)?;
            Ok(make())
        })
        .expect("unique built-in names");
    }
    reg.register("SequentialDataTransformation", |p, reg| {
        let params: SequentialParams = parse_params("transformation", "SequentialDataTransformation", p)?;
        let children = params.transformations.iter().map(|c| reg.build(c)).collect::<Result<Vec<_>>>()?;
        Ok(Transform::sequential(children))
    })
    .expect("unique built-in names");
    reg
}

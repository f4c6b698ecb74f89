//! Bagged CART regression trees.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    /// Unlimited when absent; 0 yields single-leaf trees.
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "one")]
    pub min_samples_leaf: usize,
    #[serde(default = "full")]
    pub feature_subsample_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_trees() -> usize {
    100
}
fn one() -> usize {
    1
}
fn full() -> f64 {
    1.0
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: default_trees(), max_depth: None, min_samples_leaf: 1, feature_subsample_fraction: 1.0, seed: 0 }
    }
}

impl ForestParams {
    pub fn check(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Model("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Model("min_samples_leaf must be >= 1".into()));
        }
        if !(self.feature_subsample_fraction > 0.0 && self.feature_subsample_fraction <= 1.0) {
            return Err(Error::Model("feature_subsample_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Flat node array. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub feature: Vec<Option<usize>>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub value: Vec<f64>,
}

impl Tree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut node = 0;
        while let Some(f) = self.feature[node] {
            node = if row(f) <= self.threshold[node] { self.left[node] } else { self.right[node] };
        }
        self.value[node]
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(None);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(|j| x[(i, j)])).sum();
                sum / self.trees.len() as f64
            })
            .collect()
    }
}

/// Grows the forest; tree `t` draws from `seed + t`, so `parallel` only
/// changes scheduling, never the result.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64, parallel: bool) -> Result<Forest> {
    params.check()?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("X has {} rows but y has {} values", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Model("cannot fit on zero samples".into()));
    }
    let grow = |t: usize| grow_tree(x, y, params, seed.wrapping_add(t as u64));
    let trees = if parallel {
        (0..params.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..params.n_trees).map(grow).collect()
    };
    Ok(Forest { trees })
}

fn grow_tree(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let p = x.ncols();
    let m = ((params.feature_subsample_fraction * p as f64).ceil() as usize).clamp(1, p.max(1));
    let mut tree = Tree::default();
    let mut builder = Builder { x, y, params, rng, m, tree: &mut tree };
    builder.build(rows, 0);
    tree
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    m: usize,
    tree: &'a mut Tree,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = sum / rows.len() as f64;
        let at_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        if at_limit || rows.len() < 2 * self.params.min_samples_leaf || self.x.ncols() == 0 {
            return self.tree.push_leaf(mean);
        }
        let Some(split) = self.best_split(&rows, sum) else {
            return self.tree.push_leaf(mean);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[(r, split.feature)] <= split.threshold);
        let node = self.tree.push_leaf(mean);
        self.tree.feature[node] = Some(split.feature);
        self.tree.threshold[node] = split.threshold;
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.tree.left[node] = l;
        self.tree.right[node] = r;
        node
    }

    /// Maximizes `S_L²/n_L + S_R²/n_R`, equivalent to the largest variance
    /// reduction. Only strictly better candidates replace the incumbent,
    /// so ties resolve to the lowest feature, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize], total: f64) -> Option<Split> {
        let p = self.x.ncols();
        let mut features = sample(&mut self.rng, p, self.m).into_vec();
        features.sort_unstable();
        let n = rows.len();
        let parent = total * total / n as f64;
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[(r, f)], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += pairs[i].1;
                let n_left = i + 1;
                if pairs[i].0 == pairs[i + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Split { feature: f, threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0), score });
                }
            }
        }
        best.filter(|b| b.score - parent > 1e-12 * parent.abs().max(1e-300))
    }
}

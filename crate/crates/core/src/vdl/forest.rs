//! Random forest of Gini classification trees.
//!
//! Each tree sees a bootstrap resample and draws √d candidate features per
//! split. Trees grow until a node is pure or cannot be split with at least
//! `min_leaf` samples on each side. A split sends `x ≤ t` left, with `t` the
//! largest left-hand training value rather than a midpoint, so predictions
//! are unchanged by any increasing transform of a feature. Tree `i` uses RNG stream `(seed, i)`, so
//! training may run in parallel and stay deterministic.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Features tried per split; `None` means ⌊√d⌋.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_estimators: 1000, max_features: None, min_leaf: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { counts: Vec<usize> },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn leaf(&self, x: &[f64]) -> &[usize] {
        match self {
            Node::Leaf { counts } => counts,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.leaf(x)
                } else {
                    right.leaf(x)
                }
            }
        }
    }

    /// Visits every leaf histogram.
    pub fn leaves<'a>(&'a self, out: &mut Vec<&'a [usize]>) {
        match self {
            Node::Leaf { counts } => out.push(counts),
            Node::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Bootstrap sample size; equals the sum of all leaf histograms.
    pub n_samples: usize,
    pub root: Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    min_leaf: usize,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        idx.iter().for_each(|&i| c[self.y[i]] += 1);
        c
    }

    fn grow<R: Rng>(&self, idx: &mut [usize], rng: &mut R) -> Node {
        let counts = self.counts(idx);
        let n = idx.len();
        if counts.iter().filter(|&&c| c > 0).count() <= 1 || n < 2 * self.min_leaf {
            return Node::Leaf { counts };
        }
        let parent = gini(&counts, n);
        let d = self.x[0].len();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in sample(rng, d, self.max_features.min(d)).into_iter() {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.clone();
            for k in 0..n - 1 {
                let c = self.y[idx[k]];
                left[c] += 1;
                right[c] -= 1;
                let (nl, nr) = (k + 1, n - k - 1);
                let (a, b) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
                if a == b || nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let imp = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, a));
                }
            }
        }
        match best {
            Some((imp, feature, threshold)) if imp < parent - 1e-15 => {
                let mut l: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] <= threshold).collect();
                let mut r: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] > threshold).collect();
                Node::Split { feature, threshold, left: Box::new(self.grow(&mut l, rng)), right: Box::new(self.grow(&mut r, rng)) }
            }
            _ => Node::Leaf { counts },
        }
    }
}

impl Forest {
    /// `y` holds class indices into `classes`.
    pub fn train(x: &[Vec<f64>], y: &[usize], classes: &[String], config: &ForestConfig) -> Result<Forest> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Invalid(format!("{} samples with {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invalid("feature rows must be finite and of equal length".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes.len()) {
            return Err(Error::Invalid(format!("label {bad} outside {} classes", classes.len())));
        }
        if config.n_estimators == 0 || config.min_leaf == 0 {
            return Err(Error::Invalid("forest needs at least one tree and min_leaf ≥ 1".into()));
        }
        let builder = Builder {
            x,
            y,
            n_classes: classes.len(),
            max_features: config.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)),
            min_leaf: config.min_leaf,
        };
        let n = x.len();
        let trees = (0..config.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(config.seed, t as u64);
                let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let root = builder.grow(&mut idx, &mut rng);
                Tree { n_samples: n, root }
            })
            .collect();
        Ok(Forest { config: config.clone(), classes: classes.to_vec(), n_features: d, trees })
    }

    /// Mean of the per-tree leaf class frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Invalid(format!("sample has {} features, forest expects {}", x.len(), self.n_features)));
        }
        let mut p = vec![0.0; self.classes.len()];
        for t in &self.trees {
            let c = t.root.leaf(x);
            let s: usize = c.iter().sum();
            for (pi, &ci) in p.iter_mut().zip(c) {
                *pi += ci as f64 / s as f64;
            }
        }
        let nt = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= nt);
        Ok(p)
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of exact matches.
pub fn subset_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len().max(1) as f64
}

/// Intersection over union of the positive (label 1) sets.
pub fn jaccard(pred: &[usize], truth: &[usize]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(&a, &b)| a == 1 && b == 1).count();
    let union = pred.iter().zip(truth).filter(|(&a, &b)| a == 1 || b == 1).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

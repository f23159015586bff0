//! From-scratch CART regression trees with bagging and feature subsampling.
//!
//! Splits greedily maximize variance reduction over midpoint thresholds
//! between consecutive sorted unique feature values, with ties broken by
//! lowest feature index then lowest threshold. Each tree owns an RNG stream
//! derived as `seed ^ tree_index`, so parallel and serial fits agree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features sampled per split; 0 means ceil(d / 3).
    pub max_features: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            n_trees: 50,
            max_depth: 12,
            min_leaf: 2,
            max_features: 0,
        }
    }
}

impl ForestHyper {
    fn resolved_features(&self, d: usize) -> usize {
        if self.max_features == 0 {
            d.div_ceil(3)
        } else {
            self.max_features.min(d)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub hyper: ForestHyper,
    pub seed: u64,
    y_min: f64,
    y_max: f64,
    width: usize,
}

/// Fit a single CART tree on the full sample (no bootstrap).
pub fn fit_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    hyper: &ForestHyper,
    rng: &mut R,
) -> Result<TreeNode> {
    check_inputs(x, y)?;
    let idx: Vec<usize> = (0..y.len()).collect();
    Ok(grow(x, y, &idx, hyper, hyper.resolved_features(x[0].len()), 0, rng))
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("tree fit".into()));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.iter().flatten().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tree fit inputs".into()));
    }
    Ok(())
}

fn grow<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &[usize],
    hyper: &ForestHyper,
    n_features: usize,
    depth: usize,
    rng: &mut R,
) -> TreeNode {
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    let sse: f64 = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    if depth >= hyper.max_depth || idx.len() < 2 * hyper.min_leaf || sse <= 1e-24 {
        return TreeNode::Leaf { value: mean };
    }
    let d = x[0].len();
    let mut features: Vec<usize> = (0..d).collect();
    features.shuffle(rng);
    features.truncate(n_features);
    features.sort_unstable(); // tie-break by lowest feature index

    let mut best: Option<(f64, usize, f64)> = None; // (sse_after, feature, threshold)
    for &f in &features {
        let mut vals: Vec<(f64, f64)> = idx.iter().map(|&i| (x[i][f], y[i])).collect();
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // prefix sums over the sorted order
        let n = vals.len();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let total: f64 = vals.iter().map(|v| v.1).sum();
        let totalsq: f64 = vals.iter().map(|v| v.1 * v.1).sum();
        for k in 0..n - 1 {
            sum += vals[k].1;
            sumsq += vals[k].1 * vals[k].1;
            if vals[k].0 == vals[k + 1].0 {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            if (k + 1) < hyper.min_leaf || (n - k - 1) < hyper.min_leaf {
                continue;
            }
            let sse_l = sumsq - sum * sum / nl;
            let sse_r = (totalsq - sumsq) - (total - sum) * (total - sum) / nr;
            let after = sse_l + sse_r;
            let threshold = 0.5 * (vals[k].0 + vals[k + 1].0);
            let better = match &best {
                None => true,
                Some((b, bf, bt)) => {
                    after < b - 1e-15
                        || ((after - b).abs() <= 1e-15 && (f, threshold) < (*bf, *bt))
                }
            };
            if better && after < sse - 1e-15 {
                best = Some((after, f, threshold));
            }
        }
    }
    match best {
        None => TreeNode::Leaf { value: mean },
        Some((_, feature, threshold)) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow(x, y, &l, hyper, n_features, depth + 1, rng)),
                right: Box::new(grow(x, y, &r, hyper, n_features, depth + 1, rng)),
            }
        }
    }
}

/// Fit a bagged forest; each tree sees a seeded bootstrap sample.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    hyper: &ForestHyper,
    seed: u64,
) -> Result<ForestModel> {
    check_inputs(x, y)?;
    if hyper.n_trees == 0 {
        return Err(Error::InvalidValue("n_trees must be >= 1".into()));
    }
    let n = y.len();
    let n_features = hyper.resolved_features(x[0].len());
    let mut trees = Vec::with_capacity(hyper.n_trees);
    for t in 0..hyper.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        trees.push(grow(x, y, &sample, hyper, n_features, 0, &mut rng));
    }
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        trees,
        hyper: *hyper,
        seed,
        y_min,
        y_max,
        width: x[0].len(),
    })
}

impl ForestModel {
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for row in x {
            if row.len() != self.width {
                return Err(Error::ShapeMismatch(format!(
                    "forest trained on width {}, got row of width {}",
                    self.width,
                    row.len()
                )));
            }
            let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
            out.push(sum / self.trees.len() as f64);
        }
        Ok(out)
    }

    pub fn target_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

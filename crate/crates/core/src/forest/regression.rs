use rand::seq::index::sample;
use rayon::prelude::*;

use super::tree::{grow, BinnedMatrix, GrowInput, NodeScores, SplitRule, Tree};
use super::{canonical_order, tree_rng, OobMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub subsample_rate: f64,
    /// Features tried per split; `None` means all.
    pub mtry: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        RegressionParams {
            n_trees: 200,
            min_leaf: 50,
            subsample_rate: 0.5,
            mtry: None,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl RegressionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if !(self.subsample_rate > 0.0 && self.subsample_rate <= 1.0) {
            return Err(Error::Config(format!(
                "subsample_rate must be in (0, 1], got {}",
                self.subsample_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// CART forest for conditional means. Leaves hold the mean response of the
/// subsample that built them.
#[derive(Debug, Clone)]
pub struct RegressionForest {
    pub p: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag predictions for the training rows, in input order.
    pub oob: Vec<f64>,
}

struct Centered<'a>(&'a [f64]);

impl NodeScores for Centered<'_> {
    fn scores(&self, samples: &[u32], out: &mut Vec<f64>) {
        let m = samples.iter().map(|&i| self.0[i as usize]).sum::<f64>() / samples.len() as f64;
        out.clear();
        out.extend(samples.iter().map(|&i| self.0[i as usize] - m));
    }
}

impl RegressionForest {
    /// Fits on row-major `x` (`n x p`).
    pub fn fit(x: &[f64], p: usize, y: &[f64], params: &RegressionParams) -> Result<Self> {
        params.validate()?;
        let n = y.len();
        if n == 0 || p == 0 || x.len() != n * p {
            return Err(Error::Validation(format!(
                "regression forest needs a non-empty n x p design, got {} values for n={n}, p={p}",
                x.len()
            )));
        }
        let order = canonical_order(x, p, &[y]);
        let xs: Vec<f64> = order
            .iter()
            .flat_map(|&i| x[i * p..(i + 1) * p].iter().copied())
            .collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let bins = BinnedMatrix::new(&xs, n, p, params.max_bins);
        let mtry = params.mtry.unwrap_or(p).clamp(1, p.max(1));
        let size = ((params.subsample_rate * n as f64).round() as usize).clamp(1, n);
        let input = GrowInput {
            bins: &bins,
            mtry,
            rule: SplitRule {
                min_leaf: params.min_leaf,
                by_arm: false,
            },
            treat: None,
        };
        let scorer = Centered(&ys);
        let grown: Vec<(Tree, OobMask)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(params.seed, t);
                let mut idx: Vec<u32> = sample(&mut rng, n, size)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                idx.sort_unstable();
                let mask = OobMask::new(n, &idx);
                let (nodes, leaves) = grow(&input, idx, &scorer, &mut rng);
                let stats = leaves
                    .iter()
                    .map(|s| {
                        let sum: f64 = s.iter().map(|&i| ys[i as usize]).sum();
                        [s.len() as f64, 0.0, sum, 0.0, 0.0]
                    })
                    .collect();
                (
                    Tree {
                        nodes,
                        leaves: stats,
                    },
                    mask,
                )
            })
            .collect();
        let oob_sorted: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut s, mut c) = (0.0, 0usize);
                for (tree, mask) in &grown {
                    if !mask.contains(i) {
                        let l = &tree.leaves[tree.leaf_index_binned(&bins, i)];
                        s += l[2] / l[0];
                        c += 1;
                    }
                }
                if c == 0 {
                    for (tree, _) in &grown {
                        let l = &tree.leaves[tree.leaf_index_binned(&bins, i)];
                        s += l[2] / l[0];
                        c += 1;
                    }
                }
                s / c as f64
            })
            .collect();
        let mut oob = vec![0.0; n];
        for (k, &i) in order.iter().enumerate() {
            oob[i] = oob_sorted[k];
        }
        Ok(RegressionForest {
            p,
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            oob,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self
            .trees
            .iter()
            .map(|t| {
                let l = &t.leaves[t.leaf_index(row)];
                l[2] / l[0]
            })
            .sum();
        s / self.trees.len() as f64
    }

    /// Predictions for row-major `x`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.par_chunks(self.p.max(1))
            .map(|r| self.predict_row(r))
            .collect()
    }
}

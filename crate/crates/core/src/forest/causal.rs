use rand::seq::index::sample;
use rayon::prelude::*;

use super::tree::{grow, BinnedMatrix, GrowInput, LeafStats, NodeScores, SplitRule, Tree};
use super::{canonical_order, tree_rng, OobMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Minimum treated and minimum control units in each child of a split.
    pub min_leaf: usize,
    pub subsample_rate: f64,
    /// Share of each subsample used to place splits; the rest fills leaves.
    pub honesty_fraction: f64,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 2000,
            min_leaf: 5,
            subsample_rate: 0.5,
            honesty_fraction: 0.5,
            mtry: None,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest.n_trees must be at least 1".into()));
        }
        for (name, v) in [
            ("forest.subsample_rate", self.subsample_rate),
            ("forest.honesty_fraction", self.honesty_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("forest.min_leaf must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

/// Honest causal forest on residualized outcomes `y - m_hat` and treatments
/// `w - e_hat`. Each leaf stores `[n, Σw, Σy, Σwy, Σw²]` of its estimation
/// sample and predictions solve the forest-weighted residual regression.
#[derive(Debug, Clone)]
pub struct CausalForest {
    pub p: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag CATT for the training rows, in input order.
    pub oob: Vec<f64>,
    fallback: f64,
}

struct Pseudo<'a> {
    y: &'a [f64],
    w: &'a [f64],
}

impl NodeScores for Pseudo<'_> {
    fn scores(&self, samples: &[u32], out: &mut Vec<f64>) {
        let n = samples.len() as f64;
        let (mut sw, mut sy) = (0.0, 0.0);
        for &i in samples {
            sw += self.w[i as usize];
            sy += self.y[i as usize];
        }
        let (mw, my) = (sw / n, sy / n);
        let (mut sww, mut swy) = (0.0, 0.0);
        for &i in samples {
            let dw = self.w[i as usize] - mw;
            sww += dw * dw;
            swy += dw * (self.y[i as usize] - my);
        }
        out.clear();
        if sww <= 1e-12 {
            out.resize(samples.len(), 0.0);
            return;
        }
        let tau = swy / sww;
        let scale = n / sww;
        out.extend(samples.iter().map(|&i| {
            let dw = self.w[i as usize] - mw;
            dw * (self.y[i as usize] - my - dw * tau) * scale
        }));
    }
}

fn accumulate(acc: &mut [f64; 4], l: &LeafStats) {
    let n = l[0];
    acc[0] += l[1] / n;
    acc[1] += l[2] / n;
    acc[2] += l[3] / n;
    acc[3] += l[4] / n;
}

fn solve(acc: &[f64; 4], count: usize, fallback: f64) -> f64 {
    if count == 0 {
        return fallback;
    }
    let c = count as f64;
    let (mw, my, mwy, mww) = (acc[0] / c, acc[1] / c, acc[2] / c, acc[3] / c);
    let den = mww - mw * mw;
    if den <= 1e-12 {
        fallback
    } else {
        (mwy - mw * my) / den
    }
}

impl CausalForest {
    /// Trains on row-major `x` with first differences `dy`, treatment flags
    /// and cross-fitted nuisances.
    pub fn fit(
        x: &[f64],
        p: usize,
        dy: &[f64],
        treat: &[bool],
        m_hat: &[f64],
        e_hat: &[f64],
        params: &ForestParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = dy.len();
        if p == 0 || x.len() != n * p || treat.len() != n || m_hat.len() != n || e_hat.len() != n
        {
            return Err(Error::Validation(format!(
                "causal forest inputs disagree in length (n={n}, p={p}, x has {} values)",
                x.len()
            )));
        }
        let n_treat = treat.iter().filter(|&&t| t).count();
        let need = 2 * params.min_leaf;
        if n_treat < need || n - n_treat < need {
            return Err(Error::Estimation(format!(
                "insufficient treated/control units for the causal forest: {n_treat} treated, {} control, need at least {need} of each",
                n - n_treat
            )));
        }
        let wf: Vec<f64> = treat.iter().map(|&t| f64::from(u8::from(t))).collect();
        let order = canonical_order(x, p, &[dy, &wf, m_hat, e_hat]);
        let xs: Vec<f64> = order
            .iter()
            .flat_map(|&i| x[i * p..(i + 1) * p].iter().copied())
            .collect();
        let ts: Vec<bool> = order.iter().map(|&i| treat[i]).collect();
        let yr: Vec<f64> = order.iter().map(|&i| dy[i] - m_hat[i]).collect();
        let wr: Vec<f64> = order.iter().map(|&i| wf[i] - e_hat[i]).collect();
        let fallback = {
            let mut acc = [0.0; 4];
            for i in 0..n {
                acc[0] += wr[i];
                acc[1] += yr[i];
                acc[2] += wr[i] * yr[i];
                acc[3] += wr[i] * wr[i];
            }
            let c = n as f64;
            let den = acc[3] / c - (acc[0] / c).powi(2);
            if den > 1e-12 {
                (acc[2] / c - acc[0] / c * acc[1] / c) / den
            } else {
                0.0
            }
        };
        let bins = BinnedMatrix::new(&xs, n, p, params.max_bins);
        let input = GrowInput {
            bins: &bins,
            mtry: params.mtry_for(p),
            rule: SplitRule {
                min_leaf: params.min_leaf,
                by_arm: true,
            },
            treat: Some(&ts),
        };
        let scorer = Pseudo { y: &yr, w: &wr };
        let size = ((params.subsample_rate * n as f64).round() as usize).clamp(2, n);
        let n_struct = ((params.honesty_fraction * size as f64).round() as usize).clamp(1, size - 1);
        let grown: Vec<(Tree, OobMask)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(params.seed, t);
                let idx: Vec<u32> = sample(&mut rng, n, size)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                let mut structure = idx[..n_struct].to_vec();
                structure.sort_unstable();
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                let mask = OobMask::new(n, &sorted);
                let (nodes, leaves) = grow(&input, structure, &scorer, &mut rng);
                let mut tree = Tree {
                    nodes,
                    leaves: vec![[0.0; 5]; leaves.len()],
                };
                for &i in &idx[n_struct..] {
                    let i = i as usize;
                    let l = tree.leaf_index_binned(&bins, i);
                    let s = &mut tree.leaves[l];
                    s[0] += 1.0;
                    s[1] += wr[i];
                    s[2] += yr[i];
                    s[3] += wr[i] * yr[i];
                    s[4] += wr[i] * wr[i];
                }
                (tree, mask)
            })
            .collect();
        let oob_sorted: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = [0.0; 4];
                let mut count = 0;
                for (tree, mask) in &grown {
                    if mask.contains(i) {
                        continue;
                    }
                    let l = &tree.leaves[tree.leaf_index_binned(&bins, i)];
                    if l[0] > 0.0 {
                        accumulate(&mut acc, l);
                        count += 1;
                    }
                }
                solve(&acc, count, fallback)
            })
            .collect();
        let mut oob = vec![0.0; n];
        for (k, &i) in order.iter().enumerate() {
            oob[i] = oob_sorted[k];
        }
        Ok(CausalForest {
            p,
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            oob,
            fallback,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut acc = [0.0; 4];
        let mut count = 0;
        for t in &self.trees {
            let l = &t.leaves[t.leaf_index(row)];
            if l[0] > 0.0 {
                accumulate(&mut acc, l);
                count += 1;
            }
        }
        solve(&acc, count, self.fallback)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.par_chunks(self.p).map(|r| self.predict_row(r)).collect()
    }
}

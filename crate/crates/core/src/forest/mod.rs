//! Heterogeneous effects: first differences, cross-fitted nuisances, an honest
//! causal forest, doubly robust scores and their summaries.

mod causal;
mod regression;
mod tree;

pub use causal::{CausalForest, ForestParams};
pub use regression::{RegressionForest, RegressionParams};
pub use tree::{BinnedMatrix, Node, Tree};

use std::cmp::Ordering;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::panel::{write_rows, DailyPanel, Outcome, PeriodTag};
use crate::simulate::stream_rng;

const FOREST_DOMAIN: u64 = 16;
const FOLD_DOMAIN: u64 = 17;

pub(crate) fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    stream_rng(seed, FOREST_DOMAIN, tree as u64)
}

/// Row permutation that sorts rows by covariates, then by `keys`. Training on
/// the permuted data makes fits independent of the input row order.
pub(crate) fn canonical_order(x: &[f64], p: usize, keys: &[&[f64]]) -> Vec<usize> {
    let n = if p == 0 { 0 } else { x.len() / p };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = &x[a * p..(a + 1) * p];
        let rb = &x[b * p..(b + 1) * p];
        ra.iter()
            .zip(rb)
            .map(|(u, v)| u.total_cmp(v))
            .chain(keys.iter().map(|k| k[a].total_cmp(&k[b])))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Membership bitset of a tree's subsample.
pub(crate) struct OobMask(Vec<u64>);

impl OobMask {
    pub(crate) fn new(n: usize, members: &[u32]) -> Self {
        let mut bits = vec![0u64; n.div_ceil(64)];
        for &i in members {
            bits[i as usize / 64] |= 1 << (i % 64);
        }
        OobMask(bits)
    }

    pub(crate) fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

/// Per-consumer change in mean daily OOP spending, treat window minus pre
/// window.
pub fn first_difference(panel: &DailyPanel) -> Result<Vec<f64>> {
    for tag in [PeriodTag::Pre, PeriodTag::Treat] {
        if !panel.has_tag(tag) {
            return Err(Error::Validation(format!(
                "first differences need the {} window in the panel",
                tag.as_str()
            )));
        }
    }
    let oop = panel.outcome(Outcome::Oop);
    let pre = panel.consumer_period_means(oop, PeriodTag::Pre);
    let treat = panel.consumer_period_means(oop, PeriodTag::Treat);
    Ok(treat.iter().zip(&pre).map(|(t, p)| t - p).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nuisances {
    pub m_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
}

pub const E_HAT_MIN: f64 = 0.01;
pub const E_HAT_MAX: f64 = 0.99;

/// Cross-fitted `E[dy | X]` and `E[treat | X]` from regression forests. Each
/// row is predicted by forests that never saw its fold.
pub fn fit_nuisances(
    x: &[f64],
    p: usize,
    dy: &[f64],
    treat: &[bool],
    k_folds: usize,
    params: &RegressionParams,
) -> Result<Nuisances> {
    let n = dy.len();
    if k_folds < 2 {
        return Err(Error::Config(format!(
            "cross-fitting needs at least 2 folds, got {k_folds}"
        )));
    }
    if treat.len() != n || x.len() != n * p || n < k_folds {
        return Err(Error::Validation(format!(
            "nuisance inputs disagree in length or have fewer rows than folds (n={n}, k={k_folds})"
        )));
    }
    let w: Vec<f64> = treat.iter().map(|&t| f64::from(u8::from(t))).collect();
    let mut order = canonical_order(x, p, &[dy, &w]);
    order.shuffle(&mut stream_rng(params.seed, FOLD_DOMAIN, 0));
    let mut fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k_folds;
    }
    for f in 0..k_folds {
        let nt = (0..n).filter(|&i| fold[i] == f && treat[i]).count();
        let nf = (0..n).filter(|&i| fold[i] == f).count();
        if nt == 0 || nt == nf {
            return Err(Error::Estimation(format!(
                "cross-fitting fold {f} has only {} units; use fewer folds",
                if nt == 0 { "control" } else { "treated" }
            )));
        }
    }
    let mut m_hat = vec![0.0; n];
    let mut e_hat = vec![0.0; n];
    for f in 0..k_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let gather = |rows: &[usize]| -> Vec<f64> {
            rows.iter()
                .flat_map(|&i| x[i * p..(i + 1) * p].iter().copied())
                .collect()
        };
        let xt = gather(&train);
        let xv = gather(&test);
        let sub = RegressionParams {
            seed: params.seed.wrapping_add(1 + 2 * f as u64),
            ..params.clone()
        };
        let yt: Vec<f64> = train.iter().map(|&i| dy[i]).collect();
        let mf = RegressionForest::fit(&xt, p, &yt, &sub)?;
        let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        let sub = RegressionParams {
            seed: sub.seed.wrapping_add(1),
            ..sub
        };
        let ef = RegressionForest::fit(&xt, p, &wt, &sub)?;
        for (k, (m, e)) in mf.predict(&xv).into_iter().zip(ef.predict(&xv)).enumerate() {
            m_hat[test[k]] = m;
            e_hat[test[k]] = e.clamp(E_HAT_MIN, E_HAT_MAX);
        }
    }
    Ok(Nuisances { m_hat, e_hat })
}

/// Doubly robust scores `catt + (T - e)/(e(1 - e)) * resid` with
/// `resid = dy - m - (T - e) * catt`.
pub fn dr_scores(catt: &[f64], dy: &[f64], treat: &[bool], e_hat: &[f64], m_hat: &[f64]) -> Vec<f64> {
    (0..catt.len())
        .map(|i| {
            let e = e_hat[i].clamp(E_HAT_MIN, E_HAT_MAX);
            let w = f64::from(u8::from(treat[i])) - e;
            let resid = dy[i] - m_hat[i] - w * catt[i];
            catt[i] + w / (e * (1.0 - e)) * resid
        })
        .collect()
}

/// Mean of the scores with its standard error.
pub fn score_mean(psi: &[f64]) -> (f64, f64) {
    let m = crate::stats::mean(psi);
    (m, (crate::stats::variance(psi) / psi.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlpCoef {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub t_stat: f64,
}

/// Linear projection of the scores on standardized covariates. The first
/// entry is the intercept, which equals the mean score.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Blp {
    pub coefficients: Vec<BlpCoef>,
}

impl Blp {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0].beta
    }

    pub fn get(&self, name: &str) -> Option<&BlpCoef> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// OLS of `psi` on an intercept and the standardized columns of `x`, with
/// HC1 standard errors.
pub fn blp(psi: &[f64], x: &[f64], p: usize, names: &[&str]) -> Result<Blp> {
    let n = psi.len();
    if names.len() != p || x.len() != n * p {
        return Err(Error::Validation(format!(
            "BLP design has {} values for n={n}, p={p} with {} names",
            x.len(),
            names.len()
        )));
    }
    let k = p + 1;
    if n <= k {
        return Err(Error::Estimation(format!(
            "BLP needs more observations than regressors ({n} <= {k})"
        )));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|i| x[i * p + j]).collect();
        match crate::stats::standardize(&col) {
            Some(z) => cols.push(z),
            None => {
                return Err(Error::Estimation(format!(
                    "BLP covariate `{}` is constant",
                    names[j]
                )))
            }
        }
    }
    for a in 0..p {
        for b in a + 1..p {
            let r = crate::stats::correlation(&cols[a], &cols[b]);
            if r.abs() > 1.0 - 1e-10 {
                return Err(Error::Estimation(format!(
                    "BLP covariates `{}` and `{}` are collinear",
                    names[a], names[b]
                )));
            }
        }
    }
    let mut design = Vec::with_capacity(n * k);
    for i in 0..n {
        design.push(1.0);
        design.extend(cols.iter().map(|c| c[i]));
    }
    let (xtx, xty) = crate::linalg::normal_equations(&design, k, psi, None);
    if crate::linalg::rcond_sym(&xtx) < 1e-12 {
        return Err(Error::Estimation(
            "BLP covariates are jointly collinear".into(),
        ));
    }
    let inv = crate::linalg::inverse_spd(&xtx)
        .ok_or_else(|| Error::Estimation("BLP normal equations are singular".into()))?;
    let beta = &inv * &xty;
    let mut meat = nalgebra::DMatrix::<f64>::zeros(k, k);
    for (i, row) in design.chunks_exact(k).enumerate() {
        let fitted: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let u = psi[i] - fitted;
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += u * u * row[a] * row[b];
            }
        }
    }
    let vcov = &inv * meat * &inv * (n as f64 / (n - k) as f64);
    let coefficients = (0..k)
        .map(|j| {
            let se = vcov[(j, j)].max(0.0).sqrt();
            BlpCoef {
                name: if j == 0 {
                    "constant".to_string()
                } else {
                    names[j - 1].to_string()
                },
                beta: beta[j],
                se,
                t_stat: beta[j] / se,
            }
        })
        .collect();
    Ok(Blp { coefficients })
}

/// Split frequencies weighted by depth (`depth^-2`, first four levels),
/// normalized to sum to one. A forest without splits scores uniformly.
pub fn variable_importance(trees: &[Tree], p: usize) -> Vec<f64> {
    const MAX_DEPTH: usize = 4;
    let mut counts = vec![vec![0.0; p]; MAX_DEPTH];
    for t in trees {
        for (j, d) in t.splits() {
            if d <= MAX_DEPTH {
                counts[d - 1][j] += 1.0;
            }
        }
    }
    let mut score = vec![0.0; p];
    let mut total_w = 0.0;
    for (d, c) in counts.iter().enumerate() {
        let s: f64 = c.iter().sum();
        if s == 0.0 {
            continue;
        }
        let w = 1.0 / ((d + 1) as f64).powi(2);
        total_w += w;
        for j in 0..p {
            score[j] += w * c[j] / s;
        }
    }
    if total_w == 0.0 {
        return vec![1.0 / p as f64; p];
    }
    score.iter().map(|s| s / total_w).collect()
}

/// `1 + catt * treat_days / cost` per consumer; `None` where the cost is not
/// positive.
pub fn conditional_mpc(catt: &[f64], cost_hat: &[f64], treat_days: usize) -> Vec<Option<f64>> {
    catt.iter()
        .zip(cost_hat)
        .map(|(&a, &c)| (c > 0.0).then(|| 1.0 + a * treat_days as f64 / c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSet {
    pub consumer_ids: Vec<String>,
    pub catt: Vec<f64>,
    pub psi: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub cost_hat: Vec<f64>,
    pub mpc: Vec<Option<f64>>,
}

pub const EFFECT_COLUMNS: [&str; 7] = ["consumer_id", "catt", "psi", "e_hat", "m_hat", "cost_hat", "mpc"];

impl EffectSet {
    pub fn len(&self) -> usize {
        self.consumer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consumer_ids.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            &EFFECT_COLUMNS,
            (0..self.len()).map(|i| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.consumer_ids[i],
                    self.catt[i],
                    self.psi[i],
                    self.e_hat[i],
                    self.m_hat[i],
                    self.cost_hat[i],
                    self.mpc[i].map_or(String::new(), |m| m.to_string())
                )
            }),
        )
    }
}

//! Targeting counterfactuals: predicted coupon costs, rank-weighted effect
//! curves, SME-weighted policy trees and the hybrid coupon/transfer planner.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forest::{RegressionForest, RegressionParams};
use crate::panel::write_rows;
use crate::stats::quantile;

/// Predicted coupon cost for every consumer from a regression forest fit on
/// the treated. Treated consumers get out-of-bag predictions.
pub fn fit_cost_model(
    x: &[f64],
    p: usize,
    treat: &[bool],
    realized_cost: &[f64],
    params: &RegressionParams,
) -> Result<Vec<f64>> {
    let n = treat.len();
    let treated: Vec<usize> = (0..n).filter(|&i| treat[i]).collect();
    if treated.is_empty() {
        return Err(Error::Estimation(
            "cost model needs at least one treated consumer".into(),
        ));
    }
    let xt: Vec<f64> = treated
        .iter()
        .flat_map(|&i| x[i * p..(i + 1) * p].iter().copied())
        .collect();
    let yt: Vec<f64> = treated.iter().map(|&i| realized_cost[i]).collect();
    let forest = RegressionForest::fit(&xt, p, &yt, params)?;
    let mut out = forest.predict(x);
    for (k, &i) in treated.iter().enumerate() {
        out[i] = forest.oob[k];
    }
    Ok(out)
}

pub const DECILES: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub strategy: String,
    pub q: Vec<f64>,
    pub att: Vec<f64>,
}

/// Ranking by descending priority, ties by ascending id.
fn ranking(priority: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priority.len()).collect();
    order.sort_by(|&a, &b| {
        priority[b]
            .total_cmp(&priority[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn top_count(q: f64, n: usize) -> usize {
    ((q * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Mean score among the top `q` share ranked by `priority`, for each `q`.
pub fn rate_curve(
    strategy: &str,
    priority: &[f64],
    psi: &[f64],
    ids: &[String],
    q_grid: &[f64],
) -> Result<RateCurve> {
    let n = psi.len();
    if priority.len() != n || ids.len() != n {
        return Err(Error::Validation(
            "priority, scores and ids disagree in length".into(),
        ));
    }
    let order = ranking(priority, ids);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &i in &order {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + psi[i]);
    }
    let att = q_grid
        .iter()
        .map(|&q| {
            let m = top_count(q, n).min(n);
            if m == 0 {
                Err(Error::Estimation(format!(
                    "top {q} share of {n} consumers is empty"
                )))
            } else {
                Ok(prefix[m] / m as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurve {
        strategy: strategy.to_string(),
        q: q_grid.to_vec(),
        att,
    })
}

pub fn write_rate(path: &Path, curves: &[RateCurve]) -> Result<()> {
    write_rows(
        path,
        &["strategy", "q", "att"],
        curves.iter().flat_map(|c| {
            c.q.iter()
                .zip(&c.att)
                .map(move |(q, a)| format!("{},{q},{a}", c.strategy))
        }),
    )
}

/// Splits each consumer's reward into the parts landing at SMEs and at
/// larger establishments.
pub fn split_rewards(phi: &[f64], sme_share: &[f64]) -> (Vec<f64>, Vec<f64>) {
    phi.iter()
        .zip(sme_share)
        .map(|(f, s)| (f * s, f * (1.0 - s)))
        .unzip()
}

pub const SPLIT_GRID: usize = 20;

/// Candidate thresholds for one covariate: 20 interior quantiles, deduplicated.
pub fn split_grid(col: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = (1..=SPLIT_GRID)
        .map(|k| quantile(col, k as f64 / (SPLIT_GRID + 1) as f64))
        .collect();
    g.dedup();
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

/// Depth-two treatment rule. Rows with `x[feature] <= threshold` go left.
/// `actions` are the leaves left-left, left-right, right-left, right-right.
/// A depth-one tree repeats its root split in both children.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyTree {
    pub depth: usize,
    pub root: Split,
    pub left: Split,
    pub right: Split,
    pub actions: [bool; 4],
    pub feature_names: Vec<String>,
    pub lambda: f64,
    pub objective: f64,
    pub r_sme: f64,
    pub r_large: f64,
}

impl PolicyTree {
    pub fn leaf(&self, row: &[f64]) -> usize {
        let goes = |s: &Split| row[s.feature] > s.threshold;
        if goes(&self.root) {
            2 + usize::from(goes(&self.right))
        } else {
            usize::from(goes(&self.left))
        }
    }

    pub fn treats(&self, row: &[f64]) -> bool {
        self.actions[self.leaf(row)]
    }
}

/// Best single split of `rows`: each side treated when its reward sum is
/// positive. Returns (value, split, left action, right action).
fn best_split(
    rows: &[usize],
    reward: &[f64],
    x: &[f64],
    p: usize,
    grids: &[Vec<f64>],
) -> (f64, Split, bool, bool) {
    let mut best = (f64::NEG_INFINITY, Split { feature: 0, threshold: f64::INFINITY }, false, false);
    for (j, grid) in grids.iter().enumerate() {
        let mut bin_sum = vec![0.0; grid.len() + 1];
        for &i in rows {
            let b = grid.partition_point(|t| *t < x[i * p + j]);
            bin_sum[b] += reward[i];
        }
        let total: f64 = bin_sum.iter().sum();
        let mut left = 0.0;
        for (t, &thr) in grid.iter().enumerate() {
            left += bin_sum[t];
            let right = total - left;
            let v = left.max(0.0) + right.max(0.0);
            if v > best.0 {
                best = (
                    v,
                    Split { feature: j, threshold: thr },
                    left > 0.0,
                    right > 0.0,
                );
            }
        }
    }
    if best.0 == f64::NEG_INFINITY {
        let total: f64 = rows.iter().map(|&i| reward[i]).sum();
        best = (
            total.max(0.0),
            Split { feature: 0, threshold: f64::INFINITY },
            total > 0.0,
            total > 0.0,
        );
    }
    best
}

/// Exhaustive search over axis-aligned trees of depth one or two, with
/// thresholds from [`split_grid`], maximizing the treated sum of
/// `lambda * r_sme + (1 - lambda) * r_large`.
pub fn policy_tree(
    r_sme: &[f64],
    r_large: &[f64],
    lambda: f64,
    depth: usize,
    x: &[f64],
    p: usize,
    names: &[&str],
) -> Result<PolicyTree> {
    if depth == 0 || depth > 2 {
        return Err(Error::Config(format!(
            "policy trees of depth {depth} are unsupported (use 1 or 2)"
        )));
    }
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0.5, 1], got {lambda}")));
    }
    let n = r_sme.len();
    if r_large.len() != n || x.len() != n * p || names.len() != p || p == 0 {
        return Err(Error::Validation("policy tree inputs disagree in size".into()));
    }
    if r_sme.iter().chain(r_large).any(|r| !r.is_finite()) {
        return Err(Error::Validation("policy tree rewards must be finite".into()));
    }
    let reward: Vec<f64> = r_sme
        .iter()
        .zip(r_large)
        .map(|(s, l)| lambda * s + (1.0 - lambda) * l)
        .collect();
    let grids: Vec<Vec<f64>> = (0..p)
        .map(|j| split_grid(&(0..n).map(|i| x[i * p + j]).collect::<Vec<_>>()))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let (root, left, right, actions) = if depth == 1 {
        let (_, s, l, r) = best_split(&all, &reward, x, p, &grids);
        (s, s, s, [l, l, r, r])
    } else {
        let candidates: Vec<Split> = grids
            .iter()
            .enumerate()
            .flat_map(|(j, g)| g.iter().map(move |&t| Split { feature: j, threshold: t }))
            .collect();
        let evaluated: Vec<(f64, Split, Split, Split, [bool; 4])> = candidates
            .par_iter()
            .map(|&root| {
                let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = all
                    .iter()
                    .partition(|&&i| x[i * p + root.feature] <= root.threshold);
                let (lv, ls, a, b) = best_split(&l_rows, &reward, x, p, &grids);
                let (rv, rs, c, d) = best_split(&r_rows, &reward, x, p, &grids);
                (lv + rv, root, ls, rs, [a, b, c, d])
            })
            .collect();
        // first maximum in candidate order
        let best = evaluated
            .into_iter()
            .reduce(|a, b| if b.0.partial_cmp(&a.0) == Some(Ordering::Greater) { b } else { a })
            .ok_or_else(|| Error::Estimation("no split candidates".into()))?;
        (best.1, best.2, best.3, best.4)
    };
    let mut tree = PolicyTree {
        depth,
        root,
        left,
        right,
        actions,
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        lambda,
        objective: 0.0,
        r_sme: 0.0,
        r_large: 0.0,
    };
    for i in 0..n {
        if tree.treats(&x[i * p..(i + 1) * p]) {
            tree.objective += reward[i];
            tree.r_sme += r_sme[i];
            tree.r_large += r_large[i];
        }
    }
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridPlan {
    pub n_targeted: usize,
    pub gov_coupon_cost: f64,
    pub consumer_oop: f64,
    pub sme_transfer: f64,
    pub total_stimulus: f64,
    pub selected: Vec<String>,
}

/// Greedy order for targeting: descending effect, then ascending cost, then id.
fn greedy_order(ids: &[String], catt: &[f64], cost: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        catt[b]
            .total_cmp(&catt[a])
            .then_with(|| cost[a].total_cmp(&cost[b]))
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn plan_from(
    ids: &[String],
    picked: &[usize],
    oop: f64,
    cost: f64,
    budget: f64,
) -> HybridPlan {
    let sme_transfer = budget - cost;
    HybridPlan {
        n_targeted: picked.len(),
        gov_coupon_cost: cost,
        consumer_oop: oop,
        sme_transfer,
        total_stimulus: oop + cost + sme_transfer,
        selected: picked.iter().map(|&i| ids[i].clone()).collect(),
    }
}

fn check_inputs(ids: &[String], catt: &[f64], cost: &[f64], budget: f64) -> Result<()> {
    if catt.len() != ids.len() || cost.len() != ids.len() {
        return Err(Error::Validation("ids, effects and costs disagree in length".into()));
    }
    if !(budget > 0.0) {
        return Err(Error::Validation(format!("budget must be positive, got {budget}")));
    }
    Ok(())
}

/// Coupons for the most responsive consumers until coupon-induced stimulus
/// (window OOP effect plus coupon cost) reaches `target`; the rest of the
/// budget goes to SMEs.
pub fn hybrid_plan(
    ids: &[String],
    catt: &[f64],
    cost_hat: &[f64],
    treat_days: usize,
    budget: f64,
    target: f64,
) -> Result<HybridPlan> {
    check_inputs(ids, catt, cost_hat, budget)?;
    let days = treat_days as f64;
    let (mut oop, mut cost) = (0.0, 0.0);
    let mut picked = Vec::new();
    let mut frontier = 0.0f64;
    for i in greedy_order(ids, catt, cost_hat) {
        if oop + cost >= target {
            break;
        }
        if cost + cost_hat[i] > budget {
            return Err(Error::Estimation(format!(
                "stimulus target {target} is unreachable within budget {budget}; the most reached is {frontier}"
            )));
        }
        oop += catt[i] * days;
        cost += cost_hat[i];
        picked.push(i);
        frontier = frontier.max(oop + cost);
    }
    if oop + cost < target {
        return Err(Error::Estimation(format!(
            "stimulus target {target} is unreachable even treating all {} consumers; the most reached is {frontier}",
            ids.len()
        )));
    }
    Ok(plan_from(ids, &picked, oop, cost, budget))
}

/// Coupons for the most responsive consumers while the budget lasts.
pub fn full_targeting(
    ids: &[String],
    catt: &[f64],
    cost_hat: &[f64],
    treat_days: usize,
    budget: f64,
) -> Result<HybridPlan> {
    check_inputs(ids, catt, cost_hat, budget)?;
    let days = treat_days as f64;
    let (mut oop, mut cost) = (0.0, 0.0);
    let mut picked = Vec::new();
    for i in greedy_order(ids, catt, cost_hat) {
        if cost + cost_hat[i] > budget {
            break;
        }
        oop += catt[i] * days;
        cost += cost_hat[i];
        picked.push(i);
    }
    Ok(plan_from(ids, &picked, oop, cost, cost))
}

/// Plan for the consumers actually treated, spending exactly their cost.
pub fn actual_implementation(
    ids: &[String],
    catt: &[f64],
    cost: &[f64],
    treat: &[bool],
    treat_days: usize,
) -> HybridPlan {
    let picked: Vec<usize> = (0..ids.len()).filter(|&i| treat[i]).collect();
    let oop = picked.iter().map(|&i| catt[i] * treat_days as f64).sum();
    let spent: f64 = picked.iter().map(|&i| cost[i]).sum();
    plan_from(ids, &picked, oop, spent, spent)
}

pub fn write_hybrid(path: &Path, rows: &[(&str, &HybridPlan)]) -> Result<()> {
    write_rows(
        path,
        &[
            "policy",
            "consumers_treated",
            "government_budget",
            "consumer_oop",
            "funds_for_smes",
            "total_stimulus",
        ],
        rows.iter().map(|(name, p)| {
            format!(
                "{name},{},{},{},{},{}",
                p.n_targeted,
                p.gov_coupon_cost,
                p.consumer_oop,
                p.sme_transfer,
                p.total_stimulus
            )
        }),
    )
}

//! Accumulated local effects of covariates on a fitted effect surface, and
//! the demand/supply variance split built from them.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{RegressionForest, RegressionParams};
use crate::panel::{write_rows, Covariate};
use crate::stats::{mean, pop_variance, quantile};

pub const DEFAULT_BINS: usize = 25;

/// Smooth predictor of the doubly robust scores.
#[derive(Debug, Clone)]
pub struct PsiSurface {
    pub forest: RegressionForest,
    pub oob_r2: f64,
}

impl PsiSurface {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.forest.predict_row(row)
    }
}

pub fn fit_psi_surface(
    psi: &[f64],
    x: &[f64],
    p: usize,
    params: &RegressionParams,
) -> Result<PsiSurface> {
    let forest = RegressionForest::fit(x, p, psi, params)?;
    let m = mean(psi);
    let ss_tot: f64 = psi.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = psi.iter().zip(&forest.oob).map(|(a, b)| (a - b).powi(2)).sum();
    let oob_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PsiSurface { forest, oob_r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AleCurve {
    pub covariate: String,
    pub bin_edges: Vec<f64>,
    /// Centered curve at each edge.
    pub h_tilde: Vec<f64>,
    /// Population variance of the centered curve over the sample.
    pub var_component: f64,
    /// Centered curve evaluated at each observation.
    pub values: Vec<f64>,
    /// Empty bins whose local effect was taken from a neighboring bin.
    pub merged_bins: usize,
}

fn with_value(row: &[f64], k: usize, v: f64) -> Vec<f64> {
    let mut r = row.to_vec();
    r[k] = v;
    r
}

/// ALE curve of column `k` of row-major `x` under predictor `f`.
pub fn ale_curve(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    p: usize,
    k: usize,
    name: &str,
    n_bins: usize,
    binning: Binning,
) -> Result<AleCurve> {
    let n = if p == 0 { 0 } else { x.len() / p };
    if k >= p || n == 0 || n_bins == 0 {
        return Err(Error::Validation(format!(
            "ALE for `{name}` needs a column index below {p}, data and at least one bin"
        )));
    }
    let col: Vec<f64> = (0..n).map(|i| x[i * p + k]).collect();
    let mut distinct = col.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(Error::Validation(format!(
            "ALE covariate `{name}` has {} distinct values, fewer than {n_bins} bins",
            distinct.len()
        )));
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let mut edges: Vec<f64> = match binning {
        Binning::EqualWidth => (0..=n_bins)
            .map(|j| lo + (hi - lo) * j as f64 / n_bins as f64)
            .collect(),
        Binning::Quantile => (0..=n_bins)
            .map(|j| quantile(&col, j as f64 / n_bins as f64))
            .collect(),
    };
    edges[0] = lo;
    edges[n_bins] = hi;
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "ALE bin edges for `{name}` are not strictly increasing; use equal-width bins"
        )));
    }
    // bin j covers (edges[j], edges[j+1]], with the minimum in bin 0
    let bin_of = |v: f64| -> usize {
        edges[1..n_bins]
            .partition_point(|e| *e < v)
            .min(n_bins - 1)
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &v) in col.iter().enumerate() {
        members[bin_of(v)].push(i);
    }
    let mut merged_bins = 0;
    let delta: Vec<f64> = (0..n_bins)
        .map(|j| {
            let src = if members[j].is_empty() {
                merged_bins += 1;
                (1..n_bins)
                    .flat_map(|d| [j.checked_sub(d), Some(j + d)])
                    .flatten()
                    .find(|&b| b < n_bins && !members[b].is_empty())
                    .expect("some bin is non-empty")
            } else {
                j
            };
            let rows = &members[src];
            let s: f64 = rows
                .par_iter()
                .map(|&i| {
                    let row = &x[i * p..(i + 1) * p];
                    f(&with_value(row, k, edges[j + 1])) - f(&with_value(row, k, edges[j]))
                })
                .sum();
            s / rows.len() as f64
        })
        .collect();
    let mut h = vec![0.0; n_bins + 1];
    for j in 0..n_bins {
        h[j + 1] = h[j] + delta[j];
    }
    let raw: Vec<f64> = col
        .iter()
        .map(|&v| {
            let j = bin_of(v);
            let t = (v - edges[j]) / (edges[j + 1] - edges[j]);
            h[j] + t * delta[j]
        })
        .collect();
    let c = mean(&raw);
    let values: Vec<f64> = raw.iter().map(|v| v - c).collect();
    Ok(AleCurve {
        covariate: name.to_string(),
        bin_edges: edges,
        h_tilde: h.iter().map(|v| v - c).collect(),
        var_component: pop_variance(&values),
        values,
        merged_bins,
    })
}

/// Two-level analog of the ALE curve for a 0/1 column: the average switch
/// effect, centered at the sample share.
pub fn ale_binary(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    p: usize,
    k: usize,
    name: &str,
) -> Result<AleCurve> {
    let n = if p == 0 { 0 } else { x.len() / p };
    if k >= p || n == 0 {
        return Err(Error::Validation(format!("ALE for `{name}` needs data")));
    }
    if (0..n).any(|i| x[i * p + k] != 0.0 && x[i * p + k] != 1.0) {
        return Err(Error::Validation(format!("covariate `{name}` is not 0/1")));
    }
    let delta = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &x[i * p..(i + 1) * p];
            f(&with_value(row, k, 1.0)) - f(&with_value(row, k, 0.0))
        })
        .sum::<f64>()
        / n as f64;
    let share = (0..n).filter(|&i| x[i * p + k] == 1.0).count() as f64 / n as f64;
    let values: Vec<f64> = (0..n).map(|i| (x[i * p + k] - share) * delta).collect();
    Ok(AleCurve {
        covariate: name.to_string(),
        bin_edges: vec![0.0, 1.0],
        h_tilde: vec![-share * delta, (1.0 - share) * delta],
        var_component: pop_variance(&values),
        values,
        merged_bins: 0,
    })
}

/// Covariate grouping for the variance split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AleScheme {
    /// Wealth, membership and consumption habits on the demand side.
    Full,
    /// Wealth alone on the demand side.
    WealthOnly,
}

impl AleScheme {
    pub fn name(self) -> &'static str {
        match self {
            AleScheme::Full => "full",
            AleScheme::WealthOnly => "wealth_only",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AleScheme::Full),
            "wealth_only" => Ok(AleScheme::WealthOnly),
            _ => Err(Error::Config(format!(
                "unknown ALE scheme `{s}` (expected full or wealth_only)"
            ))),
        }
    }

    pub fn demand(self) -> &'static [Covariate] {
        match self {
            AleScheme::Full => &[
                Covariate::Wealth,
                Covariate::Member,
                Covariate::NOrders6m,
                Covariate::SpendPerOrder6m,
            ],
            AleScheme::WealthOnly => &[Covariate::Wealth],
        }
    }

    pub fn supply(self) -> &'static [Covariate] {
        &[Covariate::NRestaurants3km, Covariate::NonsmeShare3km]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Decomposition {
    pub omega_d: f64,
    pub omega_s: f64,
}

/// Shares of summed ALE variance on the demand and supply sides.
pub fn variance_decomposition(
    curves: &[AleCurve],
    demand: &[&str],
    supply: &[&str],
) -> Result<Decomposition> {
    let total = |set: &[&str]| -> Result<f64> {
        set.iter()
            .map(|name| {
                curves
                    .iter()
                    .find(|c| c.covariate == *name)
                    .map(|c| c.var_component)
                    .ok_or_else(|| Error::Validation(format!("no ALE curve for `{name}`")))
            })
            .sum()
    };
    let (d, s) = (total(demand)?, total(supply)?);
    if d + s <= 0.0 {
        return Err(Error::Estimation(
            "all ALE variance components are zero".into(),
        ));
    }
    Ok(Decomposition {
        omega_d: d / (d + s),
        omega_s: s / (d + s),
    })
}

pub fn write_curves(path: &Path, curves: &[AleCurve]) -> Result<()> {
    write_rows(
        path,
        &["covariate", "bin_edge", "h_tilde"],
        curves.iter().flat_map(|c| {
            c.bin_edges
                .iter()
                .zip(&c.h_tilde)
                .map(move |(e, h)| format!("{},{e},{h}", c.covariate))
        }),
    )
}

pub fn write_decomposition(path: &Path, d: &Decomposition, scheme: AleScheme) -> Result<()> {
    write_rows(
        path,
        &["omega_D", "omega_S", "scheme"],
        [format!("{},{},{}", d.omega_d, d.omega_s, scheme.name())],
    )
}

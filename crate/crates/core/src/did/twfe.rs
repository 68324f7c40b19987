//! Weighted least squares with absorbed unit and time fixed effects and
//! unit-clustered inference.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations of a (possibly unbalanced) unit-by-time panel.
pub(crate) struct TwfeData<'a> {
    pub unit: Vec<usize>,
    pub time: Vec<usize>,
    pub y: Vec<f64>,
    /// Row-major regressors, `k` per observation.
    pub x: Vec<f64>,
    pub k: usize,
    pub n_units: usize,
    pub n_times: usize,
    /// Frequency weight per unit; applies to every observation of the unit.
    pub unit_weight: Option<&'a [f64]>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct TwfeFit {
    pub beta: DVector<f64>,
    pub vcov_cluster: DMatrix<f64>,
    pub vcov_hc1: DMatrix<f64>,
    pub n_obs: usize,
    /// Effective number of clusters (sum of unit weights).
    pub n_clusters: f64,
}

const MAX_SWEEPS: usize = 10_000;

/// Removes weighted unit and time means from each column by alternating
/// projections. One sweep is exact for balanced panels.
fn demean(cols: &mut [Vec<f64>], d: &TwfeData, w: &[f64]) {
    let mut unit_w = vec![0.0; d.n_units];
    let mut time_w = vec![0.0; d.n_times];
    for (&u, &t) in d.unit.iter().zip(&d.time) {
        unit_w[u] += w[u];
        time_w[t] += w[u];
    }
    for col in cols.iter_mut() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for _ in 0..MAX_SWEEPS {
            let mut um = vec![0.0; d.n_units];
            for (&u, v) in d.unit.iter().zip(col.iter()) {
                um[u] += w[u] * v;
            }
            for (m, tot) in um.iter_mut().zip(&unit_w) {
                if *tot > 0.0 {
                    *m /= tot;
                }
            }
            for (&u, v) in d.unit.iter().zip(col.iter_mut()) {
                *v -= um[u];
            }
            let mut tm = vec![0.0; d.n_times];
            for ((&u, &t), v) in d.unit.iter().zip(&d.time).zip(col.iter()) {
                tm[t] += w[u] * v;
            }
            let mut change = 0.0f64;
            for (m, tot) in tm.iter_mut().zip(&time_w) {
                if *tot > 0.0 {
                    *m /= tot;
                }
                change = change.max(m.abs());
            }
            for (&t, v) in d.time.iter().zip(col.iter_mut()) {
                *v -= tm[t];
            }
            if change <= 1e-13 * scale {
                break;
            }
        }
    }
}

pub(crate) fn fit(d: &TwfeData) -> Result<TwfeFit> {
    let n = d.y.len();
    let k = d.k;
    let ones = vec![1.0; d.n_units];
    let w: &[f64] = d.unit_weight.unwrap_or(&ones);
    let keep: Vec<usize> = (0..n).filter(|&i| w[d.unit[i]] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::Estimation("no observations with positive weight".into()));
    }
    let sub = TwfeData {
        unit: keep.iter().map(|&i| d.unit[i]).collect(),
        time: keep.iter().map(|&i| d.time[i]).collect(),
        y: Vec::new(),
        x: Vec::new(),
        k,
        n_units: d.n_units,
        n_times: d.n_times,
        unit_weight: None,
        names: Vec::new(),
    };
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    cols.push(keep.iter().map(|&i| d.y[i]).collect());
    for j in 0..k {
        cols.push(keep.iter().map(|&i| d.x[i * k + j]).collect());
    }
    let raw_ss: Vec<f64> = cols[1..]
        .iter()
        .map(|c| c.iter().zip(&sub.unit).map(|(v, &u)| w[u] * v * v).sum())
        .collect();
    demean(&mut cols, &sub, w);
    let (y, xs) = cols.split_first().expect("outcome column");

    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for (o, &u) in sub.unit.iter().enumerate() {
        let wu = w[u];
        for a in 0..k {
            xty[a] += wu * xs[a][o] * y[o];
            for b in a..k {
                xtx[(a, b)] += wu * xs[a][o] * xs[b][o];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        if !(xtx[(a, a)] > 1e-10 * raw_ss[a]) {
            return Err(Error::Estimation(format!(
                "regressor `{}` is collinear with the fixed effects",
                d.names[a]
            )));
        }
    }
    if linalg::rcond_sym(&xtx) < 1e-12 {
        return Err(Error::Estimation(format!(
            "collinear regressors among {}",
            d.names.join(", ")
        )));
    }
    let bread = linalg::inverse_spd(&xtx)
        .ok_or_else(|| Error::Estimation("singular regressor cross-product".into()))?;
    let beta = &bread * &xty;

    let mut score = vec![DVector::<f64>::zeros(k); d.n_units];
    let mut meat_hc = DMatrix::<f64>::zeros(k, k);
    let mut n_eff = 0.0;
    for (o, &u) in sub.unit.iter().enumerate() {
        let fitted: f64 = (0..k).map(|a| xs[a][o] * beta[a]).sum();
        let e = y[o] - fitted;
        let xe = DVector::from_iterator(k, (0..k).map(|a| xs[a][o] * e));
        meat_hc += &xe * xe.transpose() * w[u];
        score[u] += xe;
        n_eff += w[u];
    }
    let mut meat_cl = DMatrix::<f64>::zeros(k, k);
    let mut g_eff = 0.0;
    let mut seen = vec![false; d.n_units];
    for &u in &sub.unit {
        if !seen[u] {
            seen[u] = true;
            meat_cl += &score[u] * score[u].transpose() * w[u];
            g_eff += w[u];
        }
    }
    let times_used = {
        let mut t = vec![false; d.n_times];
        for &ti in &sub.time {
            t[ti] = true;
        }
        t.iter().filter(|b| **b).count()
    };
    // Unit effects are nested in the clusters; date effects are not.
    let k_total = (k + times_used) as f64;
    if !(n_eff > k_total) || !(g_eff > 1.0) {
        return Err(Error::Estimation(
            "too few observations or clusters for inference".into(),
        ));
    }
    let c_cl = g_eff / (g_eff - 1.0) * (n_eff - 1.0) / (n_eff - k_total);
    let c_hc = n_eff / (n_eff - k_total);
    let vcov_cluster = &bread * meat_cl * &bread * c_cl;
    let vcov_hc1 = &bread * meat_hc * &bread * c_hc;
    Ok(TwfeFit {
        beta,
        vcov_cluster,
        vcov_hc1,
        n_obs: keep.len(),
        n_clusters: g_eff,
    })
}

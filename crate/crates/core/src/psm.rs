//! Propensity scores, nearest-neighbor matching with replacement and
//! covariate balance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{covariate_matrix, ConsumerRecord, Covariate};
use crate::stats;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    /// Intercept first, then one coefficient per covariate, on the original
    /// covariate scale.
    pub coefficients: Vec<f64>,
    pub scores: Vec<f64>,
    pub iterations: usize,
}

/// Maximum-likelihood logit of `y` on row-major `x` (`n x p`) plus an
/// intercept, by iteratively reweighted least squares.
///
/// Columns are standardized internally; convergence requires every component
/// of the mean score equation on that scale to fall below 1e-8.
pub fn fit_logit(x: &[f64], p: usize, y: &[bool], names: &[&str]) -> Result<LogitFit> {
    let n = y.len();
    if x.len() != n * p || names.len() != p {
        return Err(Error::Validation("logit: dimension mismatch".into()));
    }
    let n_treat = y.iter().filter(|&&t| t).count();
    if n_treat == 0 || n_treat == n {
        return Err(Error::Estimation(
            "propensity model needs at least one treated and one control".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("propensity covariates must be finite".into()));
    }
    let mut centers = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|i| x[i * p + j]).collect();
        let (m, s) = (stats::mean(&col), stats::sd(&col));
        if !(s > 0.0) {
            return Err(Error::Estimation(format!(
                "covariate `{}` is constant",
                names[j]
            )));
        }
        let (mut t_lo, mut t_hi, mut c_lo, mut c_hi) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (v, &t) in col.iter().zip(y) {
            if t {
                t_lo = t_lo.min(*v);
                t_hi = t_hi.max(*v);
            } else {
                c_lo = c_lo.min(*v);
                c_hi = c_hi.max(*v);
            }
        }
        if c_hi <= t_lo || t_hi <= c_lo {
            return Err(Error::Estimation(format!(
                "perfect separation: covariate `{}` separates treated from controls",
                names[j]
            )));
        }
        centers.push(m);
        scales.push(s);
    }
    let k = p + 1;
    let mut z = Vec::with_capacity(n * k);
    for i in 0..n {
        z.push(1.0);
        for j in 0..p {
            z.push((x[i * p + j] - centers[j]) / scales[j]);
        }
    }
    let yf: Vec<f64> = y.iter().map(|&t| f64::from(u8::from(t))).collect();
    let share = n_treat as f64 / n as f64;
    let mut beta = DVector::zeros(k);
    beta[0] = (share / (1.0 - share)).ln();

    let eval = |beta: &DVector<f64>| -> (Vec<f64>, f64) {
        let mut probs = Vec::with_capacity(n);
        let mut ll = 0.0;
        for (row, &yi) in z.chunks_exact(k).zip(&yf) {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let pr = 1.0 / (1.0 + (-eta).exp());
            // log(1 + e^eta) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += yi * eta - softplus;
            probs.push(pr);
        }
        (probs, ll)
    };

    let (mut probs, mut ll) = eval(&beta);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=MAX_ITER {
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for ((row, &yi), &pr) in z.chunks_exact(k).zip(&yf).zip(&probs) {
            let w = pr * (1.0 - pr);
            for a in 0..k {
                grad[a] += (yi - pr) * row[a];
                for b in a..k {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        grad_norm = grad.amax() / n as f64;
        if grad_norm < TOL {
            let coefficients = unstandardize(&beta, &centers, &scales);
            return Ok(LogitFit {
                coefficients,
                scores: probs,
                iterations: iter,
            });
        }
        if iter == MAX_ITER {
            break;
        }
        let Some(step) = linalg::solve_spd(&info, &grad) else {
            return Err(separation_error(&beta, names));
        };
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let (p2, ll2) = eval(&cand);
            if ll2 >= ll - 1e-12 || t < 1e-10 {
                beta = cand;
                probs = p2;
                ll = ll2;
                break;
            }
            t *= 0.5;
        }
        if beta.amax() > 40.0 {
            return Err(separation_error(&beta, names));
        }
    }
    Err(Error::Estimation(format!(
        "propensity model did not converge in {MAX_ITER} iterations (score norm {grad_norm:.3e})"
    )))
}

fn separation_error(beta: &DVector<f64>, names: &[&str]) -> Error {
    let (j, _) = beta
        .iter()
        .skip(1)
        .enumerate()
        .fold((0, 0.0f64), |acc, (j, b)| if b.abs() > acc.1 { (j, b.abs()) } else { acc });
    Error::Estimation(format!(
        "perfect separation: covariate `{}` separates treated from controls",
        names.get(j).copied().unwrap_or("?")
    ))
}

fn unstandardize(beta: &DVector<f64>, centers: &[f64], scales: &[f64]) -> Vec<f64> {
    let mut out = vec![beta[0]];
    let mut intercept = beta[0];
    for j in 0..centers.len() {
        let b = beta[j + 1] / scales[j];
        intercept -= b * centers[j];
        out.push(b);
    }
    out[0] = intercept;
    out
}

/// Logit propensity of treatment given the listed consumer covariates.
pub fn fit_propensity(consumers: &[ConsumerRecord], covariates: &[Covariate]) -> Result<LogitFit> {
    let x = covariate_matrix(consumers, covariates);
    let y: Vec<bool> = consumers.iter().map(|c| c.treat).collect();
    let names: Vec<&str> = covariates.iter().map(|c| c.name()).collect();
    fit_logit(&x, covariates.len(), &y, &names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    /// (treated index, control index) into the consumer list.
    pub pairs: Vec<(usize, usize)>,
    /// Per-consumer frequency weight: 1 for matched treated, the number of
    /// times used for controls, 0 otherwise.
    pub weights: Vec<f64>,
    pub propensity: Vec<f64>,
    /// Treated consumers left unmatched by a caliper.
    pub unmatched: Vec<usize>,
}

impl MatchedSample {
    pub fn control_weights(&self, treat: &[bool]) -> Vec<(usize, f64)> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(i, w)| !treat[*i] && **w > 0.0)
            .map(|(i, w)| (i, *w))
            .collect()
    }
}

/// Matches every treated unit to the control with the closest score, with
/// replacement. Equal distances go to the lexicographically smaller id.
pub fn match_nn(
    scores: &[f64],
    treat: &[bool],
    ids: &[String],
    caliper: Option<f64>,
) -> Result<MatchedSample> {
    let n = scores.len();
    if treat.len() != n || ids.len() != n {
        return Err(Error::Validation("match_nn: length mismatch".into()));
    }
    // one entry per distinct control score, holding the smallest id
    let mut controls: Vec<(f64, usize)> = (0..n).filter(|&i| !treat[i]).map(|i| (scores[i], i)).collect();
    if controls.is_empty() {
        return Err(Error::Estimation("matching requires at least one control".into()));
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
    controls.dedup_by(|later, first| later.0 == first.0);

    let mut weights = vec![0.0; n];
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for t in (0..n).filter(|&i| treat[i]) {
        let s = scores[t];
        let pos = controls.partition_point(|c| c.0 < s);
        let mut best: Option<(f64, usize)> = None;
        for cand in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
            let Some(&(cs, ci)) = controls.get(cand) else {
                continue;
            };
            let d = (cs - s).abs();
            best = match best {
                None => Some((d, ci)),
                Some((bd, bi)) if d < bd || (d == bd && ids[ci] < ids[bi]) => Some((d, ci)),
                keep => keep,
            };
        }
        let (d, c) = best.expect("at least one control");
        if caliper.is_some_and(|cal| d > cal) {
            unmatched.push(t);
            continue;
        }
        weights[t] = 1.0;
        weights[c] += 1.0;
        pairs.push((t, c));
    }
    Ok(MatchedSample {
        pairs,
        weights,
        propensity: scores.to_vec(),
        unmatched,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_t: f64,
    pub mean_c: f64,
    pub diff: f64,
    /// Welch statistic; `None` when both groups have zero variance.
    pub t_stat: Option<f64>,
}

/// Treated versus weighted-control comparison of each covariate. Weights act
/// as frequency weights; treated units use theirs as well.
pub fn balance_weighted(
    consumers: &[ConsumerRecord],
    weights: &[f64],
    covariates: &[Covariate],
) -> Vec<BalanceRow> {
    covariates
        .iter()
        .map(|&cov| {
            let mut xt = Vec::new();
            let mut wt = Vec::new();
            let mut xc = Vec::new();
            let mut wc = Vec::new();
            for (c, &w) in consumers.iter().zip(weights) {
                if w <= 0.0 {
                    continue;
                }
                if c.treat {
                    xt.push(c.covariate(cov));
                    wt.push(w);
                } else {
                    xc.push(c.covariate(cov));
                    wc.push(w);
                }
            }
            let (mt, vt, nt) = stats::weighted_mean_var(&xt, &wt);
            let (mc, vc, nc) = stats::weighted_mean_var(&xc, &wc);
            let se = (vt / nt + vc / nc).sqrt();
            let diff = mt - mc;
            BalanceRow {
                covariate: cov.name().to_string(),
                mean_t: mt,
                mean_c: mc,
                diff,
                t_stat: (se > 0.0 && se.is_finite()).then(|| diff / se),
            }
        })
        .collect()
}

/// Balance after matching, controls weighted by match multiplicity.
pub fn balance_table(
    consumers: &[ConsumerRecord],
    matched: &MatchedSample,
    covariates: &[Covariate],
) -> Vec<BalanceRow> {
    balance_weighted(consumers, &matched.weights, covariates)
}

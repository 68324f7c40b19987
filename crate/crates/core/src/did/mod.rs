//! Average effects: two-way fixed-effects difference-in-differences with
//! consumer-clustered inference, pre-trend test, margin decomposition,
//! substitution checks, claim-day estimator, coupon MPC and bunching.

mod bunching;
mod twfe;

pub use bunching::{bunching_histogram, BunchingBin, BunchingReport, DayType, SpikeRatio};

use std::collections::HashSet;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::panel::{Claim, DailyPanel, Outcome, PeriodTag};
use crate::stats;
use twfe::TwfeData;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DidResult {
    pub outcome: String,
    /// Coefficient on the treatment regressor, in outcome units per day.
    pub att: f64,
    /// CR1 standard error clustered by consumer.
    pub se_cluster: f64,
    /// Heteroskedasticity-robust (HC1) standard error.
    pub se_hc1: f64,
    pub t_stat: f64,
    /// Two-sided, Student t with clusters − 1 degrees of freedom.
    pub p_value: f64,
    pub n_obs: usize,
    pub n_clusters: f64,
}

impl DidResult {
    fn from_fit(name: &str, fit: &twfe::TwfeFit) -> Self {
        let att = fit.beta[0];
        let se = fit.vcov_cluster[(0, 0)].max(0.0).sqrt();
        let t = att / se;
        DidResult {
            outcome: name.to_string(),
            att,
            se_cluster: se,
            se_hc1: fit.vcov_hc1[(0, 0)].max(0.0).sqrt(),
            t_stat: t,
            p_value: stats::t_two_sided_p(t, fit.n_clusters - 1.0),
            n_obs: fit.n_obs,
            n_clusters: fit.n_clusters,
        }
    }
}

fn unit_weight(w: Option<&[f64]>, c: usize) -> f64 {
    w.map_or(1.0, |w| w[c])
}

/// Collects panel cells in `tags` accepted by `include` into regression data
/// with the regressors produced by `regressors(consumer, day)`.
fn collect<'a>(
    panel: &DailyPanel,
    values: &[f64],
    tags: &[PeriodTag],
    include: &dyn Fn(usize) -> bool,
    weights: Option<&'a [f64]>,
    names: Vec<String>,
    regressors: &dyn Fn(usize, usize, &mut Vec<f64>),
) -> Result<TwfeData<'a>> {
    if let Some(w) = weights {
        if w.len() != panel.n_consumers() {
            return Err(Error::Validation(format!(
                "{} weights for {} consumers",
                w.len(),
                panel.n_consumers()
            )));
        }
    }
    let days: Vec<usize> = (0..panel.n_dates())
        .filter(|&d| tags.contains(&panel.tags[d]))
        .collect();
    let mut data = TwfeData {
        unit: Vec::new(),
        time: Vec::new(),
        y: Vec::new(),
        x: Vec::new(),
        k: names.len(),
        n_units: panel.n_consumers(),
        n_times: panel.n_dates(),
        unit_weight: weights,
        names,
    };
    for c in 0..panel.n_consumers() {
        for &d in &days {
            let i = panel.cell(c, d);
            if !include(i) {
                continue;
            }
            data.unit.push(c);
            data.time.push(d);
            data.y.push(values[i]);
            regressors(c, d, &mut data.x);
        }
    }
    Ok(data)
}

/// Requires treated and control observations in both the baseline and the
/// comparison window.
fn check_groups(panel: &DailyPanel, data: &TwfeData, post: PeriodTag) -> Result<()> {
    let mut seen = [[false; 2]; 2];
    for (&c, &d) in data.unit.iter().zip(&data.time) {
        if unit_weight(data.unit_weight, c) <= 0.0 {
            continue;
        }
        let g = usize::from(panel.treat[c]);
        let p = usize::from(panel.tags[d] == post);
        seen[g][p] = true;
    }
    for (g, gname) in [(1, "treated"), (0, "control")] {
        for (p, pname) in [(0, "pre"), (1, post.as_str())] {
            if !seen[g][p] {
                return Err(Error::Estimation(format!(
                    "{gname} group has no observations in the {pname} period"
                )));
            }
        }
    }
    Ok(())
}

fn period_did(
    panel: &DailyPanel,
    values: &[f64],
    include: &dyn Fn(usize) -> bool,
    post: PeriodTag,
    weights: Option<&[f64]>,
    name: &str,
) -> Result<DidResult> {
    let reg = |c: usize, d: usize, x: &mut Vec<f64>| {
        x.push(f64::from(u8::from(panel.treat[c] && panel.tags[d] == post)));
    };
    let data = collect(
        panel,
        values,
        &[PeriodTag::Pre, post],
        include,
        weights,
        vec!["treat_x_post".into()],
        &reg,
    )?;
    check_groups(panel, &data, post)?;
    let fit = twfe::fit(&data)?;
    Ok(DidResult::from_fit(name, &fit))
}

/// Two-way fixed-effects DiD of `outcome` on Treat × Post over the pre and
/// program windows. `weights` are per-consumer frequency weights (for example
/// match multiplicities); `None` weights every consumer equally.
pub fn estimate_twfe(
    panel: &DailyPanel,
    outcome: Outcome,
    weights: Option<&[f64]>,
) -> Result<DidResult> {
    period_did(
        panel,
        panel.outcome(outcome),
        &|_| true,
        PeriodTag::Treat,
        weights,
        outcome.name(),
    )
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EventCoefficient {
    pub date: NaiveDate,
    pub coefficient: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PretrendResult {
    pub f_stat: f64,
    pub df1: usize,
    pub df2: f64,
    pub p_value: f64,
    /// Treated-minus-control gap by pre-period day, relative to the last pre
    /// day.
    pub coefficients: Vec<EventCoefficient>,
}

/// Joint cluster-robust Wald test that all pre-period day × Treat
/// interactions are zero, with the last pre day as reference.
pub fn pretrend_test(
    panel: &DailyPanel,
    outcome: Outcome,
    weights: Option<&[f64]>,
) -> Result<PretrendResult> {
    let pre: Vec<usize> = (0..panel.n_dates())
        .filter(|&d| panel.tags[d] == PeriodTag::Pre)
        .collect();
    if pre.len() < 5 {
        return Err(Error::Estimation(format!(
            "pre-trend test needs at least 5 pre-period days, got {}",
            pre.len()
        )));
    }
    let lead = &pre[..pre.len() - 1];
    let names = lead
        .iter()
        .map(|&d| format!("treat_x_{}", panel.dates[d]))
        .collect();
    let reg = |c: usize, d: usize, x: &mut Vec<f64>| {
        for &l in lead {
            x.push(f64::from(u8::from(panel.treat[c] && d == l)));
        }
    };
    let data = collect(
        panel,
        panel.outcome(outcome),
        &[PeriodTag::Pre],
        &|_| true,
        weights,
        names,
        &reg,
    )?;
    let fit = twfe::fit(&data)?;
    let k = lead.len();
    let v_inv = crate::linalg::inverse_spd(&fit.vcov_cluster)
        .ok_or_else(|| Error::Estimation("singular event-study covariance".into()))?;
    let wald = (fit.beta.transpose() * v_inv * &fit.beta)[(0, 0)];
    let f_stat = wald / k as f64;
    let df2 = fit.n_clusters - 1.0;
    Ok(PretrendResult {
        f_stat,
        df1: k,
        df2,
        p_value: stats::f_sf(f_stat, k as f64, df2),
        coefficients: lead
            .iter()
            .enumerate()
            .map(|(j, &d)| EventCoefficient {
                date: panel.dates[d],
                coefficient: fit.beta[j],
                se: fit.vcov_cluster[(j, j)].max(0.0).sqrt(),
            })
            .collect(),
    })
}

fn ratio(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter()
        .zip(den)
        .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
        .collect()
}

/// Splits the spending effect into basket value, order frequency, basket
/// size and unit price. Per-order outcomes use order-bearing cells only.
pub fn decompose_margins(panel: &DailyPanel, weights: Option<&[f64]>) -> Result<Vec<DidResult>> {
    let any = (0..panel.n_cells()).any(|i| panel.n_orders[i] > 0.0 && panel.tags[i % panel.n_dates()] != PeriodTag::Post);
    if !any {
        return Err(Error::Data("no orders in the pre or program window".into()));
    }
    let has_orders = |i: usize| panel.n_orders[i] > 0.0;
    let has_sku = |i: usize| panel.n_sku[i] > 0.0;
    let t = PeriodTag::Treat;
    Ok(vec![
        period_did(panel, &ratio(&panel.oop, &panel.n_orders), &has_orders, t, weights, "oop_per_order")?,
        period_did(panel, &panel.n_orders, &|_| true, t, weights, "order_freq")?,
        period_did(panel, &ratio(&panel.n_sku, &panel.n_orders), &has_orders, t, weights, "sku_per_order")?,
        period_did(panel, &ratio(&panel.oop, &panel.n_sku), &has_sku, t, weights, "oop_per_sku")?,
    ])
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SubstitutionResults {
    /// Daily grocery spending.
    pub grocery: DidResult,
    /// Utensil sets per restaurant order.
    pub utensils: DidResult,
    /// Restaurant spending in the two weeks after the program.
    pub intertemporal: Option<DidResult>,
}

/// Inter-category, intra-household and inter-temporal substitution checks.
/// `restaurant` must be built with the post window for the intertemporal test.
pub fn substitution_tests(
    restaurant: &DailyPanel,
    grocery: &DailyPanel,
    weights: Option<&[f64]>,
) -> Result<SubstitutionResults> {
    let g = estimate_twfe(grocery, Outcome::Oop, weights)?;
    let g = DidResult {
        outcome: "grocery_oop".into(),
        ..g
    };
    let utensils = period_did(
        restaurant,
        &ratio(&restaurant.n_utensils, &restaurant.n_orders),
        &|i| restaurant.n_orders[i] > 0.0,
        PeriodTag::Treat,
        weights,
        "utensils_per_order",
    )?;
    let intertemporal = if restaurant.has_tag(PeriodTag::Post) {
        Some(period_did(
            restaurant,
            &restaurant.oop,
            &|_| true,
            PeriodTag::Post,
            weights,
            "oop_post_window",
        )?)
    } else {
        log::warn!("no post-program window in the panel; intertemporal test skipped");
        None
    };
    Ok(SubstitutionResults {
        grocery: g,
        utensils,
        intertemporal,
    })
}

fn claimed_set(claims: &[Claim]) -> HashSet<(&str, NaiveDate)> {
    claims
        .iter()
        .filter(|c| c.claimed)
        .map(|c| (c.consumer_id.as_str(), c.date))
        .collect()
}

/// DiD with a consumer-day claim indicator in place of Treat × Post.
pub fn daily_did(
    panel: &DailyPanel,
    claims: &[Claim],
    outcome: Outcome,
    weights: Option<&[f64]>,
) -> Result<DidResult> {
    let claimed = claimed_set(claims);
    let flag = |c: usize, d: usize| {
        panel.tags[d] == PeriodTag::Treat
            && claimed.contains(&(panel.consumer_ids[c].as_str(), panel.dates[d]))
    };
    let reg = |c: usize, d: usize, x: &mut Vec<f64>| x.push(f64::from(u8::from(flag(c, d))));
    let data = collect(
        panel,
        panel.outcome(outcome),
        &[PeriodTag::Pre, PeriodTag::Treat],
        &|_| true,
        weights,
        vec!["coupon".into()],
        &reg,
    )?;
    if !data.x.iter().any(|&v| v > 0.0) {
        return Err(Error::Estimation("no claim days in the panel".into()));
    }
    let fit = twfe::fit(&data)?;
    let name = format!("{}_claim_day", outcome.name());
    Ok(DidResult::from_fit(&name, &fit))
}

/// Fraction of program days on which treated consumers in the panel claimed.
pub fn claim_day_share(panel: &DailyPanel, claims: &[Claim]) -> f64 {
    let claimed = claimed_set(claims);
    let mut hits = 0usize;
    let mut total = 0usize;
    for c in (0..panel.n_consumers()).filter(|&c| panel.treat[c]) {
        for d in (0..panel.n_dates()).filter(|&d| panel.tags[d] == PeriodTag::Treat) {
            total += 1;
            if claimed.contains(&(panel.consumer_ids[c].as_str(), panel.dates[d])) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Mean coupon subsidy per treated consumer-day over the program window.
pub fn avg_daily_subsidy(panel: &DailyPanel, weights: Option<&[f64]>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for c in (0..panel.n_consumers()).filter(|&c| panel.treat[c]) {
        let w = unit_weight(weights, c);
        for d in (0..panel.n_dates()).filter(|&d| panel.tags[d] == PeriodTag::Treat) {
            let i = panel.cell(c, d);
            sum += w * (panel.total[i] - panel.oop[i]);
            n += w;
        }
    }
    if n > 0.0 {
        sum / n
    } else {
        0.0
    }
}

/// Total spending induced per unit of subsidy: `1 + att / subsidy`.
pub fn coupon_mpc(att: f64, avg_daily_subsidy: f64) -> Result<f64> {
    if !(avg_daily_subsidy > 0.0) {
        return Err(Error::Estimation(format!(
            "coupon MPC needs a positive average subsidy, got {avg_daily_subsidy}"
        )));
    }
    Ok(1.0 + att / avg_daily_subsidy)
}

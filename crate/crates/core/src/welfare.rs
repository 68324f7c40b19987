//! Log-linear demand, markups and the marginal value of public funds.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{EstablishmentDay, PeriodConfig, PeriodTag};
use crate::stats::quantile;

pub const WINSOR_LOWER: f64 = 0.05;
pub const WINSOR_UPPER: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinsorBounds {
    pub date: NaiveDate,
    pub lower: f64,
    pub upper: f64,
}

/// `ln Q = beta0 - beta1 ln p`, pooled over establishment-days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandFit {
    pub beta0: f64,
    pub beta1: f64,
    pub n_obs: usize,
    pub winsor_bounds: Vec<WinsorBounds>,
}

impl DemandFit {
    /// Lerner markup `1 / beta1`.
    pub fn kappa(&self) -> f64 {
        1.0 / self.beta1
    }
}

/// Pooled OLS of log quantity on log price over pre-period establishment
/// days, after winsorizing prices within each day.
pub fn estimate_demand(days: &[EstablishmentDay], period: &PeriodConfig) -> Result<DemandFit> {
    let mut by_date: BTreeMap<NaiveDate, Vec<&EstablishmentDay>> = BTreeMap::new();
    for d in days.iter().filter(|d| period.tag(d.date) == Some(PeriodTag::Pre)) {
        if !(d.avg_price > 0.0 && d.n_orders > 0.0) {
            return Err(Error::Data(format!(
                "establishment {} on {}: demand needs positive price and quantity (price {}, orders {})",
                d.establishment_id, d.date, d.avg_price, d.n_orders
            )));
        }
        by_date.entry(d.date).or_default().push(d);
    }
    let n_obs: usize = by_date.values().map(Vec::len).sum();
    if n_obs < 30 {
        return Err(Error::Estimation(format!(
            "demand estimation needs at least 30 pre-period establishment-days, got {n_obs}"
        )));
    }
    let mut xs = Vec::with_capacity(n_obs);
    let mut ys = Vec::with_capacity(n_obs);
    let mut winsor_bounds = Vec::with_capacity(by_date.len());
    for (date, rows) in &by_date {
        let prices: Vec<f64> = rows.iter().map(|d| d.avg_price).collect();
        let lower = quantile(&prices, WINSOR_LOWER);
        let upper = quantile(&prices, WINSOR_UPPER);
        winsor_bounds.push(WinsorBounds {
            date: *date,
            lower,
            upper,
        });
        for d in rows {
            xs.push(d.avg_price.clamp(lower, upper).ln());
            ys.push(d.n_orders.ln());
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Estimation("prices do not vary after winsorizing".into()));
    }
    let slope = sxy / sxx;
    let beta1 = -slope;
    if beta1 <= 0.0 {
        return Err(Error::Estimation(format!(
            "upward-sloping demand (price elasticity {beta1:.4})"
        )));
    }
    if beta1 <= 1.0 {
        log::warn!("nonpositive markup: elasticity {beta1:.4} is at most one");
    }
    Ok(DemandFit {
        beta0: my - slope * mx,
        beta1,
        n_obs,
        winsor_bounds,
    })
}

/// Profit gains `kappa * tau` per establishment and their total.
pub fn producer_surplus_delta(fit: &DemandFit, tau: &[f64]) -> Result<(Vec<f64>, f64)> {
    if fit.beta1 <= 1.0 {
        return Err(Error::Estimation(format!(
            "nonpositive markup: elasticity {} must exceed one",
            fit.beta1
        )));
    }
    let k = fit.kappa();
    let delta: Vec<f64> = tau.iter().map(|t| k * t).collect();
    let total = delta.iter().sum();
    Ok((delta, total))
}

/// Subsidies received by consumers whose effect is at most `threshold`.
/// Consumers who raised their spending gain nothing at the margin.
pub fn consumer_gain(catt: &[f64], subsidy: &[f64], threshold: f64) -> f64 {
    catt.iter()
        .zip(subsidy)
        .filter(|(a, _)| **a <= threshold)
        .fold(0.0, |acc, (_, s)| acc + s)
}

pub fn mvpf(consumer_gain: f64, producer_gain: f64, gov_cost: f64) -> Result<f64> {
    if gov_cost <= 0.0 {
        return Err(Error::Validation(format!(
            "MVPF needs a positive government cost, got {gov_cost}"
        )));
    }
    Ok((consumer_gain + producer_gain) / gov_cost)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareAccount {
    pub consumer_gain: f64,
    pub producer_gain: f64,
    pub gov_cost: f64,
    pub mvpf: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub kappa: f64,
}

impl WelfareAccount {
    pub fn new(fit: &DemandFit, consumer_gain: f64, producer_gain: f64, gov_cost: f64) -> Result<Self> {
        Ok(WelfareAccount {
            consumer_gain,
            producer_gain,
            gov_cost,
            mvpf: mvpf(consumer_gain, producer_gain, gov_cost)?,
            beta0: fit.beta0,
            beta1: fit.beta1,
            kappa: fit.kappa(),
        })
    }
}

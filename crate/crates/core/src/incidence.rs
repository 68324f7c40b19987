//! Mapping consumer-level effects onto establishments through observed
//! spending shares.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::{write_rows, Category, EstablishmentRecord, OrderEvent, PeriodConfig, PeriodTag};
use crate::stats::pop_variance;

/// Sparse spending-share matrix: one row per consumer, one column per
/// establishment.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    pub consumer_ids: Vec<String>,
    pub establishment_ids: Vec<String>,
    /// `(column, share)` pairs sorted by column; empty for zero-spend rows.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Treat-window restaurant spending per row.
    pub spend: Vec<f64>,
}

impl AllocationMatrix {
    /// Consumers without treat-window restaurant spending.
    pub fn zero_rows(&self) -> Vec<&str> {
        self.rows
            .iter()
            .zip(&self.consumer_ids)
            .filter(|(r, _)| r.is_empty())
            .map(|(_, id)| id.as_str())
            .collect()
    }

    /// Each establishment's share of total spending in the matrix.
    pub fn market_shares(&self) -> Vec<f64> {
        let mut col = vec![0.0; self.establishment_ids.len()];
        for (row, s) in self.rows.iter().zip(&self.spend) {
            for &(k, p) in row {
                col[k] += p * s;
            }
        }
        let total: f64 = self.spend.iter().sum();
        if total > 0.0 {
            col.iter_mut().for_each(|v| *v /= total);
        }
        col
    }

    /// Share of each row's spending that went to establishments flagged in
    /// `mask`.
    pub fn row_share(&self, mask: &[bool]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|(k, _)| mask[*k]).map(|(_, p)| p).sum())
            .collect()
    }
}

/// Shares of treat-window restaurant gross spending by establishment for
/// each of `consumer_ids`.
pub fn allocation_matrix(
    orders: &[OrderEvent],
    consumer_ids: &[String],
    establishments: &[EstablishmentRecord],
    period: &PeriodConfig,
) -> Result<AllocationMatrix> {
    let col: HashMap<&str, usize> = establishments
        .iter()
        .enumerate()
        .map(|(k, e)| (e.establishment_id.as_str(), k))
        .collect();
    let row: HashMap<&str, usize> = consumer_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut spend: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); consumer_ids.len()];
    for o in orders {
        if o.category != Category::Restaurant || period.tag(o.date) != Some(PeriodTag::Treat) {
            continue;
        }
        let Some(&i) = row.get(o.consumer_id.as_str()) else {
            continue;
        };
        let k = *col.get(o.establishment_id.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "order {} references unknown establishment `{}`",
                o.order_id, o.establishment_id
            ))
        })?;
        *spend[i].entry(k).or_default() += o.gross_amount;
    }
    let mut totals = Vec::with_capacity(spend.len());
    let rows = spend
        .into_iter()
        .map(|m| {
            let total: f64 = m.values().sum();
            totals.push(total);
            if total > 0.0 {
                m.into_iter().map(|(k, v)| (k, v / total)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    Ok(AllocationMatrix {
        consumer_ids: consumer_ids.to_vec(),
        establishment_ids: establishments.iter().map(|e| e.establishment_id.clone()).collect(),
        rows,
        spend: totals,
    })
}

/// Window-level total-spending effect: OOP effect over the window plus the
/// subsidy received.
pub fn total_spend_effect(catt: &[f64], subsidy: &[f64], treat_days: usize) -> Vec<f64> {
    catt.iter()
        .zip(subsidy)
        .map(|(a, s)| a * treat_days as f64 + s)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstablishmentGains {
    pub establishment_ids: Vec<String>,
    pub tau: Vec<f64>,
    /// Sum of effects over consumers with observed shares.
    pub allocated_total: f64,
    /// Consumers left out for lack of treat-window spending.
    pub unallocated: Vec<String>,
}

/// Revenue gains `Ψ = Φᵀ P`.
pub fn map_effects(phi: &[f64], alloc: &AllocationMatrix) -> Result<EstablishmentGains> {
    if phi.len() != alloc.rows.len() {
        return Err(Error::Validation(format!(
            "{} consumer effects for an allocation matrix with {} rows",
            phi.len(),
            alloc.rows.len()
        )));
    }
    let mut tau = vec![0.0; alloc.establishment_ids.len()];
    let mut allocated_total = 0.0;
    let mut unallocated = Vec::new();
    for (i, row) in alloc.rows.iter().enumerate() {
        if row.is_empty() {
            unallocated.push(alloc.consumer_ids[i].clone());
            continue;
        }
        allocated_total += phi[i];
        for &(k, p) in row {
            tau[k] += phi[i] * p;
        }
    }
    Ok(EstablishmentGains {
        establishment_ids: alloc.establishment_ids.clone(),
        tau,
        allocated_total,
        unallocated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct UniformComparison {
    pub var_actual: f64,
    pub var_uniform: f64,
    /// `1 - var_uniform / var_actual`, as a fraction.
    pub reduction: f64,
}

/// Compares the dispersion of gains with a counterfactual in which every
/// consumer spends in proportion to `market_shares`.
pub fn uniform_counterfactual(
    phi: &[f64],
    alloc: &AllocationMatrix,
    market_shares: &[f64],
) -> Result<UniformComparison> {
    let k = market_shares.len();
    if k < 2 || k != alloc.establishment_ids.len() {
        return Err(Error::Validation(format!(
            "uniform counterfactual needs at least 2 establishments matching the matrix, got {k}"
        )));
    }
    let total: f64 = market_shares.iter().sum();
    if (total - 1.0).abs() > 1e-8 || market_shares.iter().any(|s| *s < 0.0) {
        return Err(Error::Validation(format!(
            "market shares must be nonnegative and sum to 1, got sum {total}"
        )));
    }
    let gains = map_effects(phi, alloc)?;
    let uniform: Vec<f64> = market_shares.iter().map(|s| s * gains.allocated_total).collect();
    let var_actual = pop_variance(&gains.tau);
    let var_uniform = pop_variance(&uniform);
    if var_actual <= 0.0 {
        return Err(Error::Estimation(
            "actual gains have zero variance across establishments".into(),
        ));
    }
    Ok(UniformComparison {
        var_actual,
        var_uniform,
        reduction: 1.0 - var_uniform / var_actual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Sales,
    Price,
}

impl Attribute {
    fn value(self, e: &EstablishmentRecord) -> f64 {
        match self {
            Attribute::Sales => e.avg_monthly_sales_6m,
            Attribute::Price => e.avg_order_price_6m,
        }
    }
}

/// Quantile group (1-based) of each value by rank, ties broken by position.
pub fn quantile_labels(values: &[f64], n_q: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * n_q / n + 1;
    }
    labels
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QuantileRow {
    pub quantile: usize,
    pub n: usize,
    pub mean_gain: f64,
    /// Coupon redemptions at establishments in the group, when orders are given.
    pub redemptions: Option<usize>,
}

pub fn gains_by_quantile(
    gains: &EstablishmentGains,
    establishments: &[EstablishmentRecord],
    attribute: Attribute,
    n_q: usize,
    orders: Option<&[OrderEvent]>,
) -> Result<Vec<QuantileRow>> {
    if n_q < 2 {
        return Err(Error::Validation(format!("need at least 2 quantiles, got {n_q}")));
    }
    if establishments.len() != gains.tau.len() {
        return Err(Error::Validation(
            "gains and establishment records disagree in length".into(),
        ));
    }
    let values: Vec<f64> = establishments.iter().map(|e| attribute.value(e)).collect();
    let labels = quantile_labels(&values, n_q);
    let redeemed: Option<HashMap<&str, usize>> = orders.map(|os| {
        let mut m = HashMap::new();
        for o in os.iter().filter(|o| o.coupon_discount > 0.0) {
            *m.entry(o.establishment_id.as_str()).or_insert(0) += 1;
        }
        m
    });
    Ok((1..=n_q)
        .map(|q| {
            let members: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == q).collect();
            let mean_gain = if members.is_empty() {
                0.0
            } else {
                members.iter().map(|&k| gains.tau[k]).sum::<f64>() / members.len() as f64
            };
            QuantileRow {
                quantile: q,
                n: members.len(),
                mean_gain,
                redemptions: redeemed.as_ref().map(|m| {
                    members
                        .iter()
                        .map(|&k| {
                            m.get(establishments[k].establishment_id.as_str())
                                .copied()
                                .unwrap_or(0)
                        })
                        .sum()
                }),
            }
        })
        .collect())
}

/// Writes gains.csv with decile labels by sales and by price.
pub fn write_gains(
    path: &Path,
    gains: &EstablishmentGains,
    establishments: &[EstablishmentRecord],
    n_q: usize,
) -> Result<()> {
    let sales: Vec<f64> = establishments.iter().map(|e| e.avg_monthly_sales_6m).collect();
    let price: Vec<f64> = establishments.iter().map(|e| e.avg_order_price_6m).collect();
    let (sq, pq) = (quantile_labels(&sales, n_q), quantile_labels(&price, n_q));
    write_rows(
        path,
        &["establishment_id", "tau", "sales_quantile", "price_quantile"],
        (0..gains.tau.len()).map(|k| {
            format!(
                "{},{},{},{}",
                gains.establishment_ids[k], gains.tau[k], sq[k], pq[k]
            )
        }),
    )
}

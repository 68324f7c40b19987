use std::collections::HashMap;

use chrono::NaiveDate;

use super::{Category, ConsumerRecord, OrderEvent, PeriodConfig, PeriodTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryFilter {
    Restaurant,
    Grocery,
    All,
}

impl CategoryFilter {
    fn accepts(self, c: Category) -> bool {
        match self {
            CategoryFilter::Restaurant => c == Category::Restaurant,
            CategoryFilter::Grocery => c == Category::Grocery,
            CategoryFilter::All => true,
        }
    }
}

/// Per-cell outcome series stored in a [`DailyPanel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Out-of-pocket spending (total minus subsidy).
    Oop,
    /// Payment received by merchants, subsidy included.
    Total,
    /// Spending on orders without a coupon.
    Unsub,
    Orders,
    Sku,
    Utensils,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Oop => "oop",
            Outcome::Total => "total",
            Outcome::Unsub => "unsub",
            Outcome::Orders => "n_orders",
            Outcome::Sku => "n_sku",
            Outcome::Utensils => "n_utensil_sets",
        }
    }
}

/// Balanced consumer-by-day grid. Cell `(c, d)` lives at `c * n_dates + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    pub consumer_ids: Vec<String>,
    pub treat: Vec<bool>,
    pub dates: Vec<NaiveDate>,
    pub tags: Vec<PeriodTag>,
    pub oop: Vec<f64>,
    pub total: Vec<f64>,
    pub unsub: Vec<f64>,
    pub n_orders: Vec<f64>,
    pub n_sku: Vec<f64>,
    pub n_utensils: Vec<f64>,
    /// Orders dated outside every study window.
    pub excluded_orders: usize,
}

impl DailyPanel {
    pub fn n_consumers(&self) -> usize {
        self.consumer_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_cells(&self) -> usize {
        self.oop.len()
    }

    pub fn cell(&self, consumer: usize, day: usize) -> usize {
        consumer * self.dates.len() + day
    }

    pub fn outcome(&self, o: Outcome) -> &[f64] {
        match o {
            Outcome::Oop => &self.oop,
            Outcome::Total => &self.total,
            Outcome::Unsub => &self.unsub,
            Outcome::Orders => &self.n_orders,
            Outcome::Sku => &self.n_sku,
            Outcome::Utensils => &self.n_utensils,
        }
    }

    /// Subsidy received in each cell.
    pub fn subsidy(&self) -> Vec<f64> {
        self.total.iter().zip(&self.oop).map(|(t, o)| t - o).collect()
    }

    pub fn has_tag(&self, tag: PeriodTag) -> bool {
        self.tags.contains(&tag)
    }

    /// Mean of `values` over the days carrying `tag`, per consumer.
    pub fn consumer_period_means(&self, values: &[f64], tag: PeriodTag) -> Vec<f64> {
        let days: Vec<usize> = (0..self.n_dates()).filter(|&d| self.tags[d] == tag).collect();
        (0..self.n_consumers())
            .map(|c| {
                if days.is_empty() {
                    return f64::NAN;
                }
                days.iter().map(|&d| values[self.cell(c, d)]).sum::<f64>() / days.len() as f64
            })
            .collect()
    }
}

/// Aggregates orders into a zero-filled consumer-by-day panel over the pre and
/// treat windows, plus the post window when `include_post` is set.
pub fn build_daily_panel(
    orders: &[OrderEvent],
    consumers: &[ConsumerRecord],
    period: &PeriodConfig,
    filter: CategoryFilter,
    include_post: bool,
) -> Result<DailyPanel> {
    period.validate()?;
    let dates = period.dates(include_post);
    let tags: Vec<PeriodTag> = dates
        .iter()
        .map(|d| period.tag(*d).expect("date inside study window"))
        .collect();
    let n_dates = dates.len();
    let index: HashMap<&str, usize> = consumers
        .iter()
        .enumerate()
        .map(|(i, c)| (c.consumer_id.as_str(), i))
        .collect();
    let n = consumers.len() * n_dates;
    let mut panel = DailyPanel {
        consumer_ids: consumers.iter().map(|c| c.consumer_id.clone()).collect(),
        treat: consumers.iter().map(|c| c.treat).collect(),
        dates,
        tags,
        oop: vec![0.0; n],
        total: vec![0.0; n],
        unsub: vec![0.0; n],
        n_orders: vec![0.0; n],
        n_sku: vec![0.0; n],
        n_utensils: vec![0.0; n],
        excluded_orders: 0,
    };
    let first = period.pre_start;
    for o in orders {
        let c = *index.get(o.consumer_id.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "order {} references unknown consumer `{}`",
                o.order_id, o.consumer_id
            ))
        })?;
        let Some(tag) = period.tag(o.date) else {
            panel.excluded_orders += 1;
            continue;
        };
        if tag == PeriodTag::Post && !include_post {
            continue;
        }
        if !filter.accepts(o.category) {
            continue;
        }
        let d = (o.date - first).num_days() as usize;
        let i = c * n_dates + d;
        panel.total[i] += o.gross_amount;
        panel.oop[i] += o.oop();
        if o.coupon_discount == 0.0 {
            panel.unsub[i] += o.gross_amount;
        }
        panel.n_orders[i] += 1.0;
        panel.n_sku[i] += f64::from(o.n_sku);
        panel.n_utensils[i] += f64::from(o.n_utensil_sets);
    }
    if panel.excluded_orders > 0 {
        log::warn!(
            "{} orders dated outside the study windows were excluded",
            panel.excluded_orders
        );
    }
    Ok(panel)
}

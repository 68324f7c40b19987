use std::collections::HashSet;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::panel::{OrderEvent, PeriodConfig, PeriodTag};

/// Width of the windows compared on either side of a threshold.
const SPIKE_WINDOW: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DayType {
    /// Program-window consumer-day with at least one discounted order.
    Redemption,
    NonRedemption,
    Pre,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Redemption, DayType::NonRedemption, DayType::Pre];

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Redemption => "redemption",
            DayType::NonRedemption => "non_redemption",
            DayType::Pre => "pre",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BunchingBin {
    pub lower: f64,
    pub upper: f64,
    /// Counts by [`DayType`] order.
    pub counts: [usize; 3],
    /// Counts divided by (orders of that day type × bin width).
    pub density: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRatio {
    pub threshold: f64,
    pub day_type: DayType,
    pub above: usize,
    pub below: usize,
    /// `above / below`; `None` when nothing falls below.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BunchingReport {
    pub bins: Vec<BunchingBin>,
    pub spikes: Vec<SpikeRatio>,
}

/// Order-amount histograms by day type over `[0, max_amount)`, and spike
/// ratios `mass[t, t+5) / mass[t-5, t)` at each threshold. Orders outside
/// the pre and program windows are ignored; amounts at or above
/// `max_amount` are counted only in the spike ratios.
pub fn bunching_histogram(
    orders: &[OrderEvent],
    period: &PeriodConfig,
    thresholds: &[f64],
    bin_width: f64,
    max_amount: f64,
) -> Result<BunchingReport> {
    if !(bin_width > 0.0 && max_amount > 0.0) {
        return Err(Error::Config(format!(
            "bin width and histogram range must be positive, got {bin_width} and {max_amount}"
        )));
    }
    let redemption: HashSet<(&str, NaiveDate)> = orders
        .iter()
        .filter(|o| o.coupon_discount > 0.0)
        .map(|o| (o.consumer_id.as_str(), o.date))
        .collect();
    let classify = |o: &OrderEvent| match period.tag(o.date) {
        Some(PeriodTag::Pre) => Some(DayType::Pre),
        Some(PeriodTag::Treat) => Some(
            if redemption.contains(&(o.consumer_id.as_str(), o.date)) {
                DayType::Redemption
            } else {
                DayType::NonRedemption
            },
        ),
        _ => None,
    };
    let n_bins = (max_amount / bin_width).ceil() as usize;
    let mut bins: Vec<BunchingBin> = (0..n_bins)
        .map(|b| BunchingBin {
            lower: b as f64 * bin_width,
            upper: (b + 1) as f64 * bin_width,
            counts: [0; 3],
            density: [0.0; 3],
        })
        .collect();
    let mut totals = [0usize; 3];
    let mut spikes: Vec<SpikeRatio> = thresholds
        .iter()
        .flat_map(|&t| {
            DayType::ALL.into_iter().map(move |d| SpikeRatio {
                threshold: t,
                day_type: d,
                above: 0,
                below: 0,
                ratio: None,
            })
        })
        .collect();
    for o in orders {
        let Some(day) = classify(o) else {
            continue;
        };
        let g = o.gross_amount;
        totals[day.index()] += 1;
        if g >= 0.0 && g < max_amount {
            let b = ((g / bin_width) as usize).min(n_bins - 1);
            bins[b].counts[day.index()] += 1;
        }
        for s in spikes.iter_mut().filter(|s| s.day_type == day) {
            if g >= s.threshold && g < s.threshold + SPIKE_WINDOW {
                s.above += 1;
            } else if g >= s.threshold - SPIKE_WINDOW && g < s.threshold {
                s.below += 1;
            }
        }
    }
    for b in &mut bins {
        for k in 0..3 {
            if totals[k] > 0 {
                b.density[k] = b.counts[k] as f64 / (totals[k] as f64 * bin_width);
            }
        }
    }
    for s in &mut spikes {
        s.ratio = (s.below > 0).then(|| s.above as f64 / s.below as f64);
    }
    Ok(BunchingReport { bins, spikes })
}

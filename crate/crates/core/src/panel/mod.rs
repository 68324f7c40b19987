//! Data model, file ingestion and derived variables.
//!
//! Records are immutable once ingested. Everything downstream is a pure
//! function over borrowed slices of these types.

mod daily;
mod grid;
mod ingest;
mod wealth;
mod write;

pub use daily::{build_daily_panel, CategoryFilter, DailyPanel, Outcome};
pub use grid::{grid_aggregate, GridCell};
pub use ingest::{ingest_dataset, Dataset, DatasetPaths, CONSUMER_COLUMNS, ORDER_COLUMNS};
pub use ingest::{CLAIM_COLUMNS, ESTABLISHMENT_COLUMNS, ESTABLISHMENT_DAY_COLUMNS};
pub use wealth::wealth_index;
pub(crate) use write::write_rows;
pub use write::{
    write_claims, write_consumers, write_establishment_days, write_establishments, write_orders,
};

use chrono::{Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::kv::KvFile;

/// Coupon discount offered on orders of at least ¥50.
pub const SMALL_DISCOUNT: f64 = 15.0;
pub const SMALL_THRESHOLD: f64 = 50.0;
/// Coupon discount offered on orders of at least ¥100.
pub const LARGE_DISCOUNT: f64 = 30.0;
pub const LARGE_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerRecord {
    pub consumer_id: String,
    pub age: f64,
    pub female: bool,
    pub member: bool,
    pub phone_price: f64,
    pub housing_price: f64,
    /// First principal component of phone and housing prices, standardized
    /// over the ingested sample.
    pub wealth: f64,
    pub n_orders_6m: f64,
    pub spend_per_order_6m: f64,
    pub n_restaurants_3km: f64,
    pub nonsme_share_3km: f64,
    pub grid_x: f64,
    pub grid_y: f64,
    pub treat: bool,
}

/// Consumer attributes that can enter a covariate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Covariate {
    Age,
    Female,
    Member,
    Wealth,
    NOrders6m,
    SpendPerOrder6m,
    NRestaurants3km,
    NonsmeShare3km,
}

impl Covariate {
    pub const ALL: [Covariate; 8] = [
        Covariate::Age,
        Covariate::Female,
        Covariate::Member,
        Covariate::Wealth,
        Covariate::NOrders6m,
        Covariate::SpendPerOrder6m,
        Covariate::NRestaurants3km,
        Covariate::NonsmeShare3km,
    ];

    /// Default matching set: demographics, wealth and past consumption.
    pub const MATCHING: [Covariate; 6] = [
        Covariate::Age,
        Covariate::Female,
        Covariate::Member,
        Covariate::Wealth,
        Covariate::NOrders6m,
        Covariate::SpendPerOrder6m,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Female => "female",
            Covariate::Member => "member",
            Covariate::Wealth => "wealth",
            Covariate::NOrders6m => "n_orders_6m",
            Covariate::SpendPerOrder6m => "spend_per_order_6m",
            Covariate::NRestaurants3km => "n_restaurants_3km",
            Covariate::NonsmeShare3km => "nonsme_share_3km",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown covariate `{name}`")))
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Covariate::Female | Covariate::Member)
    }
}

impl ConsumerRecord {
    pub fn covariate(&self, c: Covariate) -> f64 {
        match c {
            Covariate::Age => self.age,
            Covariate::Female => f64::from(u8::from(self.female)),
            Covariate::Member => f64::from(u8::from(self.member)),
            Covariate::Wealth => self.wealth,
            Covariate::NOrders6m => self.n_orders_6m,
            Covariate::SpendPerOrder6m => self.spend_per_order_6m,
            Covariate::NRestaurants3km => self.n_restaurants_3km,
            Covariate::NonsmeShare3km => self.nonsme_share_3km,
        }
    }
}

/// Row-major covariate matrix for `consumers` over `covariates`.
pub fn covariate_matrix(consumers: &[ConsumerRecord], covariates: &[Covariate]) -> Vec<f64> {
    let mut out = Vec::with_capacity(consumers.len() * covariates.len());
    for c in consumers {
        out.extend(covariates.iter().map(|&k| c.covariate(k)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Restaurant,
    Grocery,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Restaurant => "restaurant",
            Category::Grocery => "grocery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderEvent {
    pub order_id: String,
    pub consumer_id: String,
    pub establishment_id: String,
    pub date: NaiveDate,
    /// Payment received by the merchant, subsidy included.
    pub gross_amount: f64,
    pub coupon_discount: f64,
    pub n_sku: u32,
    pub n_utensil_sets: u32,
    pub category: Category,
}

impl OrderEvent {
    pub fn oop(&self) -> f64 {
        self.gross_amount - self.coupon_discount
    }

    /// Checks the coupon threshold rules.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| {
            Err(Error::Data(format!(
                "order {}: {msg} (gross {}, discount {})",
                self.order_id, self.gross_amount, self.coupon_discount
            )))
        };
        if !(self.gross_amount.is_finite() && self.coupon_discount.is_finite()) {
            return fail("non-finite amount");
        }
        if self.coupon_discount < 0.0 || self.gross_amount < self.coupon_discount {
            return fail("requires gross_amount >= coupon_discount >= 0");
        }
        if self.coupon_discount == SMALL_DISCOUNT {
            if self.gross_amount < SMALL_THRESHOLD {
                return fail("threshold violation: ¥15 discount needs gross >= 50");
            }
        } else if self.coupon_discount == LARGE_DISCOUNT {
            if self.gross_amount < LARGE_THRESHOLD {
                return fail("threshold violation: ¥30 discount needs gross >= 100");
            }
        } else if self.coupon_discount != 0.0 {
            return fail("discount must be 0, 15 or 30");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstablishmentRecord {
    pub establishment_id: String,
    pub avg_monthly_sales_6m: f64,
    pub avg_order_price_6m: f64,
    pub sme_flag: bool,
    pub grid_x: f64,
    pub grid_y: f64,
}

/// SME classification: monthly sales strictly below the given percentile of
/// the establishment sales distribution.
pub fn classify_sme(establishments: &[EstablishmentRecord], percentile: f64) -> Vec<bool> {
    let sales: Vec<f64> = establishments.iter().map(|e| e.avg_monthly_sales_6m).collect();
    let cut = crate::stats::quantile(&sales, percentile / 100.0);
    sales.iter().map(|&s| s < cut).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub consumer_id: String,
    pub date: NaiveDate,
    pub claimed: bool,
}

/// Pre-program daily sales for one establishment, used by demand estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstablishmentDay {
    pub establishment_id: String,
    pub date: NaiveDate,
    pub n_orders: f64,
    pub avg_price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeriodTag {
    Pre,
    Treat,
    Post,
}

impl PeriodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PeriodTag::Pre => "pre",
            PeriodTag::Treat => "treat",
            PeriodTag::Post => "post",
        }
    }
}

/// Study windows: pre = [pre_start, treat_start), treat = [treat_start,
/// treat_end], post = (treat_end, post_end].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodConfig {
    pub pre_start: NaiveDate,
    pub treat_start: NaiveDate,
    pub treat_end: NaiveDate,
    pub post_end: NaiveDate,
}

impl PeriodConfig {
    pub fn new(
        pre_start: NaiveDate,
        treat_start: NaiveDate,
        treat_end: NaiveDate,
        post_end: NaiveDate,
    ) -> Result<Self> {
        let p = PeriodConfig {
            pre_start,
            treat_start,
            treat_end,
            post_end,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pre_start < self.treat_start
            && self.treat_start <= self.treat_end
            && self.treat_end < self.post_end)
        {
            return Err(Error::Config(format!(
                "period dates must satisfy pre_start < treat_start <= treat_end < post_end, got {} {} {} {}",
                self.pre_start, self.treat_start, self.treat_end, self.post_end
            )));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile, prefix: &str) -> Result<Self> {
        let date = |k: &str| -> Result<NaiveDate> {
            let key = format!("{prefix}{k}");
            let v = kv.require(&key)?;
            NaiveDate::parse_from_str(v, "%Y-%m-%d")
                .map_err(|e| Error::Config(format!("key `{key}`: bad date `{v}`: {e}")))
        };
        Self::new(
            date("pre_start")?,
            date("treat_start")?,
            date("treat_end")?,
            date("post_end")?,
        )
    }

    pub fn write_kv(&self, kv: &mut KvFile, prefix: &str) {
        kv.set(format!("{prefix}pre_start"), self.pre_start.to_string());
        kv.set(format!("{prefix}treat_start"), self.treat_start.to_string());
        kv.set(format!("{prefix}treat_end"), self.treat_end.to_string());
        kv.set(format!("{prefix}post_end"), self.post_end.to_string());
    }

    pub fn tag(&self, date: NaiveDate) -> Option<PeriodTag> {
        if date < self.pre_start || date > self.post_end {
            None
        } else if date < self.treat_start {
            Some(PeriodTag::Pre)
        } else if date <= self.treat_end {
            Some(PeriodTag::Treat)
        } else {
            Some(PeriodTag::Post)
        }
    }

    pub fn pre_days(&self) -> usize {
        (self.treat_start - self.pre_start).num_days() as usize
    }

    pub fn treat_days(&self) -> usize {
        (self.treat_end - self.treat_start).num_days() as usize + 1
    }

    pub fn post_days(&self) -> usize {
        (self.post_end - self.treat_end).num_days() as usize
    }

    /// Every date from `pre_start`, through `treat_end` or `post_end`.
    pub fn dates(&self, include_post: bool) -> Vec<NaiveDate> {
        let last = if include_post {
            self.post_end
        } else {
            self.treat_end
        };
        let n = (last - self.pre_start).num_days();
        (0..=n).map(|d| self.pre_start + Duration::days(d)).collect()
    }
}

impl Default for PeriodConfig {
    /// 14 pre days, a 41-day program and 14 post days (69 days in total).
    fn default() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2022, m, day).expect("valid date");
        PeriodConfig {
            pre_start: d(7, 4),
            treat_start: d(7, 18),
            treat_end: d(8, 27),
            post_end: d(9, 10),
        }
    }
}

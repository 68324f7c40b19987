use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use csv::StringRecord;

use super::{
    classify_sme, wealth_index, Category, Claim, ConsumerRecord, EstablishmentDay,
    EstablishmentRecord, OrderEvent, PeriodConfig,
};
use crate::error::{Error, Result};

pub const CONSUMER_COLUMNS: [&str; 13] = [
    "consumer_id",
    "age",
    "female",
    "member",
    "phone_price",
    "housing_price",
    "n_orders_6m",
    "spend_per_order_6m",
    "n_restaurants_3km",
    "nonsme_share_3km",
    "grid_x",
    "grid_y",
    "treat",
];

pub const ORDER_COLUMNS: [&str; 9] = [
    "order_id",
    "consumer_id",
    "establishment_id",
    "date",
    "gross_amount",
    "coupon_discount",
    "n_sku",
    "n_utensil_sets",
    "category",
];

pub const ESTABLISHMENT_COLUMNS: [&str; 6] = [
    "establishment_id",
    "avg_monthly_sales_6m",
    "avg_order_price_6m",
    "sme_flag",
    "grid_x",
    "grid_y",
];

pub const CLAIM_COLUMNS: [&str; 3] = ["consumer_id", "date", "claimed"];

pub const ESTABLISHMENT_DAY_COLUMNS: [&str; 4] =
    ["establishment_id", "date", "n_orders", "avg_price"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub consumers: PathBuf,
    pub orders: PathBuf,
    pub establishments: PathBuf,
    pub claims: Option<PathBuf>,
    pub establishment_days: Option<PathBuf>,
}

impl DatasetPaths {
    /// Conventional file names inside one directory; optional files are
    /// picked up only when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            consumers: dir.join("consumers.csv"),
            orders: dir.join("orders.csv"),
            establishments: dir.join("establishments.csv"),
            claims: opt("claims.csv"),
            establishment_days: opt("establishment_days.csv"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub consumers: Vec<ConsumerRecord>,
    pub orders: Vec<OrderEvent>,
    pub establishments: Vec<EstablishmentRecord>,
    pub claims: Vec<Claim>,
    pub establishment_days: Vec<EstablishmentDay>,
    /// Consumers dropped for missing attributes.
    pub dropped_consumers: usize,
    /// Orders belonging to dropped consumers.
    pub dropped_orders: usize,
}

struct Table {
    path: PathBuf,
    index: HashMap<String, usize>,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path, expected: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for col in expected {
            if !index.contains_key(*col) {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line: 1,
                    column: col.to_string(),
                    message: "missing column in header".into(),
                });
            }
        }
        if let Some(extra) = headers.iter().find(|h| !expected.contains(h)) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                column: extra.to_string(),
                message: "unexpected column in header".into(),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            index,
            rows,
        })
    }

    fn field<'r>(&self, rec: &'r StringRecord, col: &str) -> &'r str {
        rec.get(self.index[col]).unwrap_or("")
    }

    fn err(&self, line: u64, col: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            column: col.to_string(),
            message: message.into(),
        }
    }

    fn text(&self, line: u64, rec: &StringRecord, col: &str) -> Result<String> {
        let v = self.field(rec, col);
        if v.is_empty() {
            return Err(self.err(line, col, "empty value"));
        }
        Ok(v.to_string())
    }

    fn num(&self, line: u64, rec: &StringRecord, col: &str) -> Result<f64> {
        let v = self.field(rec, col);
        let x: f64 = v
            .parse()
            .map_err(|_| self.err(line, col, format!("not a number: `{v}`")))?;
        if !x.is_finite() {
            return Err(self.err(line, col, format!("non-finite value `{v}`")));
        }
        Ok(x)
    }

    fn count(&self, line: u64, rec: &StringRecord, col: &str) -> Result<u32> {
        let v = self.field(rec, col);
        v.parse()
            .map_err(|_| self.err(line, col, format!("not a nonnegative integer: `{v}`")))
    }

    fn flag(&self, line: u64, rec: &StringRecord, col: &str) -> Result<bool> {
        match self.field(rec, col) {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(self.err(line, col, format!("expected 0 or 1, got `{v}`"))),
        }
    }

    fn date(&self, line: u64, rec: &StringRecord, col: &str) -> Result<NaiveDate> {
        let v = self.field(rec, col);
        NaiveDate::parse_from_str(v, "%Y-%m-%d")
            .map_err(|_| self.err(line, col, format!("not an ISO-8601 date: `{v}`")))
    }
}

/// Reads and validates the consumer, order, establishment and optional claim
/// and establishment-day files.
///
/// Consumers with any empty attribute are dropped (and their orders with
/// them); the wealth index is computed over the retained consumers.
pub fn ingest_dataset(paths: &DatasetPaths, period: &PeriodConfig) -> Result<Dataset> {
    period.validate()?;
    let (consumers, dropped_consumers) = read_consumers(&paths.consumers)?;
    let establishments = read_establishments(&paths.establishments)?;
    let known_est: HashSet<&str> = establishments
        .iter()
        .map(|e| e.establishment_id.as_str())
        .collect();
    let (orders, dropped_orders) = read_orders(&paths.orders, &consumers, &dropped_consumers)?;
    // The establishment file covers restaurants only.
    for o in &orders {
        if o.category == Category::Restaurant && !known_est.contains(o.establishment_id.as_str()) {
            return Err(Error::Data(format!(
                "order {}: unknown establishment `{}`",
                o.order_id, o.establishment_id
            )));
        }
    }
    let claims = match &paths.claims {
        Some(p) => read_claims(p)?,
        None => Vec::new(),
    };
    let establishment_days = match &paths.establishment_days {
        Some(p) => read_establishment_days(p)?,
        None => Vec::new(),
    };

    let flags = classify_sme(&establishments, 50.0);
    let mismatched = establishments
        .iter()
        .zip(&flags)
        .filter(|(e, f)| e.sme_flag != **f)
        .count();
    if mismatched > 0 {
        log::warn!("{mismatched} establishments have sme_flag inconsistent with the median split");
    }
    if !dropped_consumers.is_empty() {
        log::info!(
            "dropped {} consumers with missing attributes ({} orders)",
            dropped_consumers.len(),
            dropped_orders
        );
    }
    log::info!(
        "ingested {} consumers, {} orders, {} establishments, {} claims",
        consumers.len(),
        orders.len(),
        establishments.len(),
        claims.len()
    );
    Ok(Dataset {
        consumers,
        orders,
        establishments,
        claims,
        establishment_days,
        dropped_consumers: dropped_consumers.len(),
        dropped_orders,
    })
}

fn read_consumers(path: &Path) -> Result<(Vec<ConsumerRecord>, HashSet<String>)> {
    let t = Table::read(path, &CONSUMER_COLUMNS)?;
    let mut out = Vec::with_capacity(t.rows.len());
    let mut dropped = HashSet::new();
    let mut seen = HashSet::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let id = t.text(line, rec, "consumer_id")?;
        if !seen.insert(id.clone()) {
            return Err(t.err(line, "consumer_id", format!("duplicate consumer `{id}`")));
        }
        if CONSUMER_COLUMNS.iter().any(|c| t.field(rec, c).is_empty()) {
            dropped.insert(id);
            continue;
        }
        let c = ConsumerRecord {
            consumer_id: id,
            age: t.num(line, rec, "age")?,
            female: t.flag(line, rec, "female")?,
            member: t.flag(line, rec, "member")?,
            phone_price: t.num(line, rec, "phone_price")?,
            housing_price: t.num(line, rec, "housing_price")?,
            wealth: 0.0,
            n_orders_6m: t.num(line, rec, "n_orders_6m")?,
            spend_per_order_6m: t.num(line, rec, "spend_per_order_6m")?,
            n_restaurants_3km: t.num(line, rec, "n_restaurants_3km")?,
            nonsme_share_3km: t.num(line, rec, "nonsme_share_3km")?,
            grid_x: t.num(line, rec, "grid_x")?,
            grid_y: t.num(line, rec, "grid_y")?,
            treat: t.flag(line, rec, "treat")?,
        };
        if !(0.0..=1.0).contains(&c.nonsme_share_3km) {
            return Err(t.err(line, "nonsme_share_3km", "must lie in [0, 1]"));
        }
        for col in ["n_restaurants_3km", "spend_per_order_6m", "n_orders_6m"] {
            if t.num(line, rec, col)? < 0.0 {
                return Err(t.err(line, col, "must be nonnegative"));
            }
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no consumers", path.display())));
    }
    let phone: Vec<f64> = out.iter().map(|c| c.phone_price).collect();
    let housing: Vec<f64> = out.iter().map(|c| c.housing_price).collect();
    let w = wealth_index(&phone, &housing)?;
    for (c, v) in out.iter_mut().zip(w.values) {
        c.wealth = v;
    }
    Ok((out, dropped))
}

fn read_orders(
    path: &Path,
    consumers: &[ConsumerRecord],
    dropped: &HashSet<String>,
) -> Result<(Vec<OrderEvent>, usize)> {
    let t = Table::read(path, &ORDER_COLUMNS)?;
    let known: HashSet<&str> = consumers.iter().map(|c| c.consumer_id.as_str()).collect();
    let mut out = Vec::with_capacity(t.rows.len());
    let mut n_dropped = 0;
    for (line, rec) in &t.rows {
        let line = *line;
        let consumer_id = t.text(line, rec, "consumer_id")?;
        if dropped.contains(&consumer_id) {
            n_dropped += 1;
            continue;
        }
        if !known.contains(consumer_id.as_str()) {
            return Err(t.err(line, "consumer_id", format!("unknown consumer `{consumer_id}`")));
        }
        let category = match t.field(rec, "category") {
            "restaurant" => Category::Restaurant,
            "grocery" => Category::Grocery,
            v => {
                return Err(t.err(line, "category", format!("expected restaurant|grocery, got `{v}`")))
            }
        };
        let o = OrderEvent {
            order_id: t.text(line, rec, "order_id")?,
            consumer_id,
            establishment_id: t.text(line, rec, "establishment_id")?,
            date: t.date(line, rec, "date")?,
            gross_amount: t.num(line, rec, "gross_amount")?,
            coupon_discount: t.num(line, rec, "coupon_discount")?,
            n_sku: t.count(line, rec, "n_sku")?,
            n_utensil_sets: t.count(line, rec, "n_utensil_sets")?,
            category,
        };
        o.validate()?;
        out.push(o);
    }
    Ok((out, n_dropped))
}

fn read_establishments(path: &Path) -> Result<Vec<EstablishmentRecord>> {
    let t = Table::read(path, &ESTABLISHMENT_COLUMNS)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let e = EstablishmentRecord {
            establishment_id: t.text(line, rec, "establishment_id")?,
            avg_monthly_sales_6m: t.num(line, rec, "avg_monthly_sales_6m")?,
            avg_order_price_6m: t.num(line, rec, "avg_order_price_6m")?,
            sme_flag: t.flag(line, rec, "sme_flag")?,
            grid_x: t.num(line, rec, "grid_x")?,
            grid_y: t.num(line, rec, "grid_y")?,
        };
        if e.avg_monthly_sales_6m < 0.0 {
            return Err(t.err(line, "avg_monthly_sales_6m", "must be nonnegative"));
        }
        if e.avg_order_price_6m < 0.0 {
            return Err(t.err(line, "avg_order_price_6m", "must be nonnegative"));
        }
        out.push(e);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no establishments", path.display())));
    }
    Ok(out)
}

fn read_claims(path: &Path) -> Result<Vec<Claim>> {
    let t = Table::read(path, &CLAIM_COLUMNS)?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(Claim {
                consumer_id: t.text(*line, rec, "consumer_id")?,
                date: t.date(*line, rec, "date")?,
                claimed: t.flag(*line, rec, "claimed")?,
            })
        })
        .collect()
}

fn read_establishment_days(path: &Path) -> Result<Vec<EstablishmentDay>> {
    let t = Table::read(path, &ESTABLISHMENT_DAY_COLUMNS)?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(EstablishmentDay {
                establishment_id: t.text(*line, rec, "establishment_id")?,
                date: t.date(*line, rec, "date")?,
                n_orders: t.num(*line, rec, "n_orders")?,
                avg_price: t.num(*line, rec, "avg_price")?,
            })
        })
        .collect()
}

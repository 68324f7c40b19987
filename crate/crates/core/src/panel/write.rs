use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{
    Claim, ConsumerRecord, EstablishmentDay, EstablishmentRecord, OrderEvent, CLAIM_COLUMNS,
    CONSUMER_COLUMNS, ESTABLISHMENT_COLUMNS, ESTABLISHMENT_DAY_COLUMNS, ORDER_COLUMNS,
};
use crate::error::{Error, Result};

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes rows with a header line. Fields are written verbatim; ids must not
/// contain commas or quotes.
pub(crate) fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn write_consumers(path: &Path, consumers: &[ConsumerRecord]) -> Result<()> {
    write_rows(
        path,
        &CONSUMER_COLUMNS,
        consumers.iter().map(|c| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.consumer_id,
                c.age,
                bit(c.female),
                bit(c.member),
                c.phone_price,
                c.housing_price,
                c.n_orders_6m,
                c.spend_per_order_6m,
                c.n_restaurants_3km,
                c.nonsme_share_3km,
                c.grid_x,
                c.grid_y,
                bit(c.treat)
            )
        }),
    )
}

pub fn write_orders(path: &Path, orders: &[OrderEvent]) -> Result<()> {
    write_rows(
        path,
        &ORDER_COLUMNS,
        orders.iter().map(|o| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                o.order_id,
                o.consumer_id,
                o.establishment_id,
                o.date,
                o.gross_amount,
                o.coupon_discount,
                o.n_sku,
                o.n_utensil_sets,
                o.category.as_str()
            )
        }),
    )
}

pub fn write_establishments(path: &Path, establishments: &[EstablishmentRecord]) -> Result<()> {
    write_rows(
        path,
        &ESTABLISHMENT_COLUMNS,
        establishments.iter().map(|e| {
            format!(
                "{},{},{},{},{},{}",
                e.establishment_id,
                e.avg_monthly_sales_6m,
                e.avg_order_price_6m,
                bit(e.sme_flag),
                e.grid_x,
                e.grid_y
            )
        }),
    )
}

pub fn write_claims(path: &Path, claims: &[Claim]) -> Result<()> {
    write_rows(
        path,
        &CLAIM_COLUMNS,
        claims
            .iter()
            .map(|c| format!("{},{},{}", c.consumer_id, c.date, bit(c.claimed))),
    )
}

pub fn write_establishment_days(path: &Path, days: &[EstablishmentDay]) -> Result<()> {
    write_rows(
        path,
        &ESTABLISHMENT_DAY_COLUMNS,
        days.iter().map(|d| {
            format!(
                "{},{},{},{}",
                d.establishment_id, d.date, d.n_orders, d.avg_price
            )
        }),
    )
}

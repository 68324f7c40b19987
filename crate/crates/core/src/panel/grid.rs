use std::collections::BTreeMap;

use super::ConsumerRecord;
use crate::error::{Error, Result};

/// One square cell of the spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub ix: i64,
    pub iy: i64,
    pub count: usize,
    pub n_treated: usize,
    pub total: f64,
    pub mean: f64,
    /// Fewer than two treated consumers fall in the cell.
    pub flagged: bool,
}

/// Groups per-consumer values into `cell_km`-sized squares keyed by
/// `floor(x / cell_km), floor(y / cell_km)`. Cells come out sorted by index.
pub fn grid_aggregate(
    values: &[f64],
    consumers: &[ConsumerRecord],
    cell_km: f64,
) -> Result<Vec<GridCell>> {
    if !(cell_km > 0.0) || !cell_km.is_finite() {
        return Err(Error::Validation(format!("cell size must be positive, got {cell_km}")));
    }
    if values.len() != consumers.len() {
        return Err(Error::Validation(format!(
            "grid: {} values for {} consumers",
            values.len(),
            consumers.len()
        )));
    }
    let mut cells: BTreeMap<(i64, i64), (usize, usize, f64)> = BTreeMap::new();
    for (v, c) in values.iter().zip(consumers) {
        let key = (
            (c.grid_x / cell_km).floor() as i64,
            (c.grid_y / cell_km).floor() as i64,
        );
        let e = cells.entry(key).or_insert((0, 0, 0.0));
        e.0 += 1;
        e.1 += usize::from(c.treat);
        e.2 += v;
    }
    Ok(cells
        .into_iter()
        .map(|((ix, iy), (count, n_treated, total))| GridCell {
            ix,
            iy,
            count,
            n_treated,
            total,
            mean: total / count as f64,
            flagged: n_treated < 2,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn at(x: f64, y: f64) -> ConsumerRecord {
        ConsumerRecord {
            consumer_id: format!("{x}-{y}"),
            age: 30.0,
            female: false,
            member: false,
            phone_price: 1.0,
            housing_price: 1.0,
            wealth: 0.0,
            n_orders_6m: 0.0,
            spend_per_order_6m: 0.0,
            n_restaurants_3km: 0.0,
            nonsme_share_3km: 0.0,
            grid_x: x,
            grid_y: y,
            treat: true,
        }
    }

    #[test]
    fn single_and_pair() {
        let cells = grid_aggregate(&[2.0], &[at(1.0, 1.0)], 3.0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].mean, 2.0);
        assert_eq!(cells[0].count, 1);
        assert!(cells[0].flagged);

        let cells = grid_aggregate(&[1.0, 3.0], &[at(0.5, 0.5), at(2.9, 2.0)], 3.0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].mean, 2.0);
        assert_eq!(cells[0].total, 4.0);
        assert!(!cells[0].flagged);
    }

    #[test]
    fn matches_groupby_oracle_and_conserves_totals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cs: Vec<ConsumerRecord> = (0..100)
            .map(|_| at(rng.random_range(-10.0..20.0), rng.random_range(0.0..15.0)))
            .collect();
        let vals: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let cells = grid_aggregate(&vals, &cs, 3.0).unwrap();

        let mut oracle: std::collections::HashMap<(i64, i64), f64> = Default::default();
        for (v, c) in vals.iter().zip(&cs) {
            let k = ((c.grid_x / 3.0).floor() as i64, (c.grid_y / 3.0).floor() as i64);
            *oracle.entry(k).or_default() += v;
        }
        assert_eq!(cells.len(), oracle.len());
        for cell in &cells {
            assert!((cell.total - oracle[&(cell.ix, cell.iy)]).abs() < 1e-12);
        }
        let grand: f64 = vals.iter().sum();
        let sum: f64 = cells.iter().map(|c| c.total).sum();
        assert!((grand - sum).abs() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_cell() {
        assert!(grid_aggregate(&[1.0], &[at(0.0, 0.0)], 0.0).is_err());
    }
}

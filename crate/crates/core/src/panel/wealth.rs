use crate::error::{Error, Result};
use crate::stats;

/// Wealth index built from phone and housing prices.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthIndex {
    /// Index values, mean 0 and sample sd 1.
    pub values: Vec<f64>,
    /// Loadings of the standardized (phone, housing) variables.
    pub loadings: (f64, f64),
    /// Eigenvalues of the 2x2 correlation matrix, largest first.
    pub eigenvalues: (f64, f64),
}

/// First principal component of the standardized phone and housing prices.
///
/// The component is signed to correlate positively with housing prices and
/// re-standardized. When both eigenvalues coincide (uncorrelated inputs) the
/// equal-weight direction is used.
pub fn wealth_index(phone_price: &[f64], housing_price: &[f64]) -> Result<WealthIndex> {
    if phone_price.len() != housing_price.len() {
        return Err(Error::Validation(format!(
            "wealth index: length mismatch ({} vs {})",
            phone_price.len(),
            housing_price.len()
        )));
    }
    if phone_price.len() < 2 {
        return Err(Error::Validation("wealth index needs at least 2 consumers".into()));
    }
    if phone_price.iter().chain(housing_price).any(|v| !v.is_finite()) {
        return Err(Error::Validation("wealth index: non-finite price".into()));
    }
    let zp = stats::standardize(phone_price).ok_or_else(|| {
        Error::Validation("wealth index: phone_price is constant, principal component undefined".into())
    })?;
    let zh = stats::standardize(housing_price).ok_or_else(|| {
        Error::Validation("wealth index: housing_price is constant, principal component undefined".into())
    })?;

    let n = zp.len() as f64;
    let r = zp.iter().zip(&zh).map(|(a, b)| a * b).sum::<f64>() / (n - 1.0);
    let (eigenvalues, mut v) = top_eigenvector_2x2(1.0, r, 1.0);

    let mut raw: Vec<f64> = zp.iter().zip(&zh).map(|(p, h)| v.0 * p + v.1 * h).collect();
    if stats::correlation(&raw, &zh) < 0.0 {
        v = (-v.0, -v.1);
        raw.iter_mut().for_each(|x| *x = -*x);
    }
    let values = stats::standardize(&raw).ok_or_else(|| {
        Error::Estimation("wealth index: principal component has zero variance".into())
    })?;
    Ok(WealthIndex {
        values,
        loadings: v,
        eigenvalues,
    })
}

/// Largest eigenpair of the symmetric matrix [[a, b], [b, c]].
fn top_eigenvector_2x2(a: f64, b: f64, c: f64) -> ((f64, f64), (f64, f64)) {
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = half_trace + disc;
    let l2 = half_trace - disc;
    let v = if disc <= 1e-14 * half_trace.abs().max(1.0) {
        (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2)
    } else if b.abs() > 0.0 {
        let (x, y) = (l1 - c, b);
        let norm = (x * x + y * y).sqrt();
        (x / norm, y / norm)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    ((l1, l2), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_correlated_inputs_give_common_factor() {
        let housing = [10.0, 20.0, 35.0, 50.0, 80.0];
        let phone: Vec<f64> = housing.iter().map(|h| 3.0 * h + 100.0).collect();
        let w = wealth_index(&phone, &housing).unwrap();
        let zh = stats::standardize(&housing).unwrap();
        for (a, b) in w.values.iter().zip(&zh) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((stats::correlation(&w.values, &housing) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_inputs_load_equally() {
        // standardized columns with zero sample correlation
        let phone = [1.0, -1.0, 1.0, -1.0];
        let housing = [1.0, 1.0, -1.0, -1.0];
        let w = wealth_index(&phone, &housing).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w.loadings.0.abs() - s).abs() < 1e-12);
        assert!((w.loadings.1 - s).abs() < 1e-12);
    }

    #[test]
    fn negative_correlation_is_signed_by_housing() {
        let phone = [5.0, 4.0, 3.0, 2.0, 1.5];
        let housing = [1.0, 2.0, 3.0, 4.0, 4.1];
        let w = wealth_index(&phone, &housing).unwrap();
        assert!(stats::correlation(&w.values, &housing) > 0.0);
        assert!(w.loadings.1 > 0.0 && w.loadings.0 < 0.0);
    }

    /// Maximizes v'Rv over unit vectors by scanning the angle, then refining
    /// with golden-section search.
    fn brute_force_top_direction(r: f64) -> (f64, f64) {
        let quad = |t: f64| {
            let (c, s) = (t.cos(), t.sin());
            c * c + 2.0 * r * c * s + s * s
        };
        let n = 20_000;
        let step = std::f64::consts::PI / n as f64;
        let best = (0..n)
            .map(|i| i as f64 * step)
            .max_by(|a, b| quad(*a).total_cmp(&quad(*b)))
            .unwrap();
        let (mut lo, mut hi) = (best - step, best + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if quad(m1) < quad(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let t = 0.5 * (lo + hi);
        (t.cos(), t.sin())
    }

    #[test]
    fn five_point_case_matches_brute_force_eigenvector() {
        let phone = [1500.0, 2500.0, 4500.0, 3000.0, 9000.0];
        let housing = [38_000.0, 52_000.0, 61_000.0, 45_000.0, 90_000.0];
        let w = wealth_index(&phone, &housing).unwrap();

        let zp = stats::standardize(&phone).unwrap();
        let zh = stats::standardize(&housing).unwrap();
        let r = zp.iter().zip(&zh).map(|(a, b)| a * b).sum::<f64>() / 4.0;
        let (mut a, mut b) = brute_force_top_direction(r);
        let proj: Vec<f64> = zp.iter().zip(&zh).map(|(p, h)| a * p + b * h).collect();
        if stats::correlation(&proj, &housing) < 0.0 {
            a = -a;
            b = -b;
        }
        assert!((w.loadings.0 - a).abs() < 1e-8, "{:?} vs {a}", w.loadings);
        assert!((w.loadings.1 - b).abs() < 1e-8);
        let oracle: Vec<f64> = zp.iter().zip(&zh).map(|(p, h)| a * p + b * h).collect();
        let oracle = stats::standardize(&oracle).unwrap();
        for (x, y) in w.values.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-7);
        }
        assert!((w.eigenvalues.0 - (1.0 + r.abs())).abs() < 1e-12);
    }

    #[test]
    fn output_is_standardized() {
        let phone = [1.0, 7.0, 3.0, 9.0, 2.0, 4.0];
        let housing = [2.0, 5.0, 1.0, 8.0, 3.0, 3.5];
        let w = wealth_index(&phone, &housing).unwrap();
        assert!(stats::mean(&w.values).abs() < 1e-10);
        assert!((stats::sd(&w.values) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_column_is_rejected() {
        assert!(wealth_index(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(wealth_index(&[1.0], &[1.0]).is_err());
    }
}

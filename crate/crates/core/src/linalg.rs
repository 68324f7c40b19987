//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Builds a matrix from row-major data.
pub fn from_rows(n: usize, p: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, p, data)
}

/// `XᵀWX` and `XᵀWy` for row-major `x` (`n x p`) and optional weights.
pub fn normal_equations(
    x: &[f64],
    p: usize,
    y: &[f64],
    w: Option<&[f64]>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for (i, row) in x.chunks_exact(p).enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        for a in 0..p {
            let va = wi * row[a];
            xty[a] += va * y[i];
            for b in a..p {
                xtx[(a, b)] += va * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    (xtx, xty)
}

/// Inverse of a symmetric positive-definite matrix, `None` if singular.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Reciprocal condition estimate of a symmetric PSD matrix from its
/// eigenvalues (smallest / largest).
pub fn rcond_sym(a: &DMatrix<f64>) -> f64 {
    let ev = a.clone().symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(0.0f64, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        (min / max).max(0.0)
    }
}

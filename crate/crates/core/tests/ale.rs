use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stimkit::ale::{
    ale_binary, ale_curve, fit_psi_surface, variance_decomposition, write_curves, AleCurve,
    AleScheme, Binning, DEFAULT_BINS,
};
use stimkit::forest::RegressionParams;
use stimkit::stats::{correlation, mean, pop_variance};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn uniforms(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn column(x: &[f64], p: usize, k: usize) -> Vec<f64> {
    x.iter().skip(k).step_by(p).copied().collect()
}

#[test]
fn linear_surface_gives_linear_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, p) = (2000, 3);
    let x = normals(&mut rng, n * p);
    let f = |r: &[f64]| 1.5 * r[0] + r[1].sin();
    let c = ale_curve(&f, &x, p, 0, "x0", DEFAULT_BINS, Binning::EqualWidth).unwrap();
    assert_eq!(c.bin_edges.len(), 26);
    assert_eq!(c.h_tilde.len(), 26);
    let x0 = column(&x, p, 0);
    let m = mean(&x0);
    for (e, h) in c.bin_edges.iter().zip(&c.h_tilde) {
        assert!((h - 1.5 * (e - m)).abs() < 1e-9);
    }
    assert!((c.var_component - 2.25 * pop_variance(&x0)).abs() < 1e-9);
}

#[test]
fn constant_surface_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = normals(&mut rng, 600);
    let c = ale_curve(&|_: &[f64]| 4.0, &x, 2, 1, "x1", 25, Binning::Quantile).unwrap();
    assert!(c.h_tilde.iter().all(|h| h.abs() < 1e-12));
    assert_eq!(c.var_component, 0.0);
}

#[test]
fn quadratic_centering() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let x = uniforms(&mut rng, n);
    let c = ale_curve(&|r: &[f64]| r[0] * r[0], &x, 1, 0, "x", 25, Binning::EqualWidth).unwrap();
    for (e, h) in c.bin_edges.iter().zip(&c.h_tilde) {
        assert!((h - (e * e - 1.0 / 3.0)).abs() < 0.02, "{e}: {h}");
    }
}

#[test]
fn empty_bins_borrow_neighbors() {
    // a gap in the support leaves equal-width bins empty
    let mut x: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
    x.extend((0..50).map(|i| 3.0 + i as f64 / 50.0));
    let c = ale_curve(&|r: &[f64]| 2.0 * r[0], &x, 1, 0, "x", 25, Binning::EqualWidth).unwrap();
    assert!(c.merged_bins > 0);
    assert!(c.bin_edges.windows(2).all(|w| w[1] > w[0]));
    let m = mean(&x);
    for (e, h) in c.bin_edges.iter().zip(&c.h_tilde) {
        assert!((h - 2.0 * (e - m)).abs() < 1e-9);
    }
}

#[test]
fn too_few_distinct_values() {
    let x: Vec<f64> = (0..100).map(|i| (i % 5) as f64).collect();
    let err = ale_curve(&|r: &[f64]| r[0], &x, 1, 0, "n_kids", 25, Binning::EqualWidth).unwrap_err();
    assert!(err.to_string().contains("n_kids"));
}

#[test]
fn binary_analog() {
    let x: Vec<f64> = (0..10).flat_map(|i| [f64::from(u8::from(i < 3)), i as f64]).collect();
    let c = ale_binary(&|r: &[f64]| 2.0 * r[0] + r[1], &x, 2, 0, "member").unwrap();
    assert!((c.h_tilde[0] + 0.6).abs() < 1e-12);
    assert!((c.h_tilde[1] - 1.4).abs() < 1e-12);
    assert!((c.var_component - 0.21 * 4.0).abs() < 1e-12);
    assert!(mean(&c.values).abs() < 1e-12);
}

fn curve(name: &str, var: f64) -> AleCurve {
    AleCurve {
        covariate: name.into(),
        bin_edges: vec![0.0, 1.0],
        h_tilde: vec![0.0, 0.0],
        var_component: var,
        values: vec![],
        merged_bins: 0,
    }
}

#[test]
fn decomposition_shares() {
    let curves = vec![curve("a", 3.0), curve("b", 1.0), curve("s", 1.0)];
    let d = variance_decomposition(&curves, &["a", "b"], &["s"]).unwrap();
    assert!((d.omega_d - 0.8).abs() < 1e-12);
    assert!((d.omega_d + d.omega_s - 1.0).abs() < 1e-12);
    let flat = vec![curve("a", 2.0), curve("s", 0.0)];
    assert_eq!(variance_decomposition(&flat, &["a"], &["s"]).unwrap().omega_d, 1.0);
    let zero = vec![curve("a", 0.0), curve("s", 0.0)];
    assert!(variance_decomposition(&zero, &["a"], &["s"]).is_err());
    assert!(variance_decomposition(&curves, &["a", "q"], &["s"]).is_err());
}

#[test]
fn schemes() {
    assert_eq!(AleScheme::Full.demand().len(), 4);
    assert_eq!(AleScheme::from_name("wealth_only").unwrap().demand().len(), 1);
    assert!(AleScheme::from_name("other").is_err());
}

#[test]
fn psi_surface_fits_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (3000, 3);
    let x = normals(&mut rng, n * p);
    let psi = column(&x, p, 0);
    let params = RegressionParams {
        n_trees: 100,
        min_leaf: 5,
        seed: 3,
        ..Default::default()
    };
    let s = fit_psi_surface(&psi, &x, p, &params).unwrap();
    assert!(s.oob_r2 > 0.9, "{}", s.oob_r2);
    let again = fit_psi_surface(&psi, &x, p, &params).unwrap();
    assert_eq!(s.forest.oob, again.forest.oob);
    let s = fit_psi_surface(&vec![2.5; n], &x, p, &params).unwrap();
    assert!(s.forest.predict(&x).iter().all(|v| (v - 2.5).abs() < 1e-12));
}

#[test]
fn additive_noisy_scores_decompose() {
    // demand part 2*x0 (variance 4), supply part x1 (variance 1)
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, p) = (6000, 4);
    let x = normals(&mut rng, n * p);
    let psi: Vec<f64> = (0..n)
        .map(|i| 2.0 * x[i * p] + x[i * p + 1] + 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let params = RegressionParams {
        n_trees: 200,
        seed: 1,
        ..Default::default()
    };
    let s = fit_psi_surface(&psi, &x, p, &params).unwrap();
    let f = |r: &[f64]| s.predict_row(r);
    let curves: Vec<AleCurve> = (0..p)
        .map(|k| ale_curve(&f, &x, p, k, &format!("x{k}"), 25, Binning::EqualWidth).unwrap())
        .collect();
    let d = variance_decomposition(&curves, &["x0", "x2"], &["x1", "x3"]).unwrap();
    assert!((d.omega_d - 0.8).abs() < 0.05, "{}", d.omega_d);
    let slope = ols_slope(&column(&x, p, 0), &curves[0].values);
    assert!((slope - 2.0).abs() < 0.2, "{slope}");
    let r = correlation(&curves[0].values, &curves[1].values);
    assert!(r.abs() < 0.1);
    let alpha: Vec<f64> = (0..n).map(|i| 2.0 * x[i * p] + x[i * p + 1]).collect();
    let m = mean(&alpha);
    let resid: Vec<f64> = (0..n)
        .map(|i| alpha[i] - m - curves.iter().map(|c| c.values[i]).sum::<f64>())
        .collect();
    assert!(pop_variance(&resid) / pop_variance(&alpha) < 0.1);
}

#[test]
fn curve_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ale.csv");
    let mut c = curve("wealth", 0.0);
    c.h_tilde = vec![-0.5, 0.5];
    write_curves(&path, &[c]).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text, "covariate,bin_edge,h_tilde\nwealth,0,-0.5\nwealth,1,0.5\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn centered_curve_has_zero_mean(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normals(&mut rng, 400);
        let f = move |r: &[f64]| a * r[0] * r[0] + b * (r[0] * r[1]).tanh();
        for binning in [Binning::EqualWidth, Binning::Quantile] {
            let c = ale_curve(&f, &x, 2, 0, "x", 25, binning).unwrap();
            prop_assert!(mean(&c.values).abs() < 1e-8);
            prop_assert!(c.bin_edges.windows(2).all(|w| w[1] > w[0]));
        }
    }
}

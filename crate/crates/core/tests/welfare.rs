use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stimkit::panel::{EstablishmentDay, PeriodConfig};
use stimkit::simulate::{gen_population, SimConfig};
use stimkit::welfare::{
    consumer_gain, estimate_demand, mvpf, producer_surplus_delta, DemandFit, WelfareAccount,
};

fn pre_day(d: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 7, 4).unwrap() + Duration::days(d)
}

fn est_day(k: usize, d: i64, price: f64, q: f64) -> EstablishmentDay {
    EstablishmentDay {
        establishment_id: format!("e{k:03}"),
        date: pre_day(d),
        n_orders: q,
        avg_price: price,
    }
}

/// Twenty prices per day whose two lowest and two highest values tie, so the
/// 5th/95th percentile clamp leaves every price unchanged.
fn tied_prices(day: i64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..20).map(|k| 20.0 + 3.0 * k as f64 + day as f64).collect();
    p[0] = p[1];
    p[19] = p[18];
    p
}

fn fit(b1: f64) -> DemandFit {
    DemandFit {
        beta0: 0.0,
        beta1: b1,
        n_obs: 0,
        winsor_bounds: vec![],
    }
}

#[test]
fn exact_log_linear_data() {
    let mut days = Vec::new();
    for d in 0..5 {
        for (k, p) in tied_prices(d).into_iter().enumerate() {
            days.push(est_day(k, d, p, (5.0 - 1.5 * p.ln()).exp()));
        }
    }
    let f = estimate_demand(&days, &PeriodConfig::default()).unwrap();
    assert!((f.beta0 - 5.0).abs() < 1e-8);
    assert!((f.beta1 - 1.5).abs() < 1e-8);
    assert_eq!(f.n_obs, 100);
    assert_eq!(f.winsor_bounds.len(), 5);
    assert!((f.kappa() - 1.0 / 1.5).abs() < 1e-12);
}

fn noisy(seed: u64, n_est: usize, n_days: i64) -> Vec<EstablishmentDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n_est).map(|_| 50.0 * (0.4 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    let mut days = Vec::new();
    for d in 0..n_days {
        for (k, b) in base.iter().enumerate() {
            let p = b * (0.05 * rng.sample::<f64, _>(StandardNormal)).exp();
            let lnq = 8.0 - 1.5 * p.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal);
            days.push(est_day(k, d, p, lnq.exp()));
        }
    }
    days
}

#[test]
fn noisy_elasticity_recovered() {
    for seed in 0..3 {
        let cfg = SimConfig {
            n_consumers: 100,
            n_establishments: 2000,
            seed,
            ..Default::default()
        };
        let pop = gen_population(&cfg).unwrap();
        let f = estimate_demand(&pop.establishment_days, &cfg.period).unwrap();
        assert!((f.beta1 - 1.5).abs() < 0.1, "seed {seed}: {}", f.beta1);
    }
}

#[test]
fn matches_closed_form_ols() {
    let days = noisy(7, 60, 3);
    let f = estimate_demand(&days, &PeriodConfig::default()).unwrap();
    // recompute with the winsorized prices by hand
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for d in &days {
        let b = f.winsor_bounds.iter().find(|w| w.date == d.date).unwrap();
        xs.push(d.avg_price.max(b.lower).min(b.upper).ln());
        ys.push(d.n_orders.ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((f.beta1 + cov / var).abs() < 1e-10);
    assert!((f.beta0 - (my + f.beta1 * mx)).abs() < 1e-10);
}

#[test]
fn demand_input_errors() {
    let period = PeriodConfig::default();
    let few: Vec<EstablishmentDay> = (0..29).map(|k| est_day(k, 0, 10.0 + k as f64, 5.0)).collect();
    assert!(estimate_demand(&few, &period).is_err());
    let mut zero = noisy(1, 40, 1);
    zero[3].n_orders = 0.0;
    assert!(estimate_demand(&zero, &period).is_err());
    // quantities rising with price
    let up: Vec<EstablishmentDay> = (0..40)
        .map(|k| est_day(k, 0, 10.0 + k as f64, 10.0 + 2.0 * k as f64))
        .collect();
    let err = estimate_demand(&up, &period).unwrap_err();
    assert!(err.to_string().contains("upward-sloping demand"));
    // treat-window days are ignored
    let mut late = noisy(2, 40, 1);
    late.iter_mut().for_each(|d| d.date = NaiveDate::from_ymd_opt(2022, 7, 25).unwrap());
    assert!(estimate_demand(&late, &period).is_err());
}

#[test]
fn inelastic_demand_fits_but_has_no_markup() {
    let mut days = Vec::new();
    for d in 0..3 {
        for (k, p) in tied_prices(d).into_iter().enumerate() {
            days.push(est_day(k, d, p, (4.0 - 0.8 * p.ln()).exp()));
        }
    }
    let f = estimate_demand(&days, &PeriodConfig::default()).unwrap();
    assert!((f.beta1 - 0.8).abs() < 1e-8);
    assert!(producer_surplus_delta(&f, &[1.0]).is_err());
}

#[test]
fn producer_surplus_cases() {
    let (d, total) = producer_surplus_delta(&fit(2.0), &[10.0, 5.0]).unwrap();
    assert_eq!(d, vec![5.0, 2.5]);
    assert_eq!(total, 7.5);
    let (_, total) = producer_surplus_delta(&fit(2.0), &[0.0; 4]).unwrap();
    assert_eq!(total, 0.0);
}

#[test]
fn consumer_gain_rule() {
    assert_eq!(consumer_gain(&[0.5, 2.0], &[30.0, 15.0], 0.0), 0.0);
    assert!(consumer_gain(&[0.5], &[30.0], 0.0).is_sign_positive());
    assert_eq!(consumer_gain(&[-0.5, 0.0, 1.0], &[30.0, 15.0, 99.0], 0.0), 45.0);
}

#[test]
fn mvpf_arithmetic() {
    assert!((mvpf(2.0, 2.88, 1.0).unwrap() - 4.88).abs() < 1e-12);
    assert_eq!(mvpf(0.0, 0.0, 3.0).unwrap(), 0.0);
    assert!(mvpf(1.0, 1.0, 0.0).is_err());
    let a = WelfareAccount::new(&fit(1.5), 2.0, 2.88, 1.0).unwrap();
    assert!((a.mvpf - 4.88).abs() < 1e-12);
    assert!((a.kappa - 1.0 / 1.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn mvpf_is_homogeneous(c in 0.0f64..1e4, p in -1e4f64..1e4, g in 1e-3f64..1e4, s in 1e-3f64..1e3) {
        let a = mvpf(c, p, g).unwrap();
        let b = mvpf(s * c, s * p, s * g).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn surplus_is_linear(b1 in 1.01f64..5.0, a in -10.0f64..10.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau: Vec<f64> = (0..12).map(|_| rng.random_range(-50.0..50.0)).collect();
        let scaled: Vec<f64> = tau.iter().map(|t| a * t).collect();
        let (d1, t1) = producer_surplus_delta(&fit(b1), &tau).unwrap();
        let (d2, t2) = producer_surplus_delta(&fit(b1), &scaled).unwrap();
        prop_assert!((t2 - a * t1).abs() < 1e-9 * (1.0 + t1.abs() * a.abs()));
        prop_assert!((t1 - tau.iter().sum::<f64>() / b1).abs() < 1e-9 * (1.0 + t1.abs()));
        for (x, y) in d1.iter().zip(&d2) {
            prop_assert!((y - a * x).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn slope_ignores_price_units(c in 0.01f64..100.0, seed in 0u64..50) {
        let days = noisy(seed, 40, 2);
        let scaled: Vec<EstablishmentDay> = days
            .iter()
            .map(|d| EstablishmentDay { avg_price: d.avg_price * c, ..d.clone() })
            .collect();
        let period = PeriodConfig::default();
        let a = estimate_demand(&days, &period).unwrap();
        let b = estimate_demand(&scaled, &period).unwrap();
        prop_assert!((a.beta1 - b.beta1).abs() < 1e-8);
        prop_assert!((b.beta0 - a.beta0 - a.beta1 * c.ln()).abs() < 1e-8);
    }
}

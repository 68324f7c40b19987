use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use stimkit::did::{
    avg_daily_subsidy, bunching_histogram, claim_day_share, coupon_mpc, daily_did,
    decompose_margins, estimate_twfe, pretrend_test, substitution_tests, DayType,
};
use stimkit::panel::{
    build_daily_panel, Category, CategoryFilter, DailyPanel, OrderEvent, Outcome, PeriodConfig,
    PeriodTag,
};
use stimkit::simulate::{
    gen_orders, gen_population, Behavior, BehaviorMix, EffectSpec, Population, SimConfig, SimOrders,
};

fn day(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, m, d).unwrap()
}

/// Balanced panel with the given per-cell outcome values (consumer-major).
fn raw_panel(treat: Vec<bool>, tags: Vec<PeriodTag>, oop: Vec<f64>) -> DailyPanel {
    let n = oop.len();
    let start = day(7, 1);
    DailyPanel {
        consumer_ids: (0..treat.len()).map(|i| format!("c{i:04}")).collect(),
        treat,
        dates: (0..tags.len()).map(|d| start + Duration::days(d as i64)).collect(),
        tags,
        oop: oop.clone(),
        total: oop.clone(),
        unsub: oop,
        n_orders: vec![1.0; n],
        n_sku: vec![1.0; n],
        n_utensils: vec![1.0; n],
        excluded_orders: 0,
    }
}

fn simulate(cfg: &SimConfig) -> (Population, SimOrders) {
    let pop = gen_population(cfg).unwrap();
    let sim = gen_orders(&pop, cfg);
    (pop, sim)
}

fn restaurant_panel(cfg: &SimConfig, pop: &Population, sim: &SimOrders, post: bool) -> DailyPanel {
    build_daily_panel(&sim.orders, &pop.consumers, &cfg.period, CategoryFilter::Restaurant, post)
        .unwrap()
}

fn four_cell(panel: &DailyPanel, w: &[f64]) -> f64 {
    let mut sums = [[0.0; 2]; 2];
    let mut wts = [[0.0; 2]; 2];
    let n_d = panel.n_dates();
    for c in 0..panel.n_consumers() {
        for (p, tag) in [PeriodTag::Pre, PeriodTag::Treat].iter().enumerate() {
            let days: Vec<usize> = (0..n_d).filter(|&d| panel.tags[d] == *tag).collect();
            let m: f64 = days.iter().map(|&d| panel.oop[panel.cell(c, d)]).sum::<f64>() / days.len() as f64;
            let g = usize::from(panel.treat[c]);
            sums[g][p] += w[c] * m;
            wts[g][p] += w[c];
        }
    }
    let m = |g: usize, p: usize| sums[g][p] / wts[g][p];
    (m(1, 1) - m(1, 0)) - (m(0, 1) - m(0, 0))
}

#[test]
fn two_consumers_four_days() {
    let tags = vec![PeriodTag::Pre, PeriodTag::Pre, PeriodTag::Treat, PeriodTag::Treat];
    let oop = vec![1.0, 2.0, 8.0, 9.0, 1.0, 2.0, 3.0, 4.0];
    let p = raw_panel(vec![true, false], tags, oop);
    let r = estimate_twfe(&p, Outcome::Oop, None).unwrap();
    assert!((r.att - 5.0).abs() < 1e-10, "{}", r.att);
}

#[test]
fn null_effect_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n_c = 40;
    let tags: Vec<PeriodTag> = (0..10).map(|d| if d < 4 { PeriodTag::Pre } else { PeriodTag::Treat }).collect();
    let day_fx: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut oop = Vec::new();
    for c in 0..n_c {
        for d in 0..10 {
            oop.push(c as f64 + day_fx[d]);
        }
    }
    let p = raw_panel((0..n_c).map(|c| c % 2 == 0).collect(), tags, oop);
    let r = estimate_twfe(&p, Outcome::Oop, None).unwrap();
    assert!(r.att.abs() < 1e-10);
}

#[test]
fn missing_group_is_an_error() {
    let tags = vec![PeriodTag::Pre, PeriodTag::Treat];
    let p = raw_panel(vec![true, true, true], tags, vec![1.0; 6]);
    let err = estimate_twfe(&p, Outcome::Oop, None).unwrap_err().to_string();
    assert!(err.contains("control"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn twfe_equals_four_cell_difference(
        seed in any::<u64>(),
        n_c in 4usize..30,
        n_pre in 1usize..5,
        n_post in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_d = n_pre + n_post;
        let tags: Vec<PeriodTag> = (0..n_d).map(|d| if d < n_pre { PeriodTag::Pre } else { PeriodTag::Treat }).collect();
        let mut treat: Vec<bool> = (0..n_c).map(|_| rng.random_bool(0.5)).collect();
        treat[0] = true;
        treat[1] = false;
        let oop: Vec<f64> = (0..n_c * n_d).map(|_| rng.random_range(-50.0..50.0)).collect();
        let w: Vec<f64> = (0..n_c).map(|_| f64::from(rng.random_range(1..4u32))).collect();
        let p = raw_panel(treat, tags, oop);
        let r = estimate_twfe(&p, Outcome::Oop, Some(&w)).unwrap();
        let expected = four_cell(&p, &w);
        prop_assert!((r.att - expected).abs() <= 1e-10 * (1.0 + expected.abs()), "{} vs {}", r.att, expected);
    }
}

#[test]
fn unbalanced_panel_converges_to_least_squares() {
    // Drop cells so the panel is unbalanced and compare against dummy-variable
    // least squares solved directly.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n_c = 12;
    let n_d = 6;
    let tags: Vec<PeriodTag> = (0..n_d).map(|d| if d < 3 { PeriodTag::Pre } else { PeriodTag::Treat }).collect();
    let treat: Vec<bool> = (0..n_c).map(|c| c < 5).collect();
    let mut oop = Vec::new();
    let mut orders = Vec::new();
    for c in 0..n_c {
        for d in 0..n_d {
            oop.push(rng.random_range(0.0..20.0));
            orders.push(if (c + d) % 4 == 0 { 0.0 } else { 1.0 });
        }
    }
    let mut p = raw_panel(treat.clone(), tags.clone(), oop.clone());
    p.n_orders = orders.clone();
    let r = &decompose_margins(&p, None).unwrap()[0];

    // dummy regression: D, consumer dummies, date dummies (first dropped)
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let k = 1 + n_c + (n_d - 1);
    for c in 0..n_c {
        for d in 0..n_d {
            let i = c * n_d + d;
            if orders[i] == 0.0 {
                continue;
            }
            let mut row = vec![0.0; k];
            row[0] = f64::from(u8::from(treat[c] && d >= 3));
            row[1 + c] = 1.0;
            if d > 0 {
                row[n_c + d] = 1.0;
            }
            rows.extend(row);
            y.push(oop[i]);
        }
    }
    let (a, b) = stimkit::linalg::normal_equations(&rows, k, &y, None);
    let beta = stimkit::linalg::solve_spd(&a, &b).unwrap();
    assert!((r.att - beta[0]).abs() < 1e-9, "{} vs {}", r.att, beta[0]);
    assert_eq!(r.n_obs, y.len());
}

fn constant_effect_cfg(seed: u64, alpha: f64) -> SimConfig {
    SimConfig {
        seed,
        effect: EffectSpec::constant(alpha),
        behavior_mix: BehaviorMix {
            rational_buncher: 0.5,
            mental_accounting: 0.5,
            non_redeemer: 0.0,
        },
        ..SimConfig::default()
    }
}

#[test]
fn recovers_planted_att_and_cluster_se_dominates() {
    for seed in [1, 2] {
        let cfg = constant_effect_cfg(seed, 1.8);
        let (pop, sim) = simulate(&cfg);
        let panel = restaurant_panel(&cfg, &pop, &sim, false);
        let r = estimate_twfe(&panel, Outcome::Oop, None).unwrap();
        assert!((r.att - 1.8).abs() <= 2.0 * r.se_cluster, "seed {seed}: {} ± {}", r.att, r.se_cluster);
        assert!(r.se_cluster >= r.se_hc1, "{} < {}", r.se_cluster, r.se_hc1);
        assert_eq!(r.n_obs, panel.n_cells());
    }
}

#[test]
fn pretrend_identical_trajectories() {
    let n_c = 20;
    let n_d = 10;
    let tags: Vec<PeriodTag> = (0..n_d).map(|d| if d < 7 { PeriodTag::Pre } else { PeriodTag::Treat }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let traj: Vec<f64> = (0..n_d).map(|_| rng.random_range(0.0..10.0)).collect();
    let mut oop = Vec::new();
    for c in 0..n_c {
        let level = rng.random_range(0.0..5.0);
        // tiny idiosyncratic noise keeps the covariance nonsingular
        oop.extend(traj.iter().map(|t| t + level + 1e-6 * rng.random_range(-1.0..1.0) + c as f64 * 0.0));
    }
    let p = raw_panel((0..n_c).map(|c| c % 2 == 0).collect(), tags, oop);
    let r = pretrend_test(&p, Outcome::Oop, None).unwrap();
    assert_eq!(r.df1, 6);
    assert!(r.coefficients.iter().all(|c| c.coefficient.abs() < 1e-5));
    assert!(r.p_value > 0.01);
}

#[test]
fn pretrend_needs_five_pre_days() {
    let tags = vec![PeriodTag::Pre, PeriodTag::Pre, PeriodTag::Treat];
    let p = raw_panel(vec![true, false, true, false], tags, vec![1.0; 12]);
    assert!(pretrend_test(&p, Outcome::Oop, None).is_err());
}

#[test]
fn pretrend_detects_divergence_and_accepts_simulator() {
    let cfg = SimConfig {
        n_consumers: 4_000,
        n_establishments: 300,
        seed: 12,
        ..SimConfig::default()
    };
    let (pop, sim) = simulate(&cfg);
    let mut panel = restaurant_panel(&cfg, &pop, &sim, false);
    let r = pretrend_test(&panel, Outcome::Oop, None).unwrap();
    assert!(r.p_value > 0.01, "p = {}", r.p_value);
    for c in 0..panel.n_consumers() {
        if !panel.treat[c] {
            continue;
        }
        for d in 0..panel.n_dates() {
            let i = panel.cell(c, d);
            panel.oop[i] += d as f64;
        }
    }
    let r = pretrend_test(&panel, Outcome::Oop, None).unwrap();
    assert!(r.p_value < 0.01, "p = {}", r.p_value);
}

/// Orders with Poisson frequency and fixed-size baskets; treated consumers get
/// `extra` per order or `rate_mult` times as many orders in the program window.
fn synthetic_orders(extra: f64, rate_mult: f64) -> (Vec<OrderEvent>, Vec<stimkit::panel::ConsumerRecord>, PeriodConfig) {
    let period = PeriodConfig::default();
    let cfg = SimConfig {
        n_consumers: 2_000,
        n_establishments: 20,
        ..SimConfig::default()
    };
    let pop = gen_population(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut orders = Vec::new();
    for c in &pop.consumers {
        for date in period.dates(false) {
            let program = c.treat && period.tag(date) == Some(PeriodTag::Treat);
            let rate = if program { 0.5 * rate_mult } else { 0.5 };
            let k = Poisson::new(rate).unwrap().sample(&mut rng) as usize;
            for j in 0..k {
                let gross = 40.0 + rng.random_range(-5.0..5.0) + if program { extra } else { 0.0 };
                orders.push(OrderEvent {
                    order_id: format!("{}-{date}-{j}", c.consumer_id),
                    consumer_id: c.consumer_id.clone(),
                    establishment_id: "r00001".into(),
                    date,
                    gross_amount: gross,
                    coupon_discount: 0.0,
                    n_sku: 2,
                    n_utensil_sets: 1,
                    category: Category::Restaurant,
                });
            }
        }
    }
    (orders, pop.consumers, period)
}

fn decompose(extra: f64, mult: f64) -> Vec<(String, f64, f64)> {
    let (orders, consumers, period) = synthetic_orders(extra, mult);
    let p = build_daily_panel(&orders, &consumers, &period, CategoryFilter::Restaurant, false).unwrap();
    decompose_margins(&p, None)
        .unwrap()
        .into_iter()
        .map(|r| (r.outcome, r.att, r.se_cluster))
        .collect()
}

#[test]
fn margin_decomposition() {
    for (name, att, se) in decompose(0.0, 1.0) {
        assert!(att.abs() < 4.0 * se + 1e-9, "{name}: {att} ± {se}");
    }
    let r = decompose(10.0, 1.0);
    assert_eq!(r[0].0, "oop_per_order");
    assert!((r[0].1 - 10.0).abs() < 4.0 * r[0].2, "{:?}", r[0]);
    assert!(r[1].1.abs() < 4.0 * r[1].2, "{:?}", r[1]);
    let r = decompose(0.0, 2.0);
    assert!(r[1].1 > 0.4, "{:?}", r[1]);
    assert!(r[0].1.abs() < 4.0 * r[0].2, "{:?}", r[0]);
    // identical baskets: per-order outcomes do not move at all
    assert!(r[2].1.abs() < 1e-9);
}

#[test]
fn substitution_channels() {
    let mut cfg = SimConfig {
        n_consumers: 6_000,
        n_establishments: 300,
        seed: 31,
        grocery_rate: 0.2,
        ..SimConfig::default()
    };
    for shift in [0.0, -2.0] {
        cfg.grocery_shift = shift;
        let (pop, sim) = simulate(&cfg);
        let rest = restaurant_panel(&cfg, &pop, &sim, true);
        let groc = build_daily_panel(&sim.orders, &pop.consumers, &cfg.period, CategoryFilter::Grocery, false).unwrap();
        let s = substitution_tests(&rest, &groc, None).unwrap();
        assert!((s.grocery.att - shift).abs() < 3.0 * s.grocery.se_cluster, "{:?}", s.grocery);
        assert!(s.utensils.att.abs() < 3.0 * s.utensils.se_cluster, "{:?}", s.utensils);
        let it = s.intertemporal.unwrap();
        assert!(it.att.abs() < 3.0 * it.se_cluster, "{it:?}");
    }
    // without a post window the intertemporal test is skipped
    let (pop, sim) = simulate(&cfg);
    let rest = restaurant_panel(&cfg, &pop, &sim, false);
    let groc = build_daily_panel(&sim.orders, &pop.consumers, &cfg.period, CategoryFilter::Grocery, false).unwrap();
    assert!(substitution_tests(&rest, &groc, None).unwrap().intertemporal.is_none());
}

#[test]
fn claim_day_estimator_and_share_identity() {
    let cfg = SimConfig {
        n_consumers: 8_000,
        claim_prob: 0.2,
        ..constant_effect_cfg(5, 4.0)
    };
    let (pop, sim) = simulate(&cfg);
    let panel = restaurant_panel(&cfg, &pop, &sim, false);
    let daily = daily_did(&panel, &sim.claims, Outcome::Oop, None).unwrap();
    assert!((daily.att - 20.0).abs() < 3.0 * daily.se_cluster, "{daily:?}");
    let period = estimate_twfe(&panel, Outcome::Oop, None).unwrap();
    let share = claim_day_share(&panel, &sim.claims);
    assert!((share - 0.2).abs() < 0.01);
    let implied = daily.att * share;
    assert!(
        (period.att - implied).abs() < 3.0 * period.se_cluster,
        "{} vs {implied}",
        period.att
    );
    let subsidy = avg_daily_subsidy(&panel, None);
    assert!(subsidy > 0.0);
    assert!(coupon_mpc(period.att, subsidy).unwrap() > 1.0);
}

#[test]
fn claims_without_redemption_do_nothing() {
    let cfg = SimConfig {
        n_consumers: 4_000,
        behavior_mix: BehaviorMix::only(Behavior::NonRedeemer),
        ..constant_effect_cfg(6, 4.0)
    };
    let (pop, sim) = simulate(&cfg);
    let panel = restaurant_panel(&cfg, &pop, &sim, false);
    let daily = daily_did(&panel, &sim.claims, Outcome::Oop, None).unwrap();
    assert!(daily.att.abs() < 3.0 * daily.se_cluster, "{daily:?}");
    assert!(daily_did(&panel, &[], Outcome::Oop, None).is_err());
}

#[test]
fn coupon_mpc_arithmetic() {
    assert!((coupon_mpc(1.801, 0.757).unwrap() - 3.38).abs() < 0.005);
    assert_eq!(coupon_mpc(0.0, 0.3).unwrap(), 1.0);
    let table = coupon_mpc(7_701.772, 2_856.284).unwrap();
    assert_eq!(format!("{table:.2}"), "3.70");
    assert!(coupon_mpc(1.0, 0.0).is_err());
}

#[test]
fn bunching_spikes() {
    let cfg = SimConfig {
        n_consumers: 3_000,
        n_establishments: 200,
        behavior_mix: BehaviorMix::only(Behavior::RationalBuncher),
        ..constant_effect_cfg(8, 3.0)
    };
    let (_, sim) = simulate(&cfg);
    let restaurant: Vec<OrderEvent> = sim.orders.into_iter().filter(|o| o.category == Category::Restaurant).collect();
    let rep = bunching_histogram(&restaurant, &cfg.period, &[50.0, 100.0], 1.0, 200.0).unwrap();
    for s in &rep.spikes {
        match s.day_type {
            DayType::Redemption => assert!(s.ratio.unwrap() >= 3.0, "{s:?}"),
            DayType::Pre if s.threshold == 50.0 => {
                let r = s.ratio.unwrap();
                assert!((0.7..1.3).contains(&r), "{s:?}");
            }
            _ => {}
        }
    }
    let total: f64 = rep.bins.iter().map(|b| b.density[2]).sum();
    assert!(total > 0.9 && total <= 1.0 + 1e-9);
}

#[test]
fn uniform_amounts_show_no_spike() {
    let period = PeriodConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let orders: Vec<OrderEvent> = (0..40_000)
        .map(|i| OrderEvent {
            order_id: format!("o{i}"),
            consumer_id: format!("c{}", i % 500),
            establishment_id: "r1".into(),
            date: period.pre_start + Duration::days(i % 14),
            gross_amount: rng.random_range(20.0..200.0),
            coupon_discount: 0.0,
            n_sku: 1,
            n_utensil_sets: 1,
            category: Category::Restaurant,
        })
        .collect();
    let rep = bunching_histogram(&orders, &period, &[50.0, 100.0], 5.0, 200.0).unwrap();
    for s in rep.spikes.iter().filter(|s| s.day_type == DayType::Pre) {
        // each window expects ~1,111 orders; 4 binomial sds of the ratio ≈ 0.17
        let r = s.ratio.unwrap();
        assert!((r - 1.0).abs() < 0.17, "{s:?}");
    }
    assert!(bunching_histogram(&orders, &period, &[50.0], 0.0, 200.0).is_err());
}

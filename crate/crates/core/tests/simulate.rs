use std::collections::HashMap;

use stimkit::panel::{
    build_daily_panel, ingest_dataset, CategoryFilter, DatasetPaths, Outcome, PeriodTag,
};
use stimkit::simulate::{
    gen_orders, gen_population, write_simulation, Behavior, BehaviorMix, EffectSpec, SimConfig,
};
use stimkit::stats;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        n_consumers: 1_500,
        n_establishments: 300,
        seed,
        ..SimConfig::default()
    }
}

/// Per-consumer change in mean daily restaurant out-of-pocket spending.
fn first_differences(cfg: &SimConfig) -> (Vec<f64>, Vec<bool>, f64) {
    let pop = gen_population(cfg).unwrap();
    let sim = gen_orders(&pop, cfg);
    let panel = build_daily_panel(
        &sim.orders,
        &pop.consumers,
        &cfg.period,
        CategoryFilter::Restaurant,
        false,
    )
    .unwrap();
    let y = panel.outcome(Outcome::Oop);
    let pre = panel.consumer_period_means(y, PeriodTag::Pre);
    let post = panel.consumer_period_means(y, PeriodTag::Treat);
    let dy = post.iter().zip(&pre).map(|(a, b)| a - b).collect();
    let treat: Vec<bool> = pop.consumers.iter().map(|c| c.treat).collect();
    let att = pop.truth.mean_alpha(&treat);
    (dy, treat, att)
}

fn group_diff(v: &[f64], treat: &[bool]) -> (f64, f64) {
    let t: Vec<f64> = v.iter().zip(treat).filter(|p| *p.1).map(|p| *p.0).collect();
    let c: Vec<f64> = v.iter().zip(treat).filter(|p| !*p.1).map(|p| *p.0).collect();
    let se = (stats::variance(&t) / t.len() as f64 + stats::variance(&c) / c.len() as f64).sqrt();
    (stats::mean(&t) - stats::mean(&c), se)
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = SimConfig {
        n_consumers: 300,
        n_establishments: 50,
        ..SimConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let pop = gen_population(&cfg).unwrap();
        let sim = gen_orders(&pop, &cfg);
        write_simulation(dir, &pop, &sim).unwrap();
    }
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = tempfile::tempdir().unwrap();
    single.install(|| {
        let pop = gen_population(&cfg).unwrap();
        let sim = gen_orders(&pop, &cfg);
        write_simulation(c.path(), &pop, &sim).unwrap();
    });
    for name in [
        "consumers.csv",
        "orders.csv",
        "establishments.csv",
        "claims.csv",
        "establishment_days.csv",
        "truth.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        assert_eq!(x, std::fs::read(c.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn written_files_ingest_back_to_the_same_records() {
    let cfg = small(3);
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    let dir = tempfile::tempdir().unwrap();
    write_simulation(dir.path(), &pop, &sim).unwrap();
    let data = ingest_dataset(&DatasetPaths::in_dir(dir.path()), &cfg.period).unwrap();
    assert_eq!(data.consumers, pop.consumers);
    assert_eq!(data.orders, sim.orders);
    assert_eq!(data.establishments, pop.establishments);
    assert_eq!(data.claims, sim.claims);
    assert_eq!(data.establishment_days, pop.establishment_days);
}

#[test]
fn sorting_correlation_matches_rho() {
    for rho in [0.0, 0.5] {
        let cfg = SimConfig {
            n_consumers: 10_000,
            n_establishments: 200,
            sorting_rho: rho,
            ..SimConfig::default()
        };
        let pop = gen_population(&cfg).unwrap();
        let w: Vec<f64> = pop.consumers.iter().map(|c| c.wealth).collect();
        let s: Vec<f64> = pop.consumers.iter().map(|c| c.nonsme_share_3km).collect();
        let r = stats::correlation(&w, &s);
        assert!((r - rho).abs() <= 0.05, "rho {rho}: sample corr {r}");
    }
}

#[test]
fn minimal_population() {
    let cfg = SimConfig {
        n_consumers: 10,
        n_establishments: 5,
        ..SimConfig::default()
    };
    let pop = gen_population(&cfg).unwrap();
    assert_eq!(pop.consumers.len(), 10);
    assert_eq!(pop.truth.alpha_true.len(), 10);
    assert!(pop.truth.alpha_true.iter().all(|a| a.is_finite()));
    assert!(pop.truth.cost_true.iter().all(|c| c.is_finite() && *c >= 0.0));
    for c in &pop.consumers {
        assert!((0.0..=1.0).contains(&c.nonsme_share_3km));
    }
    let sim = gen_orders(&pop, &cfg);
    assert!(sim.orders.iter().all(|o| o.validate().is_ok()));
}

#[test]
fn infeasible_rho_is_rejected() {
    let cfg = SimConfig {
        sorting_rho: -0.999,
        ..small(1)
    };
    assert!(gen_population(&cfg).is_err());
}

#[test]
fn non_redeemers_receive_no_discounts() {
    let cfg = SimConfig {
        behavior_mix: BehaviorMix::only(Behavior::NonRedeemer),
        ..small(5)
    };
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    assert!(sim.orders.iter().all(|o| o.coupon_discount == 0.0));
    assert!(sim.claims.iter().any(|c| c.claimed));
    assert!(pop.truth.alpha_true.iter().all(|a| *a == 0.0));
}

#[test]
fn orders_respect_thresholds_and_ordering() {
    let cfg = small(9);
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    let mut discounted = 0;
    for o in &sim.orders {
        o.validate().unwrap();
        if o.coupon_discount > 0.0 {
            discounted += 1;
        }
    }
    assert!(discounted > 0);
    for w in sim.orders.windows(2) {
        assert!((&w[0].consumer_id, w[0].date) <= (&w[1].consumer_id, w[1].date));
    }
    let treated = pop.consumers.iter().filter(|c| c.treat).count();
    assert_eq!(sim.claims.len(), treated * cfg.period.treat_days());
}

#[test]
fn constant_effect_is_realized_in_spending() {
    // one seed at n = 10,000 has se near 0.22, so four are pooled
    let mut diffs = Vec::new();
    let mut var = 0.0;
    for seed in 1..=4 {
        let cfg = SimConfig {
            seed,
            effect: EffectSpec::constant(3.0),
            behavior_mix: BehaviorMix::only(Behavior::MentalAccounting),
            ..SimConfig::default()
        };
        let (dy, treat, att) = first_differences(&cfg);
        assert!((att - 3.0).abs() < 1e-12);
        let (diff, se) = group_diff(&dy, &treat);
        diffs.push(diff);
        var += se * se;
    }
    let diff = stats::mean(&diffs);
    let se = var.sqrt() / 4.0;
    assert!((diff - 3.0).abs() <= 0.3, "diffs {diffs:?} (pooled se {se})");
}

#[test]
fn realized_effect_tracks_truth_across_seeds() {
    // Frequent small orders keep the noise low enough to check each seed
    // tightly, including effects that require dropping regular orders.
    for (seed, alpha) in [(1, 2.0), (2, -1.0), (3, 8.0)] {
        let cfg = SimConfig {
            n_consumers: 6_000,
            n_establishments: 300,
            seed,
            order_rate: 1.5,
            order_amount: 10.0,
            amount_sigma: 0.2,
            effect: EffectSpec {
                intercept: alpha,
                noise_sd: 0.5,
                ..EffectSpec::default()
            },
            ..SimConfig::default()
        };
        let (dy, treat, att) = first_differences(&cfg);
        let (diff, se) = group_diff(&dy, &treat);
        assert!((diff - att).abs() <= 3.0 * se, "seed {seed}: {diff} vs {att} (se {se})");
    }
}

#[test]
fn bunchers_pile_up_above_the_threshold() {
    let cfg = SimConfig {
        effect: EffectSpec::constant(3.0),
        behavior_mix: BehaviorMix::only(Behavior::RationalBuncher),
        ..small(11)
    };
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    let redemption_days: std::collections::HashSet<_> = sim
        .orders
        .iter()
        .filter(|o| o.coupon_discount > 0.0)
        .map(|o| (o.consumer_id.clone(), o.date))
        .collect();
    let mut above = 0;
    let mut below = 0;
    for o in &sim.orders {
        if !redemption_days.contains(&(o.consumer_id.clone(), o.date)) {
            continue;
        }
        if (50.0..55.0).contains(&o.gross_amount) {
            above += 1;
        } else if (45.0..50.0).contains(&o.gross_amount) {
            below += 1;
        }
    }
    assert!(above as f64 >= 3.0 * below as f64, "above {above}, below {below}");
}

#[test]
fn pre_period_levels_balance_without_selection() {
    let cfg = SimConfig {
        selection_strength: 0.0,
        ..small(13)
    };
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    let panel = build_daily_panel(
        &sim.orders,
        &pop.consumers,
        &cfg.period,
        CategoryFilter::Restaurant,
        false,
    )
    .unwrap();
    let pre = panel.consumer_period_means(panel.outcome(Outcome::Oop), PeriodTag::Pre);
    let treat: Vec<bool> = pop.consumers.iter().map(|c| c.treat).collect();
    let (diff, se) = group_diff(&pre, &treat);
    assert!(diff.abs() < 3.0 * se, "{diff} vs se {se}");
}

#[test]
fn pre_period_trends_are_parallel_under_selection() {
    let cfg = SimConfig {
        selection_strength: 1.5,
        ..small(17)
    };
    let pop = gen_population(&cfg).unwrap();
    let sim = gen_orders(&pop, &cfg);
    let mut by_consumer: HashMap<&str, (f64, f64)> = HashMap::new();
    let split = cfg.period.pre_start + chrono::Duration::days(7);
    for o in &sim.orders {
        if cfg.period.tag(o.date) != Some(PeriodTag::Pre) || o.category.as_str() != "restaurant" {
            continue;
        }
        let e = by_consumer.entry(&o.consumer_id).or_default();
        if o.date < split {
            e.0 += o.oop();
        } else {
            e.1 += o.oop();
        }
    }
    let trend: Vec<f64> = pop
        .consumers
        .iter()
        .map(|c| {
            let (a, b) = by_consumer.get(c.consumer_id.as_str()).copied().unwrap_or_default();
            (b - a) / 7.0
        })
        .collect();
    let treat: Vec<bool> = pop.consumers.iter().map(|c| c.treat).collect();
    let (diff, se) = group_diff(&trend, &treat);
    assert!(diff.abs() < 3.0 * se, "{diff} vs se {se}");
}

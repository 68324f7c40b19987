use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;

use super::population::{coupon_moments, DayPlan};
use super::{round_cents, stream_rng, Behavior, Population, SimConfig};
use crate::panel::{
    Category, Claim, OrderEvent, PeriodTag, LARGE_DISCOUNT, LARGE_THRESHOLD, SMALL_DISCOUNT,
    SMALL_THRESHOLD,
};

const N_GROCERS: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct SimOrders {
    /// Sorted by consumer, then date.
    pub orders: Vec<OrderEvent>,
    /// One row per treated consumer and program day.
    pub claims: Vec<Claim>,
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0) as u64
}

fn lognormal_amount(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    round_cents(mean * (sigma * z - 0.5 * sigma * sigma).exp()).max(0.01)
}

/// Gross amount and discount of a coupon order before any extra spending.
fn coupon_order(rng: &mut ChaCha8Rng, behavior: Behavior, cfg: &SimConfig) -> (f64, f64) {
    match behavior {
        Behavior::RationalBuncher => {
            if rng.random_bool(cfg.buncher_large_share) {
                (LARGE_THRESHOLD + rng.random_range(0.0..6.0), LARGE_DISCOUNT)
            } else {
                (SMALL_THRESHOLD + rng.random_range(0.0..5.0), SMALL_DISCOUNT)
            }
        }
        _ => {
            let over = Exp::new(1.0 / cfg.mental_overshoot)
                .expect("positive rate")
                .sample(rng);
            let gross = SMALL_THRESHOLD + over;
            if gross >= LARGE_THRESHOLD {
                (gross, LARGE_DISCOUNT)
            } else {
                (gross, SMALL_DISCOUNT)
            }
        }
    }
}

struct Sink<'a> {
    consumer_id: &'a str,
    seq: usize,
    orders: Vec<OrderEvent>,
}

impl Sink<'_> {
    fn push(
        &mut self,
        rng: &mut ChaCha8Rng,
        establishment_id: String,
        date: chrono::NaiveDate,
        gross: f64,
        discount: f64,
        category: Category,
    ) {
        self.seq += 1;
        let n_sku = 1 + poisson(rng, gross / 30.0) as u32;
        let n_utensil_sets = 1 + u32::from(rng.random_bool(0.3));
        self.orders.push(OrderEvent {
            order_id: format!("{}-{:05}", self.consumer_id, self.seq),
            consumer_id: self.consumer_id.to_string(),
            establishment_id,
            date,
            gross_amount: gross,
            coupon_discount: discount,
            n_sku,
            n_utensil_sets,
            category,
        });
    }
}

fn consumer_orders(pop: &Population, cfg: &SimConfig, i: usize) -> (Vec<OrderEvent>, Vec<Claim>) {
    let rec = &pop.consumers[i];
    let lat = &pop.latent[i];
    let mut rng = stream_rng(cfg.seed, 5, i as u64);
    let mut sink = Sink {
        consumer_id: &rec.consumer_id,
        seq: 0,
        orders: Vec::new(),
    };
    let mut claims = Vec::new();
    let (coupon_oop, _) = coupon_moments(lat.behavior, cfg);
    let delta = lat.planned_alpha / cfg.claim_prob;
    let shop = |rng: &mut ChaCha8Rng| {
        let j = lat.favorites[rng.random_range(0..lat.favorites.len())];
        pop.establishments[j].establishment_id.clone()
    };

    let sd = cfg.appetite_sd;
    let phi = cfg.appetite_persistence;
    let mut appetite: f64 = sd * rng.sample::<f64, _>(StandardNormal);
    for (t, date) in cfg.period.dates(true).into_iter().enumerate() {
        if t > 0 {
            let z: f64 = rng.sample(StandardNormal);
            appetite = phi * appetite + (1.0 - phi * phi).sqrt() * sd * z;
        }
        // mean-one multiplier, so expected orders are unchanged
        let appetite_mult = (appetite - 0.5 * sd * sd).exp();
        let in_program = rec.treat && cfg.period.tag(date) == Some(PeriodTag::Treat);
        let factor = pop.day_factors[t];
        let mut skip_regular = false;
        if in_program {
            let claimed = rng.random_bool(cfg.claim_prob);
            claims.push(Claim {
                consumer_id: rec.consumer_id.clone(),
                date,
                claimed,
            });
            if claimed && lat.behavior != Behavior::NonRedeemer {
                let baseline = lat.order_rate * factor * lat.amount_mean;
                let plan = DayPlan::new(delta, coupon_oop, baseline);
                if rng.random::<f64>() < plan.redeem {
                    // The coupon is chosen for the planned basket; extra items
                    // do not change which coupon applies.
                    let (gross, disc) = coupon_order(&mut rng, lat.behavior, cfg);
                    let gross = round_cents(gross + plan.extra);
                    let id = shop(&mut rng);
                    sink.push(&mut rng, id, date, gross, disc, Category::Restaurant);
                }
                skip_regular = rng.random::<f64>() < plan.drop;
            }
        }
        for _ in 0..poisson(&mut rng, lat.order_rate * factor * appetite_mult) {
            let gross = lognormal_amount(&mut rng, lat.amount_mean, cfg.amount_sigma);
            let id = shop(&mut rng);
            if !skip_regular {
                sink.push(&mut rng, id, date, gross, 0.0, Category::Restaurant);
            }
        }
        let mut grocery_rate = cfg.grocery_rate;
        if in_program {
            grocery_rate = (grocery_rate + cfg.grocery_shift / cfg.grocery_amount).max(0.0);
        }
        for _ in 0..poisson(&mut rng, grocery_rate) {
            let gross = lognormal_amount(&mut rng, cfg.grocery_amount, 0.4);
            let id = format!("g{:03}", rng.random_range(1..=N_GROCERS));
            sink.push(&mut rng, id, date, gross, 0.0, Category::Grocery);
        }
    }
    (sink.orders, claims)
}

/// Generates every order and claim of the study period.
pub fn gen_orders(pop: &Population, cfg: &SimConfig) -> SimOrders {
    let parts: Vec<(Vec<OrderEvent>, Vec<Claim>)> = (0..pop.consumers.len())
        .into_par_iter()
        .map(|i| consumer_orders(pop, cfg, i))
        .collect();
    let mut out = SimOrders::default();
    for (o, c) in parts {
        out.orders.extend(o);
        out.claims.extend(c);
    }
    out
}

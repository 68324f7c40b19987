use std::io::Write;
use std::path::Path;

use chrono::Datelike;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use super::{round_cents, stream_rng, Behavior, SimConfig};
use crate::error::{Error, Result};
use crate::panel::{
    classify_sme, wealth_index, ConsumerRecord, Covariate, EstablishmentDay, EstablishmentRecord,
    PeriodTag,
};
use crate::stats;

const AGE_BINS: [(f64, f64); 7] = [
    (20.0, 0.10),
    (25.0, 0.22),
    (30.0, 0.25),
    (35.0, 0.19),
    (40.0, 0.11),
    (47.5, 0.09),
    (57.5, 0.04),
];
/// Phone prices are reported as the midpoint of a price band.
const PHONE_BANDS: [(f64, f64); 7] = [
    (1000.0, 500.0),
    (2000.0, 1500.0),
    (3000.0, 2500.0),
    (4000.0, 3500.0),
    (6000.0, 5000.0),
    (8000.0, 7000.0),
    (f64::INFINITY, 10000.0),
];
const N_FAVORITES: usize = 5;
const FAVORITE_POOL: usize = 20;
const RADIUS_KM: f64 = 3.0;
const BASE_PRICE: f64 = 50.0;
const BASE_DAILY_ORDERS: f64 = 30.0;

/// Generator-side state for one consumer that is not part of the observed data.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerLatent {
    pub behavior: Behavior,
    /// Expected restaurant orders per day before day-level shocks.
    pub order_rate: f64,
    /// Mean gross restaurant order amount.
    pub amount_mean: f64,
    /// Indices into the establishment list.
    pub favorites: Vec<usize>,
    /// Planted period-level effect before feasibility adjustments.
    pub planned_alpha: f64,
}

/// Ground truth: per-consumer effects are defined for every consumer as the
/// effect they would experience if treated.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTruth {
    pub consumer_ids: Vec<String>,
    /// Expected change in average daily out-of-pocket restaurant spending over
    /// the program window.
    pub alpha_true: Vec<f64>,
    /// Expected coupon subsidy over the program window.
    pub cost_true: Vec<f64>,
    pub establishment_ids: Vec<String>,
    pub beta1_true: Vec<f64>,
}

impl OracleTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("consumer_id,alpha_true,cost_true\n");
        for ((id, a), c) in self.consumer_ids.iter().zip(&self.alpha_true).zip(&self.cost_true) {
            out.push_str(&format!("{id},{a},{c}\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Mean `alpha_true` over the consumers selected by `mask`.
    pub fn mean_alpha(&self, mask: &[bool]) -> f64 {
        let v: Vec<f64> = self
            .alpha_true
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(a, _)| *a)
            .collect();
        stats::mean(&v)
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    pub consumers: Vec<ConsumerRecord>,
    pub establishments: Vec<EstablishmentRecord>,
    /// Pre-program daily establishment sales.
    pub establishment_days: Vec<EstablishmentDay>,
    pub latent: Vec<ConsumerLatent>,
    /// Common demand multiplier for every date of the study period.
    pub day_factors: Vec<f64>,
    pub truth: OracleTruth,
}

/// Expected out-of-pocket amount and expected discount of one coupon order.
pub(crate) fn coupon_moments(behavior: Behavior, cfg: &SimConfig) -> (f64, f64) {
    match behavior {
        Behavior::RationalBuncher => {
            let s = cfg.buncher_large_share;
            let gross = (1.0 - s) * 52.5 + s * 103.0;
            let disc = (1.0 - s) * 15.0 + s * 30.0;
            (gross - disc, disc)
        }
        Behavior::MentalAccounting => {
            let m = cfg.mental_overshoot;
            let disc = 15.0 + 15.0 * (-50.0 / m).exp();
            (50.0 + m - disc, disc)
        }
        Behavior::NonRedeemer => (0.0, 0.0),
    }
}

/// How a consumer realizes a claim-day spending target `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DayPlan {
    /// Probability of placing a coupon order.
    pub redeem: f64,
    /// Gross amount added to the coupon order.
    pub extra: f64,
    /// Probability of skipping all regular orders that day.
    pub drop: f64,
}

impl DayPlan {
    pub fn new(delta: f64, coupon_oop: f64, baseline_oop: f64) -> Self {
        if delta >= 0.0 {
            if delta <= coupon_oop {
                DayPlan {
                    redeem: delta / coupon_oop,
                    extra: 0.0,
                    drop: 0.0,
                }
            } else {
                DayPlan {
                    redeem: 1.0,
                    extra: delta - coupon_oop,
                    drop: 0.0,
                }
            }
        } else {
            let drop = if baseline_oop > 0.0 {
                ((coupon_oop - delta) / baseline_oop).min(1.0)
            } else {
                0.0
            };
            DayPlan {
                redeem: 1.0,
                extra: 0.0,
                drop,
            }
        }
    }

    pub fn expected_effect(&self, coupon_oop: f64, baseline_oop: f64) -> f64 {
        self.redeem * (coupon_oop + self.extra) - self.drop * baseline_oop
    }
}

struct Draws {
    record: ConsumerRecord,
    behavior: Behavior,
    order_rate: f64,
    amount_mean: f64,
    share_noise: f64,
    alpha_noise: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_consumer(cfg: &SimConfig, i: usize) -> Draws {
    let mut rng = stream_rng(cfg.seed, 0, i as u64);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let omega = normal();
    let phone_raw = (7.6 + 0.6 * omega + 0.5 * normal()).exp();
    let housing = round_cents((10.8 + 0.35 * omega + 0.2 * normal()).exp());
    let spend_noise = normal();
    let share_noise = normal();
    let alpha_noise = normal();
    let amount_noise = normal();
    let u_age: f64 = rng.random();
    let mut acc = 0.0;
    let mut age = AGE_BINS[AGE_BINS.len() - 1].0;
    for (mid, p) in AGE_BINS {
        acc += p;
        if u_age < acc {
            age = mid;
            break;
        }
    }
    let phone = PHONE_BANDS
        .iter()
        .find(|(upper, _)| phone_raw < *upper)
        .map(|b| b.1)
        .unwrap_or(PHONE_BANDS[PHONE_BANDS.len() - 1].1);
    let female = rng.random_bool(0.63);
    let member = rng.random_bool(logistic(-0.45 + 0.4 * omega));
    let habit: f64 = Gamma::new(3.0, 1.0 / 3.0).expect("valid gamma").sample(&mut rng);
    let order_rate = cfg.order_rate * habit * (1.0 + 0.3 * (f64::from(u8::from(member)) - 0.4));
    let amount_mean =
        cfg.order_amount * (0.15 * omega + 0.25 * amount_noise - 0.5 * (0.15f64.powi(2) + 0.0625)).exp();
    let n_orders_6m = Poisson::new(182.0 * order_rate)
        .map(|d| d.sample(&mut rng))
        .unwrap_or(0.0);
    let spend_per_order = round_cents(amount_mean * (0.1 * spend_noise).exp());
    let behavior = cfg.behavior_mix.draw(rng.random());
    let x = rng.random::<f64>() * cfg.city_km;
    let y = rng.random::<f64>() * cfg.city_km;
    let q = cfg.quota_share.clamp(1e-6, 1.0 - 1e-6);
    let index = (f64::from(u8::from(member)) - 0.4) + 0.5 * (order_rate / cfg.order_rate).ln();
    let p_treat = logistic((q / (1.0 - q)).ln() + cfg.selection_strength * index);
    let treat = rng.random_bool(p_treat);
    Draws {
        record: ConsumerRecord {
            consumer_id: format!("c{:06}", i + 1),
            age,
            female,
            member,
            phone_price: phone,
            housing_price: housing,
            wealth: 0.0,
            n_orders_6m,
            spend_per_order_6m: spend_per_order,
            n_restaurants_3km: 0.0,
            nonsme_share_3km: 0.0,
            grid_x: round_cents(x),
            grid_y: round_cents(y),
            treat,
        },
        behavior,
        order_rate,
        amount_mean,
        share_noise,
        alpha_noise,
    }
}

const PRICE_OUTLIER_RATE: f64 = 0.03;

struct Shop {
    price: f64,
    shock: f64,
}

fn gen_establishments(cfg: &SimConfig) -> (Vec<EstablishmentRecord>, Vec<Shop>) {
    let b1 = cfg.demand_elasticity;
    let b0 = BASE_DAILY_ORDERS.ln() + b1 * BASE_PRICE.ln();
    let mut records = Vec::with_capacity(cfg.n_establishments);
    let mut shops = Vec::with_capacity(cfg.n_establishments);
    for j in 0..cfg.n_establishments {
        let mut rng = stream_rng(cfg.seed, 1, j as u64);
        let x = rng.random::<f64>() * cfg.city_km;
        let y = rng.random::<f64>() * cfg.city_km;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let price = round_cents((BASE_PRICE.ln() + 0.3 * z1).exp());
        let shock = 0.5 * z2;
        let daily = (b0 - b1 * price.ln() + shock).exp();
        records.push(EstablishmentRecord {
            establishment_id: format!("r{:05}", j + 1),
            avg_monthly_sales_6m: round_cents(30.0 * price * daily),
            avg_order_price_6m: price,
            sme_flag: false,
            grid_x: round_cents(x),
            grid_y: round_cents(y),
        });
        shops.push(Shop { price, shock });
    }
    let flags = classify_sme(&records, 50.0);
    for (r, f) in records.iter_mut().zip(flags) {
        r.sme_flag = f;
    }
    (records, shops)
}

fn gen_establishment_days(
    cfg: &SimConfig,
    records: &[EstablishmentRecord],
    shops: &[Shop],
) -> Vec<EstablishmentDay> {
    let b1 = cfg.demand_elasticity;
    let b0 = BASE_DAILY_ORDERS.ln() + b1 * BASE_PRICE.ln();
    let pre: Vec<_> = cfg
        .period
        .dates(false)
        .into_iter()
        .filter(|d| cfg.period.tag(*d) == Some(PeriodTag::Pre))
        .collect();
    let mut out = Vec::with_capacity(records.len() * pre.len());
    for (j, (r, s)) in records.iter().zip(shops).enumerate() {
        let mut rng = stream_rng(cfg.seed, 2, j as u64);
        for &date in &pre {
            let zp: f64 = rng.sample(StandardNormal);
            let zq: f64 = rng.sample(StandardNormal);
            let zo: f64 = rng.sample(StandardNormal);
            let zc: f64 = rng.sample(StandardNormal);
            let posted = s.price * (0.15 * zp).exp();
            let n_orders = (b0 - b1 * posted.ln() + s.shock + 0.3 * zq).exp();
            // the recorded average price drifts with basket composition and
            // is occasionally far off
            let mut log_gap = 0.05 * zo;
            if rng.random::<f64>() < PRICE_OUTLIER_RATE {
                log_gap += 0.7 * zc;
            }
            out.push(EstablishmentDay {
                establishment_id: r.establishment_id.clone(),
                date,
                n_orders,
                avg_price: round_cents(posted * log_gap.exp()),
            });
        }
    }
    out
}

fn gen_day_factors(cfg: &SimConfig) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, 3, 0);
    cfg.period
        .dates(true)
        .into_iter()
        .map(|d| {
            let weekend = d.weekday().number_from_monday() >= 6;
            let z: f64 = rng.sample(StandardNormal);
            (if weekend { 0.08 } else { 0.0 } + 0.05 * z).exp()
        })
        .collect()
}

/// Nearest shops of each type around a location and the count within 3 km.
fn neighborhood(
    x: f64,
    y: f64,
    establishments: &[EstablishmentRecord],
) -> (usize, Vec<usize>, Vec<usize>) {
    let mut sme = Vec::new();
    let mut large = Vec::new();
    let mut within = 0;
    for (j, e) in establishments.iter().enumerate() {
        let d2 = (e.grid_x - x).powi(2) + (e.grid_y - y).powi(2);
        if d2 <= RADIUS_KM * RADIUS_KM {
            within += 1;
        }
        if e.sme_flag {
            sme.push((d2, j));
        } else {
            large.push((d2, j));
        }
    }
    let nearest = |mut v: Vec<(f64, usize)>| -> Vec<usize> {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if v.len() > FAVORITE_POOL {
            v.select_nth_unstable_by(FAVORITE_POOL, cmp);
            v.truncate(FAVORITE_POOL);
        }
        v.sort_by(cmp);
        v.into_iter().take(FAVORITE_POOL).map(|p| p.1).collect()
    };
    (within, nearest(sme), nearest(large))
}

/// Generates consumers, establishments and the oracle truth.
pub fn gen_population(cfg: &SimConfig) -> Result<Population> {
    cfg.validate()?;
    let (establishments, shops) = gen_establishments(cfg);
    let establishment_days = gen_establishment_days(cfg, &establishments, &shops);
    let day_factors = gen_day_factors(cfg);

    let draws: Vec<Draws> = (0..cfg.n_consumers)
        .into_par_iter()
        .map(|i| draw_consumer(cfg, i))
        .collect();
    let phone: Vec<f64> = draws.iter().map(|d| d.record.phone_price).collect();
    let housing: Vec<f64> = draws.iter().map(|d| d.record.housing_price).collect();
    let wealth = wealth_index(&phone, &housing)?;
    let rho = cfg.sorting_rho;
    let resid = (1.0 - rho * rho).sqrt();

    let built: Vec<(ConsumerRecord, ConsumerLatent)> = draws
        .into_par_iter()
        .zip(wealth.values.par_iter())
        .enumerate()
        .map(|(i, (d, &w))| {
            let mut rec = d.record;
            rec.wealth = w;
            rec.nonsme_share_3km = (0.52 + 0.12 * (rho * w + resid * d.share_noise)).clamp(0.0, 1.0);
            let (within, sme, large) = neighborhood(rec.grid_x, rec.grid_y, &establishments);
            rec.n_restaurants_3km = within as f64;
            let mut rng = stream_rng(cfg.seed, 4, i as u64);
            let favorites = (0..N_FAVORITES)
                .map(|_| {
                    let want_large = rng.random_bool(rec.nonsme_share_3km);
                    let pool = match (want_large, large.is_empty(), sme.is_empty()) {
                        (true, false, _) | (false, false, true) => &large,
                        _ => &sme,
                    };
                    pool[rng.random_range(0..pool.len())]
                })
                .collect();
            let latent = ConsumerLatent {
                behavior: d.behavior,
                order_rate: d.order_rate,
                amount_mean: d.amount_mean,
                favorites,
                planned_alpha: d.alpha_noise,
            };
            (rec, latent)
        })
        .collect();
    let (consumers, mut latent): (Vec<ConsumerRecord>, Vec<ConsumerLatent>) =
        built.into_iter().unzip();

    let covs = cfg.effect.covariates();
    let moments: Vec<(Covariate, f64, f64)> = covs
        .iter()
        .map(|&c| {
            let v: Vec<f64> = consumers.iter().map(|r| r.covariate(c)).collect();
            let sd = stats::sd(&v);
            (c, stats::mean(&v), if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    for (rec, lat) in consumers.iter().zip(latent.iter_mut()) {
        let z = |c: Covariate| {
            let (_, m, s) = moments.iter().find(|t| t.0 == c).expect("covariate moments");
            (rec.covariate(c) - m) / s
        };
        lat.planned_alpha = cfg.effect.eval(z) + cfg.effect.noise_sd * lat.planned_alpha;
    }

    let truth = oracle_truth(cfg, &consumers, &latent, &establishments, &day_factors);
    Ok(Population {
        consumers,
        establishments,
        establishment_days,
        latent,
        day_factors,
        truth,
    })
}

/// Treat-window day indices into `period.dates(true)`.
pub(crate) fn treat_day_indices(cfg: &SimConfig) -> Vec<usize> {
    cfg.period
        .dates(true)
        .iter()
        .enumerate()
        .filter(|(_, d)| cfg.period.tag(**d) == Some(PeriodTag::Treat))
        .map(|(i, _)| i)
        .collect()
}

fn oracle_truth(
    cfg: &SimConfig,
    consumers: &[ConsumerRecord],
    latent: &[ConsumerLatent],
    establishments: &[EstablishmentRecord],
    day_factors: &[f64],
) -> OracleTruth {
    let days = treat_day_indices(cfg);
    let n_days = days.len() as f64;
    let mut alpha_true = Vec::with_capacity(consumers.len());
    let mut cost_true = Vec::with_capacity(consumers.len());
    for lat in latent {
        if lat.behavior == Behavior::NonRedeemer {
            alpha_true.push(0.0);
            cost_true.push(0.0);
            continue;
        }
        let (coupon_oop, disc) = coupon_moments(lat.behavior, cfg);
        let delta = lat.planned_alpha / cfg.claim_prob;
        let mut effect = 0.0;
        let mut cost = 0.0;
        for &t in &days {
            let baseline = lat.order_rate * day_factors[t] * lat.amount_mean;
            let plan = DayPlan::new(delta, coupon_oop, baseline);
            effect += plan.expected_effect(coupon_oop, baseline);
            cost += plan.redeem * disc;
        }
        alpha_true.push(cfg.claim_prob * effect / n_days);
        cost_true.push(cfg.claim_prob * cost);
    }
    OracleTruth {
        consumer_ids: consumers.iter().map(|c| c.consumer_id.clone()).collect(),
        alpha_true,
        cost_true,
        establishment_ids: establishments
            .iter()
            .map(|e| e.establishment_id.clone())
            .collect(),
        beta1_true: vec![cfg.demand_elasticity; establishments.len()],
    }
}

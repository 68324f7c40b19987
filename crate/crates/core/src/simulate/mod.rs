//! Seeded synthetic coupon-program generator.
//!
//! Every consumer carries a planted conditional effect on daily
//! out-of-pocket restaurant spending. The effect is realized as extra spending
//! on claim days, so that the expected change in average daily spending over
//! the program window equals `alpha_true`.

mod hte;
mod orders;
mod population;

pub use hte::{gen_hte_sample, HteConfig, HteSample};
pub use orders::{gen_orders, SimOrders};
pub use population::{gen_population, ConsumerLatent, OracleTruth, Population};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::panel::{Covariate, PeriodConfig};

/// Coupon response type of a consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Places coupon orders just above the ¥50 or ¥100 thresholds.
    RationalBuncher,
    /// Treats the coupon as found money; coupon orders overshoot the threshold.
    MentalAccounting,
    /// Claims coupons but never uses them.
    NonRedeemer,
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::RationalBuncher => "rational_buncher",
            Behavior::MentalAccounting => "mental_accounting",
            Behavior::NonRedeemer => "non_redeemer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorMix {
    pub rational_buncher: f64,
    pub mental_accounting: f64,
    pub non_redeemer: f64,
}

impl BehaviorMix {
    pub fn only(b: Behavior) -> Self {
        let mut m = BehaviorMix {
            rational_buncher: 0.0,
            mental_accounting: 0.0,
            non_redeemer: 0.0,
        };
        match b {
            Behavior::RationalBuncher => m.rational_buncher = 1.0,
            Behavior::MentalAccounting => m.mental_accounting = 1.0,
            Behavior::NonRedeemer => m.non_redeemer = 1.0,
        }
        m
    }

    fn draw(&self, u: f64) -> Behavior {
        if u < self.rational_buncher {
            Behavior::RationalBuncher
        } else if u < self.rational_buncher + self.mental_accounting {
            Behavior::MentalAccounting
        } else {
            Behavior::NonRedeemer
        }
    }
}

/// Planted period-level effect α(X), evaluated on covariates standardized
/// over the generated population.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EffectSpec {
    pub intercept: f64,
    /// `coef * z`.
    pub linear: Vec<(Covariate, f64)>,
    /// `jump * 1{z > threshold}`.
    pub steps: Vec<(Covariate, f64, f64)>,
    /// `coef * z^2`.
    pub quadratic: Vec<(Covariate, f64)>,
    /// Standard deviation of unexplained per-consumer effect variation.
    pub noise_sd: f64,
}

impl EffectSpec {
    pub fn constant(alpha: f64) -> Self {
        EffectSpec {
            intercept: alpha,
            ..Default::default()
        }
    }

    fn covariates(&self) -> Vec<Covariate> {
        let mut v: Vec<Covariate> = self
            .linear
            .iter()
            .map(|t| t.0)
            .chain(self.steps.iter().map(|t| t.0))
            .chain(self.quadratic.iter().map(|t| t.0))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Systematic part of the effect; `z` returns the standardized value of a
    /// covariate.
    pub fn eval(&self, z: impl Fn(Covariate) -> f64) -> f64 {
        let mut a = self.intercept;
        for &(c, b) in &self.linear {
            a += b * z(c);
        }
        for &(c, t, jump) in &self.steps {
            if z(c) > t {
                a += jump;
            }
        }
        for &(c, b) in &self.quadratic {
            let v = z(c);
            a += b * v * v;
        }
        a
    }

    fn from_kv(kv: &KvFile, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let terms = |k: &str, arity: usize| -> Result<Vec<(Covariate, Vec<f64>)>> {
            let name = key(k);
            let Some(v) = kv.get(&name) else {
                return Ok(Vec::new());
            };
            let mut out = Vec::new();
            for term in v.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let parts: Vec<&str> = term.split(':').map(str::trim).collect();
                if parts.len() != arity + 1 {
                    return Err(Error::Config(format!(
                        "key `{name}`: term `{term}` needs {} `:`-separated fields",
                        arity + 1
                    )));
                }
                let cov = Covariate::from_name(parts[0])?;
                let nums = parts[1..]
                    .iter()
                    .map(|p| {
                        p.parse::<f64>().map_err(|_| {
                            Error::Config(format!("key `{name}`: bad number `{p}`"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                out.push((cov, nums));
            }
            Ok(out)
        };
        Ok(EffectSpec {
            intercept: kv.parse_or(&key("intercept"), 0.0)?,
            linear: terms("linear", 1)?.into_iter().map(|(c, v)| (c, v[0])).collect(),
            steps: terms("step", 2)?
                .into_iter()
                .map(|(c, v)| (c, v[0], v[1]))
                .collect(),
            quadratic: terms("quadratic", 1)?
                .into_iter()
                .map(|(c, v)| (c, v[0]))
                .collect(),
            noise_sd: kv.parse_or(&key("noise_sd"), 0.0)?,
        })
    }

    fn write_kv(&self, kv: &mut KvFile, prefix: &str) {
        let join = |items: Vec<String>| items.join(",");
        kv.set(format!("{prefix}intercept"), self.intercept.to_string());
        kv.set(
            format!("{prefix}linear"),
            join(
                self.linear
                    .iter()
                    .map(|(c, b)| format!("{}:{b}", c.name()))
                    .collect(),
            ),
        );
        kv.set(
            format!("{prefix}step"),
            join(
                self.steps
                    .iter()
                    .map(|(c, t, j)| format!("{}:{t}:{j}", c.name()))
                    .collect(),
            ),
        );
        kv.set(
            format!("{prefix}quadratic"),
            join(
                self.quadratic
                    .iter()
                    .map(|(c, b)| format!("{}:{b}", c.name()))
                    .collect(),
            ),
        );
        kv.set(format!("{prefix}noise_sd"), self.noise_sd.to_string());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_consumers: usize,
    pub n_establishments: usize,
    pub seed: u64,
    pub period: PeriodConfig,
    pub effect: EffectSpec,
    pub behavior_mix: BehaviorMix,
    /// Target fraction of consumers who obtain coupons.
    pub quota_share: f64,
    /// Correlation between the wealth index and the local non-SME share.
    pub sorting_rho: f64,
    /// Probability that a treated consumer claims a bundle on a program day.
    pub claim_prob: f64,
    /// Strength of selection into treatment on membership and order habit.
    pub selection_strength: f64,
    /// Planted change in daily grocery spending of treated consumers.
    pub grocery_shift: f64,
    pub city_km: f64,
    /// Mean daily restaurant orders per consumer.
    pub order_rate: f64,
    /// Mean restaurant order amount.
    pub order_amount: f64,
    /// Log-scale dispersion of order amounts.
    pub amount_sigma: f64,
    /// Stationary log-scale sd of a consumer's day-to-day appetite shock.
    pub appetite_sd: f64,
    /// AR(1) persistence of the appetite shock.
    pub appetite_persistence: f64,
    pub grocery_rate: f64,
    pub grocery_amount: f64,
    /// Price elasticity of establishment demand.
    pub demand_elasticity: f64,
    /// Share of rational-buncher coupon orders aimed at the ¥100 threshold.
    pub buncher_large_share: f64,
    /// Mean overshoot above ¥50 for mental-accounting coupon orders.
    pub mental_overshoot: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_consumers: 10_000,
            n_establishments: 2_000,
            seed: 42,
            period: PeriodConfig::default(),
            effect: EffectSpec {
                intercept: 2.0,
                linear: vec![(Covariate::Wealth, 0.8), (Covariate::NonsmeShare3km, 0.4)],
                steps: vec![(Covariate::NOrders6m, 0.0, 1.5)],
                quadratic: Vec::new(),
                noise_sd: 0.5,
            },
            behavior_mix: BehaviorMix {
                rational_buncher: 0.45,
                mental_accounting: 0.35,
                non_redeemer: 0.2,
            },
            quota_share: 0.3,
            sorting_rho: 0.3,
            claim_prob: 0.2,
            selection_strength: 0.5,
            grocery_shift: 0.0,
            city_km: 30.0,
            order_rate: 0.33,
            order_amount: 45.0,
            amount_sigma: 0.45,
            appetite_sd: 0.25,
            appetite_persistence: 0.6,
            grocery_rate: 0.05,
            grocery_amount: 60.0,
            demand_elasticity: 1.5,
            buncher_large_share: 0.3,
            mental_overshoot: 30.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_consumers < 10 {
            return bad(format!("n_consumers must be at least 10, got {}", self.n_consumers));
        }
        if self.n_establishments < 2 {
            return bad(format!(
                "n_establishments must be at least 2, got {}",
                self.n_establishments
            ));
        }
        self.period.validate()?;
        let m = &self.behavior_mix;
        for (name, v) in [
            ("behavior_mix.rational_buncher", m.rational_buncher),
            ("behavior_mix.mental_accounting", m.mental_accounting),
            ("behavior_mix.non_redeemer", m.non_redeemer),
            ("quota_share", self.quota_share),
            ("buncher_large_share", self.buncher_large_share),
            ("appetite_persistence", self.appetite_persistence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let total = m.rational_buncher + m.mental_accounting + m.non_redeemer;
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("behavior_mix must sum to 1, got {total}"));
        }
        if !(self.sorting_rho.abs() <= 0.99) {
            return bad(format!(
                "sorting_rho {} is infeasible: |rho| must not exceed 0.99",
                self.sorting_rho
            ));
        }
        if !(self.claim_prob > 0.0 && self.claim_prob <= 1.0) {
            return bad(format!("claim_prob must lie in (0, 1], got {}", self.claim_prob));
        }
        for (name, v) in [
            ("city_km", self.city_km),
            ("order_rate", self.order_rate),
            ("order_amount", self.order_amount),
            ("grocery_amount", self.grocery_amount),
            ("demand_elasticity", self.demand_elasticity),
            ("mental_overshoot", self.mental_overshoot),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("amount_sigma", self.amount_sigma),
            ("appetite_sd", self.appetite_sd),
            ("grocery_rate", self.grocery_rate),
            ("effect.noise_sd", self.effect.noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("selection_strength", self.selection_strength),
            ("grocery_shift", self.grocery_shift),
            ("effect.intercept", self.effect.intercept),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Reads `simulate.*` keys (falling back to defaults) and the `period.*`
    /// dates if present.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let d = SimConfig::default();
        let p = |k: &str| format!("simulate.{k}");
        let period = if kv.get("period.pre_start").is_some() {
            PeriodConfig::from_kv(kv, "period.")?
        } else {
            d.period
        };
        let effect = if !kv.section("simulate.effect").is_empty() {
            EffectSpec::from_kv(kv, "simulate.effect.")?
        } else {
            d.effect.clone()
        };
        let c = SimConfig {
            n_consumers: kv.parse_or(&p("n_consumers"), d.n_consumers)?,
            n_establishments: kv.parse_or(&p("n_establishments"), d.n_establishments)?,
            seed: kv.parse_or("seed", d.seed)?,
            period,
            effect,
            behavior_mix: BehaviorMix {
                rational_buncher: kv
                    .parse_or(&p("behavior_mix.rational_buncher"), d.behavior_mix.rational_buncher)?,
                mental_accounting: kv.parse_or(
                    &p("behavior_mix.mental_accounting"),
                    d.behavior_mix.mental_accounting,
                )?,
                non_redeemer: kv
                    .parse_or(&p("behavior_mix.non_redeemer"), d.behavior_mix.non_redeemer)?,
            },
            quota_share: kv.parse_or(&p("quota_share"), d.quota_share)?,
            sorting_rho: kv.parse_or(&p("sorting_rho"), d.sorting_rho)?,
            claim_prob: kv.parse_or(&p("claim_prob"), d.claim_prob)?,
            selection_strength: kv.parse_or(&p("selection_strength"), d.selection_strength)?,
            grocery_shift: kv.parse_or(&p("grocery_shift"), d.grocery_shift)?,
            city_km: kv.parse_or(&p("city_km"), d.city_km)?,
            order_rate: kv.parse_or(&p("order_rate"), d.order_rate)?,
            order_amount: kv.parse_or(&p("order_amount"), d.order_amount)?,
            amount_sigma: kv.parse_or(&p("amount_sigma"), d.amount_sigma)?,
            appetite_sd: kv.parse_or(&p("appetite_sd"), d.appetite_sd)?,
            appetite_persistence: kv.parse_or(&p("appetite_persistence"), d.appetite_persistence)?,
            grocery_rate: kv.parse_or(&p("grocery_rate"), d.grocery_rate)?,
            grocery_amount: kv.parse_or(&p("grocery_amount"), d.grocery_amount)?,
            demand_elasticity: kv.parse_or(&p("demand_elasticity"), d.demand_elasticity)?,
            buncher_large_share: kv.parse_or(&p("buncher_large_share"), d.buncher_large_share)?,
            mental_overshoot: kv.parse_or(&p("mental_overshoot"), d.mental_overshoot)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, kv: &mut KvFile) {
        let mut set = |k: &str, v: String| kv.set(format!("simulate.{k}"), v);
        set("n_consumers", self.n_consumers.to_string());
        set("n_establishments", self.n_establishments.to_string());
        let m = &self.behavior_mix;
        set("behavior_mix.rational_buncher", m.rational_buncher.to_string());
        set("behavior_mix.mental_accounting", m.mental_accounting.to_string());
        set("behavior_mix.non_redeemer", m.non_redeemer.to_string());
        set("quota_share", self.quota_share.to_string());
        set("sorting_rho", self.sorting_rho.to_string());
        set("claim_prob", self.claim_prob.to_string());
        set("selection_strength", self.selection_strength.to_string());
        set("grocery_shift", self.grocery_shift.to_string());
        set("city_km", self.city_km.to_string());
        set("order_rate", self.order_rate.to_string());
        set("order_amount", self.order_amount.to_string());
        set("amount_sigma", self.amount_sigma.to_string());
        set("appetite_sd", self.appetite_sd.to_string());
        set("appetite_persistence", self.appetite_persistence.to_string());
        set("grocery_rate", self.grocery_rate.to_string());
        set("grocery_amount", self.grocery_amount.to_string());
        set("demand_elasticity", self.demand_elasticity.to_string());
        set("buncher_large_share", self.buncher_large_share.to_string());
        set("mental_overshoot", self.mental_overshoot.to_string());
        kv.set("seed", self.seed.to_string());
        self.effect.write_kv(kv, "simulate.effect.");
        self.period.write_kv(kv, "period.");
    }
}

/// Independent random stream for one (purpose, index) pair under a master seed.
pub(crate) fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 40) | index);
    rng
}

pub(crate) fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Writes the generated data set in the ingestion layout, plus `truth.csv`.
pub fn write_simulation(dir: &Path, pop: &Population, orders: &SimOrders) -> Result<()> {
    use crate::panel::{
        write_claims, write_consumers, write_establishment_days, write_establishments,
        write_orders,
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_consumers(&dir.join("consumers.csv"), &pop.consumers)?;
    write_orders(&dir.join("orders.csv"), &orders.orders)?;
    write_establishments(&dir.join("establishments.csv"), &pop.establishments)?;
    write_claims(&dir.join("claims.csv"), &orders.claims)?;
    write_establishment_days(&dir.join("establishment_days.csv"), &pop.establishment_days)?;
    pop.truth.write(&dir.join("truth.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_infeasible_rho_and_bad_mix() {
        let mut c = SimConfig::default();
        c.sorting_rho = 0.995;
        assert!(c.validate().unwrap_err().to_string().contains("sorting_rho"));
        let mut c = SimConfig::default();
        c.behavior_mix.non_redeemer = 0.5;
        assert!(c.validate().unwrap_err().to_string().contains("sum to 1"));
        let mut c = SimConfig::default();
        c.n_consumers = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = SimConfig::default();
        c.seed = 7;
        c.effect.quadratic.push((Covariate::Age, -0.1));
        let mut kv = KvFile::default();
        c.write_kv(&mut kv);
        let back = SimConfig::from_kv(&KvFile::parse(&kv.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn effect_spec_evaluates_terms() {
        let e = EffectSpec {
            intercept: 2.0,
            linear: vec![(Covariate::Wealth, 1.0)],
            steps: vec![(Covariate::Age, 0.0, 2.0)],
            quadratic: vec![(Covariate::Member, 0.5)],
            noise_sd: 0.0,
        };
        let z = |c: Covariate| match c {
            Covariate::Wealth => 0.5,
            Covariate::Age => 1.0,
            Covariate::Member => 2.0,
            _ => 0.0,
        };
        assert!((e.eval(z) - (2.0 + 0.5 + 2.0 + 2.0)).abs() < 1e-12);
    }
}

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::stream_rng;

/// First-difference sample with a planted effect surface:
/// `dy = alpha(x) * treat + baseline(x) + noise`.
#[derive(Debug, Clone, Copy)]
pub struct HteConfig {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub alpha: fn(&[f64]) -> f64,
    pub baseline: fn(&[f64]) -> f64,
    pub propensity: fn(&[f64]) -> f64,
    pub noise_sd: f64,
    /// Common correlation between covariates, which are standard normal.
    pub covariate_corr: f64,
}

impl Default for HteConfig {
    fn default() -> Self {
        HteConfig {
            n: 2_000,
            p: 5,
            seed: 1,
            alpha: |x| 2.0 + 2.0 * f64::from(u8::from(x[0] > 0.0)) + x[1],
            baseline: |x| x[2] + 0.5 * x[3],
            propensity: |_| 0.5,
            noise_sd: 1.0,
            covariate_corr: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HteSample {
    pub n: usize,
    pub p: usize,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub treat: Vec<bool>,
    pub dy: Vec<f64>,
    pub alpha_true: Vec<f64>,
    pub propensity_true: Vec<f64>,
}

impl HteSample {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

pub fn gen_hte_sample(cfg: &HteConfig) -> HteSample {
    let rho = cfg.covariate_corr.clamp(0.0, 0.99);
    let rows: Vec<(Vec<f64>, bool, f64, f64, f64)> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, 6, i as u64);
            let common: f64 = rng.sample(StandardNormal);
            let x: Vec<f64> = (0..cfg.p)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    rho.sqrt() * common + (1.0 - rho).sqrt() * z
                })
                .collect();
            let e = (cfg.propensity)(&x);
            let treat = rng.random::<f64>() < e;
            let a = (cfg.alpha)(&x);
            let noise: f64 = rng.sample(StandardNormal);
            let dy = (cfg.baseline)(&x) + if treat { a } else { 0.0 } + cfg.noise_sd * noise;
            (x, treat, dy, a, e)
        })
        .collect();
    let mut s = HteSample {
        n: cfg.n,
        p: cfg.p,
        x: Vec::with_capacity(cfg.n * cfg.p),
        treat: Vec::with_capacity(cfg.n),
        dy: Vec::with_capacity(cfg.n),
        alpha_true: Vec::with_capacity(cfg.n),
        propensity_true: Vec::with_capacity(cfg.n),
    };
    for (x, t, dy, a, e) in rows {
        s.x.extend(x);
        s.treat.push(t);
        s.dy.push(dy);
        s.alpha_true.push(a);
        s.propensity_true.push(e);
    }
    s
}

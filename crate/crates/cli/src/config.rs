//! Pipeline configuration read from a flat `key = value` file.

use std::path::{Path, PathBuf};

use stimkit::ale::{AleScheme, DEFAULT_BINS};
use stimkit::forest::{ForestParams, RegressionParams};
use stimkit::kv::KvFile;
use stimkit::panel::{Covariate, PeriodConfig};
use stimkit::simulate::SimConfig;
use stimkit::{Error, Result};

/// Where the input data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Generated by `simulate` into `<out>/data`.
    Simulate(SimConfig),
    /// An existing directory in the ingestion layout.
    Data(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source: Source,
    pub period: PeriodConfig,
    pub seed: u64,
    pub match_covariates: Vec<Covariate>,
    pub caliper: Option<f64>,
    pub forest: ForestParams,
    pub nuisance: RegressionParams,
    pub k_folds: usize,
    pub ale_scheme: AleScheme,
    pub ale_bins: usize,
    pub surface: RegressionParams,
    pub n_quantiles: usize,
    pub adjuster_threshold: f64,
    pub sme_percentile: f64,
    pub lambda_grid: Vec<f64>,
    pub tree_depth: usize,
    pub budget: Option<f64>,
    pub target: Option<f64>,
    /// Effective configuration text, recorded in the run manifest.
    pub text: String,
}

/// Configuration used when no file is given: simulator defaults.
pub const DEFAULT_CONFIG: &str = "simulate = true\nseed = 42\n";

fn parse_list<T>(kv: &KvFile, key: &str) -> Result<Option<Vec<T>>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let Some(v) = kv.get(key) else {
        return Ok(None);
    };
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
        })
        .collect::<Result<Vec<T>>>()
        .map(Some)
}

fn parse_bool(kv: &KvFile, key: &str) -> Result<bool> {
    match kv.get(key) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") => Ok(true),
        Some(v) => Err(Error::Config(format!("key `{key}`: expected true or false, got `{v}`"))),
    }
}

/// Seeds of the estimation stages, all derived from the master seed.
fn sub_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl PipelineConfig {
    /// Reads a config file. A run manifest is accepted too: its recorded
    /// configuration is used.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let text = if text.trim_start().starts_with('{') {
            crate::manifest::config_from_manifest(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            text
        };
        Self::from_text(&text, seed_override)
    }

    pub fn from_text(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        if let Some(s) = seed_override {
            kv.set("seed", s.to_string());
        }
        let simulate = parse_bool(&kv, "simulate")?;
        let data_dir = kv.get("data.dir").map(PathBuf::from);
        let seed_key = kv.get("seed").is_some();
        let source = match (simulate, data_dir) {
            (true, Some(_)) => {
                return Err(Error::Config(
                    "set either data.dir or simulate = true, not both".into(),
                ))
            }
            (false, None) => {
                return Err(Error::Config(
                    "no input: set data.dir or simulate = true".into(),
                ))
            }
            (true, None) => {
                if !seed_key {
                    return Err(Error::Config(
                        "simulation needs a seed: set `seed` or pass --seed".into(),
                    ));
                }
                Source::Simulate(SimConfig::from_kv(&kv)?)
            }
            (false, Some(dir)) => Source::Data(dir),
        };
        let seed: u64 = kv.parse_or("seed", 0)?;
        let period = match &source {
            Source::Simulate(c) => c.period,
            Source::Data(_) if kv.get("period.pre_start").is_some() => {
                PeriodConfig::from_kv(&kv, "period.")?
            }
            Source::Data(_) => PeriodConfig::default(),
        };
        period.validate()?;

        let match_covariates = match parse_list::<String>(&kv, "match.covariates")? {
            Some(names) => names
                .iter()
                .map(|n| Covariate::from_name(n))
                .collect::<Result<Vec<_>>>()?,
            None => Covariate::MATCHING.to_vec(),
        };
        let caliper = match kv.get("match.caliper") {
            None => None,
            Some(_) => Some(kv.parse_or("match.caliper", 0.0)?),
        };

        let fd = ForestParams::default();
        let forest = ForestParams {
            n_trees: kv.parse_or("forest.n_trees", fd.n_trees)?,
            min_leaf: kv.parse_or("forest.min_leaf", fd.min_leaf)?,
            subsample_rate: kv.parse_or("forest.subsample_rate", fd.subsample_rate)?,
            honesty_fraction: kv.parse_or("forest.honesty_fraction", fd.honesty_fraction)?,
            mtry: match kv.get("forest.mtry") {
                None => None,
                Some(_) => Some(kv.parse_or("forest.mtry", 0)?),
            },
            max_bins: kv.parse_or("forest.max_bins", fd.max_bins)?,
            seed: sub_seed(seed, 1),
        };
        forest.validate()?;
        let rd = RegressionParams::default();
        let nuisance = RegressionParams {
            n_trees: kv.parse_or("forest.nuisance_trees", rd.n_trees)?,
            min_leaf: kv.parse_or("forest.nuisance_min_leaf", rd.min_leaf)?,
            seed: sub_seed(seed, 2),
            ..rd.clone()
        };
        nuisance.validate()?;
        let k_folds = kv.parse_or("forest.k_folds", 5usize)?;
        if k_folds < 2 {
            return Err(Error::Config(format!("forest.k_folds must be at least 2, got {k_folds}")));
        }

        let ale_scheme = AleScheme::from_name(kv.get("ale.scheme").unwrap_or("full"))?;
        let ale_bins = kv.parse_or("ale.bins", DEFAULT_BINS)?;
        if ale_bins < 2 {
            return Err(Error::Config(format!("ale.bins must be at least 2, got {ale_bins}")));
        }
        let surface = RegressionParams {
            n_trees: kv.parse_or("ale.surface_trees", rd.n_trees)?,
            min_leaf: kv.parse_or("ale.surface_min_leaf", 20usize)?,
            seed: sub_seed(seed, 3),
            ..rd
        };
        surface.validate()?;

        let n_quantiles = kv.parse_or("incidence.quantiles", 10usize)?;
        if n_quantiles < 2 {
            return Err(Error::Config(format!(
                "incidence.quantiles must be at least 2, got {n_quantiles}"
            )));
        }
        let adjuster_threshold = kv.parse_or("welfare.adjuster_threshold", 0.0)?;
        let sme_percentile = kv.parse_or("policy.sme_percentile", 50.0)?;
        if !(sme_percentile > 0.0 && sme_percentile < 100.0) {
            return Err(Error::Config(format!(
                "policy.sme_percentile must lie in (0, 100), got {sme_percentile}"
            )));
        }
        let lambda_grid = parse_list::<f64>(&kv, "policy.lambda_grid")?
            .unwrap_or_else(|| vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        if let Some(l) = lambda_grid.iter().find(|l| !(0.5..=1.0).contains(*l)) {
            return Err(Error::Config(format!("policy.lambda_grid value {l} outside [0.5, 1]")));
        }
        let tree_depth = kv.parse_or("policy.depth", 2usize)?;
        if !(1..=2).contains(&tree_depth) {
            return Err(Error::Config(format!(
                "policy.depth {tree_depth} is unsupported (use 1 or 2)"
            )));
        }
        let opt_f64 = |key: &str| -> Result<Option<f64>> {
            match kv.get(key) {
                None => Ok(None),
                Some(_) => kv.parse_or(key, 0.0).map(Some),
            }
        };
        let budget = opt_f64("policy.budget")?;
        let target = opt_f64("policy.target")?;

        Ok(PipelineConfig {
            source,
            period,
            seed,
            match_covariates,
            caliper,
            forest,
            nuisance,
            k_folds,
            ale_scheme,
            ale_bins,
            surface,
            n_quantiles,
            adjuster_threshold,
            sme_percentile,
            lambda_grid,
            tree_depth,
            budget,
            target,
            text: kv.to_text(),
        })
    }

    /// Seed of the cost model forest.
    pub fn cost_seed(&self) -> u64 {
        sub_seed(self.seed, 4)
    }
}

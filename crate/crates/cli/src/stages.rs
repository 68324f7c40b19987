use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stimkit::ale::{
    ale_binary, ale_curve, fit_psi_surface, variance_decomposition, write_curves,
    write_decomposition, Binning,
};
use stimkit::did::{avg_daily_subsidy, coupon_mpc, estimate_twfe, pretrend_test, DidResult, PretrendResult};
use stimkit::forest::{
    blp, conditional_mpc, dr_scores, first_difference, fit_nuisances, score_mean,
    variable_importance, CausalForest, EffectSet, RegressionParams,
};
use stimkit::incidence::{
    allocation_matrix, gains_by_quantile, map_effects, total_spend_effect, uniform_counterfactual,
    write_gains, Attribute, UniformComparison,
};
use stimkit::panel::{
    build_daily_panel, classify_sme, covariate_matrix, ingest_dataset, CategoryFilter,
    ConsumerRecord, Covariate, Dataset, DatasetPaths, OrderEvent, Outcome, PeriodConfig, PeriodTag,
};
use stimkit::policy::{
    actual_implementation, fit_cost_model, full_targeting, hybrid_plan, policy_tree, rate_curve,
    split_rewards, write_hybrid, write_rate, DECILES,
};
use stimkit::psm::{balance_table, balance_weighted, fit_propensity, match_nn, BalanceRow};
use stimkit::simulate::{gen_orders, gen_population, write_simulation};
use stimkit::welfare::{consumer_gain, estimate_demand, producer_surplus_delta, WelfareAccount};
use stimkit::{Error, Result};

use crate::config::Source;
use crate::{Ctx, Stage};

const DATA_FILES: [&str; 5] = [
    "consumers.csv",
    "orders.csv",
    "establishments.csv",
    "claims.csv",
    "establishment_days.csv",
];
const P: usize = Covariate::ALL.len();

pub(crate) fn run_stage(stage: Stage, ctx: &mut Ctx) -> Result<()> {
    match stage {
        Stage::Simulate => simulate(ctx),
        Stage::Match => matching(ctx),
        Stage::Did => did(ctx),
        Stage::Forest => forest(ctx),
        Stage::Ale => ale(ctx),
        Stage::Incidence => incidence(ctx),
        Stage::Welfare => welfare(ctx),
        Stage::Target => target(ctx),
        Stage::Tree => tree(ctx),
        Stage::Hybrid => hybrid(ctx),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| io_err(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn simulate(ctx: &mut Ctx) -> Result<()> {
    let Source::Simulate(sim) = &ctx.cfg.source else {
        return Err(Error::Config(
            "`simulate` needs simulate = true in the config (data.dir is set)".into(),
        ));
    };
    let pop = gen_population(sim)?;
    let orders = gen_orders(&pop, sim);
    write_simulation(&ctx.out.join("data"), &pop, &orders)?;
    for f in DATA_FILES.iter().chain(&["truth.csv"]) {
        ctx.output(&format!("data/{f}"));
    }
    log::info!(
        "simulated {} consumers, {} establishments, {} orders",
        pop.consumers.len(),
        pop.establishments.len(),
        orders.orders.len()
    );
    Ok(())
}

fn dataset(ctx: &mut Ctx) -> Result<Dataset> {
    let dir: PathBuf = match &ctx.cfg.source {
        Source::Simulate(_) => {
            ctx.upstream("data/consumers.csv", Stage::Simulate)?;
            ctx.out.join("data")
        }
        Source::Data(d) => d.clone(),
    };
    let paths = DatasetPaths::in_dir(&dir);
    for f in DATA_FILES {
        let p = dir.join(f);
        if p.is_file() {
            ctx.external(&format!("data/{f}"), &p)?;
        }
    }
    let ds = ingest_dataset(&paths, &ctx.cfg.period)?;
    if ds.dropped_consumers > 0 {
        log::warn!(
            "dropped {} consumers with missing attributes ({} orders)",
            ds.dropped_consumers,
            ds.dropped_orders
        );
    }
    Ok(ds)
}

#[derive(Debug, Deserialize)]
struct MatchedRow {
    consumer_id: String,
    weight: f64,
}

/// Consumers with positive match weight, in data order, with their weights.
fn matched_sample(ctx: &mut Ctx, ds: &Dataset) -> Result<(Vec<ConsumerRecord>, Vec<f64>)> {
    let path = ctx.upstream("matched.csv", Stage::Match)?;
    let rows: Vec<MatchedRow> = read_rows(&path)?;
    let w: HashMap<&str, f64> = rows.iter().map(|r| (r.consumer_id.as_str(), r.weight)).collect();
    let mut sample = Vec::new();
    let mut weights = Vec::new();
    for c in &ds.consumers {
        match w.get(c.consumer_id.as_str()) {
            Some(&wt) if wt > 0.0 => {
                sample.push(c.clone());
                weights.push(wt);
            }
            Some(_) => {}
            None => {
                return Err(Error::Data(format!(
                    "consumer `{}` is missing from matched.csv; rerun `stimkit match`",
                    c.consumer_id
                )))
            }
        }
    }
    Ok((sample, weights))
}

#[derive(Debug, Deserialize)]
struct EffectRow {
    consumer_id: String,
    catt: f64,
    psi: f64,
    cost_hat: f64,
}

/// Effect rows joined to their consumer records.
struct Effects {
    ids: Vec<String>,
    catt: Vec<f64>,
    psi: Vec<f64>,
    cost_hat: Vec<f64>,
    treat: Vec<bool>,
    x: Vec<f64>,
}

impl Effects {
    fn treated(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.treat[i]).collect()
    }
}

fn effects(ctx: &mut Ctx, ds: &Dataset) -> Result<Effects> {
    let path = ctx.upstream("effects.csv", Stage::Forest)?;
    let rows: Vec<EffectRow> = read_rows(&path)?;
    let index: HashMap<&str, &ConsumerRecord> =
        ds.consumers.iter().map(|c| (c.consumer_id.as_str(), c)).collect();
    let consumers = rows
        .iter()
        .map(|r| {
            index.get(r.consumer_id.as_str()).map(|c| (*c).clone()).ok_or_else(|| {
                Error::Data(format!(
                    "effects.csv lists consumer `{}` who is not in the data",
                    r.consumer_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Effects {
        x: covariate_matrix(&consumers, &Covariate::ALL),
        treat: consumers.iter().map(|c| c.treat).collect(),
        ids: rows.iter().map(|r| r.consumer_id.clone()).collect(),
        catt: rows.iter().map(|r| r.catt).collect(),
        psi: rows.iter().map(|r| r.psi).collect(),
        cost_hat: rows.iter().map(|r| r.cost_hat).collect(),
    })
}

/// Orders placed by the given consumers.
fn orders_of(orders: &[OrderEvent], sample: &[ConsumerRecord]) -> Vec<OrderEvent> {
    let ids: std::collections::HashSet<&str> = sample.iter().map(|c| c.consumer_id.as_str()).collect();
    orders
        .iter()
        .filter(|o| ids.contains(o.consumer_id.as_str()))
        .cloned()
        .collect()
}

/// Coupon subsidy each consumer received over the program window.
fn window_subsidy(orders: &[OrderEvent], ids: &[String], period: &PeriodConfig) -> Vec<f64> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = vec![0.0; ids.len()];
    for o in orders {
        if period.tag(o.date) != Some(PeriodTag::Treat) {
            continue;
        }
        if let Some(&i) = index.get(o.consumer_id.as_str()) {
            out[i] += o.coupon_discount;
        }
    }
    out
}

fn covariate_names() -> Vec<&'static str> {
    Covariate::ALL.iter().map(|c| c.name()).collect()
}

fn write_balance(path: &Path, before: &[BalanceRow], after: &[BalanceRow]) -> Result<()> {
    let mut s = String::from("sample,covariate,mean_treated,mean_control,diff,t_stat\n");
    for (name, rows) in [("unmatched", before), ("matched", after)] {
        for r in rows {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{}",
                r.covariate,
                r.mean_t,
                r.mean_c,
                r.diff,
                opt(r.t_stat)
            );
        }
    }
    write_text(path, &s)
}

fn matching(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let covs = &ctx.cfg.match_covariates;
    let fit = fit_propensity(&ds.consumers, covs)?;
    let treat: Vec<bool> = ds.consumers.iter().map(|c| c.treat).collect();
    let ids: Vec<String> = ds.consumers.iter().map(|c| c.consumer_id.clone()).collect();
    let m = match_nn(&fit.scores, &treat, &ids, ctx.cfg.caliper)?;
    if !m.unmatched.is_empty() {
        log::warn!("{} treated consumers fall outside the caliper", m.unmatched.len());
    }
    let before = balance_weighted(&ds.consumers, &vec![1.0; ids.len()], covs);
    let after = balance_table(&ds.consumers, &m, covs);
    let mut s = String::from("consumer_id,treat,propensity,weight\n");
    for i in 0..ids.len() {
        let _ = writeln!(s, "{},{},{},{}", ids[i], u8::from(treat[i]), m.propensity[i], m.weights[i]);
    }
    write_text(&ctx.output("matched.csv"), &s)?;
    write_balance(&ctx.output("balance.csv"), &before, &after)?;
    log::info!("matched {} treated consumers", m.pairs.len());
    Ok(())
}

#[derive(Serialize)]
struct DidSummary {
    results: Vec<DidResult>,
    pretrend: PretrendResult,
    avg_daily_subsidy: f64,
    coupon_mpc: Option<f64>,
}

fn did(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let (sample, w) = matched_sample(ctx, &ds)?;
    let panel = build_daily_panel(&orders_of(&ds.orders, &sample), &sample, &ctx.cfg.period, CategoryFilter::Restaurant, false)?;
    let results = [Outcome::Oop, Outcome::Total, Outcome::Unsub, Outcome::Orders]
        .into_iter()
        .map(|o| estimate_twfe(&panel, o, Some(&w)))
        .collect::<Result<Vec<_>>>()?;
    let pretrend = pretrend_test(&panel, Outcome::Oop, Some(&w))?;
    let subsidy = avg_daily_subsidy(&panel, Some(&w));
    let mpc = coupon_mpc(results[0].att, subsidy).ok();
    let mut s = String::from("outcome,coefficient,se,t,n\n");
    for r in &results {
        let _ = writeln!(s, "{},{},{},{},{}", r.outcome, r.att, r.se_cluster, r.t_stat, r.n_obs);
    }
    write_text(&ctx.output("did.csv"), &s)?;
    log::info!(
        "ATT {:.4} (se {:.4}), pre-trend p = {:.3}",
        results[0].att,
        results[0].se_cluster,
        pretrend.p_value
    );
    write_json(
        &ctx.output("did_summary.json"),
        &DidSummary {
            results,
            pretrend,
            avg_daily_subsidy: subsidy,
            coupon_mpc: mpc,
        },
    )
}

#[derive(Serialize)]
struct ForestSummary {
    n: usize,
    n_treated: usize,
    att: f64,
    se: f64,
    mean_catt: f64,
}

fn forest(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let (sample, _) = matched_sample(ctx, &ds)?;
    let cfg = ctx.cfg;
    let panel = build_daily_panel(&orders_of(&ds.orders, &sample), &sample, &cfg.period, CategoryFilter::Restaurant, false)?;
    let dy = first_difference(&panel)?;
    let x = covariate_matrix(&sample, &Covariate::ALL);
    let treat: Vec<bool> = sample.iter().map(|c| c.treat).collect();
    let nuis = fit_nuisances(&x, P, &dy, &treat, cfg.k_folds, &cfg.nuisance)?;
    let cf = CausalForest::fit(&x, P, &dy, &treat, &nuis.m_hat, &nuis.e_hat, &cfg.forest)?;
    let catt = cf.oob.clone();
    let psi = dr_scores(&catt, &dy, &treat, &nuis.e_hat, &nuis.m_hat);

    let ids: Vec<String> = sample.iter().map(|c| c.consumer_id.clone()).collect();
    let realized = window_subsidy(&ds.orders, &ids, &cfg.period);
    let cost_params = RegressionParams {
        seed: cfg.cost_seed(),
        ..cfg.nuisance.clone()
    };
    let cost_hat = fit_cost_model(&x, P, &treat, &realized, &cost_params)?;
    let mpc = conditional_mpc(&catt, &cost_hat, cfg.period.treat_days());

    let names = covariate_names();
    let proj = blp(&psi, &x, P, &names)?;
    let importance = variable_importance(&cf.trees, P);
    let (att, se) = score_mean(&psi);
    let summary = ForestSummary {
        n: ids.len(),
        n_treated: treat.iter().filter(|t| **t).count(),
        att,
        se,
        mean_catt: stimkit::stats::mean(&catt),
    };
    EffectSet {
        consumer_ids: ids,
        catt,
        psi,
        e_hat: nuis.e_hat,
        m_hat: nuis.m_hat,
        cost_hat,
        mpc,
    }
    .write(&ctx.output("effects.csv"))?;

    let mut s = String::from("term,estimate,se,t\n");
    for c in &proj.coefficients {
        let _ = writeln!(s, "{},{},{},{}", c.name, c.beta, c.se, c.t_stat);
    }
    write_text(&ctx.output("blp.csv"), &s)?;
    let mut s = String::from("covariate,importance\n");
    for (n, v) in names.iter().zip(&importance) {
        let _ = writeln!(s, "{n},{v}");
    }
    write_text(&ctx.output("importance.csv"), &s)?;
    log::info!("doubly robust ATT {att:.4} (se {se:.4}) on {} consumers", summary.n);
    write_json(&ctx.output("forest.json"), &summary)
}

fn ale(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let cfg = ctx.cfg;
    let surface = fit_psi_surface(&eff.psi, &eff.x, P, &cfg.surface)?;
    log::info!("score surface out-of-bag R^2 {:.3}", surface.oob_r2);
    let f = |row: &[f64]| surface.predict_row(row);
    let scheme = cfg.ale_scheme;
    let mut curves = Vec::new();
    for &cov in scheme.demand().iter().chain(scheme.supply()) {
        let k = Covariate::ALL.iter().position(|c| *c == cov).expect("known covariate");
        let curve = if cov.is_binary() {
            ale_binary(&f, &eff.x, P, k, cov.name())?
        } else {
            let mut vals: Vec<f64> = (0..eff.ids.len()).map(|i| eff.x[i * P + k]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let bins = cfg.ale_bins.min(vals.len());
            if bins < cfg.ale_bins {
                log::warn!("`{}` has {} distinct values; using {bins} ALE bins", cov.name(), vals.len());
            }
            ale_curve(&f, &eff.x, P, k, cov.name(), bins, Binning::EqualWidth)?
        };
        if curve.merged_bins > 0 {
            log::info!("`{}`: {} empty ALE bins borrowed neighbors", cov.name(), curve.merged_bins);
        }
        curves.push(curve);
    }
    let names = |s: &[Covariate]| s.iter().map(|c| c.name()).collect::<Vec<_>>();
    let d = variance_decomposition(&curves, &names(scheme.demand()), &names(scheme.supply()))?;
    write_curves(&ctx.output("ale.csv"), &curves)?;
    write_decomposition(&ctx.output("decomposition.csv"), &d, scheme)?;
    log::info!("demand share {:.3}, supply share {:.3}", d.omega_d, d.omega_s);
    Ok(())
}

#[derive(Serialize)]
struct IncidenceSummary {
    n_consumers: usize,
    phi_total: f64,
    allocated_total: f64,
    gains_total: f64,
    unallocated_consumers: usize,
    uniform: UniformComparison,
}

fn incidence(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let cfg = ctx.cfg;
    let treated = eff.treated();
    let ids: Vec<String> = treated.iter().map(|&i| eff.ids[i].clone()).collect();
    let catt: Vec<f64> = treated.iter().map(|&i| eff.catt[i]).collect();
    let subsidy = window_subsidy(&ds.orders, &ids, &cfg.period);
    let phi = total_spend_effect(&catt, &subsidy, cfg.period.treat_days());
    let alloc = allocation_matrix(&ds.orders, &ids, &ds.establishments, &cfg.period)?;
    let gains = map_effects(&phi, &alloc)?;
    let uniform = uniform_counterfactual(&phi, &alloc, &alloc.market_shares())?;
    write_gains(&ctx.output("gains.csv"), &gains, &ds.establishments, cfg.n_quantiles)?;

    let mut s = String::from("attribute,quantile,n,mean_gain,redemptions\n");
    for (name, attr) in [("sales", Attribute::Sales), ("price", Attribute::Price)] {
        for r in gains_by_quantile(&gains, &ds.establishments, attr, cfg.n_quantiles, Some(&ds.orders))? {
            let red = r.redemptions.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{name},{},{},{},{red}", r.quantile, r.n, r.mean_gain);
        }
    }
    write_text(&ctx.output("gains_quantiles.csv"), &s)?;
    log::info!("uniform spending cuts gain variance by {:.1}%", 100.0 * uniform.reduction);
    write_json(
        &ctx.output("incidence.json"),
        &IncidenceSummary {
            n_consumers: ids.len(),
            phi_total: phi.iter().sum(),
            allocated_total: gains.allocated_total,
            gains_total: gains.tau.iter().sum(),
            unallocated_consumers: gains.unallocated.len(),
            uniform,
        },
    )
}

#[derive(Debug, Deserialize)]
struct GainRow {
    tau: f64,
}

fn welfare(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let gains_path = ctx.upstream("gains.csv", Stage::Incidence)?;
    let cfg = ctx.cfg;
    if ds.establishment_days.is_empty() {
        return Err(Error::Data(
            "welfare needs establishment_days.csv in the data directory".into(),
        ));
    }
    let fit = estimate_demand(&ds.establishment_days, &cfg.period)?;
    let tau: Vec<f64> = read_rows::<GainRow>(&gains_path)?.into_iter().map(|r| r.tau).collect();
    let (_, producer) = producer_surplus_delta(&fit, &tau)?;
    let treated = eff.treated();
    let ids: Vec<String> = treated.iter().map(|&i| eff.ids[i].clone()).collect();
    let catt: Vec<f64> = treated.iter().map(|&i| eff.catt[i]).collect();
    let subsidy = window_subsidy(&ds.orders, &ids, &cfg.period);
    let consumer = consumer_gain(&catt, &subsidy, cfg.adjuster_threshold);
    let account = WelfareAccount::new(&fit, consumer, producer, subsidy.iter().sum())?;
    log::info!("elasticity {:.3}, MVPF {:.3}", account.beta1, account.mvpf);
    write_json(&ctx.output("welfare.json"), &account)
}

fn target(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let mut curves = vec![rate_curve("catt", &eff.catt, &eff.psi, &eff.ids, &DECILES)?];
    for (k, cov) in Covariate::ALL.iter().enumerate() {
        let col: Vec<f64> = (0..eff.ids.len()).map(|i| eff.x[i * P + k]).collect();
        curves.push(rate_curve(cov.name(), &col, &eff.psi, &eff.ids, &DECILES)?);
    }
    write_rate(&ctx.output("rate.csv"), &curves)
}

#[derive(Serialize)]
struct TreeSplit {
    feature: String,
    threshold: f64,
}

#[derive(Serialize)]
struct TreeOut {
    lambda: f64,
    depth: usize,
    /// Root, left child, right child.
    splits: [TreeSplit; 3],
    /// Leaves left-left, left-right, right-left, right-right.
    actions: [bool; 4],
    objective: f64,
    #[serde(rename = "R_SME")]
    r_sme: f64,
    #[serde(rename = "R_large")]
    r_large: f64,
}

#[derive(Serialize)]
struct TreeFile {
    sme_percentile: f64,
    trees: Vec<TreeOut>,
}

fn tree(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let cfg = ctx.cfg;
    let sme = classify_sme(&ds.establishments, cfg.sme_percentile);
    let alloc = allocation_matrix(&ds.orders, &eff.ids, &ds.establishments, &cfg.period)?;
    let market = alloc.market_shares();
    let fallback: f64 = market.iter().zip(&sme).filter(|(_, s)| **s).map(|(m, _)| m).sum();
    let share: Vec<f64> = alloc
        .row_share(&sme)
        .into_iter()
        .zip(&alloc.rows)
        .map(|(s, row)| if row.is_empty() { fallback } else { s })
        .collect();
    let days = cfg.period.treat_days() as f64;
    let phi: Vec<f64> = eff.psi.iter().zip(&eff.cost_hat).map(|(p, c)| p * days + c).collect();
    let (r_sme, r_large) = split_rewards(&phi, &share);
    let names = covariate_names();
    let mut trees = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let t = policy_tree(&r_sme, &r_large, lambda, cfg.tree_depth, &eff.x, P, &names)?;
        let split = |s: &stimkit::policy::Split| TreeSplit {
            feature: names[s.feature].to_string(),
            threshold: s.threshold,
        };
        log::info!("lambda {lambda}: R_SME {:.1}, R_large {:.1}", t.r_sme, t.r_large);
        trees.push(TreeOut {
            lambda,
            depth: t.depth,
            splits: [split(&t.root), split(&t.left), split(&t.right)],
            actions: t.actions,
            objective: t.objective,
            r_sme: t.r_sme,
            r_large: t.r_large,
        });
    }
    write_json(
        &ctx.output("tree.json"),
        &TreeFile {
            sme_percentile: cfg.sme_percentile,
            trees,
        },
    )
}

fn hybrid(ctx: &mut Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let eff = effects(ctx, &ds)?;
    let cfg = ctx.cfg;
    let days = cfg.period.treat_days();
    let actual = actual_implementation(&eff.ids, &eff.catt, &eff.cost_hat, &eff.treat, days);
    let budget = cfg.budget.unwrap_or(actual.gov_coupon_cost);
    let target = cfg.target.unwrap_or(actual.total_stimulus);
    let full = full_targeting(&eff.ids, &eff.catt, &eff.cost_hat, days, budget)?;
    let plan = hybrid_plan(&eff.ids, &eff.catt, &eff.cost_hat, days, budget, target)?;
    log::info!(
        "hybrid: {} consumers targeted, {:.1} left for SMEs",
        plan.n_targeted,
        plan.sme_transfer
    );
    write_hybrid(
        &ctx.output("hybrid.csv"),
        &[("actual", &actual), ("full_targeting", &full), ("hybrid", &plan)],
    )
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use robusthedge_core::counterexample::{divergence_demo, gaussian_abs_mean, phi_sweep};
use robusthedge_core::dual::{backward_solve, ValueField};
use robusthedge_core::error::Error;
use robusthedge_core::hedge::{extract_strategy, primal_lp, verify_superhedge, wealth, Strategy};
use robusthedge_core::oracle::global_sup_lp;
use robusthedge_core::scalar::{tol, ExtReal, Rational, Scalar};
use robusthedge_core::suite::{duality_record, random_instance, run_case, summarize, CaseOptions, Suite, SuiteSummary};
use robusthedge_core::tree::NodeId;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Problem, ReplayCase, SCHEMA_VERSION};
use crate::CliError;

/// Shared command-line context.
pub struct Context {
    pub config: ExperimentConfig,
    pub exact: bool,
    pub out: PathBuf,
    pub pool: rayon::ThreadPool,
}

/// Whether every check of a command passed.
pub type Status = bool;

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(path)
}

fn ext_str(v: &ExtReal<f64>) -> String {
    match v {
        ExtReal::NegInf => "-inf".into(),
        ExtReal::Finite(x) => x.to_string(),
    }
}

fn exact_str<S: Scalar>(v: &ExtReal<S>) -> Option<String> {
    S::EXACT.then(|| match v {
        ExtReal::NegInf => "-inf".into(),
        ExtReal::Finite(x) => x.to_string(),
    })
}

/// `a - b`, zero when both are `-inf` and `None` when exactly one is.
fn signed_gap<S: Scalar>(a: &ExtReal<S>, b: &ExtReal<S>) -> Option<S> {
    match (a, b) {
        (ExtReal::NegInf, ExtReal::NegInf) => Some(S::zero()),
        (ExtReal::Finite(x), ExtReal::Finite(y)) => Some(x.clone() - y.clone()),
        _ => None,
    }
}

fn gap_ok<S: Scalar>(g: &Option<S>) -> bool {
    match g {
        None => false,
        Some(g) if S::EXACT => *g == S::zero(),
        Some(g) => g.abs().to_f64() <= tol::PROPERTY,
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Position {
    Scalar(f64),
    Vector(Vec<f64>),
}

fn positions(stock: &BTreeMap<NodeId, Vec<f64>>) -> BTreeMap<NodeId, Position> {
    stock
        .iter()
        .map(|(n, h)| {
            let p = if h.len() == 1 { Position::Scalar(h[0]) } else { Position::Vector(h.clone()) };
            (*n, p)
        })
        .collect()
}

fn digest(strategy: &Strategy<f64>) -> String {
    let bytes = serde_json::to_vec(&strategy.to_doc()).expect("strategy serializes");
    let hash = Sha256::digest(&bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Verification {
    pub ok: bool,
    pub min_slack: Option<f64>,
    pub polar_paths: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub dual: Duration,
    pub oracle: Duration,
    pub primal: Duration,
    pub verify: Duration,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub schema_version: u32,
    pub exact: bool,
    pub family: String,
    pub dp: ExtReal<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp_exact: Option<String>,
    pub lp: Option<ExtReal<f64>>,
    pub primal: Option<ExtReal<f64>>,
    /// `dp - lp`; null when exactly one side is `-inf` or the oracle was skipped.
    pub gap_lp: Option<f64>,
    pub gap_primal: Option<f64>,
    pub tolerance: f64,
    /// Set when the instance is too large for the path-space programs.
    pub oracle_skipped: Option<String>,
    pub x0: Option<f64>,
    pub strategy_digest: Option<String>,
    pub verification: Option<Verification>,
    pub values: ValueField<f64>,
    pub ok: bool,
    #[serde(skip)]
    pub timings: Timings,
}

pub fn run_solve(ctx: &Context) -> Result<(DualityReport, Status), CliError> {
    let problem = ctx.config.problem()?;
    let report = if ctx.exact { solve::<Rational>(&problem)? } else { solve::<f64>(&problem)? };
    let t = &report.timings;
    eprintln!(
        "timings: dual {:?}, oracle {:?}, primal {:?}, verify {:?}",
        t.dual, t.oracle, t.primal, t.verify
    );
    if let Some(w) = &report.oracle_skipped {
        eprintln!("warning: oracle skipped: {w}");
    }
    write_json(&ctx.out, "solve.json", &report)?;
    let ok = report.ok;
    Ok((report, ok))
}

fn solve<S: Scalar>(p: &Problem) -> Result<DualityReport, CliError> {
    let mut timings = Timings::default();
    let clock = Instant::now();
    let dual = backward_solve::<S>(&p.tree, &p.claim, &p.family)?;
    timings.dual = clock.elapsed();
    let dp = dual.root_value().clone();

    let mut oracle_skipped = None;
    let clock = Instant::now();
    let lp = match global_sup_lp::<S>(&p.tree, &p.claim, &p.family) {
        Ok(g) => Some(g.value),
        Err(Error::OracleScale(m)) => {
            oracle_skipped = Some(m);
            None
        }
        Err(e) => return Err(e.into()),
    };
    timings.oracle = clock.elapsed();
    let clock = Instant::now();
    let primal = match primal_lp::<S>(&p.tree, &p.claim, &p.family) {
        Ok(s) => Some(s.value),
        Err(Error::OracleScale(m)) => {
            oracle_skipped.get_or_insert(m);
            None
        }
        Err(e) => return Err(e.into()),
    };
    timings.primal = clock.elapsed();

    let gap_lp = lp.as_ref().map(|v| signed_gap(&dp, v));
    let gap_primal = primal.as_ref().map(|v| signed_gap(&dp, v));
    let mut ok = gap_lp.as_ref().is_none_or(gap_ok) && gap_primal.as_ref().is_none_or(gap_ok);

    let clock = Instant::now();
    let (mut x0, mut strategy_digest, mut verification) = (None, None, None);
    if let Some(v) = dp.finite() {
        let strategy = extract_strategy(&p.tree, &dual, &p.family)?;
        let r = verify_superhedge(&p.tree, v, &strategy, &p.claim, &p.family);
        ok &= r.ok;
        x0 = Some(v.to_f64());
        strategy_digest = Some(digest(&strategy.to_f64()));
        verification = Some(Verification {
            ok: r.ok,
            min_slack: r.min_slack.map(|s| s.to_f64()),
            polar_paths: r.polar.len(),
        });
    }
    timings.verify = clock.elapsed();

    let f = |v: &ExtReal<S>| v.convert::<f64>();
    Ok(DualityReport {
        schema_version: SCHEMA_VERSION,
        exact: S::EXACT,
        family: robusthedge_core::suite::family_label(&p.family),
        dp_exact: exact_str(&dp),
        dp: f(&dp),
        lp: lp.as_ref().map(f),
        primal: primal.as_ref().map(f),
        gap_lp: gap_lp.flatten().map(|g| g.to_f64()),
        gap_primal: gap_primal.flatten().map(|g| g.to_f64()),
        tolerance: if S::EXACT { 0.0 } else { tol::PROPERTY },
        oracle_skipped,
        x0,
        strategy_digest,
        verification,
        values: dual.values.to_f64(),
        ok,
        timings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HedgeReport {
    pub schema_version: u32,
    pub exact: bool,
    #[serde(rename = "X0")]
    pub x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0_exact: Option<String>,
    pub strategy: BTreeMap<NodeId, Position>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub variance_positions: BTreeMap<NodeId, f64>,
    pub verification: HedgeVerification,
}

#[derive(Clone, Debug, Serialize)]
pub struct HedgeVerification {
    pub ok: bool,
    pub min_slack: Option<f64>,
    pub polar_paths: Vec<Vec<NodeId>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlackRow {
    pub leaf: usize,
    pub path: String,
    pub claim: String,
    pub wealth: f64,
    pub slack: String,
    pub polar: bool,
}

pub fn run_hedge(ctx: &Context) -> Result<(HedgeReport, Status), CliError> {
    let problem = ctx.config.problem()?;
    let (report, rows) = if ctx.exact { hedge::<Rational>(&problem)? } else { hedge::<f64>(&problem)? };
    write_json(&ctx.out, "hedge.json", &report)?;
    write_csv(&ctx.out, "hedge_slacks.csv", &rows)?;
    let ok = report.verification.ok;
    Ok((report, ok))
}

fn hedge<S: Scalar>(p: &Problem) -> Result<(HedgeReport, Vec<SlackRow>), CliError> {
    let dual = backward_solve::<S>(&p.tree, &p.claim, &p.family)?;
    let x0 = dual.root_value().finite().cloned().ok_or(Error::EmptyFamily)?;
    let strategy = extract_strategy(&p.tree, &dual, &p.family)?;
    let r = verify_superhedge(&p.tree, &x0, &strategy, &p.claim, &p.family);
    let polar_leaves: BTreeMap<NodeId, ()> = r.polar.iter().filter_map(|path| path.last()).map(|l| (l, ())).collect();
    let rows = p
        .tree
        .leaves()
        .map(|l| {
            let path = p.tree.path_to(l);
            let w = wealth(&p.tree, &x0, &strategy, &path).to_f64();
            SlackRow {
                leaf: l.0,
                path: path.0.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join("-"),
                claim: p.claim.get(l).map(ext_str).unwrap_or_default(),
                wealth: w,
                slack: r.slacks.get(&l).map(|s| s.to_f64().to_string()).unwrap_or_else(|| "polar".into()),
                polar: polar_leaves.contains_key(&l),
            }
        })
        .collect();
    let s = strategy.to_f64();
    let report = HedgeReport {
        schema_version: SCHEMA_VERSION,
        exact: S::EXACT,
        x0: Some(x0.to_f64()),
        x0_exact: S::EXACT.then(|| x0.to_string()),
        strategy: positions(&s.stock),
        variance_positions: s.variance.clone(),
        verification: HedgeVerification {
            ok: r.ok,
            min_slack: r.min_slack.map(|v| v.to_f64()),
            polar_paths: r.polar.iter().map(|path| path.0.clone()).collect(),
        },
    };
    Ok((report, rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub seed: u64,
    pub dp: String,
    pub lp: String,
    pub gap: String,
    pub primal: String,
    pub gap_primal: String,
    pub leaves: usize,
    pub payoff: String,
    pub family: String,
    pub factorization_ok: bool,
    pub hedge_ok: bool,
    pub ok: bool,
}

fn opt_str(g: Option<f64>) -> String {
    g.map(|g| g.to_string()).unwrap_or_else(|| "nan".into())
}

pub fn run_oracle(ctx: &Context) -> Result<(Vec<OracleRow>, Status), CliError> {
    let seed = ctx.config.seed;
    let exact = ctx.exact;
    let clock = Instant::now();
    let rows: Vec<Result<OracleRow, CliError>> = ctx.pool.install(|| {
        (0..ctx.config.instances)
            .into_par_iter()
            .map(|i| {
                let inst = random_instance(Suite::Duality.case_seed(seed, i));
                let r = if exact { duality_record::<Rational>(&inst)? } else { duality_record::<f64>(&inst)? };
                Ok(OracleRow {
                    seed: r.seed,
                    dp: ext_str(&r.dp),
                    lp: ext_str(&r.lp),
                    gap: opt_str(r.gap_lp),
                    primal: ext_str(&r.primal),
                    gap_primal: opt_str(r.gap_primal),
                    leaves: r.leaves,
                    payoff: r.payoff.clone(),
                    family: r.family.clone(),
                    factorization_ok: r.factorization_ok,
                    hedge_ok: r.hedge_ok && r.primal_hedge_ok,
                    ok: r.gaps_ok() && r.factorization_ok && r.hedge_ok && r.primal_hedge_ok,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    eprintln!("oracle: {} instances in {:?}", rows.len(), clock.elapsed());
    write_csv(&ctx.out, "oracle.csv", &rows)?;
    let ok = rows.iter().all(|r| r.ok);
    Ok((rows, ok))
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleSummary {
    pub bands: usize,
    pub t: f64,
    pub min_f: f64,
    pub partial_sum: f64,
    pub gaussian_abs_mean_0: f64,
}

pub fn run_counterexample(ctx: &Context) -> Result<(CounterexampleSummary, Status), CliError> {
    let c = &ctx.config.counterexample;
    let rows = divergence_demo(c.bands, c.t)?;
    let sweep = phi_sweep(c.phi_level, c.phi_max_k)?;
    write_csv(&ctx.out, "divergence.csv", &rows)?;
    write_csv(&ctx.out, "phi_sweep.csv", &sweep)?;
    let summary = CounterexampleSummary {
        bands: rows.len(),
        t: c.t,
        min_f: rows.iter().map(|r| r.f_i).fold(f64::INFINITY, f64::min),
        partial_sum: rows.last().map_or(0.0, |r| r.partial_sum),
        gaussian_abs_mean_0: gaussian_abs_mean(0.0),
    };
    let ok = rows.iter().all(|r| r.f_i >= 1.0);
    Ok((summary, ok))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProptestReport {
    pub schema_version: u32,
    pub base_seed: u64,
    pub exact: bool,
    pub mutate_kernel: bool,
    pub suites: Vec<SuiteSummary>,
    pub failure_configs: Vec<String>,
}

fn planned_cases(ctx: &Context) -> Vec<(Suite, u64)> {
    if !ctx.config.replay.is_empty() {
        return ctx.config.replay.iter().map(|r| (r.suite, r.seed)).collect();
    }
    let base = ctx.config.seed;
    let mut cases = Vec::new();
    for (suite, n) in ctx.config.suite_counts() {
        let suite = match suite {
            Suite::Duality if ctx.exact => Suite::DualityExact,
            s => s,
        };
        cases.extend((0..n).map(|i| (suite, suite.case_seed(base, i))));
    }
    cases
}

pub fn run_proptest(ctx: &Context) -> Result<(ProptestReport, Status), CliError> {
    let opts = CaseOptions {
        mutate_kernel: ctx.config.mutate_kernel,
    };
    let cases = planned_cases(ctx);
    let clock = Instant::now();
    let outcomes: Vec<_> = ctx
        .pool
        .install(|| cases.par_iter().map(|&(suite, seed)| run_case(suite, seed, opts)).collect());
    eprintln!("proptest: {} cases in {:?}", outcomes.len(), clock.elapsed());

    let mut grouped: BTreeMap<Suite, Vec<_>> = BTreeMap::new();
    for o in outcomes {
        grouped.entry(o.suite).or_default().push(o);
    }
    let mut suites: Vec<SuiteSummary> = Vec::new();
    let mut failure_configs = Vec::new();
    let dir = ctx.out.join("failures");
    for (suite, list) in grouped {
        let summary = summarize(suite, ctx.config.seed, list);
        for f in &summary.failures {
            let replay = ExperimentConfig {
                replay: vec![ReplayCase {
                    suite: f.suite,
                    seed: f.seed,
                }],
                mutate_kernel: ctx.config.mutate_kernel,
                out: None,
                ..ExperimentConfig::default()
            };
            let name = format!("{}_{}.json", f.suite, f.seed);
            write_json(&dir, &name, &replay)?;
            failure_configs.push(format!("failures/{name}"));
        }
        suites.push(summary);
    }
    let report = ProptestReport {
        schema_version: SCHEMA_VERSION,
        base_seed: ctx.config.seed,
        exact: ctx.exact,
        mutate_kernel: ctx.config.mutate_kernel,
        suites,
        failure_configs,
    };
    write_json(&ctx.out, "proptest.json", &report)?;
    let ok = report.suites.iter().all(|s| s.failed == 0);
    Ok((report, ok))
}

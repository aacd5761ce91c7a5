//! One function per subcommand.

use serde::Serialize;
use skipwalk::contfrac::{compute_tails, monotonicity_index, MonotonicityIndex};
use skipwalk::criteria::{classify_numeric, classify_theorem2, recurrence_check, Verdict};
use skipwalk::dseries::{criterion_series, DLimit, DTable};
use skipwalk::exact::{ab_ratios, eta, escape_to_infinity, joint_skip_prob, layer_entry, skip_prob, splitting, Channel};
use skipwalk::montecarlo::{count_growth, estimate_skip, Resolution, SkipExperiment};
use skipwalk::verify::{self, Grid, VerifyConfig};
use skipwalk::{ChainParams, Error, Family, PerturbationSpec};

use crate::config::{query_name, Command, Method, Query, RunConfig};
use crate::output::Rendered;

/// Tolerance on the tail seeding error.
pub const TAILS_TOL: f64 = 1e-15;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub struct Outcome {
    pub rendered: Rendered,
    /// Nonzero when the command ran but its checks failed.
    pub code: i32,
}

impl From<Rendered> for Outcome {
    fn from(rendered: Rendered) -> Self {
        Self { rendered, code: 0 }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSpec(_) | Error::Range { .. } | Error::Argument(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, Error> {
    let chain = ChainParams::new(cfg.spec.clone());
    match cfg.command {
        Command::Tails => tails(cfg, &chain).map(Into::into),
        Command::Dseries => dseries(cfg, &chain).map(Into::into),
        Command::Exact => exact(cfg, &chain).map(Into::into),
        Command::Simulate => simulate(cfg, &chain).map(Into::into),
        Command::Classify => classify(cfg, &chain).map(Into::into),
        Command::Verify => verify_cmd(cfg),
    }
}

#[derive(Serialize)]
struct TailsRecord<'a, R: Serialize> {
    spec: &'a PerturbationSpec,
    probe_family: bool,
    n_lo: u64,
    n_hi: u64,
    buffer_used: u64,
    err_bound: f64,
    rounding_bound: f64,
    certificate_diff: f64,
    monotonicity_index: Option<MonotonicityIndex>,
    rows: &'a [R],
}

fn tails(cfg: &RunConfig, chain: &ChainParams) -> Result<Rendered, Error> {
    let t = compute_tails(chain, cfg.n_lo, cfg.n_hi, TAILS_TOL)?;
    let rows = t.rows();
    let rec = TailsRecord {
        spec: &cfg.spec,
        probe_family: cfg.spec.is_probe(),
        n_lo: cfg.n_lo,
        n_hi: cfg.n_hi,
        buffer_used: t.buffer_used,
        err_bound: t.err_bound,
        rounding_bound: t.rounding_bound,
        certificate_diff: t.certificate_diff,
        monotonicity_index: monotonicity_index(&t),
        rows: &rows,
    };
    Ok(Rendered::from_rows(&rows, &rec))
}

fn table(cfg: &RunConfig, chain: &ChainParams, lo: u64, hi: u64) -> Result<DTable, Error> {
    let top = cfg.n_cap.max(hi + 2);
    let tails = compute_tails(chain, 1, top, TAILS_TOL)?;
    DTable::build(tails, lo.max(1), hi, cfg.tol, top)
}

#[derive(Serialize)]
struct DseriesRecord<'a, R: Serialize, D: Serialize> {
    spec: &'a PerturbationSpec,
    tol: f64,
    n_cap: u64,
    top: &'a DLimit,
    diagnostics: Option<D>,
    rows: &'a [R],
}

fn dseries(cfg: &RunConfig, chain: &ChainParams) -> Result<Rendered, Error> {
    let dtab = table(cfg, chain, cfg.n_lo, cfg.n_hi)?;
    if cfg.series {
        let diag = criterion_series(&dtab, cfg.n_lo.max(2), cfg.n_hi)?;
        let rec = DseriesRecord { spec: &cfg.spec, tol: cfg.tol, n_cap: cfg.n_cap, top: dtab.top(), diagnostics: Some(&diag), rows: &diag.rows };
        return Ok(Rendered::from_rows(&diag.rows, &rec));
    }
    let rows = dtab.rows();
    let rec = DseriesRecord::<_, ()> { spec: &cfg.spec, tol: cfg.tol, n_cap: cfg.n_cap, top: dtab.top(), diagnostics: None, rows: &rows };
    Ok(Rendered::from_rows(&rows, &rec))
}

#[derive(Serialize)]
struct ExactRecord {
    kind: String,
    params: Vec<u64>,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<Channel>>,
    residual: Option<f64>,
    horizon: Option<u64>,
}

#[derive(Serialize)]
struct ExactRow {
    kind: String,
    params: String,
    value: f64,
    residual: Option<f64>,
    horizon: Option<u64>,
}

fn record(kind: &str, params: Vec<u64>, value: f64, residual: Option<f64>) -> ExactRecord {
    ExactRecord { kind: kind.into(), params, value, channels: None, residual, horizon: None }
}

fn exact(cfg: &RunConfig, chain: &ChainParams) -> Result<Rendered, Error> {
    let q = cfg.query.expect("validated");
    let (a, b, c) = (cfg.a.unwrap_or(0), cfg.b.unwrap_or(0), cfg.c.unwrap_or(0));
    let pairs = || -> Vec<(u64, u64)> { cfg.j.iter().flat_map(|&j| cfg.k.iter().map(move |&k| (j, k))).collect() };
    let mut recs = Vec::new();
    match q {
        Query::P | Query::Q | Query::Q1 | Query::Q2 => {
            let s = splitting(chain, a, b, c)?;
            let v = match q {
                Query::P => s.p,
                Query::Q => s.q(),
                Query::Q1 => s.q1,
                _ => s.q2,
            };
            recs.push(record(&query_name(q).to_uppercase(), vec![a, b, c], v, Some(s.residual)));
        }
        Query::H => {
            for &k in &cfg.k {
                let (h1, h2) = layer_entry(chain, k)?;
                recs.push(record("h1", vec![k], h1, None));
                recs.push(record("h2", vec![k], h2, None));
            }
        }
        Query::Eta => {
            for (j, k) in pairs() {
                let (e1, e2) = eta(chain, k, j)?;
                recs.push(record("eta1", vec![k, j], e1, None));
                recs.push(record("eta2", vec![k, j], e2, None));
            }
        }
        Query::Ab => {
            for (j, k) in pairs() {
                let r = ab_ratios(chain, j, k)?;
                recs.push(record("A", vec![j, k], r.a, None));
                recs.push(record("B", vec![j, k], r.b, None));
                recs.push(record("max_term", vec![j, k], r.max_term, None));
            }
        }
        Query::Skip | Query::Joint => {
            let k_max = cfg.k.iter().max().copied().unwrap_or(1);
            let dtab = table(cfg, chain, 1, 2 * k_max + 2)?;
            let push = |recs: &mut Vec<ExactRecord>, kind: &str, params: Vec<u64>, s: skipwalk::exact::SkipProbability| {
                recs.push(ExactRecord {
                    kind: kind.into(),
                    params,
                    value: s.value,
                    channels: Some(s.channels),
                    residual: None,
                    horizon: Some(s.horizon),
                });
            };
            if q == Query::Skip {
                for &k in &cfg.k {
                    push(&mut recs, "skip", vec![k], skip_prob(chain, &dtab, k)?);
                }
            } else {
                for (j, k) in pairs() {
                    push(&mut recs, "joint", vec![j, k], joint_skip_prob(chain, &dtab, j, k)?);
                }
            }
        }
        Query::Escape => {
            let dtab = table(cfg, chain, 1, a + 2)?;
            let v = escape_to_infinity(&dtab, a, b)?;
            let mut r = record("escape", vec![a, b], v, None);
            r.horizon = Some(dtab.top().n_used);
            recs.push(r);
        }
    }
    let rows: Vec<ExactRow> = recs
        .iter()
        .map(|r| ExactRow {
            kind: r.kind.clone(),
            params: r.params.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            value: r.value,
            residual: r.residual,
            horizon: r.horizon,
        })
        .collect();
    Ok(Rendered::from_rows(&rows, &recs))
}

#[derive(Serialize)]
struct SkipRow {
    k: u64,
    j: Option<u64>,
    count: u64,
    freq: f64,
    se: f64,
}

#[derive(Serialize)]
struct GrowthRecord<'a, G: Serialize> {
    spec: &'a PerturbationSpec,
    seed: u64,
    replicas: u64,
    growth: &'a G,
}

fn simulate(cfg: &RunConfig, chain: &ChainParams) -> Result<Rendered, Error> {
    if !cfg.levels.is_empty() {
        let top = *cfg.levels.iter().max().unwrap();
        let dtab = table(cfg, chain, 1, top + 2)?;
        let g = count_growth(chain, &dtab, &cfg.levels, cfg.replicas, cfg.seed, cfg.max_steps, Resolution::Exact)?;
        let rec = GrowthRecord { spec: &cfg.spec, seed: cfg.seed, replicas: cfg.replicas, growth: &g };
        return Ok(Rendered::from_rows(&g.rows(), &rec));
    }
    let k_max = *cfg.k.iter().chain(&cfg.j).max().unwrap();
    let mut exp = SkipExperiment::new(cfg.spec.clone(), 2 * k_max + 1, cfg.replicas, cfg.seed)?;
    exp.max_steps = cfg.max_steps;
    let dtab = table(cfg, chain, 1, exp.stop_level() + 2)?;
    let pairs: Vec<(u64, u64)> = cfg.j.iter().flat_map(|&j| cfg.k.iter().filter(move |&&k| j < k).map(move |&k| (j, k))).collect();
    let stats = estimate_skip(&exp, &dtab, &cfg.k, &pairs)?;
    let mut rows: Vec<SkipRow> = stats
        .layers
        .iter()
        .map(|l| SkipRow { k: l.k, j: None, count: l.freq.count, freq: l.freq.freq, se: l.freq.se })
        .collect();
    rows.extend(stats.pairs.iter().map(|p| SkipRow { k: p.k, j: Some(p.j), count: p.freq.count, freq: p.freq.freq, se: p.freq.se }));
    #[derive(Serialize)]
    struct Rec<'a> {
        experiment: &'a SkipExperiment,
        stats: &'a skipwalk::montecarlo::SkipStats,
    }
    Ok(Rendered::from_rows(&rows, &Rec { experiment: &exp, stats: &stats }))
}

#[derive(Serialize)]
struct VerdictRow {
    verdict: String,
    qualifier: String,
    partial_sum: Option<f64>,
    slope: Option<f64>,
    delta_fit: Option<f64>,
    side_condition: Option<bool>,
}

fn classify(cfg: &RunConfig, chain: &ChainParams) -> Result<Rendered, Error> {
    let method = match (cfg.method, cfg.spec.family()) {
        (Method::Auto, Family::Theorem2 { .. }) => Method::Symbolic,
        (Method::Auto, _) => Method::Numeric,
        (m, _) => m,
    };
    let v: Verdict = match method {
        Method::Symbolic => match cfg.spec.family() {
            Family::Theorem2 { beta } => classify_theorem2(*beta)?,
            _ => return Err(Error::Argument("symbolic classification needs the theorem2 family".into())),
        },
        Method::Numeric => {
            let dtab = table(cfg, chain, cfg.n_lo, cfg.n_hi)?;
            classify_numeric(&dtab, cfg.n_lo.max(2), cfg.n_hi, cfg.delta)?
        }
        Method::Recurrence => {
            let dtab = table(cfg, chain, 1, cfg.n_hi)?;
            let r = recurrence_check(&dtab)?;
            #[derive(Serialize)]
            struct Rec {
                recurrence: String,
            }
            let rec = Rec { recurrence: r.to_string() };
            return Ok(Rendered::from_rows(&[&rec], &rec));
        }
        Method::Auto => unreachable!(),
    };
    let d = v.diagnostics.as_ref();
    let row = VerdictRow {
        verdict: v.verdict.to_string(),
        qualifier: v.qualifier.clone(),
        partial_sum: d.map(|d| d.partial_sum),
        slope: d.map(|d| d.slope),
        delta_fit: d.map(|d| d.delta_fit),
        side_condition: d.map(|d| d.side_condition),
    };
    Ok(Rendered::from_rows(&[row], &v))
}

fn verify_cmd(cfg: &RunConfig) -> Result<Outcome, Error> {
    let vc = VerifyConfig {
        tol: cfg.tol,
        n_cap: cfg.n_cap,
        seed: cfg.seed,
        eps: cfg.eps,
        grid: Grid { lo: cfg.n_lo, hi: cfg.n_hi, step: cfg.step },
        mc_ks: cfg.k.clone(),
        mc_replicas: cfg.replicas,
        ..VerifyConfig::new(cfg.spec.clone())
    };
    let report = verify::run(&vc)?;
    let mut rendered = if cfg.format == crate::config::Format::Table {
        Rendered::from_rows(&report.sections, &report)
    } else {
        Rendered::from_rows(&report.records, &report)
    };
    if rendered.headers.is_empty() {
        rendered.headers = ["section", "name", "params", "lhs", "rhs", "margin", "passed"].map(String::from).to_vec();
    }
    Ok(Outcome { rendered, code: if report.passed { 0 } else { EXIT_VERIFY } })
}

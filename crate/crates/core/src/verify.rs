//! Numerical verification of the bounds on hitting and skip probabilities.
//!
//! Every check is an inequality `lhs <= rhs` evaluated on one instance; the
//! margin is `rhs - lhs`, and a check passes when the margin is at least
//! `-slack * max(|lhs|, |rhs|)`.

use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contfrac::compute_tails;
use crate::criteria::INFINITE_PROB_LOWER;
use crate::dseries::{DStatus, DTable};
use crate::error::{Error, Result};
use crate::exact::{ab_ratios, escape_check, eta, joint_skip_prob, p_abc, sandwich_bounds, skip_prob, SkipProbability};
use crate::montecarlo::rng::{replica_rng, WalkRng};
use crate::montecarlo::{estimate_skip, SkipExperiment};
use crate::perturbation::{ChainParams, PerturbationSpec};

/// Allowance for rounding in the sandwich and escape checks.
pub const ROUNDING_SLACK: f64 = 1e-12;
/// Allowance on the `eta >= 11/27` check.
pub const ETA_SLACK: f64 = 1e-6;
/// Monte Carlo agreement width in standard errors.
pub const MC_WIDTH: f64 = 3.0;
/// Required relative gap between finite- and infinite-horizon escape.
pub const LIMIT_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub section: &'static str,
    pub name: &'static str,
    pub params: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub passed: bool,
}

impl CheckRecord {
    pub fn new(section: &'static str, name: &'static str, params: String, lhs: f64, rhs: f64, slack: f64) -> Self {
        let margin = rhs - lhs;
        let passed = margin >= -slack * lhs.abs().max(rhs.abs()) && !margin.is_nan();
        Self { section, name, params, lhs, rhs, margin, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionSummary {
    pub section: &'static str,
    pub checks: usize,
    pub failures: usize,
    pub min_margin: Option<f64>,
    /// Instance with the smallest margin.
    pub tightest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl SectionSummary {
    pub fn of(section: &'static str, records: &[CheckRecord]) -> Self {
        let mine: Vec<&CheckRecord> = records.iter().filter(|r| r.section == section).collect();
        let tight = mine.iter().min_by(|a, b| a.margin.total_cmp(&b.margin));
        Self {
            section,
            checks: mine.len(),
            failures: mine.iter().filter(|r| !r.passed).count(),
            min_margin: tight.map(|r| r.margin),
            tightest: tight.map(|r| format!("{} {}", r.name, r.params)),
            skipped: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Inclusive arithmetic grid of layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: u64,
    pub hi: u64,
    pub step: u64,
}

impl Grid {
    pub fn points(&self) -> Vec<u64> {
        (self.lo..=self.hi).step_by(self.step.max(1) as usize).collect()
    }
}

/// Uniform integer in `lo..=hi`.
fn uniform(rng: &mut WalkRng, lo: u64, hi: u64) -> u64 {
    lo + ((rng.next_u64() as u128 * (hi - lo + 1) as u128) >> 64) as u64
}

fn inv_d(dtab: &DTable, m: u64) -> Result<f64> {
    match dtab.status(m)? {
        DStatus::DivergentSuspected => Ok(0.0),
        _ => Ok(1.0 / dtab.d(m)?),
    }
}

fn divergent(dtab: &DTable, m: u64) -> Result<bool> {
    Ok(dtab.status(m)? == DStatus::DivergentSuspected)
}

/// Tails and limits covering indices up to `hi`.
pub fn build_table(chain: &ChainParams, hi: u64, tol: f64, n_cap: u64) -> Result<DTable> {
    let tails = compute_tails(chain, 1, n_cap.max(hi + 2), 1e-15)?;
    DTable::build(tails, 1, hi, tol, n_cap.max(hi + 2))
}

/// Random `(a, b, c)` with `1 <= a < b < c <= c_max`; `P(a,b,c)` against its
/// bounds from partial `D` sums.
pub fn sandwich_suite(specs: &[PerturbationSpec], instances: usize, c_max: u64, seed: u64) -> Result<Vec<CheckRecord>> {
    if c_max < 3 || specs.is_empty() {
        return Err(Error::Argument("sandwich suite needs c_max >= 3 and a family".into()));
    }
    let chains: Vec<ChainParams> = specs.iter().cloned().map(ChainParams::new).collect();
    let tails = chains.iter().map(|c| compute_tails(c, 1, c_max + 2, 1e-15)).collect::<Result<Vec<_>>>()?;
    let out: Vec<Vec<CheckRecord>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let f = i % chains.len();
            let a = uniform(&mut rng, 1, c_max - 2);
            let b = uniform(&mut rng, a + 1, c_max - 1);
            let c = uniform(&mut rng, b + 1, c_max);
            let p = p_abc(&chains[f], a, b, c)?.value;
            let (lo, hi) = sandwich_bounds(&tails[f], a, b, c)?;
            let params = format!("family={};a={a};b={b};c={c}", specs[f].label());
            Ok(vec![
                CheckRecord::new("sandwich", "lower", params.clone(), lo, p, ROUNDING_SLACK),
                CheckRecord::new("sandwich", "upper", params, p, hi, ROUNDING_SLACK),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Finite-horizon escape `1 - P(a,b,c)`, `b` in `{a+1, a+2}`, against its
/// bounds and against the infinite-horizon value.
pub fn escape_suite(specs: &[PerturbationSpec], instances: usize, c_max: u64, seed: u64, tol: f64, n_cap: u64) -> Result<Vec<CheckRecord>> {
    if c_max < 4 || specs.is_empty() {
        return Err(Error::Argument("escape suite needs c_max >= 4 and a family".into()));
    }
    let chains: Vec<ChainParams> = specs.iter().cloned().map(ChainParams::new).collect();
    let tables = chains.iter().map(|c| build_table(c, c_max + 1, tol, n_cap)).collect::<Result<Vec<_>>>()?;
    let out: Vec<Vec<CheckRecord>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed ^ 0xe5ca_9e00, i as u64);
            let f = i % chains.len();
            let a = uniform(&mut rng, 1, c_max - 3);
            let b = a + uniform(&mut rng, 1, 2);
            let c = uniform(&mut rng, b + 1, c_max);
            let e = escape_check(&chains[f], &tables[f], a, b, c)?;
            let d_err = if divergent(&tables[f], a)? { 0.0 } else { tables[f].rel_err(a)? };
            let slack = ROUNDING_SLACK + 2.0 * d_err;
            let params = format!("family={};a={a};b={b};c={c}", specs[f].label());
            Ok(vec![
                CheckRecord::new("escape", "lower", params.clone(), e.lower, e.finite, ROUNDING_SLACK),
                CheckRecord::new("escape", "upper", params.clone(), e.finite, e.upper, ROUNDING_SLACK),
                CheckRecord::new("escape", "limit", params, e.infinite, e.finite, slack),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Relative gap `(1 - P(a, a+1, a+horizon)) / (1/D(a)) - 1` below [`LIMIT_GAP`].
pub fn escape_limit_gap(chain: &ChainParams, dtab: &DTable, a: u64, horizon: u64) -> Result<CheckRecord> {
    let e = escape_check(chain, dtab, a, a + 1, a + horizon)?;
    let gap = if e.infinite > 0.0 { (e.finite - e.infinite).abs() / e.infinite } else { f64::INFINITY };
    let params = format!("family={};a={a};c={}", chain.spec().label(), a + horizon);
    Ok(CheckRecord::new("escape-limit", "relative-gap", params, gap, LIMIT_GAP, 0.0))
}

/// Operational threshold for the layer bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct K0 {
    pub eps: f64,
    /// First grid index from which `D(2k+1)/D(2k) <= 1 + eps` holds on the rest of the grid.
    pub ratio_k0: Option<u64>,
    /// First grid index from which `eta_{2k,2k}(2) >= 11/27` holds on the rest of the grid.
    pub eta_k0: Option<u64>,
    pub k0: Option<u64>,
}

fn first_tail_start(points: &[u64], ok: &[bool]) -> Option<u64> {
    let bad = ok.iter().rposition(|&o| !o);
    match bad {
        None => points.first().copied(),
        Some(i) => points.get(i + 1).copied(),
    }
}

/// Needs `D` up to `2 * grid.hi + 1`. For a divergent `D` the ratio condition is vacuous.
pub fn k0_proxy(chain: &ChainParams, dtab: &DTable, grid: Grid, eps: f64) -> Result<K0> {
    let points = grid.points();
    let ratio_ok = points
        .iter()
        .map(|&k| {
            if divergent(dtab, 2 * k)? || divergent(dtab, 2 * k + 1)? {
                return Ok(true);
            }
            Ok(dtab.d(2 * k + 1)? / dtab.d(2 * k)? <= 1.0 + eps)
        })
        .collect::<Result<Vec<bool>>>()?;
    let eta_ok = points
        .par_iter()
        .map(|&k| Ok(eta(chain, 2 * k, 2 * k)?.1 >= INFINITE_PROB_LOWER))
        .collect::<Result<Vec<bool>>>()?;
    let ratio_k0 = first_tail_start(&points, &ratio_ok);
    let eta_k0 = first_tail_start(&points, &eta_ok);
    let k0 = match (ratio_k0, eta_k0) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    Ok(K0 { eps, ratio_k0, eta_k0, k0 })
}

/// The single-layer and pair bounds on the grid points `>= k0`.
pub fn layer_bound_suite(chain: &ChainParams, dtab: &DTable, grid: Grid, eps: f64, k0: u64) -> Result<Vec<CheckRecord>> {
    let ks: Vec<u64> = grid.points().into_iter().filter(|&k| k >= k0).collect();
    let singles: Vec<SkipProbability> = ks.par_iter().map(|&k| skip_prob(chain, dtab, k)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (s, &k) in singles.iter().zip(&ks) {
        let lo = chain.p(2 * k)? * inv_d(dtab, 2 * k + 1)?;
        let hi = inv_d(dtab, 2 * k)?;
        out.push(CheckRecord::new("layer-bounds", "single-lower", format!("k={k}"), lo, s.value, 0.0));
        out.push(CheckRecord::new("layer-bounds", "single-upper", format!("k={k}"), s.value, hi, 0.0));
    }
    let pairs: Vec<(usize, usize)> = (0..ks.len()).flat_map(|a| (a + 1..ks.len()).map(move |b| (a, b))).collect();
    let tails = dtab.tails();
    let recs: Vec<Vec<CheckRecord>> = pairs
        .par_iter()
        .map(|&(ia, ib)| {
            let (j, k) = (ks[ia], ks[ib]);
            let joint = joint_skip_prob(chain, dtab, j, k)?.value;
            let params = format!("j={j};k={k}");
            let lower = chain.p(2 * j)? * chain.p(2 * k)? / (1.0 + eps)
                / crate::dseries::d_partial(tails, 2 * j, 2 * k)?
                * inv_d(dtab, 2 * k + 1)?;
            let mut v = vec![CheckRecord::new("layer-bounds", "pair-lower", params.clone(), lower, joint, 0.0)];
            if !divergent(dtab, 2 * j + 1)? {
                let upper = 27.0 / 11.0 * (1.0 + eps).powi(2) * singles[ia].value * singles[ib].value * dtab.d(2 * j + 1)?
                    / crate::dseries::d_partial(tails, 2 * j + 1, 2 * k)?;
                v.push(CheckRecord::new("layer-bounds", "pair-upper", params, joint, upper, 0.0));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    out.extend(recs.into_iter().flatten());
    Ok(out)
}

/// `A(j,k) <= 1` and `B(j,k) <= 1` on the grid points `>= k_from`, plus the
/// recorded (not asserted) max-term.
pub fn ab_suite(chain: &ChainParams, grid: Grid, k_from: u64) -> Result<(Vec<CheckRecord>, f64)> {
    let ks: Vec<u64> = grid.points().into_iter().filter(|&k| k >= k_from).collect();
    let pairs: Vec<(u64, u64)> = (0..ks.len()).flat_map(|a| (a + 1..ks.len()).map(|b| (ks[a], ks[b])).collect::<Vec<_>>()).collect();
    let res: Vec<(Vec<CheckRecord>, f64)> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let r = ab_ratios(chain, j, k)?;
            let params = format!("j={j};k={k}");
            Ok((
                vec![
                    CheckRecord::new("ab", "A", params.clone(), r.a, 1.0, 0.0),
                    CheckRecord::new("ab", "B", params, r.b, 1.0, 0.0),
                ],
                r.max_term,
            ))
        })
        .collect::<Result<_>>()?;
    let max_term = res.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((res.into_iter().flat_map(|r| r.0).collect(), max_term))
}

/// `eta_{2k,2k}(2) >= 11/27 - ETA_SLACK` for each `k`.
pub fn eta_suite(chain: &ChainParams, ks: &[u64]) -> Result<Vec<CheckRecord>> {
    ks.par_iter()
        .map(|&k| {
            let e2 = eta(chain, 2 * k, 2 * k)?.1;
            Ok(CheckRecord::new("eta", "eta-lower", format!("k={k}"), INFINITE_PROB_LOWER - ETA_SLACK, e2, 0.0))
        })
        .collect()
}

/// Empirical skip frequencies within [`MC_WIDTH`] standard errors of the exact values.
pub fn mc_suite(spec: &PerturbationSpec, dtab: &DTable, ks: &[u64], replicas: u64, seed: u64) -> Result<Vec<CheckRecord>> {
    let Some(&k_max) = ks.iter().max() else { return Ok(Vec::new()) };
    let chain = ChainParams::new(spec.clone());
    let exp = SkipExperiment::new(spec.clone(), 2 * k_max + 1, replicas, seed)?;
    let stats = estimate_skip(&exp, dtab, ks, &[])?;
    ks.iter()
        .zip(&stats.layers)
        .map(|(&k, l)| {
            let exact = skip_prob(&chain, dtab, k)?.value;
            let params = format!("k={k};replicas={replicas};seed={seed}");
            Ok(CheckRecord::new("mc", "within-3se", params, (l.freq.freq - exact).abs(), MC_WIDTH * l.freq.se, 0.0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub spec: PerturbationSpec,
    pub tol: f64,
    pub n_cap: u64,
    pub seed: u64,
    pub eps: f64,
    pub sandwich_instances: usize,
    pub escape_instances: usize,
    pub c_max: u64,
    pub grid: Grid,
    pub mc_ks: Vec<u64>,
    pub mc_replicas: u64,
}

impl VerifyConfig {
    pub fn new(spec: PerturbationSpec) -> Self {
        Self {
            spec,
            tol: 1e-11,
            n_cap: 1 << 20,
            seed: 20261014,
            eps: 0.05,
            sandwich_instances: 500,
            escape_instances: 100,
            c_max: 2000,
            grid: Grid { lo: 50, hi: 1000, step: 50 },
            mc_ks: vec![30, 50, 100],
            mc_replicas: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub k0: K0,
    /// Largest `max(A, B) / (h_k(1) eta + h_k(2))` seen; measured only.
    pub ab_max_term: f64,
    pub sections: Vec<SectionSummary>,
    pub records: Vec<CheckRecord>,
    pub passed: bool,
}

/// Runs every check for one family.
pub fn run(config: &VerifyConfig) -> Result<VerifyReport> {
    let chain = ChainParams::new(config.spec.clone());
    let specs = [config.spec.clone()];
    let hi = (2 * config.grid.hi + 2).max(config.c_max + 1).max(2 * config.mc_ks.iter().max().copied().unwrap_or(0) + 4);
    let dtab = build_table(&chain, hi, config.tol, config.n_cap)?;
    let mut records = sandwich_suite(&specs, config.sandwich_instances, config.c_max, config.seed)?;
    records.extend(escape_suite(&specs, config.escape_instances, config.c_max, config.seed, config.tol, config.n_cap)?);
    let k0 = k0_proxy(&chain, &dtab, config.grid, config.eps)?;
    let mut skipped = Vec::new();
    let mut ab_max_term = 0.0;
    match k0.k0 {
        Some(k) => records.extend(layer_bound_suite(&chain, &dtab, config.grid, config.eps, k)?),
        None => skipped.push(("layer-bounds", "no grid index satisfies the threshold conditions")),
    }
    match k0.ratio_k0 {
        Some(k) => {
            let (ab, m) = ab_suite(&chain, config.grid, k)?;
            records.extend(ab);
            ab_max_term = m;
            let ks: Vec<u64> = config.grid.points().into_iter().filter(|&x| x >= k).collect();
            records.extend(eta_suite(&chain, &ks)?);
        }
        None => {
            skipped.push(("ab", "no grid index satisfies the ratio condition"));
            skipped.push(("eta", "no grid index satisfies the ratio condition"));
        }
    }
    records.extend(mc_suite(&config.spec, &dtab, &config.mc_ks, config.mc_replicas, config.seed)?);
    let mut sections: Vec<SectionSummary> = ["sandwich", "escape", "layer-bounds", "ab", "eta", "mc"]
        .iter()
        .map(|s| SectionSummary::of(s, &records))
        .collect();
    for (name, why) in skipped {
        if let Some(s) = sections.iter_mut().find(|s| s.section == name) {
            s.skipped = Some(why.into());
        }
    }
    let passed = sections.iter().all(SectionSummary::passed);
    Ok(VerifyReport { config: config.clone(), k0, ab_max_term, sections, records, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(spec: PerturbationSpec) -> VerifyConfig {
        VerifyConfig {
            sandwich_instances: 20,
            escape_instances: 10,
            c_max: 300,
            grid: Grid { lo: 20, hi: 120, step: 25 },
            mc_ks: vec![10],
            mc_replicas: 20_000,
            ..VerifyConfig::new(spec)
        }
    }

    #[test]
    fn record_margin_and_slack() {
        assert!(CheckRecord::new("s", "n", String::new(), 1.0, 1.0, 0.0).passed);
        assert!(!CheckRecord::new("s", "n", String::new(), 1.0 + 1e-9, 1.0, 0.0).passed);
        assert!(CheckRecord::new("s", "n", String::new(), 1.0 + 1e-13, 1.0, 1e-12).passed);
        assert!(!CheckRecord::new("s", "n", String::new(), f64::NAN, 1.0, 1.0).passed);
    }

    #[test]
    fn tail_start() {
        assert_eq!(first_tail_start(&[1, 2, 3], &[true, false, true]), Some(3));
        assert_eq!(first_tail_start(&[1, 2, 3], &[true, true, false]), None);
        assert_eq!(first_tail_start(&[1, 2, 3], &[true, true, true]), Some(1));
    }

    #[test]
    fn zero_family_passes() {
        let r = run(&small(PerturbationSpec::zero())).unwrap();
        assert!(r.passed, "{:?}", r.sections);
        assert!(r.records.iter().filter(|c| c.section == "mc").all(|c| c.lhs == 0.0));
    }

    #[test]
    fn theorem2_passes() {
        let r = run(&small(PerturbationSpec::theorem2(1.0).unwrap())).unwrap();
        assert!(r.passed, "{:?}", r.sections);
        assert!(r.k0.k0.is_some());
        assert!(r.sections.iter().all(|s| s.checks > 0));
    }

    #[test]
    fn deterministic() {
        let c = small(PerturbationSpec::theorem2(2.0).unwrap());
        assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    }
}

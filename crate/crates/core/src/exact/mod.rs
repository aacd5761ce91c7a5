//! Exact hitting and splitting probabilities from boundary-value systems, and
//! the layer skip probabilities assembled from them.

mod banded;
mod skip;

pub use banded::Boundary;
pub use skip::{ab_ratios, joint_skip_prob, skip_prob, AbRatios, Channel, SkipProbability};

use std::fmt;

use serde::{Serialize, Serializer};

use crate::contfrac::TailTable;
use crate::dseries::{d_partial, DStatus, DTable};
use crate::error::{Error, Result};
use crate::perturbation::ChainParams;

/// Largest residual accepted from a linear solve.
pub const RESIDUAL_LIMIT: f64 = 1e-10;

/// Value function on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSolution {
    pub lo: u64,
    pub hi: u64,
    pub values: Vec<f64>,
    pub residual: f64,
}

impl IntervalSolution {
    pub fn at(&self, n: u64) -> f64 {
        self.values[(n - self.lo) as usize]
    }
}

fn pq(chain: &ChainParams) -> impl Fn(u64) -> Result<(f64, f64)> + '_ {
    move |n| Ok((chain.p(n)?, chain.q(n)?))
}

fn accept(residual: f64) -> Result<()> {
    if residual > RESIDUAL_LIMIT || residual.is_nan() {
        return Err(Error::Residual { residual });
    }
    Ok(())
}

/// Solves `h(n) = q_n h(n-1) + p_n h(n+2)` on `lo..=hi`.
pub fn solve_interval(chain: &ChainParams, lo: u64, hi: u64, boundary: Boundary) -> Result<IntervalSolution> {
    let mut all = solve_many(chain, lo, hi, &[boundary])?;
    Ok(all.pop().unwrap())
}

/// Several boundary problems on one interval.
pub fn solve_many(chain: &ChainParams, lo: u64, hi: u64, bounds: &[Boundary]) -> Result<Vec<IntervalSolution>> {
    if lo > hi {
        return Err(Error::Argument(format!("empty interval {lo}..={hi}")));
    }
    chain.check_index(hi)?;
    let (values, residual) = banded::solve(lo, hi, pq(chain), bounds)?;
    accept(residual)?;
    Ok(values.into_iter().map(|values| IntervalSolution { lo, hi, values, residual }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    P,
    Q,
    Q1,
    Q2,
    H1,
    H2,
    Eta1,
    Eta2,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::P => "P",
            QueryKind::Q => "Q",
            QueryKind::Q1 => "Q1",
            QueryKind::Q2 => "Q2",
            QueryKind::H1 => "h1",
            QueryKind::H2 => "h2",
            QueryKind::Eta1 => "eta1",
            QueryKind::Eta2 => "eta2",
        })
    }
}

impl Serialize for QueryKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One exact hitting-probability query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingSolution {
    pub kind: QueryKind,
    pub params: Vec<u64>,
    pub value: f64,
    pub residual: f64,
}

/// `P(a,b,c)` together with `Q1(a,b,c)` and `Q2(a,b,c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Splitting {
    pub p: f64,
    pub q1: f64,
    pub q2: f64,
    pub residual: f64,
}

impl Splitting {
    pub fn q(&self) -> f64 {
        self.q1 + self.q2
    }
}

fn check_abc(a: u64, b: u64, c: u64) -> Result<()> {
    if !(1 <= a && a <= b && b <= c) {
        return Err(Error::Argument(format!("need 1 <= a <= b <= c, got ({a}, {b}, {c})")));
    }
    Ok(())
}

/// Solves for `P`, `Q1`, `Q2` from `b` with absorption at `a` and at `c`, `c + 1`.
pub fn splitting(chain: &ChainParams, a: u64, b: u64, c: u64) -> Result<Splitting> {
    check_abc(a, b, c)?;
    if b == a {
        return Ok(Splitting { p: 1.0, q1: 0.0, q2: 0.0, residual: 0.0 });
    }
    if b == c {
        return Ok(Splitting { p: 0.0, q1: 1.0, q2: 0.0, residual: 0.0 });
    }
    let bounds = [
        Boundary { below: 1.0, above: [0.0, 0.0] },
        Boundary { below: 0.0, above: [1.0, 0.0] },
        Boundary { below: 0.0, above: [0.0, 1.0] },
    ];
    let sols = solve_many(chain, a + 1, c - 1, &bounds)?;
    let s = Splitting {
        p: sols[0].at(b),
        q1: sols[1].at(b),
        q2: sols[2].at(b),
        residual: sols[0].residual,
    };
    let gap = (s.p + s.q1 + s.q2 - 1.0).abs();
    if gap > RESIDUAL_LIMIT {
        return Err(Error::Consistency(format!("P + Q1 + Q2 - 1 = {gap:e} at ({a}, {b}, {c})")));
    }
    Ok(s)
}

fn abc_query(chain: &ChainParams, kind: QueryKind, a: u64, b: u64, c: u64) -> Result<HittingSolution> {
    let s = splitting(chain, a, b, c)?;
    let value = match kind {
        QueryKind::P => s.p,
        QueryKind::Q => s.q(),
        QueryKind::Q1 => s.q1,
        QueryKind::Q2 => s.q2,
        _ => unreachable!("not an (a,b,c) query"),
    };
    Ok(HittingSolution { kind, params: vec![a, b, c], value, residual: s.residual })
}

/// Probability of hitting `[0, a]` before `[c, inf)` from `b`.
pub fn p_abc(chain: &ChainParams, a: u64, b: u64, c: u64) -> Result<HittingSolution> {
    abc_query(chain, QueryKind::P, a, b, c)
}

pub fn q_abc(chain: &ChainParams, a: u64, b: u64, c: u64) -> Result<HittingSolution> {
    abc_query(chain, QueryKind::Q, a, b, c)
}

/// Probability of entering `[c, inf)` at `c` before hitting `a`.
pub fn q1_abc(chain: &ChainParams, a: u64, b: u64, c: u64) -> Result<HittingSolution> {
    abc_query(chain, QueryKind::Q1, a, b, c)
}

/// Probability of entering `[c, inf)` at `c + 1` before hitting `a`.
pub fn q2_abc(chain: &ChainParams, a: u64, b: u64, c: u64) -> Result<HittingSolution> {
    abc_query(chain, QueryKind::Q2, a, b, c)
}

/// `(h_k(1), h_k(2))`: first entry into `{2k, 2k+1}` from 0 at `2k` or `2k + 1`.
pub fn layer_entry(chain: &ChainParams, k: u64) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::Argument("layer index must be at least 1".into()));
    }
    let bounds = [
        Boundary { below: 0.0, above: [1.0, 0.0] },
        Boundary { below: 0.0, above: [0.0, 1.0] },
    ];
    let sols = solve_many(chain, 0, 2 * k - 1, &bounds)?;
    Ok((sols[0].at(0), sols[1].at(0)))
}

/// `(eta_{k,j}(1), eta_{k,j}(2))`: entry into `[j+1, inf)` from `k` at `j + 1` or `j + 2`.
pub fn eta(chain: &ChainParams, k: u64, j: u64) -> Result<(f64, f64)> {
    if !(1 <= k && k <= j) {
        return Err(Error::Argument(format!("need 1 <= k <= j, got k = {k}, j = {j}")));
    }
    let bounds = [
        Boundary { below: 0.0, above: [1.0, 0.0] },
        Boundary { below: 0.0, above: [0.0, 1.0] },
    ];
    let sols = solve_many(chain, 0, j, &bounds)?;
    Ok((sols[0].at(k), sols[1].at(k)))
}

/// `1 - P(a, b, inf)` for `b` in `{a + 1, a + 2}`: `1/D(a)` or `(1 + U_{a+1})/D(a)`.
/// A divergent `D(a)` gives 0.
pub fn escape_to_infinity(dtab: &DTable, a: u64, b: u64) -> Result<f64> {
    let numerator = match b.checked_sub(a) {
        Some(1) => 1.0,
        Some(2) => 1.0 + dtab.tails().u(a + 1),
        _ => return Err(Error::Argument(format!("escape needs b in {{a+1, a+2}}, got a = {a}, b = {b}"))),
    };
    if dtab.status(a)? == DStatus::DivergentSuspected {
        return Ok(0.0);
    }
    Ok(numerator / dtab.d(a)?)
}

/// `1 - P(a, b, c)` at a finite horizon against `escape_to_infinity` and the
/// bounds `num / D(a, c + 1) <= 1 - P(a, b, c) <= num / D(a, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EscapeCheck {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub infinite: f64,
    pub finite: f64,
    pub lower: f64,
    pub upper: f64,
}

impl EscapeCheck {
    /// Finite value between the bounds and above the limit, up to `slack` relative.
    pub fn holds(&self, slack: f64) -> bool {
        let s = slack * self.finite;
        self.lower <= self.finite + s && self.finite <= self.upper + s && self.infinite <= self.finite + s
    }
}

pub fn escape_check(chain: &ChainParams, dtab: &DTable, a: u64, b: u64, c: u64) -> Result<EscapeCheck> {
    if c <= b {
        return Err(Error::Argument(format!("horizon c = {c} must exceed b = {b}")));
    }
    let infinite = escape_to_infinity(dtab, a, b)?;
    let finite = splitting(chain, a, b, c)?.q();
    let num = dtab.partial(a, b)?;
    let lower = num / dtab.partial(a, c + 1)?;
    let upper = num / dtab.partial(a, c)?;
    Ok(EscapeCheck { a, b, c, infinite, finite, lower, upper })
}

/// Bounds on `P(a,b,c)` from `1 - D(a,b)/D(a,c)` and `1 - D(a,b)/D(a,c+1)`,
/// with `D(a,a) = 0`. Evaluated as `prod_{a<i<=b} U_i D(b,n) / D(a,n)` to
/// avoid cancellation when `P` is small.
pub fn sandwich_bounds(tails: &TailTable, a: u64, b: u64, c: u64) -> Result<(f64, f64)> {
    check_abc(a, b, c)?;
    if c == a {
        return Ok((1.0, 1.0));
    }
    let lead: f64 = (a + 1..=b).map(|i| tails.ln_u(i)).sum::<f64>().exp();
    let bound = |n: u64| -> Result<f64> {
        if n == b {
            return Ok(0.0);
        }
        Ok(lead * d_partial(tails, b, n)? / d_partial(tails, a, n)?)
    };
    Ok((bound(c)?, bound(c + 1)?))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::PerturbationSpec;

    fn critical() -> ChainParams {
        ChainParams::new(PerturbationSpec::zero())
    }

    #[test]
    fn constant_boundaries() {
        let c = ChainParams::new(PerturbationSpec::theorem2(1.0).unwrap());
        let ones = solve_interval(&c, 3, 50, Boundary { below: 1.0, above: [1.0, 1.0] }).unwrap();
        assert!(ones.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let zeros = solve_interval(&c, 3, 50, Boundary { below: 0.0, above: [0.0, 0.0] }).unwrap();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
        assert!(solve_interval(&c, 5, 4, Boundary { below: 0.0, above: [0.0, 0.0] }).is_err());
    }

    #[test]
    fn hand_solved_two_state_system() {
        // Interior {2, 3}: h2 = q + p h4 = 2/3, h3 = q h2 + p h5 = 4/9.
        let s = solve_interval(&critical(), 2, 3, Boundary { below: 1.0, above: [0.0, 0.0] }).unwrap();
        assert!((s.at(2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.at(3) - 4.0 / 9.0).abs() < 1e-15);
        assert!((p_abc(&critical(), 1, 2, 4).unwrap().value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn abc_edge_cases() {
        let c = critical();
        assert_eq!(p_abc(&c, 3, 3, 9).unwrap().value, 1.0);
        assert_eq!(p_abc(&c, 3, 9, 9).unwrap().value, 0.0);
        assert!(p_abc(&c, 3, 2, 9).is_err());
        assert!(p_abc(&c, 0, 2, 9).is_err());
        let p = p_abc(&c, 1, 2, 5).unwrap().value;
        assert!((0.75..=0.8).contains(&p), "{p}");
    }

    #[test]
    fn splitting_matches_mass_propagation() {
        let c = ChainParams::new(PerturbationSpec::power_law(0.2, 0.5).unwrap());
        let s = splitting(&c, 2, 5, 12).unwrap();
        let hit = oracle::absorb(&c, 5, 11, &[2, 12, 13]);
        assert!((s.p - hit[0]).abs() < 1e-11);
        assert!((s.q1 - hit[1]).abs() < 1e-11);
        assert!((s.q2 - hit[2]).abs() < 1e-11);
    }

    #[test]
    fn layer_entry_examples() {
        let c = ChainParams::new(PerturbationSpec::theorem2(1.0).unwrap());
        assert_eq!(layer_entry(&c, 1).unwrap(), (1.0, 0.0));
        for k in [2u64, 7, 40] {
            let (h1, h2) = layer_entry(&c, k).unwrap();
            assert!((h1 + h2 - 1.0).abs() < 1e-12);
        }
        let half = ChainParams::new(PerturbationSpec::constant_p(0.5, 20).unwrap());
        let (h1, h2) = layer_entry(&half, 2).unwrap();
        let hit = oracle::absorb(&half, 0, 3, &[4, 5]);
        assert!((h1 - hit[0]).abs() < 1e-11 && (h2 - hit[1]).abs() < 1e-11);
    }

    #[test]
    fn eta_examples() {
        let c = ChainParams::new(PerturbationSpec::theorem2(1.0).unwrap());
        for k in [1u64, 10, 100] {
            let (e1, e2) = eta(&c, 2 * k, 2 * k).unwrap();
            assert!((e1 + e2 - 1.0).abs() < 1e-12);
            assert!(e2 >= c.p(2 * k).unwrap());
        }
        assert!(eta(&c, 5, 4).is_err());
    }

    #[test]
    fn escape_examples() {
        let halves = TailTable::from_u_values(0, &vec![0.5; 300]);
        let tab = DTable::build(halves, 0, 20, 1e-13, 290).unwrap();
        assert!((escape_to_infinity(&tab, 7, 8).unwrap() - 0.5).abs() < 1e-12);
        assert!(escape_to_infinity(&tab, 7, 10).is_err());

        let z = crate::contfrac::compute_tails(&critical(), 1, 3000, 1e-14).unwrap();
        let tab = DTable::build(z, 1, 100, 1e-10, 3000).unwrap();
        assert_eq!(escape_to_infinity(&tab, 10, 11).unwrap(), 0.0);
    }

    #[test]
    fn theorem2_escape_within_finite_bounds() {
        let c = ChainParams::new(PerturbationSpec::theorem2(2.0).unwrap());
        let t = crate::contfrac::compute_tails(&c, 1, 30_000, 1e-15).unwrap();
        let tab = DTable::build(t, 1, 1000, 1e-11, 30_000).unwrap();
        let chk = escape_check(&c, &tab, 200, 202, 20_000).unwrap();
        assert!(chk.holds(1e-10), "{chk:?}");
        assert!(chk.lower < chk.upper);
    }

    #[test]
    fn sandwich_constant_case() {
        let t = crate::contfrac::compute_tails(&critical(), 1, 100, 1e-14).unwrap();
        let (lo, hi) = sandwich_bounds(&t, 1, 2, 5).unwrap();
        assert!((lo - 0.75).abs() < 1e-15 && (hi - 0.8).abs() < 1e-15);
        assert_eq!(sandwich_bounds(&t, 4, 4, 9).unwrap(), (1.0, 1.0));
    }
}

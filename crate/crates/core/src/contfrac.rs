//! Continued-fraction tails `f^(n) = a_{n+1} / (1 + f^(n+1))` and the
//! reciprocal solution `U_n = 1 / xi_n`, with `U_{n+1} = f^(n)`.
//!
//! Values are carried as deficits `v_n = 1 - U_n`, which satisfy
//! `v_n = (w_n - v_{n+1}) / (2 - v_{n+1})` with `w_n = 2 - a_n`. Near the
//! critical point `v_n ~ 3 r_n` is small, and this form keeps its relative
//! accuracy where `1 - U_n` would cancel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::perturbation::{w_from_r, ChainParams, PerturbationSpec};

const INITIAL_BUFFER: u64 = 64;
const MAX_BUFFER: u64 = 1 << 22;
/// Depth of the local recursion used to evaluate a single deficit.
pub const LOCAL_DEPTH: usize = 64;

/// Tail values on an index window.
#[derive(Debug, Clone, Serialize)]
pub struct TailTable {
    #[serde(skip)]
    chain: Option<ChainParams>,
    /// Index of `deficits[0]`.
    first: u64,
    /// `1 - U_n` for `n` in `first..=first + len - 1`.
    deficits: Vec<f64>,
    pub buffer_used: u64,
    /// Bound on initialization-error contamination at the top of the window.
    pub err_bound: f64,
    /// Accumulated floating-point rounding bound, reported separately.
    pub rounding_bound: f64,
    /// Max difference against a recomputation with doubled buffer.
    pub certificate_diff: f64,
}

impl TailTable {
    /// Synthetic table with prescribed `U_n` for `n = first, first + 1, ...`.
    pub fn from_u_values(first: u64, u: &[f64]) -> Self {
        assert!(!u.is_empty());
        Self {
            chain: None,
            first,
            deficits: u.iter().map(|x| 1.0 - x).collect(),
            buffer_used: 0,
            err_bound: 0.0,
            rounding_bound: 0.0,
            certificate_diff: 0.0,
        }
    }

    pub fn chain(&self) -> Option<&ChainParams> {
        self.chain.as_ref()
    }

    /// Lowest window index.
    pub fn n_lo(&self) -> u64 {
        self.first
    }

    /// Highest index with both `xi_inv` and `f` available.
    pub fn n_hi(&self) -> u64 {
        self.first + self.deficits.len() as u64 - 2
    }

    /// Highest index with `U_n` available (`n_hi + 1`).
    pub fn u_max_index(&self) -> u64 {
        self.first + self.deficits.len() as u64 - 1
    }

    pub fn covers(&self, lo: u64, hi: u64) -> bool {
        lo >= self.first && hi <= self.u_max_index()
    }

    /// `1 - U_n`.
    pub fn deficit(&self, n: u64) -> f64 {
        self.deficits[(n - self.first) as usize]
    }

    /// Deficits `1 - U_n` for `n` in `lo..=hi`.
    pub fn deficit_slice(&self, lo: u64, hi: u64) -> &[f64] {
        &self.deficits[(lo - self.first) as usize..=(hi - self.first) as usize]
    }

    /// `U_n = 1 / xi_n`.
    pub fn u(&self, n: u64) -> f64 {
        1.0 - self.deficit(n)
    }

    pub fn xi_inv(&self, n: u64) -> f64 {
        self.u(n)
    }

    /// `f^(n) = U_{n+1}`.
    pub fn f(&self, n: u64) -> f64 {
        self.u(n + 1)
    }

    /// `ln U_n` computed from the deficit.
    pub fn ln_u(&self, n: u64) -> f64 {
        (-self.deficit(n)).ln_1p()
    }

    /// Rows `(n, r_n, a_n, f_n, xi_inv_n)` over `n_lo..=n_hi`.
    pub fn rows(&self) -> Vec<TailRow> {
        (self.n_lo()..=self.n_hi())
            .map(|n| {
                let (r, a) = match &self.chain {
                    Some(c) if n >= 1 => (c.r(n).ok(), c.a(n).ok()),
                    _ => (None, None),
                };
                TailRow { n, r_n: r, a_n: a, f_n: self.f(n), xi_inv_n: self.xi_inv(n) }
            })
            .collect()
    }

    /// Largest `|f^(n) (1 + f^(n+1)) - a_{n+1}|` over the window.
    pub fn max_recursion_residual(&self) -> Option<f64> {
        let chain = self.chain.as_ref()?;
        let mut worst: f64 = 0.0;
        for n in self.n_lo()..self.n_hi() {
            let a = chain.a(n + 1).ok()?;
            let res = (self.f(n) * (1.0 + self.f(n + 1)) - a).abs();
            worst = worst.max(res);
        }
        Some(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub n: u64,
    pub r_n: Option<f64>,
    pub a_n: Option<f64>,
    pub f_n: f64,
    pub xi_inv_n: f64,
}

struct Pass {
    deficits: Vec<f64>,
    bound: f64,
    rounding: f64,
    worst_factor: (u64, f64),
}

/// One backward pass from `start` down to `lo`, returning deficits on `lo..=top`
/// and the propagated seeding-error bound at `top`.
fn backward_pass(chain: &ChainParams, lo: u64, top: u64, start: u64) -> Result<Pass> {
    let a = |n: u64| chain.a(n);
    // True U_n lies in (a_n / (1 + a_{n+1}), a_n); the seed is clamped into it.
    let a_s = a(start)?;
    let lower_s = a_s / (1.0 + a(start + 1).unwrap_or(a_s));
    let r_s = chain.r(start)?;
    let mut v = 3.0 * r_s;
    let mut u = 1.0 - v;
    if !(u > lower_s && u < a_s) {
        u = 0.5 * (lower_s + a_s);
        v = 1.0 - u;
    }
    let mut err = a_s - lower_s;
    let mut out = vec![0.0; (top - lo + 1) as usize];
    let mut worst = (start, 0.0f64);
    let mut bound_at_top = err;
    let mut rounding = 0.0;
    let mut rounding_at_top = 0.0;
    if start == top {
        out[(top - lo) as usize] = v;
    }
    let mut n = start;
    while n > lo {
        n -= 1;
        let w = chain.two_minus_a(n)?;
        let v_next = v;
        let u_next = u;
        v = (w - v_next) / (2.0 - v_next);
        u = 1.0 - v;
        let a_n = a(n)?;
        let a_next = a(n + 1)?;
        let floor = a_next / (1.0 + a(n + 2)?);
        let y_lo = (u_next - err).max(floor).max(0.0);
        let factor = a_n / ((1.0 + u_next) * (1.0 + y_lo));
        err *= factor;
        rounding = factor * rounding + 4.0 * f64::EPSILON * u.abs().max(1.0);
        let local = u / (1.0 + u_next);
        if local > worst.1 {
            worst = (n, local);
        }
        if n <= top {
            out[(n - lo) as usize] = v;
            if n == top {
                bound_at_top = err;
                rounding_at_top = rounding;
            }
        }
    }
    Ok(Pass { deficits: out, bound: bound_at_top, rounding: rounding.max(rounding_at_top), worst_factor: worst })
}

/// Tail table on `n_lo..=n_hi` (with `U` also on `n_hi + 1`) such that the
/// seeding error at the top of the window is below `tol`.
pub fn compute_tails(chain: &ChainParams, n_lo: u64, n_hi: u64, tol: f64) -> Result<TailTable> {
    if n_lo == 0 || n_lo > n_hi {
        return Err(Error::Argument(format!("invalid window {n_lo}..={n_hi}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tol must be positive, got {tol}")));
    }
    let top = n_hi + 1;
    // A start index needs a_{start + 2}; tables cap how deep we can go.
    let start_cap = chain.max_index().map(|m| m.saturating_sub(2));
    if let Some(cap) = start_cap {
        if cap < top {
            return Err(Error::Range { index: top + 2, lo: 1, hi: chain.max_index().unwrap() });
        }
    }
    let clamp_start = |b: u64| match start_cap {
        Some(cap) => (top + b).min(cap),
        None => top + b,
    };

    let mut buffer = INITIAL_BUFFER;
    let pass = loop {
        let start = clamp_start(buffer);
        let pass = backward_pass(chain, n_lo, top, start)?;
        if pass.bound <= tol {
            break pass;
        }
        let exhausted = buffer >= MAX_BUFFER || start_cap.is_some_and(|c| start >= c);
        if exhausted {
            if pass.worst_factor.1 >= 1.0 {
                return Err(Error::NonContracting {
                    index: pass.worst_factor.0,
                    factor: pass.worst_factor.1,
                });
            }
            return Err(Error::ToleranceNotReached {
                bound: pass.bound,
                tol,
                buffer: start - top,
            });
        }
        buffer *= 2;
    };
    let used = clamp_start(buffer) - top;

    let check = backward_pass(chain, n_lo, top, clamp_start(2 * buffer))?;
    let certificate_diff = pass
        .deficits
        .iter()
        .zip(&check.deficits)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    Ok(TailTable {
        chain: Some(chain.clone()),
        first: n_lo,
        deficits: pass.deficits,
        buffer_used: used,
        err_bound: pass.bound,
        rounding_bound: pass.rounding,
        certificate_diff,
    })
}

/// Deficit `1 - U(x)` at a real argument, by a local backward recursion of
/// fixed depth seeded with `3 r`. Only defined for analytic families.
pub fn deficit_at(spec: &PerturbationSpec, x: f64) -> Option<f64> {
    let top = x + LOCAL_DEPTH as f64;
    let mut v = 3.0 * spec.r_real(top)?;
    for k in (0..LOCAL_DEPTH).rev() {
        let w = w_from_r(spec.r_real(x + k as f64)?);
        v = (w - v) / (2.0 - v);
    }
    Some(v)
}

/// Smallest `n` such that `U_m <= U_{m+1}` for every `m` in `n..n_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityIndex {
    pub n0: u64,
    /// Whether the increase is strict on the whole suffix.
    pub strict: bool,
}

pub fn monotonicity_index(table: &TailTable) -> Option<MonotonicityIndex> {
    let lo = table.n_lo();
    let hi = table.n_hi();
    if lo == hi {
        return Some(MonotonicityIndex { n0: lo, strict: true });
    }
    // Walk down from the top while the weak condition holds.
    let mut n0 = hi;
    let mut strict = true;
    while n0 > lo {
        let (x, y) = (table.xi_inv(n0 - 1), table.xi_inv(n0));
        if x > y {
            break;
        }
        strict &= x < y;
        n0 -= 1;
    }
    if n0 == hi {
        return None;
    }
    Some(MonotonicityIndex { n0, strict })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(spec: PerturbationSpec) -> ChainParams {
        ChainParams::new(spec)
    }

    #[test]
    fn zero_family_fixed_point() {
        let t = compute_tails(&chain(PerturbationSpec::zero()), 1, 500, 1e-14).unwrap();
        for n in t.n_lo()..=t.n_hi() {
            assert_eq!(t.f(n), 1.0);
            assert_eq!(t.xi_inv(n), 1.0);
        }
        let m = monotonicity_index(&t).unwrap();
        assert_eq!(m.n0, 1);
        assert!(!m.strict);
    }

    #[test]
    fn recursion_residual_within_rounding() {
        for spec in [
            PerturbationSpec::theorem2(1.0).unwrap(),
            PerturbationSpec::theorem2(2.0).unwrap(),
            PerturbationSpec::power_law(0.2, 0.7).unwrap(),
            PerturbationSpec::constant_p(0.9, 400).unwrap(),
        ] {
            let t = compute_tails(&chain(spec.clone()), 1, 300, 1e-13).unwrap();
            let res = t.max_recursion_residual().unwrap();
            assert!(res <= 8.0 * f64::EPSILON, "{res:e}");
            for n in t.n_lo()..=t.n_hi() {
                assert!(t.f(n) > 0.0 && t.xi_inv(n) > 0.0);
                assert_eq!(t.xi_inv(n + 1), t.f(n));
            }
            assert!(t.err_bound <= 1e-13);
            assert!(t.certificate_diff <= 1e-13);
        }
    }

    #[test]
    fn table_too_short() {
        let c = chain(PerturbationSpec::constant_p(0.5, 50).unwrap());
        assert!(matches!(compute_tails(&c, 1, 60, 1e-12), Err(Error::Range { .. })));
        // Enough room to converge with a truncated buffer.
        let t = compute_tails(&c, 1, 10, 1e-12).unwrap();
        assert!(t.buffer_used < 64);
    }

    #[test]
    fn arguments_validated() {
        let c = chain(PerturbationSpec::zero());
        assert!(compute_tails(&c, 0, 5, 1e-12).is_err());
        assert!(compute_tails(&c, 5, 4, 1e-12).is_err());
        assert!(compute_tails(&c, 1, 4, 0.0).is_err());
    }

    #[test]
    fn local_deficit_matches_table() {
        let spec = PerturbationSpec::theorem2(1.0).unwrap();
        let t = compute_tails(&chain(spec.clone()), 100, 2000, 1e-15).unwrap();
        for n in [100u64, 500, 2000] {
            let local = deficit_at(&spec, n as f64).unwrap();
            assert!(((local - t.deficit(n)) / t.deficit(n)).abs() < 1e-13);
        }
    }

    #[test]
    fn oscillating_table_has_no_monotone_suffix() {
        let values: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 0.1 } else { 0.25 }).collect();
        let c = chain(PerturbationSpec::table(values).unwrap());
        // Parity of the window top decides the last pair; pick a decreasing one.
        for hi in [100u64, 101] {
            let t = compute_tails(&c, 1, hi, 1e-12).unwrap();
            if t.xi_inv(hi - 1) > t.xi_inv(hi) {
                assert_eq!(monotonicity_index(&t), None);
                return;
            }
        }
        panic!("no decreasing final pair found");
    }

    #[test]
    fn theorem2_monotone_suffix() {
        let t = compute_tails(&chain(PerturbationSpec::theorem2(2.0).unwrap()), 4, 10_000, 1e-14).unwrap();
        let m = monotonicity_index(&t).unwrap();
        assert!(m.n0 < 10_000);
        assert!(m.strict);
        for n in m.n0..t.n_hi() {
            assert!(t.xi_inv(n) < t.xi_inv(n + 1));
        }
    }
}

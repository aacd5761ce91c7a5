//! Escape series `D(m,n) = sum_{j=m+1}^{n} prod_{i=m+1}^{j-1} U_i` and their limits.

mod farfield;

use std::fmt;

use serde::{Serialize, Serializer};

use crate::contfrac::TailTable;
use crate::error::{Error, Result};

/// Lookahead used for the geometric tail majorant.
const LOOKAHEAD: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DStatus {
    Converged { tol: f64 },
    Capped,
    DivergentSuspected,
}

impl DStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, DStatus::Converged { .. })
    }
}

impl fmt::Display for DStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DStatus::Converged { .. } => f.write_str("converged"),
            DStatus::Capped => f.write_str("capped"),
            DStatus::DivergentSuspected => f.write_str("divergent-suspected"),
        }
    }
}

impl Serialize for DStatus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Estimate of `D(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DLimit {
    pub value: f64,
    pub status: DStatus,
    /// Last index summed directly.
    pub n_used: u64,
    /// Estimated relative error.
    pub rel_err: f64,
    /// Whether the tail past `n_used` came from the asymptotic continuation.
    pub far_field: bool,
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() { (self.sum - t) + x } else { (x - t) + self.sum };
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_window(tails: &TailTable, lo: u64, hi: u64) -> Result<()> {
    if lo <= hi && !tails.covers(lo, hi) {
        let bad = if lo < tails.n_lo() { lo } else { hi };
        return Err(Error::Range { index: bad, lo: tails.n_lo(), hi: tails.u_max_index() });
    }
    Ok(())
}

/// Finite sum `D(m,n)`; needs `U` on `m+1..=n-1`.
pub fn d_partial(tails: &TailTable, m: u64, n: u64) -> Result<f64> {
    if m >= n {
        return Err(Error::Argument(format!("D(m,n) needs m < n, got m = {m}, n = {n}")));
    }
    check_window(tails, m + 1, n - 1)?;
    let mut acc = Neumaier::default();
    let mut term = 1.0;
    acc.add(term);
    for i in m + 1..n {
        term *= tails.u(i);
        acc.add(term);
    }
    Ok(acc.value())
}

/// `D(m)` by forward summation with a geometric tail majorant, falling back
/// to the asymptotic continuation at the cap for analytic families.
pub fn d_limit(tails: &TailTable, m: u64, tol: f64, n_cap: u64) -> Result<DLimit> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tol must be positive, got {tol}")));
    }
    if n_cap <= m + 1 {
        return Err(Error::Argument(format!("n_cap = {n_cap} must exceed m + 1 = {}", m + 1)));
    }
    check_window(tails, m + 1, m + 1)?;
    let top = n_cap.min(tails.u_max_index());
    let mut acc = Neumaier::default();
    let mut term = 1.0;
    let mut non_decreasing = true;
    acc.add(term);
    // Invariant: acc = D(m, n), term = prod_{i=m+1}^{n-1} U_i.
    let mut n = m + 1;
    while n < top {
        let u = tails.u(n);
        non_decreasing &= u >= 1.0;
        term *= u;
        acc.add(term);
        n += 1;
        if (n - m) % LOOKAHEAD == 0 {
            let look_hi = (n + LOOKAHEAD).min(tails.u_max_index());
            let u_star = (n..=look_hi).map(|i| tails.u(i)).fold(0.0, f64::max);
            if u_star < 1.0 {
                let s = acc.value();
                let bound = term * u_star / (1.0 - u_star);
                if bound <= tol * s {
                    return Ok(DLimit {
                        value: s,
                        status: DStatus::Converged { tol },
                        n_used: n,
                        rel_err: bound / s,
                        far_field: false,
                    });
                }
            }
        }
        if term == 0.0 {
            break;
        }
    }
    let partial = acc.value();
    if term == 0.0 {
        return Ok(DLimit { value: partial, status: DStatus::Converged { tol }, n_used: n, rel_err: 0.0, far_field: false });
    }
    if non_decreasing {
        return Ok(DLimit { value: partial, status: DStatus::DivergentSuspected, n_used: n, rel_err: f64::INFINITY, far_field: false });
    }
    // Tail past n: prod_{i=m+1}^{n} U_i * D(n).
    let spec = tails.chain().map(|c| c.spec());
    if let Some(ff) = spec.and_then(|s| farfield::far_field_d(s, n)) {
        if ff.divergent {
            return Ok(DLimit { value: partial, status: DStatus::DivergentSuspected, n_used: n, rel_err: f64::INFINITY, far_field: true });
        }
        let p = term * tails.u(n);
        let value = partial + p * ff.value;
        let rel_err = p * ff.err / value + 4.0 * f64::EPSILON;
        let status = if rel_err <= tol { DStatus::Converged { tol } } else { DStatus::Capped };
        return Ok(DLimit { value, status, n_used: n, rel_err, far_field: true });
    }
    Ok(DLimit { value: partial, status: DStatus::Capped, n_used: n, rel_err: f64::INFINITY, far_field: false })
}

/// `D(m)` on a contiguous range of `m`, obtained from `D(m_hi)` through
/// `D(m) = 1 + U_{m+1} D(m+1)`.
#[derive(Debug, Clone)]
pub struct DTable {
    tails: TailTable,
    m_lo: u64,
    m_hi: u64,
    d: Vec<f64>,
    rel_err: Vec<f64>,
    top: DLimit,
    tol: f64,
    n_cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DRow {
    pub m: u64,
    #[serde(rename = "D_m_est")]
    pub d_m_est: f64,
    pub status: DStatus,
    pub n_used: u64,
}

impl DTable {
    pub fn build(tails: TailTable, m_lo: u64, m_hi: u64, tol: f64, n_cap: u64) -> Result<Self> {
        if m_lo > m_hi {
            return Err(Error::Argument(format!("empty m range {m_lo}..={m_hi}")));
        }
        check_window(&tails, m_lo + 1, m_hi + 1)?;
        let top = d_limit(&tails, m_hi, tol, n_cap)?;
        let len = (m_hi - m_lo + 1) as usize;
        let mut d = vec![0.0; len];
        let mut rel_err = vec![0.0; len];
        d[len - 1] = top.value;
        rel_err[len - 1] = top.rel_err;
        for idx in (0..len - 1).rev() {
            let m = m_lo + idx as u64;
            let carried = tails.u(m + 1) * d[idx + 1];
            d[idx] = 1.0 + carried;
            rel_err[idx] = carried * rel_err[idx + 1] / d[idx] + 2.0 * f64::EPSILON;
        }
        Ok(Self { tails, m_lo, m_hi, d, rel_err, top, tol, n_cap })
    }

    pub fn tails(&self) -> &TailTable {
        &self.tails
    }

    pub fn m_range(&self) -> (u64, u64) {
        (self.m_lo, self.m_hi)
    }

    pub fn n_cap(&self) -> u64 {
        self.n_cap
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn top(&self) -> &DLimit {
        &self.top
    }

    pub fn contains(&self, m: u64) -> bool {
        (self.m_lo..=self.m_hi).contains(&m)
    }

    fn idx(&self, m: u64) -> Result<usize> {
        if !self.contains(m) {
            return Err(Error::Range { index: m, lo: self.m_lo, hi: self.m_hi });
        }
        Ok((m - self.m_lo) as usize)
    }

    pub fn status(&self, m: u64) -> Result<DStatus> {
        let i = self.idx(m)?;
        Ok(match self.top.status {
            DStatus::Converged { .. } if self.rel_err[i] <= self.tol => DStatus::Converged { tol: self.tol },
            DStatus::Converged { .. } => DStatus::Capped,
            other => other,
        })
    }

    pub fn rel_err(&self, m: u64) -> Result<f64> {
        Ok(self.rel_err[self.idx(m)?])
    }

    /// Estimate of `D(m)` regardless of status.
    pub fn estimate(&self, m: u64) -> Result<f64> {
        Ok(self.d[self.idx(m)?])
    }

    /// `D(m)`, failing unless converged.
    pub fn d(&self, m: u64) -> Result<f64> {
        let status = self.status(m)?;
        if !status.is_converged() {
            return Err(Error::NotConverged { m, status: status.to_string() });
        }
        self.estimate(m)
    }

    /// `D(m,n)` from the underlying tails.
    pub fn partial(&self, m: u64, n: u64) -> Result<f64> {
        d_partial(&self.tails, m, n)
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn rows(&self) -> Vec<DRow> {
        (self.m_lo..=self.m_hi)
            .map(|m| DRow {
                m,
                d_m_est: self.estimate(m).unwrap(),
                status: self.status(m).unwrap(),
                n_used: self.top.n_used,
            })
            .collect()
    }
}

/// `D(m,n) / D(m)`, computed directly and through
/// `1 - prod_{i=m}^{n-1} (1 - 1/D(i))`; the two must agree within `10 tol`.
pub fn d_ratio(dtab: &DTable, m: u64, n: u64, tol: f64) -> Result<f64> {
    if m >= n {
        return Err(Error::Argument(format!("d_ratio needs m < n, got m = {m}, n = {n}")));
    }
    let dm = dtab.d(m)?;
    let direct = dtab.partial(m, n)? / dm;
    let mut log_prod = Neumaier::default();
    for i in m..n {
        log_prod.add((-1.0 / dtab.d(i)?).ln_1p());
    }
    let via_product = -log_prod.value().exp_m1();
    let gap = (direct - via_product).abs();
    if gap > 10.0 * tol * direct.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Consistency(format!(
            "D({m},{n})/D({m}): direct {direct:e} vs product {via_product:e}"
        )));
    }
    Ok(direct)
}

/// Diagnostics for `sum 1 / (D(n) ln n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesDiagnostics {
    pub n_from: u64,
    pub n_to: u64,
    pub partial_sum: f64,
    /// Least-squares slope of `ln D` against `ln n` over the top half.
    pub slope: f64,
    /// Least-squares slope of `ln(D/n)` against `ln ln ln n` over the top half.
    pub loglog_exponent: f64,
    /// `max D(n) / (n ln n)` over the top half.
    pub delta_fit: f64,
    /// Heuristic: partial sums look unbounded.
    pub unbounded_trend: bool,
    #[serde(skip)]
    pub rows: Vec<SeriesRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub n: u64,
    #[serde(rename = "D_n")]
    pub d_n: f64,
    pub term: f64,
    pub partial_sum: f64,
}

/// Fitted `(ln ln n)^b` exponent above which the series is taken as convergent.
/// Finite-range fits are biased low (about 0.8 for a true exponent of 1 on `[1e3, 1e5]`).
pub const LOGLOG_THRESHOLD: f64 = 1.0;
/// Band around slope 1 inside which the log-log correction decides.
pub const SLOPE_BAND: f64 = 0.1;

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Diagnostics from `D(n_from + i) = d[i]`.
pub fn series_diagnostics(n_from: u64, d: &[f64]) -> Result<SeriesDiagnostics> {
    if n_from < 2 {
        return Err(Error::Argument(format!("n_from must be at least 2, got {n_from}")));
    }
    if d.len() < 4 {
        return Err(Error::Argument(format!("need at least 4 values, got {}", d.len())));
    }
    let mut acc = Neumaier::default();
    let mut rows = Vec::with_capacity(d.len());
    for (i, &dn) in d.iter().enumerate() {
        let n = n_from + i as u64;
        let term = 1.0 / (dn * (n as f64).ln());
        acc.add(term);
        rows.push(SeriesRow { n, d_n: dn, term, partial_sum: acc.value() });
    }
    let n_to = n_from + d.len() as u64 - 1;
    // Top half in log scale.
    let mid = ((n_from as f64) * (n_to as f64)).sqrt().ceil() as u64;
    let upper = &rows[(mid.max(n_from) - n_from) as usize..];
    let stride = (upper.len() / 2000).max(1);
    let sample: Vec<&SeriesRow> = upper.iter().step_by(stride).collect();
    let ln_n: Vec<f64> = sample.iter().map(|r| (r.n as f64).ln()).collect();
    let ln_d: Vec<f64> = sample.iter().map(|r| r.d_n.ln()).collect();
    let slope = ls_slope(&ln_n, &ln_d);
    let lll: Vec<f64> = ln_n.iter().map(|l| l.ln().ln()).collect();
    let excess: Vec<f64> = ln_d.iter().zip(&ln_n).map(|(d, n)| d - n).collect();
    let loglog_exponent = ls_slope(&lll, &excess);
    let delta_fit = upper.iter().map(|r| r.d_n / (r.n as f64 * (r.n as f64).ln())).fold(0.0, f64::max);
    let unbounded_trend = if slope > 1.0 + SLOPE_BAND {
        false
    } else if slope < 1.0 - SLOPE_BAND {
        true
    } else {
        loglog_exponent <= LOGLOG_THRESHOLD
    };
    Ok(SeriesDiagnostics {
        n_from,
        n_to,
        partial_sum: acc.value(),
        slope,
        loglog_exponent,
        delta_fit,
        unbounded_trend,
        rows,
    })
}

/// Diagnostics over `n_from..=n_to` from a table of limits.
pub fn criterion_series(dtab: &DTable, n_from: u64, n_to: u64) -> Result<SeriesDiagnostics> {
    if n_from > n_to {
        return Err(Error::Argument(format!("empty range {n_from}..={n_to}")));
    }
    let (lo, hi) = dtab.m_range();
    if n_from < lo || n_to > hi {
        let bad = if n_from < lo { n_from } else { n_to };
        return Err(Error::Range { index: bad, lo, hi });
    }
    let d = &dtab.values()[(n_from - lo) as usize..=(n_to - lo) as usize];
    series_diagnostics(n_from, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contfrac::compute_tails;
    use crate::perturbation::{ChainParams, PerturbationSpec};

    fn tails(spec: PerturbationSpec, lo: u64, hi: u64) -> TailTable {
        compute_tails(&ChainParams::new(spec), lo, hi, 1e-15).unwrap()
    }

    fn halves(len: usize) -> TailTable {
        TailTable::from_u_values(0, &vec![0.5; len])
    }

    fn horner(t: &TailTable, m: u64, n: u64) -> f64 {
        // D(m,n) = 1 + U_{m+1}(1 + U_{m+2}(1 + ... (1 + U_{n-1})))
        let mut acc = 1.0;
        for i in (m + 1..n).rev() {
            acc = 1.0 + t.u(i) * acc;
        }
        acc
    }

    #[test]
    fn partial_examples() {
        let z = tails(PerturbationSpec::zero(), 1, 20);
        assert_eq!(d_partial(&z, 5, 12).unwrap(), 7.0);
        assert_eq!(d_partial(&z, 5, 6).unwrap(), 1.0);
        assert_eq!(d_partial(&halves(10), 0, 5).unwrap(), 31.0 / 16.0);
        assert!(d_partial(&z, 5, 5).is_err());
        assert!(matches!(d_partial(&z, 5, 40), Err(Error::Range { .. })));
    }

    #[test]
    fn partial_matches_horner() {
        let t = tails(PerturbationSpec::theorem2(1.0).unwrap(), 1, 400);
        let f = d_partial(&t, 100, 200).unwrap();
        let h = horner(&t, 100, 200);
        assert!(((f - h) / h).abs() < 1e-12);
    }

    #[test]
    fn limit_geometric() {
        let lim = d_limit(&halves(200), 0, 1e-12, 190).unwrap();
        assert!(lim.status.is_converged());
        assert!((lim.value - 2.0).abs() < 1e-12);
        assert!(!lim.far_field);
    }

    #[test]
    fn limit_zero_family_divergent() {
        let lim = d_limit(&tails(PerturbationSpec::zero(), 1, 5000), 3, 1e-10, 5000).unwrap();
        assert_eq!(lim.status, DStatus::DivergentSuspected);
        assert_eq!(lim.status.to_string(), "divergent-suspected");
    }

    #[test]
    fn limit_theorem2_cap_doubling() {
        let t = tails(PerturbationSpec::theorem2(2.0).unwrap(), 1, 40_000);
        let a = d_limit(&t, 1000, 1e-10, 20_000).unwrap();
        let b = d_limit(&t, 1000, 1e-10, 40_000).unwrap();
        assert!(a.status.is_converged() && b.status.is_converged());
        assert!(((a.value - b.value) / b.value).abs() < 1e-10);
    }

    #[test]
    fn limit_table_without_continuation_is_capped() {
        let t = tails(PerturbationSpec::constant_p(1.0 / 3.0 + 1e-4, 3000).unwrap(), 1, 2000);
        let lim = d_limit(&t, 1, 1e-10, 2000).unwrap();
        assert_eq!(lim.status, DStatus::Capped);
    }

    #[test]
    fn table_recurrence() {
        let t = tails(PerturbationSpec::theorem2(1.0).unwrap(), 1, 30_000);
        let tab = DTable::build(t.clone(), 10, 2000, 1e-10, 30_000).unwrap();
        for m in [10u64, 500, 1999] {
            let lhs = tab.d(m).unwrap();
            let rhs = 1.0 + t.u(m + 1) * tab.d(m + 1).unwrap();
            assert!(((lhs - rhs) / lhs).abs() < 1e-14);
            let direct = d_limit(&t, m, 1e-10, 30_000).unwrap();
            assert!(((direct.value - lhs) / lhs).abs() < 1e-10, "m = {m}");
        }
        assert!(tab.d(9).is_err());
        assert_eq!(tab.rows().len(), 1991);
    }

    #[test]
    fn ratio_examples() {
        let tab = DTable::build(halves(200), 0, 10, 1e-13, 190).unwrap();
        assert!((d_ratio(&tab, 0, 2, 1e-12).unwrap() - 0.75).abs() < 1e-12);
        let t = tails(PerturbationSpec::theorem2(2.0).unwrap(), 1, 20_000);
        let tab = DTable::build(t, 400, 700, 1e-11, 20_000).unwrap();
        let r = d_ratio(&tab, 500, 600, 1e-10).unwrap();
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn series_examples() {
        let sq: Vec<f64> = (2..20_000u64).map(|n| (n * n) as f64).collect();
        let s = series_diagnostics(2, &sq).unwrap();
        assert!((s.slope - 2.0).abs() < 1e-9);
        assert!(!s.unbounded_trend);
        let lin: Vec<f64> = (2..20_000u64).map(|n| n as f64).collect();
        let s = series_diagnostics(2, &lin).unwrap();
        assert!((s.slope - 1.0).abs() < 1e-9);
        assert!(s.unbounded_trend);
        assert!(series_diagnostics(1, &lin).is_err());
    }
}

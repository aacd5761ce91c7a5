//! Finite/infinite skipped-point verdicts and the recurrence test.

use std::fmt;

use serde::Serialize;

use crate::dseries::{criterion_series, series_diagnostics, DStatus, DTable, SeriesDiagnostics};
use crate::error::{Error, Result};

pub const FINITE_QUALIFIER: &str = "almost surely";
pub const INFINITE_QUALIFIER: &str = "with a positive probability p, p >= 11/27";
pub const HEURISTIC_QUALIFIER: &str = "heuristic: finite data cannot decide convergence";
/// Lower bound on the probability of infinitely many skipped points.
pub const INFINITE_PROB_LOWER: f64 = 11.0 / 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SkipVerdict {
    FiniteSkips,
    InfiniteSkips,
    Inconclusive,
}

impl fmt::Display for SkipVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipVerdict::FiniteSkips => "FiniteSkips",
            SkipVerdict::InfiniteSkips => "InfiniteSkips",
            SkipVerdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub partial_sum: f64,
    pub slope: f64,
    /// `max D(n) / (n ln n)` over the fit window.
    pub delta_fit: f64,
    pub loglog_exponent: f64,
    pub n_from: u64,
    pub n_to: u64,
    pub delta_probe: f64,
    /// Whether `D(n) <= delta_probe * n ln n` over the whole range.
    pub side_condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub verdict: SkipVerdict,
    pub qualifier: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

/// Symbolic verdict for the `theorem2` family.
pub fn classify_theorem2(beta: f64) -> Result<Verdict> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Argument(format!("beta must be positive, got {beta}")));
    }
    let (verdict, qualifier) = if beta > 1.0 {
        (SkipVerdict::FiniteSkips, FINITE_QUALIFIER)
    } else {
        (SkipVerdict::InfiniteSkips, INFINITE_QUALIFIER)
    };
    Ok(Verdict { verdict, qualifier: qualifier.into(), diagnostics: None })
}

/// Heuristic verdict from `D(n)`, `n = n_from, n_from + 1, ...`.
pub fn classify_values(n_from: u64, d: &[f64], delta_probe: f64) -> Result<Verdict> {
    if !(delta_probe > 0.0) {
        return Err(Error::Argument(format!("delta probe must be positive, got {delta_probe}")));
    }
    let diag = series_diagnostics(n_from, d)?;
    Ok(from_diagnostics(&diag, delta_probe))
}

/// Heuristic verdict over `n_from..=n_to`; inconclusive unless every `D(n)` there converged.
pub fn classify_numeric(dtab: &DTable, n_from: u64, n_to: u64, delta_probe: f64) -> Result<Verdict> {
    if !(delta_probe > 0.0) {
        return Err(Error::Argument(format!("delta probe must be positive, got {delta_probe}")));
    }
    let diag = criterion_series(dtab, n_from, n_to)?;
    let mut converged = true;
    for n in n_from..=n_to {
        converged &= dtab.status(n)?.is_converged();
    }
    let mut v = from_diagnostics(&diag, delta_probe);
    if !converged {
        v.verdict = SkipVerdict::Inconclusive;
        v.qualifier = "D(n) not converged over the range".into();
    }
    Ok(v)
}

fn from_diagnostics(diag: &SeriesDiagnostics, delta_probe: f64) -> Verdict {
    let side_condition = diag.rows.iter().all(|r| r.d_n <= delta_probe * r.n as f64 * (r.n as f64).ln());
    let verdict = if diag.unbounded_trend { SkipVerdict::InfiniteSkips } else { SkipVerdict::FiniteSkips };
    Verdict {
        verdict,
        qualifier: HEURISTIC_QUALIFIER.into(),
        diagnostics: Some(Diagnostics {
            partial_sum: diag.partial_sum,
            slope: diag.slope,
            delta_fit: diag.delta_fit,
            loglog_exponent: diag.loglog_exponent,
            n_from: diag.n_from,
            n_to: diag.n_to,
            delta_probe,
            side_condition,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Recurrence {
    Transient,
    Recurrent,
    Inconclusive,
}

impl fmt::Display for Recurrence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recurrence::Transient => "transient",
            Recurrence::Recurrent => "recurrent",
            Recurrence::Inconclusive => "inconclusive",
        })
    }
}

/// From the series `sum_n prod_{i<=n} U_i` at the lowest index of the table.
pub fn recurrence_check(dtab: &DTable) -> Result<Recurrence> {
    let (lo, _) = dtab.m_range();
    Ok(match dtab.status(lo)? {
        DStatus::Converged { .. } => Recurrence::Transient,
        DStatus::DivergentSuspected => Recurrence::Recurrent,
        DStatus::Capped => Recurrence::Inconclusive,
    })
}

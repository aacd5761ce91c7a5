//! Perturbation families `r_n` and the chain parameters derived from them.
//!
//! The walk moves `n -> n + 2` with probability `p_n = 1/3 + r_n` and
//! `n -> n - 1` with probability `q_n = 1 - p_n`; state 0 always jumps to 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary value used for indices below the formula threshold.
pub const BOUNDARY_R: f64 = 1.0 / 3.0;

/// First index at which the `theorem2` formula is evaluated (`log log i` needs `i > e`).
pub const THEOREM2_FIRST_INDEX: u64 = 4;

/// Upper cap applied to the `theorem2` formula. For large `beta` the raw
/// formula exceeds 2/3 at `i = 4` (e.g. 0.864 for `beta = 2`), which would
/// make `p_4 > 1`. Taking the minimum keeps the sequence nonincreasing.
pub const THEOREM2_R_CAP: f64 = 0.6;

/// A family of perturbations.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `r_n = 0`: the critical, recurrent walk.
    Zero,
    /// `r_i = (1/i + 1/(i (log log i)^beta)) / 3` for `i >= 4`.
    Theorem2 { beta: f64 },
    /// `r_n = c / n^alpha`. Generic probe family for exercising the criteria.
    PowerLaw { c: f64, alpha: f64 },
    /// Explicit values; `values[0]` is `r_1`.
    Table { values: Vec<f64> },
}

/// A validated perturbation specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct PerturbationSpec {
    family: Family,
    n_min_override: Option<u64>,
}

/// Wire form: `{"family": "zero"|"theorem2"|"powerlaw"|"table", "beta"?, "c"?, "alpha"?, "values"?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_min_override: Option<u64>,
}

impl TryFrom<RawSpec> for PerturbationSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::InvalidSpec(format!("family `{}` requires `{name}`", raw.family)))
        };
        let family = match raw.family.as_str() {
            "zero" => Family::Zero,
            "theorem2" => Family::Theorem2 { beta: need(raw.beta, "beta")? },
            "powerlaw" => Family::PowerLaw {
                c: need(raw.c, "c")?,
                alpha: need(raw.alpha, "alpha")?,
            },
            "table" => Family::Table {
                values: raw
                    .values
                    .clone()
                    .ok_or_else(|| Error::InvalidSpec("family `table` requires `values`".into()))?,
            },
            other => return Err(Error::InvalidSpec(format!("unknown family `{other}`"))),
        };
        PerturbationSpec::new(family, raw.n_min_override)
    }
}

impl From<PerturbationSpec> for RawSpec {
    fn from(spec: PerturbationSpec) -> Self {
        let mut raw = RawSpec {
            family: String::new(),
            beta: None,
            c: None,
            alpha: None,
            values: None,
            n_min_override: spec.n_min_override,
        };
        match spec.family {
            Family::Zero => raw.family = "zero".into(),
            Family::Theorem2 { beta } => {
                raw.family = "theorem2".into();
                raw.beta = Some(beta);
            }
            Family::PowerLaw { c, alpha } => {
                raw.family = "powerlaw".into();
                raw.c = Some(c);
                raw.alpha = Some(alpha);
            }
            Family::Table { values } => {
                raw.family = "table".into();
                raw.values = Some(values);
            }
        }
        raw
    }
}

fn admissible(r: f64) -> bool {
    r.is_finite() && r > -1.0 / 3.0 && r < 2.0 / 3.0
}

impl PerturbationSpec {
    pub fn new(family: Family, n_min_override: Option<u64>) -> Result<Self> {
        if n_min_override == Some(0) {
            return Err(Error::InvalidSpec("n_min_override must be positive".into()));
        }
        match &family {
            Family::Zero => {}
            Family::Theorem2 { beta } => {
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(Error::InvalidSpec(format!("beta must be > 0, got {beta}")));
                }
            }
            Family::PowerLaw { c, alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidSpec(format!("alpha must be > 0, got {alpha}")));
                }
                // |c / n^alpha| <= |c|, so checking c covers every index.
                if !admissible(*c) {
                    return Err(Error::InvalidSpec(format!("c must lie in (-1/3, 2/3), got {c}")));
                }
            }
            Family::Table { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidSpec("table must be nonempty".into()));
                }
                if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !admissible(**v)) {
                    return Err(Error::InvalidSpec(format!(
                        "table value r_{} = {v} outside (-1/3, 2/3)",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { family, n_min_override })
    }

    pub fn zero() -> Self {
        Self { family: Family::Zero, n_min_override: None }
    }

    pub fn theorem2(beta: f64) -> Result<Self> {
        Self::new(Family::Theorem2 { beta }, None)
    }

    pub fn power_law(c: f64, alpha: f64) -> Result<Self> {
        Self::new(Family::PowerLaw { c, alpha }, None)
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        Self::new(Family::Table { values }, None)
    }

    /// Table with constant forward probability `p` for `n = 1..=len`.
    pub fn constant_p(p: f64, len: usize) -> Result<Self> {
        Self::table(vec![p - 1.0 / 3.0; len])
    }

    /// Short human-readable name, e.g. `theorem2(beta=1)`.
    pub fn label(&self) -> String {
        match &self.family {
            Family::Zero => "zero".into(),
            Family::Theorem2 { beta } => format!("theorem2(beta={beta})"),
            Family::PowerLaw { c, alpha } => format!("powerlaw(c={c},alpha={alpha})"),
            Family::Table { values } => format!("table(len={})", values.len()),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn n_min_override(&self) -> Option<u64> {
        self.n_min_override
    }

    /// True for probe families outside the studied model (`powerlaw`, `table`).
    pub fn is_probe(&self) -> bool {
        matches!(self.family, Family::PowerLaw { .. } | Family::Table { .. })
    }

    /// Largest admissible index, `None` when unbounded.
    pub fn max_index(&self) -> Option<u64> {
        match &self.family {
            Family::Table { values } => Some(values.len() as u64),
            _ => None,
        }
    }

    /// Whether `r` can be evaluated at real arguments (needed for asymptotic continuation).
    pub fn is_analytic(&self) -> bool {
        !matches!(self.family, Family::Table { .. })
    }

    fn below_threshold(&self, x: f64) -> bool {
        let n_min = match (&self.family, self.n_min_override) {
            (_, Some(n)) => n,
            (Family::Theorem2 { .. }, None) => THEOREM2_FIRST_INDEX,
            _ => 1,
        };
        x < n_min as f64
    }

    /// `r_n` for `n >= 1`.
    pub fn r(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Range { index: 0, lo: 1, hi: self.max_index().unwrap_or(u64::MAX) });
        }
        if self.below_threshold(n as f64) {
            return Ok(BOUNDARY_R);
        }
        match &self.family {
            Family::Table { values } => values
                .get((n - 1) as usize)
                .copied()
                .ok_or(Error::Range { index: n, lo: 1, hi: values.len() as u64 }),
            _ => Ok(self.r_real(n as f64).expect("analytic family")),
        }
    }

    /// `r(x)` at a real argument `x >= 1`; `None` for table families.
    pub fn r_real(&self, x: f64) -> Option<f64> {
        if self.below_threshold(x) && !matches!(self.family, Family::Table { .. }) {
            return Some(BOUNDARY_R);
        }
        match &self.family {
            Family::Zero => Some(0.0),
            Family::Theorem2 { beta } => {
                let ll = x.ln().ln();
                let r = (1.0 / x + 1.0 / (x * ll.powf(*beta))) / 3.0;
                Some(r.min(THEOREM2_R_CAP))
            }
            Family::PowerLaw { c, alpha } => Some(c / x.powf(*alpha)),
            Family::Table { .. } => None,
        }
    }

    /// `3 x r(x)` at `x = e^t`, evaluated without forming `x`. Valid once `x`
    /// is past every threshold and the cap.
    pub(crate) fn scaled_r_log(&self, t: f64) -> Option<f64> {
        match &self.family {
            Family::Zero => Some(0.0),
            Family::Theorem2 { beta } => Some(1.0 + t.ln().powf(-beta)),
            Family::PowerLaw { c, alpha } => Some(3.0 * c * ((1.0 - alpha) * t).exp()),
            Family::Table { .. } => None,
        }
    }
}

/// Transition parameters of the walk for a given perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    spec: PerturbationSpec,
}

impl ChainParams {
    pub fn new(spec: PerturbationSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn max_index(&self) -> Option<u64> {
        self.spec.max_index()
    }

    /// Check that `n` is inside the admissible index range.
    pub fn check_index(&self, n: u64) -> Result<()> {
        match self.max_index() {
            Some(hi) if n > hi => Err(Error::Range { index: n, lo: 0, hi }),
            _ => Ok(()),
        }
    }

    pub fn r(&self, n: u64) -> Result<f64> {
        self.spec.r(n)
    }

    /// Forward (+2) probability; `p_0 = 1`.
    pub fn p(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Ok(1.0);
        }
        Ok(1.0 / 3.0 + self.r(n)?)
    }

    pub fn q(&self, n: u64) -> Result<f64> {
        Ok(1.0 - self.p(n)?)
    }

    /// `a_n = q_n / p_n`.
    pub fn a(&self, n: u64) -> Result<f64> {
        let r = self.r(n)?;
        Ok((2.0 - 3.0 * r) / (1.0 + 3.0 * r))
    }

    /// `w_n = 2 - a_n = 9 r_n / (1 + 3 r_n)`, formed without cancellation.
    pub fn two_minus_a(&self, n: u64) -> Result<f64> {
        let r = self.r(n)?;
        Ok(w_from_r(r))
    }
}

pub(crate) fn w_from_r(r: f64) -> f64 {
    9.0 * r / (1.0 + 3.0 * r)
}

/// Finite-range proxies for the regularity hypotheses (`r_n` decreasing to 0,
/// `r_n - r_{n+1} = O(r_n^2)`, divergence of `sum 1/a_n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub n_lo: u64,
    pub n_hi: u64,
    /// Weakly nonincreasing over the range.
    pub monotone: bool,
    /// `max |r_n - r_{n+1}| / r_n^2` over indices with `r_n != 0`; 0 when all vanish.
    pub ratio_sup: f64,
    /// `n / a_n >= 1` on the upper half of the range (comparison with the harmonic series).
    pub inverse_a_divergent: bool,
    pub inconclusive: bool,
    pub probe_family: bool,
}

pub fn check_regularity(spec: &PerturbationSpec, n_lo: u64, n_hi: u64) -> RegularityReport {
    let lo = n_lo.max(1);
    let mut hi = n_hi;
    let mut inconclusive = false;
    if let Some(max) = spec.max_index() {
        if hi > max {
            hi = max;
            inconclusive = true;
        }
    }
    let mut report = RegularityReport {
        n_lo: lo,
        n_hi: hi,
        monotone: true,
        ratio_sup: 0.0,
        inverse_a_divergent: false,
        inconclusive: inconclusive || hi <= lo,
        probe_family: spec.is_probe(),
    };
    if hi <= lo {
        return report;
    }
    let chain = ChainParams::new(spec.clone());
    let mid = lo + (hi - lo) / 2;
    let mut divergent = true;
    let mut prev = spec.r(lo).expect("index in range");
    for n in lo..hi {
        let next = spec.r(n + 1).expect("index in range");
        if next > prev {
            report.monotone = false;
        }
        if prev != 0.0 {
            report.ratio_sup = report.ratio_sup.max((prev - next).abs() / (prev * prev));
        }
        if n >= mid {
            let a = chain.a(n).expect("index in range");
            divergent &= n as f64 / a >= 1.0;
        }
        prev = next;
    }
    report.inverse_a_divergent = divergent;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_family_is_exactly_zero() {
        let s = PerturbationSpec::zero();
        assert_eq!(s.r(17).unwrap(), 0.0);
        let c = ChainParams::new(s);
        assert_eq!(c.a(17).unwrap(), 2.0);
        assert_eq!(c.p(0).unwrap(), 1.0);
    }

    #[test]
    fn theorem2_boundary_indices() {
        let s = PerturbationSpec::theorem2(1.0).unwrap();
        for i in 1..=3 {
            assert_eq!(s.r(i).unwrap(), 1.0 / 3.0);
        }
        assert!(s.r(4).unwrap() < 2.0 / 3.0);
    }

    #[test]
    fn theorem2_matches_extended_precision() {
        // Reference values from 40-digit evaluation of the formula.
        let cases = [
            (2.0, 1_000_000, 3.816790644058884197376939e-7),
            (1.0, 10_000, 4.834613831219234495045208e-5),
            (0.5, 5, 0.1633068477597956085929034),
            (2.0, 1_000_000_000_000, 3.63594117610275768103294e-13),
        ];
        for (beta, i, want) in cases {
            let got = PerturbationSpec::theorem2(beta).unwrap().r(i).unwrap();
            assert!((got - want).abs() <= 4.0 * f64::EPSILON * want, "beta {beta}, i {i}: {got} vs {want}");
        }
    }

    #[test]
    fn theorem2_cap_only_touches_invalid_values() {
        let raw = |beta: f64, i: f64| (1.0 / i + 1.0 / (i * i.ln().ln().powf(beta))) / 3.0;
        let s = PerturbationSpec::theorem2(2.0).unwrap();
        assert!(raw(2.0, 4.0) > 2.0 / 3.0);
        assert_eq!(s.r(4).unwrap(), THEOREM2_R_CAP);
        assert_eq!(s.r(5).unwrap(), raw(2.0, 5.0));
        let s15 = PerturbationSpec::theorem2(1.5).unwrap();
        assert_eq!(s15.r(4).unwrap(), raw(1.5, 4.0));
    }

    #[test]
    fn table_range_error() {
        let s = PerturbationSpec::table(vec![0.1, 0.2]).unwrap();
        assert_eq!(s.r(2).unwrap(), 0.2);
        assert!(matches!(s.r(3), Err(Error::Range { index: 3, .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(PerturbationSpec::theorem2(0.0).is_err());
        assert!(PerturbationSpec::power_law(0.7, 1.0).is_err());
        assert!(PerturbationSpec::power_law(-0.4, 1.0).is_err());
        assert!(PerturbationSpec::table(vec![]).is_err());
        assert!(PerturbationSpec::table(vec![0.1, -0.34]).is_err());
        assert!(PerturbationSpec::new(Family::Zero, Some(0)).is_err());
    }

    #[test]
    fn override_sets_boundary_values() {
        let s = PerturbationSpec::new(Family::PowerLaw { c: 0.1, alpha: 1.0 }, Some(5)).unwrap();
        assert_eq!(s.r(4).unwrap(), 1.0 / 3.0);
        assert_eq!(s.r(5).unwrap(), 0.1 / 5.0);
    }

    #[test]
    fn json_schema() {
        let s: PerturbationSpec = serde_json::from_str(r#"{"family":"theorem2","beta":2}"#).unwrap();
        assert_eq!(s.family(), &Family::Theorem2 { beta: 2.0 });
        let back = serde_json::to_string(&s).unwrap();
        assert_eq!(back, r#"{"family":"theorem2","beta":2.0}"#);
        let t: PerturbationSpec =
            serde_json::from_str(r#"{"family":"table","values":[0.3,0.1,0.2]}"#).unwrap();
        assert_eq!(t.max_index(), Some(3));
        assert!(serde_json::from_str::<PerturbationSpec>(r#"{"family":"theorem2"}"#).is_err());
        assert!(serde_json::from_str::<PerturbationSpec>(r#"{"family":"bogus"}"#).is_err());
    }

    #[test]
    fn regularity_examples() {
        let z = check_regularity(&PerturbationSpec::zero(), 1, 10_000);
        assert!(z.monotone);
        assert_eq!(z.ratio_sup, 0.0);
        assert!(z.inverse_a_divergent);

        let t = check_regularity(&PerturbationSpec::table(vec![0.3, 0.1, 0.2]).unwrap(), 1, 3);
        assert!(!t.monotone);
        assert!(t.probe_family);

        let t2 = check_regularity(&PerturbationSpec::theorem2(2.0).unwrap(), 4, 100_000);
        assert!(t2.monotone);
        assert!(t2.ratio_sup.is_finite());

        let degenerate = check_regularity(&PerturbationSpec::zero(), 5, 5);
        assert!(degenerate.inconclusive);
    }

    #[test]
    fn a_expansion_near_two() {
        // |a_n - 2 + 9 r_n| <= C r_n^2 with C = 27 + O(r).
        let s = PerturbationSpec::theorem2(1.0).unwrap();
        let c = ChainParams::new(s);
        for n in [100u64, 1000, 10_000, 100_000] {
            let r = c.r(n).unwrap();
            let dev = (c.a(n).unwrap() - 2.0 + 9.0 * r).abs() / (r * r);
            assert!(dev < 30.0, "n={n} dev={dev}");
        }
    }
}

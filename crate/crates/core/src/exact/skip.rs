//! Probabilities that a layer, or a pair of layers, contains a skipped site.

use serde::Serialize;

use super::{escape_to_infinity, eta, layer_entry, splitting};
use crate::dseries::DTable;
use crate::error::{Error, Result};
use crate::perturbation::ChainParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Channel {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipProbability {
    pub k: u64,
    pub j: Option<u64>,
    pub value: f64,
    pub channels: Vec<Channel>,
    /// Last directly summed index behind the `D` limits.
    pub horizon: u64,
}

impl SkipProbability {
    fn new(j: Option<u64>, k: u64, channels: Vec<Channel>, horizon: u64) -> Self {
        let value = channels.iter().map(|c| c.value).sum();
        Self { k, j, value, channels, horizon }
    }
}

/// `P(k in C^S) = h_k(1) eta_{2k,2k}(2) / D(2k+1) + h_k(2) / D(2k)`.
pub fn skip_prob(chain: &ChainParams, dtab: &DTable, k: u64) -> Result<SkipProbability> {
    let (h1, h2) = layer_entry(chain, k)?;
    let (_, e2) = eta(chain, 2 * k, 2 * k)?;
    let esc_odd = escape_to_infinity(dtab, 2 * k + 1, 2 * k + 2)?;
    let esc_even = escape_to_infinity(dtab, 2 * k, 2 * k + 1)?;
    let channels = vec![
        Channel { name: "B1", value: h1 * e2 * esc_odd },
        Channel { name: "B2", value: h2 * esc_even },
    ];
    Ok(SkipProbability::new(None, k, channels, dtab.top().n_used))
}

/// `P(j in C^S, k in C^S)` as the sum of the four channels `E1..E4`.
pub fn joint_skip_prob(chain: &ChainParams, dtab: &DTable, j: u64, k: u64) -> Result<SkipProbability> {
    if j >= k || j == 0 {
        return Err(Error::Argument(format!("joint skip needs 1 <= j < k, got j = {j}, k = {k}")));
    }
    let (h1, h2) = layer_entry(chain, j)?;
    let (_, e2) = eta(chain, 2 * j, 2 * j)?;
    let odd = splitting(chain, 2 * j + 1, 2 * j + 2, 2 * k)?;
    let even = splitting(chain, 2 * j, 2 * j + 1, 2 * k)?;
    let odd_far = splitting(chain, 2 * j + 1, 2 * k, 2 * k + 1)?;
    let even_far = splitting(chain, 2 * j, 2 * k, 2 * k + 1)?;
    let esc_odd = escape_to_infinity(dtab, 2 * k + 1, 2 * k + 2)?;
    let esc_even = escape_to_infinity(dtab, 2 * k, 2 * k + 1)?;
    let channels = vec![
        Channel { name: "E1", value: h1 * e2 * odd.q1 * odd_far.q2 * esc_odd },
        Channel { name: "E2", value: h1 * e2 * odd.q2 * esc_even },
        Channel { name: "E3", value: h2 * even.q2 * esc_even },
        Channel { name: "E4", value: h2 * even.q1 * even_far.q2 * esc_odd },
    ];
    Ok(SkipProbability::new(Some(j), k, channels, dtab.top().n_used))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbRatios {
    pub a: f64,
    pub b: f64,
    /// `A` with `Q2(2j+1, 2k, 2k+1)` replaced by 1.
    pub a_unit: f64,
    /// `B` with `Q2(2j, 2k, 2k+1)` replaced by 1.
    pub b_unit: f64,
    /// `max(A, B) / (h_k(1) eta_{2k,2k}(2) + h_k(2))`.
    pub max_term: f64,
}

/// `A(j,k)` and `B(j,k)` from exact splitting probabilities.
pub fn ab_ratios(chain: &ChainParams, j: u64, k: u64) -> Result<AbRatios> {
    if j >= k || j == 0 {
        return Err(Error::Argument(format!("ab_ratios needs 1 <= j < k, got j = {j}, k = {k}")));
    }
    let ratio = |near: super::Splitting, far_q2: f64| -> Result<(f64, f64)> {
        let q = near.q();
        if !(q > 0.0) {
            return Err(Error::Consistency(format!("vanishing Q for j = {j}, k = {k}")));
        }
        Ok((near.q1 / q * far_q2 + near.q2 / q, near.q1 / q + near.q2 / q))
    };
    let (a, a_unit) = ratio(
        splitting(chain, 2 * j + 1, 2 * j + 2, 2 * k)?,
        splitting(chain, 2 * j + 1, 2 * k, 2 * k + 1)?.q2,
    )?;
    let (b, b_unit) = ratio(
        splitting(chain, 2 * j, 2 * j + 1, 2 * k)?,
        splitting(chain, 2 * j, 2 * k, 2 * k + 1)?.q2,
    )?;
    let (h1, h2) = layer_entry(chain, k)?;
    let (_, e2) = eta(chain, 2 * k, 2 * k)?;
    let max_term = a.max(b) / (h1 * e2 + h2);
    Ok(AbRatios { a, b, a_unit, b_unit, max_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contfrac::compute_tails;
    use crate::perturbation::PerturbationSpec;

    fn setup(spec: PerturbationSpec, hi: u64) -> (ChainParams, DTable) {
        let c = ChainParams::new(spec);
        let t = compute_tails(&c, 1, hi, 1e-15).unwrap();
        let tab = DTable::build(t, 1, hi / 2, 1e-11, hi).unwrap();
        (c, tab)
    }

    #[test]
    fn zero_family_has_no_skips() {
        let (c, tab) = setup(PerturbationSpec::zero(), 4000);
        assert_eq!(skip_prob(&c, &tab, 20).unwrap().value, 0.0);
        assert_eq!(joint_skip_prob(&c, &tab, 5, 20).unwrap().value, 0.0);
    }

    #[test]
    fn single_layer_bounds() {
        let (c, tab) = setup(PerturbationSpec::theorem2(1.0).unwrap(), 20_000);
        let k = 500;
        let s = skip_prob(&c, &tab, k).unwrap();
        let lo = c.p(2 * k).unwrap() / tab.d(2 * k + 1).unwrap();
        let hi = 1.0 / tab.d(2 * k).unwrap();
        assert!(lo <= s.value && s.value <= hi, "{lo} {} {hi}", s.value);
        assert_eq!(s.channels.len(), 2);
        assert!(s.channels.iter().all(|ch| (0.0..=1.0).contains(&ch.value)));
    }

    #[test]
    fn joint_guards_and_channels() {
        let (c, tab) = setup(PerturbationSpec::theorem2(1.0).unwrap(), 20_000);
        assert!(joint_skip_prob(&c, &tab, 600, 600).is_err());
        let s = joint_skip_prob(&c, &tab, 300, 600).unwrap();
        let total: f64 = s.channels.iter().map(|ch| ch.value).sum();
        assert_eq!(total, s.value);
        assert!(s.value > 0.0);
    }

    #[test]
    fn ab_convex_form() {
        let c = ChainParams::new(PerturbationSpec::theorem2(1.0).unwrap());
        let r = ab_ratios(&c, 100, 200).unwrap();
        assert!(r.a <= 1.0 && r.b <= 1.0);
        assert!((r.a_unit - 1.0).abs() < 1e-14 && (r.b_unit - 1.0).abs() < 1e-14);
        assert!(r.max_term.is_finite());
    }
}

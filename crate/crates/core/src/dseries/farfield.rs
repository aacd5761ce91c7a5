//! Continuation of `D(N)` beyond the last tabulated index for analytic families.
//!
//! With `lambda(x) = -ln U(x)`, terms of `D(N)` are `exp(-Phi(z))` sampled at
//! `z = N + 1/2 + k`, so Euler-Maclaurin gives
//! `D(N) = 1/2 + lambda(z0)/12 - lambda(z0)^3/720 + int_{z0}^inf exp(-Phi)`.
//! The integral is taken in `t = ln z`, where `phi(t) = z lambda(z)` is slowly varying.

use crate::contfrac::deficit_at;
use crate::perturbation::PerturbationSpec;

const GL_X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// Above this `t` the local recursion is replaced by `lambda = 3 r`.
const T_ASYMPTOTIC: f64 = 34.5;
const T_MAX: f64 = 1.0e6;
const RELATIVE_CUTOFF: f64 = 1e-18;

#[derive(Debug, Clone, Copy)]
pub(crate) struct FarField {
    pub value: f64,
    /// Estimated absolute error.
    pub err: f64,
    pub divergent: bool,
}

fn gl_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL_X.iter().zip(GL_W.iter()).flat_map(move |(&x, &w)| {
        [(mid - half * x, half * w), (mid + half * x, half * w)]
    })
}

/// `z lambda(z)` at `z = e^t`.
fn phi(spec: &PerturbationSpec, t: f64) -> f64 {
    if t > T_ASYMPTOTIC {
        if let Some(s) = spec.scaled_r_log(t) {
            let r = s * (-t).exp() / 3.0;
            if r < 1e-12 || !t.exp().is_finite() {
                return s;
            }
        }
    }
    let z = t.exp();
    let v = deficit_at(spec, z).unwrap_or(0.0);
    -(-v).ln_1p() * z
}

/// `lambda'(z) = (phi'(t) - phi(t)) / z^2` at `z = e^t`.
fn lambda_prime(spec: &PerturbationSpec, t: f64) -> f64 {
    if t > T_ASYMPTOTIC {
        return 0.0;
    }
    let h = 1e-4;
    let dphi = (phi(spec, t + h) - phi(spec, t - h)) / (2.0 * h);
    (dphi - phi(spec, t)) * (-2.0 * t).exp()
}

struct Integral {
    j_scaled: f64,
    tail_scaled: f64,
    divergent: bool,
}

/// `int exp(G(t) + corr(t)) dt` from `t0`, with `G = (t - t0) - Phi(t)`.
fn integrate(spec: &PerturbationSpec, t0: f64, phi0: f64, refine: f64) -> Integral {
    // Midpoint-rule gap between sum_i lambda(i) and the integral of lambda.
    let lp0 = lambda_prime(spec, t0);
    let mut start = t0;
    let mut big_phi = 0.0;
    let mut total = 0.0;
    let mut comp = 0.0;
    let mut last_phi = phi0;
    loop {
        let kappa = (last_phi - 1.0).abs().max(1e-9);
        let h_cap = if start < 40.0 { 0.5 } else { (start / 80.0).min(8.0) };
        let h = h_cap.min(2.0 / kappa) * refine;
        let end = start + h;
        let mut panel = 0.0;
        for (t, w) in gl_nodes(start, end) {
            let inner: f64 = gl_nodes(start, t).map(|(s, ws)| ws * phi(spec, s)).sum();
            let g = (t - t0) - (big_phi + inner);
            let corr = (lambda_prime(spec, t) - lp0) / 24.0;
            panel += w * (g + corr).exp();
        }
        let step: f64 = gl_nodes(start, end).map(|(s, ws)| ws * phi(spec, s)).sum();
        big_phi += step;
        // Neumaier accumulation of panel contributions.
        let sum = total + panel;
        comp += if total.abs() >= panel.abs() { (total - sum) + panel } else { (panel - sum) + total };
        total = sum;
        start = end;
        last_phi = phi(spec, end);
        let edge = ((end - t0) - big_phi).exp();
        if edge > 1e250 {
            return Integral { j_scaled: f64::INFINITY, tail_scaled: 0.0, divergent: true };
        }
        if edge < RELATIVE_CUTOFF * (total + comp) || end > T_MAX {
            let kappa_end = last_phi - 1.0;
            let (tail, divergent) = if kappa_end > 0.0 {
                (edge / kappa_end, false)
            } else {
                (0.0, edge >= RELATIVE_CUTOFF * (total + comp))
            };
            return Integral { j_scaled: total + comp, tail_scaled: tail, divergent };
        }
    }
}

/// `D(n0)` for an analytic family.
pub(crate) fn far_field_d(spec: &PerturbationSpec, n0: u64) -> Option<FarField> {
    if !spec.is_analytic() || n0 < 16 {
        return None;
    }
    let z0 = n0 as f64 + 0.5;
    let t0 = z0.ln();
    let phi0 = phi(spec, t0);
    let lambda0 = phi0 / z0;
    let coarse = integrate(spec, t0, phi0, 1.0);
    let fine = integrate(spec, t0, phi0, 0.5);
    let head = 0.5 + lambda0 / 12.0 - lambda0.powi(3) / 720.0;
    let j = z0 * (fine.j_scaled + fine.tail_scaled);
    let quad_err = z0 * (fine.j_scaled - coarse.j_scaled).abs();
    let tail_err = 0.5 * z0 * fine.tail_scaled;
    // Next midpoint term is of order lambda'''/5760.
    let model_err = 6.0 * phi0 / (5760.0 * z0.powi(4)) * j + lambda0.powi(5);
    let value = head + j;
    Some(FarField {
        value,
        err: quad_err + tail_err + model_err + 4.0 * f64::EPSILON * value,
        divergent: fine.divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(spec: &PerturbationSpec, n0: u64, n1: u64) -> (f64, f64) {
        // Sum  Pi_{i=n0+1}^{j-1} U_i  for j = n0+1..=n1 and return (sum, P_{n0,n1}).
        let chain = crate::perturbation::ChainParams::new(spec.clone());
        let t = crate::contfrac::compute_tails(&chain, n0 + 1, n1, 1e-16).unwrap();
        let mut sum = 0.0;
        let mut log_p = 0.0f64;
        for j in n0 + 1..=n1 {
            sum += log_p.exp();
            log_p += t.ln_u(j);
        }
        (sum, log_p.exp())
    }

    #[test]
    fn geometric_like_power_law() {
        // Direct summation converges: U decays well below 1.
        let spec = PerturbationSpec::power_law(0.3, 0.5).unwrap();
        let ff = far_field_d(&spec, 1000).unwrap();
        let (sum, p) = direct(&spec, 1000, 200_000);
        assert!(p < 1e-30);
        assert!(((ff.value - sum) / sum).abs() < 1e-10, "{} vs {}", ff.value, sum);
        assert!(ff.err / ff.value < 1e-9);
    }

    #[test]
    fn matches_direct_sum_plus_continuation() {
        for beta in [0.5, 1.0, 2.0] {
            let spec = PerturbationSpec::theorem2(beta).unwrap();
            let n1 = 2_000_000;
            let near = far_field_d(&spec, 1000).unwrap();
            let far = far_field_d(&spec, n1).unwrap();
            let (sum, p) = direct(&spec, 1000, n1);
            let combined = sum + p * far.value;
            let rel = ((near.value - combined) / combined).abs();
            assert!(rel < 1e-11, "beta {beta}: {} vs {combined} ({rel:e})", near.value);
            assert!(!near.divergent);
        }
    }

    #[test]
    fn zero_family_divergent() {
        assert!(far_field_d(&PerturbationSpec::zero(), 1000).unwrap().divergent);
    }
}

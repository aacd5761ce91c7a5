//! Elimination for the first-step system `h(n) - q_n h(n-1) - p_n h(n+2) = 0`.
//!
//! Rows couple `n - 1`, `n` and `n + 2`; after eliminating the subdiagonal each
//! row keeps entries on columns `n`, `n + 1`, `n + 2`. The matrix is a weakly
//! diagonally dominant M-matrix, so no pivoting is needed.

use crate::error::{Error, Result};

/// Values outside the interval `lo..=hi`: at `lo - 1` and at `hi + 1`, `hi + 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub below: f64,
    pub above: [f64; 2],
}

/// Solve on `lo..=hi` for every boundary in `bounds`, sharing one elimination.
/// `pq(n)` returns `(p_n, q_n)`. Returns the solutions and the max residual.
pub(crate) fn solve(
    lo: u64,
    hi: u64,
    pq: impl Fn(u64) -> Result<(f64, f64)>,
    bounds: &[Boundary],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let len = (hi - lo + 1) as usize;
    let nb = bounds.len();
    let mut p = Vec::with_capacity(len);
    let mut q = Vec::with_capacity(len);
    for n in lo..=hi {
        let (pn, qn) = pq(n)?;
        p.push(pn);
        q.push(qn);
    }
    // Row i: d[i] x_i + e[i] x_{i+1} + f[i] x_{i+2} = rhs[i].
    let mut d = vec![1.0; len];
    let mut e = vec![0.0; len];
    let f: Vec<f64> = p.iter().map(|x| -x).collect();
    let mut rhs = vec![0.0; len * nb];
    for (b, bd) in bounds.iter().enumerate() {
        rhs[b] += q[0] * bd.below;
        // Row hi - 1 jumps to hi + 1, row hi to hi + 2.
        if len >= 2 {
            rhs[(len - 2) * nb + b] += p[len - 2] * bd.above[0];
        }
        rhs[(len - 1) * nb + b] += p[len - 1] * bd.above[1];
    }
    for i in 1..len {
        let l = -q[i] / d[i - 1];
        d[i] = 1.0 - l * e[i - 1];
        e[i] = -l * f[i - 1];
        if !(d[i] > 0.0) {
            return Err(Error::Singular { row: i, residual: d[i].abs() });
        }
        for b in 0..nb {
            rhs[i * nb + b] -= l * rhs[(i - 1) * nb + b];
        }
    }
    let mut x = vec![0.0; len * nb];
    for i in (0..len).rev() {
        for b in 0..nb {
            let x1 = if i + 1 < len { x[(i + 1) * nb + b] } else { 0.0 };
            let x2 = if i + 2 < len { x[(i + 2) * nb + b] } else { 0.0 };
            x[i * nb + b] = (rhs[i * nb + b] - e[i] * x1 - f[i] * x2) / d[i];
        }
    }
    let out: Vec<Vec<f64>> = (0..nb).map(|b| (0..len).map(|i| x[i * nb + b]).collect()).collect();
    let mut residual: f64 = 0.0;
    for (b, bd) in bounds.iter().enumerate() {
        let h = &out[b];
        let at = |j: i64| -> f64 {
            if j < 0 {
                bd.below
            } else if (j as usize) < len {
                h[j as usize]
            } else {
                bd.above[j as usize - len]
            }
        };
        for i in 0..len {
            let ii = i as i64;
            let r = h[i] - q[i] * at(ii - 1) - p[i] * at(ii + 2);
            residual = residual.max(r.abs());
        }
    }
    Ok((out, residual))
}

//! Action of `exp(tA)` for a real antisymmetric `A` by Krylov projection.
//!
//! Arnoldi with full orthogonalization projects `A` onto a small skew
//! tridiagonal matrix whose exponential is taken densely. The step is split
//! whenever the a-posteriori error estimate `h_{m+1,m}·|[exp(τH)]_{m,1}|`
//! exceeds the per-step budget.

use nalgebra::DMatrix;

use super::{dot, norm, LinearAction};

#[derive(Debug, Clone)]
pub struct KrylovOptions {
    /// Absolute error target relative to `‖v‖`.
    pub tol: f64,
    /// Largest Krylov dimension per substep.
    pub max_dim: usize,
    /// Give up after this many substeps.
    pub max_substeps: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_dim: 40,
            max_substeps: 10_000,
        }
    }
}

/// Returns `exp(t·A)·v`, or `Err(residual)` if the substep control stalls.
pub fn expmv_skew<A: LinearAction + ?Sized>(
    a: &A,
    v: &[f64],
    t: f64,
    opts: &KrylovOptions,
) -> Result<Vec<f64>, f64> {
    let dim = a.dim();
    assert_eq!(v.len(), dim);
    let vnorm = norm(v);
    if t == 0.0 || vnorm == 0.0 {
        return Ok(v.to_vec());
    }
    let mut x = v.to_vec();
    let mut remaining = t.abs();
    let sign = t.signum();
    let mut tau = remaining;
    let mut substeps = 0;
    let budget = opts.tol * vnorm;
    let max_m = opts.max_dim.min(dim).max(1);

    while remaining > 0.0 {
        substeps += 1;
        if substeps > opts.max_substeps {
            return Err(remaining);
        }
        let xnorm = norm(&x);
        // Arnoldi
        let mut basis: Vec<Vec<f64>> = vec![x.iter().map(|xi| xi / xnorm).collect()];
        let mut h = DMatrix::<f64>::zeros(max_m + 1, max_m);
        let mut w = vec![0.0; dim];
        let mut m_used = max_m;
        let mut happy = false;
        for j in 0..max_m {
            a.apply(&basis[j], &mut w);
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot(q, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
            }
            let hn = norm(&w);
            h[(j + 1, j)] = hn;
            if hn <= 1e-14 * (1.0 + h[(j, j)].abs()) {
                m_used = j + 1;
                happy = true;
                break;
            }
            basis.push(w.iter().map(|wi| wi / hn).collect());
        }
        let hm = h.view((0, 0), (m_used, m_used)).into_owned();
        let tail = if happy { 0.0 } else { h[(m_used, m_used - 1)] };

        // Shrink τ until the error estimate meets its share of the budget.
        let (step, e1) = loop {
            let step = tau.min(remaining);
            let eh = (&hm * (sign * step)).exp();
            let est = xnorm * tail * eh[(m_used - 1, 0)].abs();
            let allowed = budget * (step / t.abs()).max(1e-3);
            if est <= allowed || happy {
                break (step, eh.column(0).into_owned());
            }
            tau = step * 0.5;
            if tau < 1e-14 * t.abs() {
                return Err(est);
            }
        };
        let mut next = vec![0.0; dim];
        for (j, q) in basis.iter().take(m_used).enumerate() {
            let c = xnorm * e1[j];
            next.iter_mut().zip(q).for_each(|(ni, qi)| *ni += c * qi);
        }
        x = next;
        remaining -= step;
        if remaining < 1e-15 * t.abs() {
            remaining = 0.0;
        }
        // Let τ grow again after a successful step.
        tau = (step * 1.5).max(tau);
    }
    Ok(x)
}

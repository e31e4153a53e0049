//! Lanczos with full reorthogonalization for the lowest eigenpairs of a
//! symmetric action.
//!
//! The Krylov basis is kept in memory so every new vector can be
//! orthogonalized twice against all previous ones; this costs
//! `O(m·dim)` storage but keeps Ritz values free of ghosts. On breakdown
//! (an invariant subspace is exhausted) the iteration restarts from a fresh
//! random vector orthogonal to the basis, which lets degenerate eigenvalues
//! show up with their multiplicity.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, norm, symmetric_eigen_sorted, LinearAction};

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Number of lowest eigenpairs wanted.
    pub k: usize,
    /// Residual tolerance relative to `max(1, |λ|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed of the start vector.
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            k: 1,
            tol: 1e-10,
            max_iter: 400,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosOutcome {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Explicit residuals `‖Ax − λx‖`.
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
    }
}

/// Lowest `k` eigenpairs. Returns the best available pairs with
/// `converged = false` when `max_iter` is exhausted.
pub fn lanczos_lowest<A: LinearAction + ?Sized>(a: &A, opts: &LanczosOptions) -> LanczosOutcome {
    let dim = a.dim();
    let k = opts.k.min(dim).max(1);
    let max_m = opts.max_iter.min(dim).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_m);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_m);
    let mut beta: Vec<f64> = Vec::with_capacity(max_m);
    let mut q = random_unit(dim, &mut rng);
    let mut w = vec![0.0; dim];
    let mut scale = 1.0f64;

    let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;
    let mut converged = false;

    while basis.len() < max_m {
        a.apply(&q, &mut w);
        let aj = dot(&q, &w);
        basis.push(q.clone());
        alpha.push(aj);
        orthogonalize(&mut w, &basis);
        let bj = norm(&w);
        scale = scale.max(aj.abs()).max(bj);
        let m = basis.len();

        let breakdown = bj <= 1e-13 * scale;
        // A breakdown before the space is exhausted may hide degenerate
        // copies, so only test convergence once the restart has run.
        let check = m >= k && !(breakdown && m < dim) && (m.is_multiple_of(5) || breakdown || m == max_m);
        if check {
            let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
            let ok = (0..k).all(|i| {
                let est = (bj * vecs[(m - 1, i)]).abs();
                est <= opts.tol * vals[i].abs().max(1.0)
            });
            ritz = Some((vals, vecs));
            if ok {
                converged = true;
                break;
            }
        }
        if m == max_m {
            break;
        }
        if breakdown {
            // Exhausted an invariant subspace; restart orthogonally.
            let mut fresh = random_unit(dim, &mut rng);
            orthogonalize(&mut fresh, &basis);
            let nf = norm(&fresh);
            if nf < 1e-10 {
                break;
            }
            fresh.iter_mut().for_each(|x| *x /= nf);
            beta.push(0.0);
            q = fresh;
        } else {
            beta.push(bj);
            q = w.iter().map(|x| x / bj).collect();
        }
    }

    let m = basis.len();
    let (_, vecs) = match ritz {
        Some(r) if r.0.len() == m => r,
        _ => tridiagonal_eigen(&alpha, &beta[..m.saturating_sub(1)]),
    };
    let kk = k.min(m);
    let mut eigenvalues = Vec::with_capacity(kk);
    let mut eigenvectors = Vec::with_capacity(kk);
    let mut residual_norms = Vec::with_capacity(kk);
    for i in 0..kk {
        let mut x = vec![0.0; dim];
        for (j, qj) in basis.iter().enumerate() {
            let c = vecs[(j, i)];
            x.iter_mut().zip(qj).for_each(|(xi, qi)| *xi += c * qi);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut ax = vec![0.0; dim];
        a.apply(&x, &mut ax);
        let lambda = dot(&x, &ax);
        let r: f64 = ax
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - lambda * q).powi(2))
            .sum::<f64>()
            .sqrt();
        eigenvalues.push(lambda);
        eigenvectors.push(x);
        residual_norms.push(r);
    }
    let converged = converged
        || residual_norms
            .iter()
            .zip(&eigenvalues)
            .all(|(r, l)| *r <= opts.tol * l.abs().max(1.0));
    LanczosOutcome {
        eigenvalues,
        eigenvectors,
        residual_norms,
        iterations: m,
        converged,
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    symmetric_eigen_sorted(t)
}

//! Generalized Bogoliubov transformations `e^{B(η)}` on `F₊^{≤N}` with
//! `B(η) = ½ Σ_q η_q (b_q† b_{−q}† − b_q b_{−q})` for real symmetric `η`.
//!
//! `B` is real antisymmetric in the occupation basis, so `e^{B}` is real
//! orthogonal and is applied by a Krylov exponential. Conjugated operators
//! are exposed as matrix-free actions, with dense materialization for small
//! bases.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{b_operator, string_operator, DiagFn, Factor, FockBasis};
use crate::linalg::{expmv_skew, KrylovOptions, LinearAction, SparseOperator};

/// Largest dimension materialized densely.
pub const DENSE_LIMIT: usize = 2000;
/// `‖η‖₂` above which series-based checks are flagged.
pub const ETA_COMFORT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct BogoliubovGenerator {
    pub b: SparseOperator,
    pub eta_norm: f64,
    pub warnings: Vec<String>,
}

impl BogoliubovGenerator {
    pub fn dim(&self) -> usize {
        self.b.rows()
    }
}

/// `B(η)` on a single basis; `eta` is indexed by lattice mode.
pub fn build_generator(basis: &FockBasis, eta: &[f64]) -> Result<BogoliubovGenerator> {
    if basis.include_zero_mode() {
        return Err(Error::InvalidDomain("B(η) acts on an excitation basis".into()));
    }
    let lat = basis.lattice();
    if eta.len() != lat.len() {
        return Err(Error::InvalidDomain("eta must be indexed by lattice mode".into()));
    }
    let defect = (0..lat.len())
        .map(|i| (eta[i] - eta[lat.neg_index(i)]).abs())
        .fold(0.0, f64::max);
    if defect > 1e-14 {
        return Err(Error::AsymmetricEta { defect });
    }
    let eta_norm = lat
        .nonzero_indices()
        .map(|i| eta[i] * eta[i])
        .sum::<f64>()
        .sqrt();
    let mut warnings = Vec::new();
    if eta_norm > ETA_COMFORT {
        warnings.push(format!(
            "‖η‖₂ = {eta_norm:.3} exceeds {ETA_COMFORT}; commutator series may converge slowly"
        ));
    }
    let sd = Factor::Diag(DiagFn::SqrtDeficit);
    let strings: Vec<(f64, Vec<Factor>)> = lat
        .nonzero_indices()
        .filter(|&q| eta[q] != 0.0)
        .flat_map(|q| {
            let mq = lat.neg_index(q);
            let h = 0.5 * eta[q];
            [
                (h, vec![Factor::Create(q), sd, Factor::Create(mq), sd]),
                (-h, vec![sd, Factor::Annihilate(q), sd, Factor::Annihilate(mq)]),
            ]
        })
        .collect();
    let b = string_operator(basis, basis, &strings);
    Ok(BogoliubovGenerator { b, eta_norm, warnings })
}

fn krylov_opts() -> KrylovOptions {
    KrylovOptions {
        tol: 1e-12,
        ..Default::default()
    }
}

/// `e^{tB} v`.
pub fn expmv(gen: &BogoliubovGenerator, v: &[f64], t: f64) -> Result<Vec<f64>> {
    expmv_skew(&gen.b, v, t, &krylov_opts())
        .map_err(|r| Error::NonConvergence(format!("Krylov exponential stalled (estimate {r:.3e})")))
}

/// `x ↦ e^{−B} A e^{B} x`.
pub struct ConjugatedAction<'a> {
    gen: &'a BogoliubovGenerator,
    op: &'a SparseOperator,
    failed: AtomicBool,
}

impl<'a> ConjugatedAction<'a> {
    pub fn new(gen: &'a BogoliubovGenerator, op: &'a SparseOperator) -> Result<Self> {
        if op.rows() != gen.dim() || op.cols() != gen.dim() {
            return Err(Error::InvalidDomain("operator and generator live on different bases".into()));
        }
        Ok(Self {
            gen,
            op,
            failed: AtomicBool::new(false),
        })
    }

    /// Whether any application hit a stalled exponential.
    pub fn failed(&self) -> bool {
        self.failed.load(Ordering::Relaxed)
    }
}

impl LinearAction for ConjugatedAction<'_> {
    fn dim(&self) -> usize {
        self.gen.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let run = || -> Result<Vec<f64>> {
            let u = expmv(self.gen, x, 1.0)?;
            let w = self.op.matvec(&u);
            expmv(self.gen, &w, -1.0)
        };
        match run() {
            Ok(v) => y.copy_from_slice(&v),
            Err(_) => {
                self.failed.store(true, Ordering::Relaxed);
                y.iter_mut().for_each(|v| *v = f64::NAN);
            }
        }
    }
}

/// Dense `e^{tB}`, column by column.
pub fn materialize_exp(gen: &BogoliubovGenerator, t: f64) -> Result<DMatrix<f64>> {
    let n = gen.dim();
    if n > DENSE_LIMIT {
        return Err(Error::DimensionOverflow { limit: DENSE_LIMIT });
    }
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            expmv(gen, &e, t)
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).copy_from_slice(c);
    }
    Ok(m)
}

/// Dense `e^{−B_t} X e^{B_s}` for `X` mapping the domain of `gen_s` to that
/// of `gen_t`.
pub fn materialize_conjugated(
    gen_t: &BogoliubovGenerator,
    gen_s: &BogoliubovGenerator,
    op: &SparseOperator,
) -> Result<DMatrix<f64>> {
    let et = materialize_exp(gen_t, -1.0)?;
    let es = materialize_exp(gen_s, 1.0)?;
    Ok(et * op.to_dense() * es)
}

/// `ad_B(X) = B_t X − X B_s`.
pub fn ad(gen_t: &BogoliubovGenerator, gen_s: &BogoliubovGenerator, x: &SparseOperator) -> SparseOperator {
    gen_t.b.matmul(x).sub(&x.matmul(&gen_s.b))
}

/// `[X, ad_B X, ad²_B X, …, adᵐ_B X]`.
pub fn ad_powers(
    gen_t: &BogoliubovGenerator,
    gen_s: &BogoliubovGenerator,
    x: &SparseOperator,
    m: usize,
) -> Vec<SparseOperator> {
    let mut out = vec![x.clone()];
    for _ in 0..m {
        let next = ad(gen_t, gen_s, out.last().unwrap());
        out.push(next);
    }
    out
}

/// `Σ_{n≤m} (−1)ⁿ/n! adⁿ_B(X)`, the truncated series of `e^{−B} X e^{B}`.
pub fn ad_series_sum(
    gen_t: &BogoliubovGenerator,
    gen_s: &BogoliubovGenerator,
    x: &SparseOperator,
    m: usize,
) -> SparseOperator {
    let mut acc = x.clone();
    let mut coef = 1.0;
    for (n, term) in ad_powers(gen_t, gen_s, x, m).iter().enumerate().skip(1) {
        coef *= -1.0 / n as f64;
        acc = acc.add_scaled(term, coef);
    }
    acc
}

/// Partial sum of the series for `e^{−B} b_p e^{B}` (or `b_p†`). `target`
/// must be the sector reached by `b_p` (resp. `b_p†`) from `source`.
pub fn ad_partial_sum(
    source: &FockBasis,
    target: &FockBasis,
    eta: &[f64],
    p: usize,
    m: usize,
    dagger: bool,
) -> Result<SparseOperator> {
    if m > 8 {
        return Err(Error::OrderTooLarge { order: m, max: 8 });
    }
    let gs = build_generator(source, eta)?;
    let gt = build_generator(target, eta)?;
    let x = b_operator(source, target, p, dagger)?;
    Ok(ad_series_sum(&gt, &gs, &x, m))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fock::number_operator;
    use crate::lattice::MomentumLattice;
    use crate::linalg::norm;

    fn basis(n: usize) -> FockBasis {
        FockBasis::excitation(&Arc::new(MomentumLattice::new(1)), n, Some([0, 0, 0])).unwrap()
    }

    fn eta_for(b: &FockBasis, scale: f64) -> Vec<f64> {
        let lat = b.lattice();
        (0..lat.len())
            .map(|i| {
                let n2 = crate::lattice::norm_sq(lat.mode_at(i));
                if n2 == 0 { 0.0 } else { -scale / n2 as f64 }
            })
            .collect()
    }

    #[test]
    fn zero_eta_gives_zero_generator() {
        let b = basis(3);
        let g = build_generator(&b, &vec![0.0; 27]).unwrap();
        assert_eq!(g.b.nnz(), 0);
        let v: Vec<f64> = (0..b.dim()).map(|i| i as f64).collect();
        assert_eq!(expmv(&g, &v, 1.0).unwrap(), v);
    }

    #[test]
    fn generator_is_antisymmetric_and_raises_vacuum_by_two() {
        let b = basis(4);
        let g = build_generator(&b, &eta_for(&b, 0.1)).unwrap();
        assert!(g.b.antisymmetry_defect() < 1e-14);
        let vac = b.condensate_index().unwrap();
        let np = number_operator(&b).diagonal_entries();
        for (i, v) in g.b.triplets().filter(|t| t.1 == vac).map(|t| (t.0, t.2)) {
            assert!(v != 0.0 && np[i] == 2.0);
        }
    }

    #[test]
    fn asymmetric_eta_is_rejected() {
        let b = basis(2);
        let mut eta = eta_for(&b, 0.1);
        eta[0] += 1e-6;
        assert!(matches!(build_generator(&b, &eta), Err(Error::AsymmetricEta { .. })));
    }

    #[test]
    fn expmv_round_trip_and_isometry() {
        let b = basis(4);
        let g = build_generator(&b, &eta_for(&b, 0.3)).unwrap();
        let v: Vec<f64> = (0..b.dim()).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let w = expmv(&g, &v, 1.0).unwrap();
        assert!((norm(&w) - norm(&v)).abs() < 1e-10 * norm(&v));
        let back = expmv(&g, &w, -1.0).unwrap();
        let err: f64 = back.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9 * norm(&v));
    }

    #[test]
    fn partial_sum_zeroth_order_is_b() {
        let b = basis(3);
        let lat = b.lattice().clone();
        let p = lat.index_of([1, 0, 0]).unwrap();
        let t = b.shifted([-1, 0, 0]).unwrap();
        let s = ad_partial_sum(&b, &t, &eta_for(&b, 0.2), p, 0, false).unwrap();
        assert_eq!(s, b_operator(&b, &t, p, false).unwrap());
    }
}

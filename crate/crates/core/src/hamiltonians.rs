//! The second-quantized Hamiltonian `H_N` on the canonical space and the
//! pieces `L⁽⁰⁾, L⁽²⁾, L⁽³⁾, L⁽⁴⁾` of its excitation form on `F₊^{≤N}`.
//!
//! Cutoff convention: a monomial is kept only if every mode it references
//! lies in the lattice cube. The same rule is applied on both sides, so
//! `U_N H_N U_N† = L⁽⁰⁾ + L⁽²⁾ + L⁽³⁾ + L⁽⁴⁾` holds exactly at fixed cutoff.
//!
//! The two-body matrix element of `κN²V(N(x₁−x₂))` between plane waves on
//! the unit torus is `(κ/N)V̂(r/N)`, so the quartic term carries `κ/(2N)`
//! in front of the unrestricted sum over `(p, q, r)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{apply_string, assemble, DiagFn, Factor, FockBasis, Occupation};
use crate::lattice::{norm_sq, Mode, MomentumLattice, FOUR_PI_SQ};
use crate::linalg::SparseOperator;
use crate::potential::PotentialSpec;

/// `V̂(2π|n|/N)` cached by `|n|²`.
#[derive(Debug, Clone)]
pub struct FourierTable {
    values: Vec<f64>,
}

impl FourierTable {
    pub fn new(v: &PotentialSpec, n_particles: usize, max_norm_sq: i64) -> Self {
        let n = n_particles as f64;
        let values = (0..=max_norm_sq)
            .map(|k| v.fourier(2.0 * std::f64::consts::PI * (k as f64).sqrt() / n))
            .collect();
        Self { values }
    }

    /// Large enough for differences of two cube modes.
    pub fn for_lattice(v: &PotentialSpec, n_particles: usize, lattice: &MomentumLattice) -> Self {
        let p = 2 * lattice.pmax() as i64;
        Self::new(v, n_particles, 3 * p * p)
    }

    pub fn at(&self, r: Mode) -> f64 {
        self.values[norm_sq(r) as usize]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianMeta {
    pub kappa: f64,
    pub n_particles: usize,
    pub pmax: u32,
    pub sector: Option<Mode>,
    pub potential: PotentialSpec,
    /// Prefactor `C` in `ĝ(q) = C∫g(x)e^{−iq·x}dx`.
    pub fourier_constant: f64,
}

#[derive(Debug, Clone)]
pub struct HamiltonianSet {
    pub l0: SparseOperator,
    pub l2: SparseOperator,
    pub l3: SparseOperator,
    pub l4: SparseOperator,
    pub kinetic: SparseOperator,
    pub potential: SparseOperator,
    /// Diagonal of `𝒩₊`.
    pub n_plus: Vec<f64>,
    pub meta: HamiltonianMeta,
}

impl HamiltonianSet {
    /// `L_N = L⁽⁰⁾ + L⁽²⁾ + L⁽³⁾ + L⁽⁴⁾`.
    pub fn l_n(&self) -> SparseOperator {
        self.l0
            .add(&self.l2)
            .add(&self.l3)
            .add(&self.l4)
            .with_hermitian(true)
    }
}

fn kinetic_diagonal(basis: &FockBasis) -> Vec<f64> {
    let lat = basis.lattice();
    basis
        .states()
        .iter()
        .map(|s| {
            s.iter()
                .map(|&(m, c)| FOUR_PI_SQ * norm_sq(lat.mode_at(m as usize)) as f64 * c as f64)
                .sum()
        })
        .collect()
}

fn cb(p: usize) -> [Factor; 2] {
    [Factor::Create(p), Factor::Diag(DiagFn::SqrtDeficit)]
}

fn ab(p: usize) -> [Factor; 2] {
    [Factor::Diag(DiagFn::SqrtDeficit), Factor::Annihilate(p)]
}

fn concat(parts: &[&[Factor]]) -> Vec<Factor> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

// Quartic sum (κ/2N) Σ V̂(r/N) a*_{p+r} a*_q a_p a_{q+r}, all four modes in
// the cube, optionally excluding the zero mode from the created pair.
fn quartic(
    domain: &FockBasis,
    table: &FourierTable,
    kappa: f64,
    exclude_zero: bool,
) -> SparseOperator {
    let lat = domain.lattice().clone();
    let n = domain.n_particles();
    let zero = lat.zero_index();
    let pref = kappa / (2.0 * n as f64);
    assemble(domain, domain, |s: &Occupation, out| {
        for &(m1, c1) in s.iter() {
            for &(m2, _) in s.iter() {
                if m1 == m2 && c1 < 2 {
                    continue;
                }
                let (m1, m2) = (m1 as usize, m2 as usize);
                let n1 = lat.mode_at(m1);
                let n2 = lat.mode_at(m2);
                for q in 0..lat.len() {
                    if exclude_zero && q == zero {
                        continue;
                    }
                    let nq = lat.mode_at(q);
                    let r = [n1[0] - nq[0], n1[1] - nq[1], n1[2] - nq[2]];
                    let Some(t) = lat.index_of([n2[0] + r[0], n2[1] + r[1], n2[2] + r[2]]) else {
                        continue;
                    };
                    if exclude_zero && t == zero {
                        continue;
                    }
                    let string = [
                        Factor::Create(t),
                        Factor::Create(q),
                        Factor::Annihilate(m2),
                        Factor::Annihilate(m1),
                    ];
                    if let Some((o, amp)) = apply_string(s, &string, n, zero) {
                        out.push((o, pref * table.at(r) * amp));
                    }
                }
            }
        }
    })
}

fn require(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidDomain(what.into()))
    }
}

/// `H_N = Σ p² a_p†a_p + (κ/2N) Σ V̂(r/N) a*_{p+r} a*_q a_p a_{q+r}` on a
/// canonical basis.
pub fn build_hn(basis: &FockBasis, v: &PotentialSpec, kappa: f64) -> Result<SparseOperator> {
    require(basis.include_zero_mode(), "H_N needs a canonical basis with the zero mode")?;
    let table = FourierTable::for_lattice(v, basis.n_particles(), basis.lattice());
    let kin = SparseOperator::diagonal(&kinetic_diagonal(basis));
    if kappa == 0.0 {
        return Ok(kin);
    }
    Ok(kin.add(&quartic(basis, &table, kappa, false)).with_hermitian(true))
}

/// The excitation Hamiltonian parts together with `K` and `V_N`.
pub fn build_ln_parts(basis: &FockBasis, v: &PotentialSpec, kappa: f64) -> Result<HamiltonianSet> {
    require(!basis.include_zero_mode(), "L_N needs an excitation basis")?;
    let lat = basis.lattice().clone();
    let n = basis.n_particles();
    let nf = n as f64;
    let zero = lat.zero_index();
    let table = FourierTable::for_lattice(v, n, &lat);
    let v0 = table.at([0, 0, 0]);

    let kinetic = SparseOperator::diagonal(&kinetic_diagonal(basis)).with_hermitian(true);
    let meta = HamiltonianMeta {
        kappa,
        n_particles: n,
        pmax: lat.pmax(),
        sector: basis.sector(),
        potential: v.clone(),
        fourier_constant: 1.0,
    };
    let dim = basis.dim();
    let n_plus: Vec<f64> = basis.states().iter().map(|s| basis.n_plus(s) as f64).collect();

    let l0_diag: Vec<f64> = basis
        .states()
        .iter()
        .map(|s| {
            let np = basis.n_plus(s) as f64;
            (nf - 1.0) / (2.0 * nf) * kappa * v0 * (nf - np) + kappa * v0 / (2.0 * nf) * np * (nf - np)
        })
        .collect();
    let l0 = SparseOperator::diagonal(&l0_diag).with_hermitian(true);

    if kappa == 0.0 {
        let z = SparseOperator::zeros(dim, dim);
        return Ok(HamiltonianSet {
            l0: z.clone(),
            l2: kinetic.clone(),
            l3: z.clone(),
            l4: z.clone(),
            kinetic,
            potential: z,
            n_plus,
            meta,
        });
    }

    let nonzero: Vec<usize> = lat.nonzero_indices().collect();

    // κV̂(p/N)[b_p†b_p − a_p†a_p/N] + (κ/2)V̂(p/N)[b_p†b_{−p}† + b_p b_{−p}]
    let quad = assemble(basis, basis, |s, out| {
        for &p in &nonzero {
            let vp = kappa * table.at(lat.mode_at(p));
            let mp = lat.neg_index(p);
            let terms: [(f64, Vec<Factor>); 4] = [
                (vp, concat(&[&cb(p), &ab(p)])),
                (-vp / nf, vec![Factor::Create(p), Factor::Annihilate(p)]),
                (0.5 * vp, concat(&[&cb(p), &cb(mp)])),
                (0.5 * vp, concat(&[&ab(p), &ab(mp)])),
            ];
            for (c, string) in &terms {
                if let Some((o, amp)) = apply_string(s, string, n, zero) {
                    out.push((o, c * amp));
                }
            }
        }
    });
    let l2 = kinetic.add(&quad).with_hermitian(true);

    // (κ/√N) Σ V̂(p/N)[b*_{p+q} a*_{−p} a_q + a*_q a_{−p} b_{p+q}]
    let pref3 = kappa / nf.sqrt();
    let l3 = assemble(basis, basis, |s, out| {
        for &p in &nonzero {
            let vp = pref3 * table.at(lat.mode_at(p));
            let mp = lat.neg_index(p);
            for &q in &nonzero {
                let Some(pq) = lat.combine(p, q, 1) else { continue };
                if pq == zero {
                    continue;
                }
                let strings = [
                    concat(&[&cb(pq), &[Factor::Create(mp), Factor::Annihilate(q)]]),
                    concat(&[&[Factor::Create(q), Factor::Annihilate(mp)], &ab(pq)]),
                ];
                for string in &strings {
                    if let Some((o, amp)) = apply_string(s, string, n, zero) {
                        out.push((o, vp * amp));
                    }
                }
            }
        }
    })
    .with_hermitian(true);

    let l4 = quartic(basis, &table, kappa, true).with_hermitian(true);

    Ok(HamiltonianSet {
        l0,
        l2,
        l3,
        potential: l4.clone(),
        l4,
        kinetic,
        n_plus,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fock::excitation_map;

    fn setup(n: usize) -> (FockBasis, FockBasis) {
        let l = Arc::new(MomentumLattice::new(1));
        (
            FockBasis::canonical(&l, n, Some([0, 0, 0])).unwrap(),
            FockBasis::excitation(&l, n, Some([0, 0, 0])).unwrap(),
        )
    }

    #[test]
    fn free_hamiltonian_is_kinetic() {
        let (c, e) = setup(3);
        let v = PotentialSpec::ball(1.0, 1.0);
        let h = build_hn(&c, &v, 0.0).unwrap();
        let i = c.condensate_index().unwrap();
        assert_eq!(h.get(i, i), 0.0);
        let set = build_ln_parts(&e, &v, 0.0).unwrap();
        assert_eq!(set.l0.max_abs() + set.l3.max_abs() + set.l4.max_abs(), 0.0);
        assert_eq!(set.l2.max_abs_diff(&set.kinetic), 0.0);
    }

    #[test]
    fn vacuum_energy() {
        let (_, e) = setup(4);
        let v = PotentialSpec::ball(1.0, 1.0);
        let set = build_ln_parts(&e, &v, 0.3).unwrap();
        let i = e.condensate_index().unwrap();
        let expect = 3.0 * 0.3 * v.integral() / 2.0;
        assert!((set.l_n().get(i, i) - expect).abs() < 1e-12);
    }

    #[test]
    fn conjugation_matches_excitation_form() {
        let (c, e) = setup(3);
        let v = PotentialSpec::ball(1.0, 1.0);
        let h = build_hn(&c, &v, 0.7).unwrap();
        let set = build_ln_parts(&e, &v, 0.7).unwrap();
        let u = excitation_map(&c, &e).unwrap();
        let conj = u.matmul(&h).matmul(&u.transpose());
        assert!(conj.max_abs_diff(&set.l_n()) < 1e-10);
    }

    #[test]
    fn parts_are_symmetric() {
        let (_, e) = setup(4);
        let set = build_ln_parts(&e, &PotentialSpec::ball(1.0, 1.0), 0.5).unwrap();
        for op in [&set.l0, &set.l2, &set.l3, &set.l4] {
            assert!(op.symmetry_defect() < 1e-12);
        }
    }
}

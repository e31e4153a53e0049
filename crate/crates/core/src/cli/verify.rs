//! Identity suite behind the `verify` subcommand.

use std::sync::Arc;

use serde::Serialize;

use crate::bogoliubov::build_generator;
use crate::error::{Error, Result};
use crate::fock::{
    annihilation, creation, diag_operator, excitation_map, monomial, string_operator, DiagFn, Factor, FockBasis,
};
use crate::hamiltonians::{build_hn, build_ln_parts};
use crate::lattice::{norm_sq, MomentumLattice};
use crate::linalg::SparseOperator;
use crate::potential::PotentialSpec;
use crate::symbolic::{evaluate_terms, expand_ad, EVAL_DIM_LIMIT};

/// Largest unsectored basis the suite will build.
pub const VERIFY_LIMIT: usize = 20_000;
/// `‖η‖₂` of the probe coefficients used for the `B(η)` relations.
pub const PROBE_ETA_NORM: f64 = 0.3;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub max_defect: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Default)]
struct Collector {
    checks: Vec<Check>,
}

impl Collector {
    fn push(&mut self, name: &str, defect: f64, tol: f64) {
        self.checks.push(Check {
            name: name.into(),
            max_defect: defect,
            tol,
            passed: defect <= tol,
        });
    }
}

const SD: Factor = Factor::Diag(DiagFn::SqrtDeficit);

fn b(x: usize) -> Vec<Factor> {
    vec![SD, Factor::Annihilate(x)]
}

fn bd(x: usize) -> Vec<Factor> {
    vec![Factor::Create(x), SD]
}

fn cat(parts: &[&[Factor]]) -> Vec<Factor> {
    parts.concat()
}

/// Probe `η_p ∝ −1/|p|²` normalized to [`PROBE_ETA_NORM`].
pub fn probe_eta(lat: &MomentumLattice) -> Vec<f64> {
    let raw: Vec<f64> = (0..lat.len())
        .map(|i| match norm_sq(lat.mode_at(i)) {
            0 => 0.0,
            n2 => -1.0 / n2 as f64,
        })
        .collect();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| x * PROBE_ETA_NORM / n).collect()
}

pub struct VerifyInput<'a> {
    pub pmax: u32,
    pub n: usize,
    pub kappa: f64,
    pub potential: &'a PotentialSpec,
    pub tol: f64,
    pub inject_fault: bool,
}

pub fn run_checks(input: &VerifyInput<'_>) -> Result<VerifyReport> {
    let lat = Arc::new(MomentumLattice::new(input.pmax));
    let n = input.n;
    let tol = input.tol;
    let zero = lat.zero_index();
    let nonzero: Vec<usize> = lat.nonzero_indices().collect();
    let can = FockBasis::enumerate(&lat, n, true, None, VERIFY_LIMIT)?;
    let exc = FockBasis::enumerate(&lat, n, false, None, VERIFY_LIMIT)?;
    let mut c = Collector::default();

    let u = excitation_map(&can, &exc)?;
    let ut = u.transpose();
    c.push("U U* = 1", u.matmul(&ut).max_abs_diff(&SparseOperator::identity(exc.dim())), tol);
    c.push("U* U = 1", ut.matmul(&u).max_abs_diff(&SparseOperator::identity(can.dim())), tol);

    let conj = |x: &SparseOperator| u.matmul(x).matmul(&ut);
    let mono_c = |s: Vec<Factor>| monomial(&can, &can, s);
    let mono_e = |s: Vec<Factor>| monomial(&exc, &exc, s);
    let root = Factor::Diag(DiagFn::SqrtNMinusNPlus);
    c.push(
        "U a0*a0 U* = N - N+",
        conj(&mono_c(vec![Factor::Create(zero), Factor::Annihilate(zero)])?)
            .max_abs_diff(&diag_operator(&exc, DiagFn::NMinusNPlus)),
        tol,
    );
    let (mut d2, mut d3, mut d4) = (0.0f64, 0.0f64, 0.0f64);
    for &p in &nonzero {
        d2 = d2.max(
            conj(&mono_c(vec![Factor::Create(p), Factor::Annihilate(zero)])?)
                .max_abs_diff(&mono_e(vec![Factor::Create(p), root])?),
        );
        d3 = d3.max(
            conj(&mono_c(vec![Factor::Create(zero), Factor::Annihilate(p)])?)
                .max_abs_diff(&mono_e(vec![root, Factor::Annihilate(p)])?),
        );
        for &q in &nonzero {
            d4 = d4.max(
                conj(&mono_c(vec![Factor::Create(p), Factor::Annihilate(q)])?)
                    .max_abs_diff(&mono_e(vec![Factor::Create(p), Factor::Annihilate(q)])?),
            );
        }
    }
    c.push("U ap*a0 U* = ap* sqrt(N - N+)", d2, tol);
    c.push("U a0*ap U* = sqrt(N - N+) ap", d3, tol);
    c.push("U ap*aq U* = ap*aq", d4, tol);

    // U H_N U* = L_N in the zero-momentum sector.
    let can0 = can.with_sector(Some([0, 0, 0]))?;
    let exc0 = exc.with_sector(Some([0, 0, 0]))?;
    let u0 = excitation_map(&can0, &exc0)?;
    let hn = build_hn(&can0, input.potential, input.kappa)?;
    let mut ln = build_ln_parts(&exc0, input.potential, input.kappa)?.l_n();
    if input.inject_fault {
        ln = ln.add(&SparseOperator::from_triplets(ln.rows(), ln.cols(), vec![(0, 0, 1e-6)]));
    }
    let scale = hn.max_abs().max(1.0);
    c.push(
        "U H_N U* = L0 + L2 + L3 + L4",
        u0.matmul(&hn).matmul(&u0.transpose()).max_abs_diff(&ln) / scale,
        1e-10,
    );

    // CCR on states with 𝒩₊ ≤ N − 1.
    let safe = exc.indices_with_n_plus_at_most(n - 1);
    let a: Vec<SparseOperator> = nonzero.iter().map(|&p| annihilation(&exc, &exc, p)).collect::<Result<_>>()?;
    let ad: Vec<SparseOperator> = nonzero.iter().map(|&p| creation(&exc, &exc, p)).collect::<Result<_>>()?;
    let mut is_safe = vec![false; exc.dim()];
    safe.iter().for_each(|&k| is_safe[k] = true);
    let id = SparseOperator::identity(exc.dim());
    let mut ccr = 0.0f64;
    for i in 0..nonzero.len() {
        for j in 0..nonzero.len() {
            let mut d = SparseOperator::commutator(&a[i], &ad[j]);
            if i == j {
                d = d.sub(&id);
            }
            for (_, col, v) in d.triplets() {
                if is_safe[col] {
                    ccr = ccr.max(v.abs());
                }
            }
        }
    }
    c.push("[a_p, a_q*] = delta_pq on N+ <= N-1", ccr, tol);

    // Modified-operator commutators.
    let bs: Vec<SparseOperator> = nonzero.iter().map(|&p| string_operator(&exc, &exc, &[(1.0, b(p))])).collect();
    let bds: Vec<SparseOperator> = nonzero.iter().map(|&p| string_operator(&exc, &exc, &[(1.0, bd(p))])).collect();
    let nf = n as f64;
    let (mut bb, mut bdbd, mut bbd) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..nonzero.len() {
        for j in 0..nonzero.len() {
            bb = bb.max(SparseOperator::commutator(&bs[i], &bs[j]).max_abs());
            bdbd = bdbd.max(SparseOperator::commutator(&bds[i], &bds[j]).max_abs());
            let mut rhs = vec![(-1.0 / nf, vec![Factor::Create(nonzero[j]), Factor::Annihilate(nonzero[i])])];
            if i == j {
                rhs.push((1.0, vec![Factor::Diag(DiagFn::Deficit)]));
            }
            bbd = bbd.max(SparseOperator::commutator(&bs[i], &bds[j]).max_abs_diff(&string_operator(&exc, &exc, &rhs)));
        }
    }
    c.push("[b_p, b_q] = 0", bb, tol);
    c.push("[b_p*, b_q*] = 0", bdbd, tol);
    c.push("[b_p, b_q*] = (1 - N+/N) delta_pq - a_q*a_p / N", bbd, tol);

    // Commutators with B(η) for a probe η.
    let eta = probe_eta(&lat);
    let gen = build_generator(&exc, &eta)?;
    c.push("B(eta) antisymmetric", gen.b.antisymmetry_defect(), tol);
    let bm = &gen.b;
    let neg = |x: usize| lat.neg_index(x);
    let deficit = Factor::Diag(DiagFn::Deficit);
    let (mut r1, mut r2, mut r3, mut r4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &p in &nonzero {
        let mut rhs1 = vec![(-eta[p], cat(&[&[deficit], &bd(neg(p))]))];
        let mut rhs2 = vec![(-eta[p], cat(&[&b(neg(p)), &[deficit]]))];
        for &q in &nonzero {
            rhs1.push((eta[q] / nf, cat(&[&bd(q), &[Factor::Create(neg(q)), Factor::Annihilate(p)]])));
            rhs2.push((eta[q] / nf, cat(&[&[Factor::Create(p), Factor::Annihilate(neg(q))], &b(q)])));
        }
        let bp = string_operator(&exc, &exc, &[(1.0, b(p))]);
        let bdp = string_operator(&exc, &exc, &[(1.0, bd(p))]);
        r1 = r1.max(SparseOperator::commutator(bm, &bp).max_abs_diff(&string_operator(&exc, &exc, &rhs1)));
        r2 = r2.max(SparseOperator::commutator(bm, &bdp).max_abs_diff(&string_operator(&exc, &exc, &rhs2)));
        for &q in &nonzero {
            let apq = monomial(&exc, &exc, vec![Factor::Create(p), Factor::Annihilate(q)])?;
            let rhs = string_operator(
                &exc,
                &exc,
                &[
                    (-eta[q], cat(&[&bd(p), &bd(neg(q))])),
                    (-eta[p], cat(&[&b(neg(p)), &b(q)])),
                ],
            );
            r3 = r3.max(SparseOperator::commutator(bm, &apq).max_abs_diff(&rhs));
        }
    }
    let nn = diag_operator(&exc, DiagFn::NMinusNPlus);
    let rhs4: Vec<(f64, Vec<Factor>)> = nonzero
        .iter()
        .flat_map(|&q| {
            [
                (eta[q], cat(&[&bd(q), &bd(neg(q))])),
                (eta[q], cat(&[&b(q), &b(neg(q))])),
            ]
        })
        .collect();
    r4 = r4.max(SparseOperator::commutator(bm, &nn).max_abs_diff(&string_operator(&exc, &exc, &rhs4)));
    c.push("[B, b_p]", r1, tol);
    c.push("[B, b_p*]", r2, tol);
    c.push("[B, a_p* a_q]", r3, tol);
    c.push("[B, N - N+]", r4, tol);

    // Symbolic expansion against repeated commutators, sector 0 to −p.
    if exc0.dim() <= EVAL_DIM_LIMIT {
        let p = nonzero[0];
        let tgt = exc0.shifted(crate::lattice::neg_mode(lat.mode_at(p)))?;
        if tgt.dim() <= EVAL_DIM_LIMIT {
            let gs = build_generator(&exc0, &eta)?;
            let gt = build_generator(&tgt, &eta)?;
            let x = crate::fock::b_operator(&exc0, &tgt, p, false)?;
            let powers = crate::bogoliubov::ad_powers(&gt, &gs, &x, 3);
            let mut worst = 0.0f64;
            for (k, exact) in powers.iter().enumerate() {
                let sym = evaluate_terms(&expand_ad(k)?, &exc0, &tgt, &eta, p)?;
                worst = worst.max(sym.max_abs_diff(exact));
            }
            c.push("symbolic ad^n(b_p), n <= 3", worst, 1e-10);
        }
    }

    let passed = c.checks.iter().all(|k| k.passed);
    if c.checks.iter().any(|k| !k.max_defect.is_finite()) {
        return Err(Error::NonConvergence("non-finite defect".into()));
    }
    Ok(VerifyReport {
        checks: c.checks,
        passed,
    })
}

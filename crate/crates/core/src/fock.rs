//! Truncated bosonic Fock spaces in the occupation-number basis.
//!
//! A state is a sparse list of `(mode index, count)` pairs sorted by mode,
//! where mode indices refer to the shared [`MomentumLattice`]. Two kinds of
//! bases are used: the canonical `N`-particle space (zero mode included,
//! exactly `N` particles) and the excitation space `F₊^{≤N}` (zero mode
//! excluded, at most `N` particles). Both may be restricted to a total
//! momentum sector.
//!
//! Operators are assembled from strings of [`Factor`]s applied right to
//! left on the untruncated occupation vector; images that fall outside the
//! codomain basis are dropped.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::lattice::{add_modes, Mode, MomentumLattice};
use crate::linalg::SparseOperator;

pub type Occupation = SmallVec<[(u16, u16); 8]>;
/// A vector in the untruncated Fock space.
pub type SparseState = BTreeMap<Occupation, f64>;

type IndexMap = HashMap<Occupation, usize, BuildHasherDefault<DefaultHasher>>;

pub const DEFAULT_DIMENSION_LIMIT: usize = 5_000_000;

pub fn occupation_of(occ: &Occupation, mode: usize) -> usize {
    match occ.binary_search_by_key(&(mode as u16), |e| e.0) {
        Ok(k) => occ[k].1 as usize,
        Err(_) => 0,
    }
}

/// Changes the count of `mode` by `delta`; `None` if it would go negative.
pub fn shift_occupation(occ: &Occupation, mode: usize, delta: i32) -> Option<Occupation> {
    let m = mode as u16;
    let mut out = occ.clone();
    match out.binary_search_by_key(&m, |e| e.0) {
        Ok(k) => {
            let c = out[k].1 as i32 + delta;
            if c < 0 {
                return None;
            }
            if c == 0 {
                out.remove(k);
            } else {
                out[k].1 = c as u16;
            }
        }
        Err(k) => {
            if delta < 0 {
                return None;
            }
            if delta > 0 {
                out.insert(k, (m, delta as u16));
            }
        }
    }
    Some(out)
}

pub fn particle_count(occ: &Occupation) -> usize {
    occ.iter().map(|e| e.1 as usize).sum()
}

/// Particles outside the mode `zero`.
pub fn excited_count(occ: &Occupation, zero: usize) -> usize {
    occ.iter()
        .filter(|e| e.0 as usize != zero)
        .map(|e| e.1 as usize)
        .sum()
}

pub fn total_momentum(occ: &Occupation, lattice: &MomentumLattice) -> Mode {
    let mut p = [0i32; 3];
    for &(m, c) in occ {
        let n = lattice.mode_at(m as usize);
        for k in 0..3 {
            p[k] += c as i32 * n[k];
        }
    }
    p
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    lattice: Arc<MomentumLattice>,
    n_max: usize,
    include_zero_mode: bool,
    sector: Option<Mode>,
    states: Vec<Occupation>,
    index: IndexMap,
}

impl FockBasis {
    /// `F₊^{≤n_max}`, optionally restricted to a momentum sector.
    pub fn excitation(lattice: &Arc<MomentumLattice>, n_max: usize, sector: Option<Mode>) -> Result<Self> {
        Self::enumerate(lattice, n_max, false, sector, DEFAULT_DIMENSION_LIMIT)
    }

    /// The `n`-particle space with the zero mode.
    pub fn canonical(lattice: &Arc<MomentumLattice>, n: usize, sector: Option<Mode>) -> Result<Self> {
        Self::enumerate(lattice, n, true, sector, DEFAULT_DIMENSION_LIMIT)
    }

    pub fn enumerate(
        lattice: &Arc<MomentumLattice>,
        n_max: usize,
        include_zero_mode: bool,
        sector: Option<Mode>,
        limit: usize,
    ) -> Result<Self> {
        assert!(n_max >= 1, "n_max must be positive");
        assert!(lattice.len() <= u16::MAX as usize, "lattice too large for u16 mode labels");
        assert!(n_max <= u16::MAX as usize);
        let modes: Vec<usize> = lattice.nonzero_indices().collect();
        let mut walker = Walker {
            lattice,
            modes: &modes,
            target: sector,
            pmax: lattice.pmax() as i64,
            limit,
            out: Vec::new(),
            overflow: false,
        };
        let mut current = Occupation::new();
        walker.visit(0, n_max, &mut current, [0; 3]);
        if walker.overflow {
            return Err(Error::DimensionOverflow { limit });
        }
        let mut states = walker.out;
        if include_zero_mode {
            let z = lattice.zero_index() as u16;
            for s in states.iter_mut() {
                let n0 = n_max - particle_count(s);
                if n0 > 0 {
                    let k = s.partition_point(|e| e.0 < z);
                    s.insert(k, (z, n0 as u16));
                }
            }
        }
        states.sort();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            lattice: Arc::clone(lattice),
            n_max,
            include_zero_mode,
            sector,
            states,
            index,
        })
    }

    /// Same space parameters in another momentum sector.
    pub fn with_sector(&self, sector: Option<Mode>) -> Result<Self> {
        Self::enumerate(
            &self.lattice,
            self.n_max,
            self.include_zero_mode,
            sector,
            DEFAULT_DIMENSION_LIMIT,
        )
    }

    /// The sector reached by adding `shift` to this basis' sector.
    pub fn shifted(&self, shift: Mode) -> Result<Self> {
        match self.sector {
            None => Ok(self.clone()),
            Some(s) => self.with_sector(Some(add_modes(s, shift))),
        }
    }

    pub fn lattice(&self) -> &Arc<MomentumLattice> {
        &self.lattice
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// The `N` in `(N − 𝒩₊)/N`.
    pub fn n_particles(&self) -> usize {
        self.n_max
    }

    pub fn include_zero_mode(&self) -> bool {
        self.include_zero_mode
    }

    pub fn sector(&self) -> Option<Mode> {
        self.sector
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Occupation] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &Occupation {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &Occupation) -> Option<usize> {
        self.index.get(occ).copied()
    }

    pub fn n_plus(&self, occ: &Occupation) -> usize {
        excited_count(occ, self.lattice.zero_index())
    }

    /// Index of the state with no excitations, if present.
    pub fn condensate_index(&self) -> Option<usize> {
        let mut occ = Occupation::new();
        if self.include_zero_mode {
            occ.push((self.lattice.zero_index() as u16, self.n_max as u16));
        }
        self.index_of(&occ)
    }

    /// Indices of states with at most `k` excitations.
    pub fn indices_with_n_plus_at_most(&self, k: usize) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.n_plus(&self.states[i]) <= k)
            .collect()
    }

    /// Whether two bases hold the same states in the same order.
    pub fn same_space(&self, other: &FockBasis) -> bool {
        self.lattice.pmax() == other.lattice.pmax()
            && self.include_zero_mode == other.include_zero_mode
            && self.states == other.states
    }
}

struct Walker<'a> {
    lattice: &'a MomentumLattice,
    modes: &'a [usize],
    target: Option<Mode>,
    pmax: i64,
    limit: usize,
    out: Vec<Occupation>,
    overflow: bool,
}

impl Walker<'_> {
    fn visit(&mut self, pos: usize, remaining: usize, current: &mut Occupation, mom: Mode) {
        if self.overflow {
            return;
        }
        if let Some(t) = self.target {
            let reach = remaining as i64 * self.pmax;
            if (0..3).any(|k| ((t[k] - mom[k]) as i64).abs() > reach) {
                return;
            }
        }
        if pos == self.modes.len() {
            if self.target.is_none_or(|t| t == mom) {
                if self.out.len() >= self.limit {
                    self.overflow = true;
                    return;
                }
                self.out.push(current.clone());
            }
            return;
        }
        let m = self.modes[pos];
        let n = self.lattice.mode_at(m);
        self.visit(pos + 1, remaining, current, mom);
        for c in 1..=remaining {
            current.push((m as u16, c as u16));
            let next = [
                mom[0] + c as i32 * n[0],
                mom[1] + c as i32 * n[1],
                mom[2] + c as i32 * n[2],
            ];
            self.visit(pos + 1, remaining - c, current, next);
            current.pop();
        }
    }
}

/// Functions of `𝒩₊` that appear as operator factors; `N` is the particle
/// number of the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiagFn {
    /// `√((N − 𝒩₊)/N)`, clamped at zero above `N`.
    SqrtDeficit,
    /// `(N − 𝒩₊)/N`.
    Deficit,
    /// `(N + 1 − 𝒩₊)/N`.
    DeficitPlusOne,
    /// `√(N − 𝒩₊)`, clamped at zero above `N`.
    SqrtNMinusNPlus,
    /// `N − 𝒩₊`.
    NMinusNPlus,
    /// `𝒩₊`.
    NPlus,
}

impl DiagFn {
    pub fn eval(self, n_plus: usize, n: usize) -> f64 {
        let nf = n as f64;
        let d = n as f64 - n_plus as f64;
        match self {
            DiagFn::SqrtDeficit => (d.max(0.0) / nf).sqrt(),
            DiagFn::Deficit => d / nf,
            DiagFn::DeficitPlusOne => (d + 1.0) / nf,
            DiagFn::SqrtNMinusNPlus => d.max(0.0).sqrt(),
            DiagFn::NMinusNPlus => d,
            DiagFn::NPlus => n_plus as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Create(usize),
    Annihilate(usize),
    Diag(DiagFn),
}

/// Applies a factor string (rightmost first) to a basis vector.
pub fn apply_string(
    occ: &Occupation,
    string: &[Factor],
    n: usize,
    zero: usize,
) -> Option<(Occupation, f64)> {
    let mut state = occ.clone();
    let mut amp = 1.0;
    for f in string.iter().rev() {
        match *f {
            Factor::Create(m) => {
                amp *= ((occupation_of(&state, m) + 1) as f64).sqrt();
                state = shift_occupation(&state, m, 1)?;
            }
            Factor::Annihilate(m) => {
                let c = occupation_of(&state, m);
                if c == 0 {
                    return None;
                }
                amp *= (c as f64).sqrt();
                state = shift_occupation(&state, m, -1)?;
            }
            Factor::Diag(d) => {
                let v = d.eval(excited_count(&state, zero), n);
                if v == 0.0 {
                    return None;
                }
                amp *= v;
            }
        }
    }
    Some((state, amp))
}

/// Builds `Σ_j Σ_{(o, v) ∈ f(state_j)} v·|o⟩⟨state_j|`, dropping images
/// outside the codomain.
pub fn assemble<F>(domain: &FockBasis, codomain: &FockBasis, f: F) -> SparseOperator
where
    F: Fn(&Occupation, &mut Vec<(Occupation, f64)>) + Sync,
{
    let columns: Vec<Vec<(usize, f64)>> = domain
        .states
        .par_iter()
        .map(|s| {
            let mut buf = Vec::new();
            f(s, &mut buf);
            buf.into_iter()
                .filter_map(|(o, v)| codomain.index_of(&o).map(|i| (i, v)))
                .collect()
        })
        .collect();
    let triplets = columns
        .into_iter()
        .enumerate()
        .flat_map(|(j, col)| col.into_iter().map(move |(i, v)| (i, j, v)))
        .collect();
    SparseOperator::from_triplets(codomain.dim(), domain.dim(), triplets)
}

/// Linear combination of factor strings.
pub fn string_operator(
    domain: &FockBasis,
    codomain: &FockBasis,
    strings: &[(f64, Vec<Factor>)],
) -> SparseOperator {
    let n = domain.n_particles();
    let zero = domain.lattice.zero_index();
    assemble(domain, codomain, |s, out| {
        for (c, string) in strings {
            if let Some((o, v)) = apply_string(s, string, n, zero) {
                out.push((o, c * v));
            }
        }
    })
}

fn check_shift(domain: &FockBasis, codomain: &FockBasis, shift: Mode) -> Result<()> {
    let expected = domain.sector.map(|s| add_modes(s, shift));
    if expected != codomain.sector {
        return Err(Error::SectorMismatch {
            expected,
            found: codomain.sector,
        });
    }
    Ok(())
}

fn momentum_shift(lattice: &MomentumLattice, string: &[Factor]) -> Mode {
    let mut p = [0; 3];
    for f in string {
        match *f {
            Factor::Create(m) => p = add_modes(p, lattice.mode_at(m)),
            Factor::Annihilate(m) => {
                let n = lattice.mode_at(m);
                p = [p[0] - n[0], p[1] - n[1], p[2] - n[2]];
            }
            Factor::Diag(_) => {}
        }
    }
    p
}

/// A single factor string, with a sector check on the codomain.
pub fn monomial(domain: &FockBasis, codomain: &FockBasis, string: Vec<Factor>) -> Result<SparseOperator> {
    check_shift(domain, codomain, momentum_shift(&domain.lattice, &string))?;
    Ok(string_operator(domain, codomain, &[(1.0, string)]))
}

/// `a_p† a_q`.
pub fn ladder_bilinear(domain: &FockBasis, codomain: &FockBasis, p: usize, q: usize) -> Result<SparseOperator> {
    monomial(domain, codomain, vec![Factor::Create(p), Factor::Annihilate(q)])
}

pub fn annihilation(domain: &FockBasis, codomain: &FockBasis, p: usize) -> Result<SparseOperator> {
    monomial(domain, codomain, vec![Factor::Annihilate(p)])
}

pub fn creation(domain: &FockBasis, codomain: &FockBasis, p: usize) -> Result<SparseOperator> {
    monomial(domain, codomain, vec![Factor::Create(p)])
}

/// `b_p = √((N−𝒩₊)/N) a_p` or `b_p† = a_p† √((N−𝒩₊)/N)`.
pub fn b_operator(domain: &FockBasis, codomain: &FockBasis, p: usize, dagger: bool) -> Result<SparseOperator> {
    let string = if dagger {
        vec![Factor::Create(p), Factor::Diag(DiagFn::SqrtDeficit)]
    } else {
        vec![Factor::Diag(DiagFn::SqrtDeficit), Factor::Annihilate(p)]
    };
    monomial(domain, codomain, string)
}

/// `𝒩₊`, the number of particles outside the zero mode.
pub fn number_operator(basis: &FockBasis) -> SparseOperator {
    diag_operator(basis, DiagFn::NPlus)
}

/// `𝒩`, all particles.
pub fn total_number_operator(basis: &FockBasis) -> SparseOperator {
    let d: Vec<f64> = basis.states.iter().map(|s| particle_count(s) as f64).collect();
    SparseOperator::diagonal(&d)
}

pub fn diag_operator(basis: &FockBasis, f: DiagFn) -> SparseOperator {
    let n = basis.n_particles();
    let d: Vec<f64> = basis
        .states
        .iter()
        .map(|s| f.eval(basis.n_plus(s), n))
        .collect();
    SparseOperator::diagonal(&d)
}

/// `U_N`: drops the zero-mode occupation of each canonical state.
pub fn excitation_map(canonical: &FockBasis, excitation: &FockBasis) -> Result<SparseOperator> {
    if !canonical.include_zero_mode || excitation.include_zero_mode {
        return Err(Error::InvalidDomain(
            "excitation map needs a canonical domain and an excitation codomain".into(),
        ));
    }
    if canonical.sector != excitation.sector {
        return Err(Error::SectorMismatch {
            expected: canonical.sector,
            found: excitation.sector,
        });
    }
    if canonical.n_max != excitation.n_max || canonical.lattice.pmax() != excitation.lattice.pmax() {
        return Err(Error::InvalidDomain("bases disagree on N or pmax".into()));
    }
    let z = canonical.lattice.zero_index() as u16;
    let mut triplets = Vec::with_capacity(canonical.dim());
    for (j, s) in canonical.states.iter().enumerate() {
        let stripped: Occupation = s.iter().copied().filter(|e| e.0 != z).collect();
        let i = excitation
            .index_of(&stripped)
            .ok_or_else(|| Error::InvalidDomain("excitation basis is incomplete".into()))?;
        triplets.push((i, j, 1.0));
    }
    Ok(SparseOperator::from_triplets(excitation.dim(), canonical.dim(), triplets))
}

/// Applies a factor string to a vector in the untruncated space.
pub fn apply_string_to_state(
    state: &SparseState,
    string: &[Factor],
    n: usize,
    zero: usize,
) -> SparseState {
    let mut out = SparseState::new();
    for (occ, &c) in state {
        if let Some((o, v)) = apply_string(occ, string, n, zero) {
            *out.entry(o).or_insert(0.0) += c * v;
        }
    }
    out
}

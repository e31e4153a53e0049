//! Symbolic expansion of `adⁿ_{B(η)}(b_p)` into its `2ⁿ n!` normal-form
//! terms, structural validation, and numeric evaluation of terms.
//!
//! A term is `± Λ₁ ⋯ Λ_i N^{−k} Π⁽¹⁾(η^{j₁}, …, η^{j_k}; η_p^s φ_{αp})`.
//! Chains are stored kernel by kernel: kernel `ℓ` joins the fields
//! `flats[ℓ−1]` and `sharps[ℓ−1]`, both carrying the summed momentum `p_ℓ`
//! with weight `η_{p_ℓ}^{powers[ℓ−1]}`. A flat field is `a*_{p}` or
//! `a_{−p}`; a sharp field is `a_{p}` or `a*_{−p}`. The first field of a
//! chain is `b`-type, and so is the last field of a `Π⁽²⁾` chain.
//!
//! Each term of order `n` produces `2(n+1)` terms of order `n+1`, one pair
//! for every field (or number-conserving pair of fields) that `B` can hit.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{apply_string_to_state, DiagFn, Factor, FockBasis, Occupation, SparseState};
use crate::linalg::SparseOperator;

pub const MAX_ORDER: usize = 8;
/// Largest basis on which terms are evaluated.
pub const EVAL_DIM_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Mark {
    Create,
    Annihilate,
}

impl Mark {
    pub fn flip(self) -> Self {
        match self {
            Mark::Create => Mark::Annihilate,
            Mark::Annihilate => Mark::Create,
        }
    }

    fn symbol(self) -> char {
        match self {
            Mark::Create => '*',
            Mark::Annihilate => '.',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Chain {
    pub flats: Vec<Mark>,
    pub sharps: Vec<Mark>,
    pub powers: Vec<u32>,
}

impl Chain {
    pub fn order(&self) -> usize {
        self.powers.len()
    }

    pub fn total_power(&self) -> u32 {
        self.powers.iter().sum()
    }

    fn empty() -> Self {
        Self {
            flats: Vec::new(),
            sharps: Vec::new(),
            powers: Vec::new(),
        }
    }

    fn single(mark: Mark) -> Self {
        Self {
            flats: vec![mark],
            sharps: vec![mark],
            powers: vec![1],
        }
    }

    fn split(&self, r: usize) -> (Chain, Chain) {
        let left = Chain {
            flats: self.flats[..r].to_vec(),
            sharps: self.sharps[..r].to_vec(),
            powers: self.powers[..r].to_vec(),
        };
        let right = Chain {
            flats: self.flats[r..].to_vec(),
            sharps: self.sharps[r..].to_vec(),
            powers: self.powers[r..].to_vec(),
        };
        (left, right)
    }

    /// `B` hits the first field: the scalar-times-flip term.
    fn head_flip(&self) -> (Lambda, Chain) {
        let mut c = self.clone();
        let scalar = match c.flats[0] {
            Mark::Annihilate => Lambda::Deficit,
            Mark::Create => Lambda::DeficitPlusOne,
        };
        c.flats[0] = c.flats[0].flip();
        c.powers[0] += 1;
        (scalar, c)
    }

    /// `B` hits the first field: a new kernel is prepended.
    fn head_grow(&self) -> Chain {
        let f0 = self.flats[0];
        let mut flats = vec![f0.flip()];
        flats.extend_from_slice(&self.flats);
        let mut sharps = vec![f0.flip()];
        sharps.extend_from_slice(&self.sharps);
        let mut powers = vec![1];
        powers.extend_from_slice(&self.powers);
        Chain { flats, sharps, powers }
    }

    /// `B` hits the last `b`-field of a `Π⁽²⁾`: flip with a scalar after.
    fn tail_flip(&self) -> (Chain, Lambda) {
        let mut c = self.clone();
        let h = c.order() - 1;
        let scalar = match c.sharps[h] {
            Mark::Annihilate => Lambda::DeficitPlusOne,
            Mark::Create => Lambda::Deficit,
        };
        c.sharps[h] = c.sharps[h].flip();
        c.powers[h] += 1;
        (c, scalar)
    }

    /// `B` hits the last `b`-field of a `Π⁽²⁾`: a kernel is appended.
    fn tail_grow(&self) -> Chain {
        let mut c = self.clone();
        let s = c.sharps[c.order() - 1].flip();
        c.flats.push(s);
        c.sharps.push(s);
        c.powers.push(1);
        c
    }

    fn write_kernels(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in 0..self.order() {
            if l > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}{}^{}", self.flats[l].symbol(), self.sharps[l].symbol(), self.powers[l])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Lambda {
    /// `(N − 𝒩₊)/N`
    Deficit,
    /// `(N + 1 − 𝒩₊)/N`
    DeficitPlusOne,
    /// `N^{−h} Π⁽²⁾`
    Pi2(Chain),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Pi1 {
    pub chain: Chain,
    /// `Annihilate` is `a_p` (or `b_p` at order 0), `Create` is `a*_{−p}`
    /// (or `b*_{−p}`).
    pub tail: Mark,
    pub tail_power: u32,
}

impl Pi1 {
    pub fn order(&self) -> usize {
        self.chain.order()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SymbolicTerm {
    pub sign: i8,
    pub lambdas: Vec<Lambda>,
    pub pi1: Pi1,
}

impl SymbolicTerm {
    /// `b_p`, the only term of order zero.
    pub fn seed() -> Self {
        Self {
            sign: 1,
            lambdas: Vec::new(),
            pi1: Pi1 {
                chain: Chain::empty(),
                tail: Mark::Annihilate,
                tail_power: 0,
            },
        }
    }

    /// Total inverse power of `N` carried by the chains.
    pub fn n_power(&self) -> usize {
        self.pi1.order()
            + self
                .lambdas
                .iter()
                .map(|l| match l {
                    Lambda::Pi2(c) => c.order(),
                    _ => 0,
                })
                .sum::<usize>()
    }

    fn with(&self, sign: i8, lambdas: Vec<Lambda>, pi1: Pi1) -> Self {
        Self {
            sign: self.sign * sign,
            lambdas,
            pi1,
        }
    }

    /// `[B(η), term]` as a list of `2(n+1)` terms.
    pub fn commute(&self) -> Vec<SymbolicTerm> {
        let mut out = Vec::new();
        for (j, lam) in self.lambdas.iter().enumerate() {
            let before = &self.lambdas[..j];
            let after = &self.lambdas[j + 1..];
            let splice = |mid: Vec<Lambda>| -> Vec<Lambda> {
                let mut v = before.to_vec();
                v.extend(mid);
                v.extend_from_slice(after);
                v
            };
            match lam {
                Lambda::Deficit | Lambda::DeficitPlusOne => {
                    for m in [Mark::Create, Mark::Annihilate] {
                        out.push(self.with(1, splice(vec![Lambda::Pi2(Chain::single(m))]), self.pi1.clone()));
                    }
                }
                Lambda::Pi2(c) => {
                    let (s, hc) = c.head_flip();
                    out.push(self.with(-1, splice(vec![s, Lambda::Pi2(hc)]), self.pi1.clone()));
                    out.push(self.with(1, splice(vec![Lambda::Pi2(c.head_grow())]), self.pi1.clone()));
                    for r in 1..c.order() {
                        let (mut l, mut rt) = c.split(r);
                        let (ll, rr) = (l.clone(), rt.clone());
                        l.sharps[r - 1] = l.sharps[r - 1].flip();
                        l.powers[r - 1] += 1;
                        out.push(self.with(-1, splice(vec![Lambda::Pi2(l), Lambda::Pi2(rr)]), self.pi1.clone()));
                        rt.flats[0] = rt.flats[0].flip();
                        rt.powers[0] += 1;
                        out.push(self.with(-1, splice(vec![Lambda::Pi2(ll), Lambda::Pi2(rt)]), self.pi1.clone()));
                    }
                    let (tc, s) = c.tail_flip();
                    out.push(self.with(-1, splice(vec![Lambda::Pi2(tc), s]), self.pi1.clone()));
                    out.push(self.with(1, splice(vec![Lambda::Pi2(c.tail_grow())]), self.pi1.clone()));
                }
            }
        }
        self.commute_pi1(&mut out);
        out
    }

    fn commute_pi1(&self, out: &mut Vec<SymbolicTerm>) {
        let p = &self.pi1;
        let k = p.order();
        let push_lams = |extra: Vec<Lambda>| {
            let mut v = self.lambdas.clone();
            v.extend(extra);
            v
        };
        if k == 0 {
            let scalar = match p.tail {
                Mark::Annihilate => Lambda::Deficit,
                Mark::Create => Lambda::DeficitPlusOne,
            };
            let flipped = Pi1 {
                chain: Chain::empty(),
                tail: p.tail.flip(),
                tail_power: p.tail_power + 1,
            };
            out.push(self.with(-1, push_lams(vec![scalar]), flipped));
            let grown = Pi1 {
                chain: Chain::single(p.tail.flip()),
                tail: p.tail,
                tail_power: p.tail_power,
            };
            out.push(self.with(1, self.lambdas.clone(), grown));
            return;
        }
        let (s, hc) = p.chain.head_flip();
        out.push(self.with(-1, push_lams(vec![s]), Pi1 { chain: hc, ..p.clone() }));
        out.push(self.with(1, self.lambdas.clone(), Pi1 { chain: p.chain.head_grow(), ..p.clone() }));
        for r in 1..k {
            let (mut l, mut rt) = p.chain.split(r);
            let (ll, rr) = (l.clone(), rt.clone());
            l.sharps[r - 1] = l.sharps[r - 1].flip();
            l.powers[r - 1] += 1;
            out.push(self.with(-1, push_lams(vec![Lambda::Pi2(l)]), Pi1 { chain: rr, ..p.clone() }));
            rt.flats[0] = rt.flats[0].flip();
            rt.powers[0] += 1;
            out.push(self.with(-1, push_lams(vec![Lambda::Pi2(ll)]), Pi1 { chain: rt, ..p.clone() }));
        }
        // The last pair a^{♯_k} a^{♭_k}(g) splits off the whole chain.
        let mut l = p.chain.clone();
        l.sharps[k - 1] = l.sharps[k - 1].flip();
        l.powers[k - 1] += 1;
        let bare = Pi1 {
            chain: Chain::empty(),
            tail: p.tail,
            tail_power: p.tail_power,
        };
        out.push(self.with(-1, push_lams(vec![Lambda::Pi2(l)]), bare.clone()));
        let flipped = Pi1 {
            tail: p.tail.flip(),
            tail_power: p.tail_power + 1,
            ..bare
        };
        out.push(self.with(-1, push_lams(vec![Lambda::Pi2(p.chain.clone())]), flipped));
    }

    /// Whether this is the distinguished term `±(scalars) η_p^n b^♯`.
    pub fn is_distinguished(&self) -> bool {
        self.pi1.order() == 0 && self.lambdas.iter().all(|l| !matches!(l, Lambda::Pi2(_)))
    }
}

impl fmt::Display for SymbolicTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.sign > 0 { "+" } else { "-" })?;
        for l in &self.lambdas {
            match l {
                Lambda::Deficit => f.write_str(" D")?,
                Lambda::DeficitPlusOne => f.write_str(" D1")?,
                Lambda::Pi2(c) => {
                    f.write_str(" P2(")?;
                    c.write_kernels(f)?;
                    f.write_str(")")?;
                }
            }
        }
        f.write_str(" P1(")?;
        self.pi1.chain.write_kernels(f)?;
        let field = if self.pi1.order() == 0 { 'b' } else { 'a' };
        match self.pi1.tail {
            Mark::Annihilate => write!(f, ";{field}_p^{})", self.pi1.tail_power),
            Mark::Create => write!(f, ";{field}*_-p^{})", self.pi1.tail_power),
        }
    }
}

/// `2ⁿ n!`.
pub fn count_terms(n: usize) -> u64 {
    (1..=n as u64).fold(1, |acc, i| acc * 2 * i)
}

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_ORDER });
    }
    Ok(())
}

/// All terms of `adⁿ_{B(η)}(b_p)`, unmerged, in generation order.
pub fn expand_ad(n: usize) -> Result<Vec<SymbolicTerm>> {
    check_order(n)?;
    let mut terms = vec![SymbolicTerm::seed()];
    for _ in 0..n {
        terms = terms.par_iter().flat_map_iter(|t| t.commute()).collect();
    }
    Ok(terms)
}

/// Depth-first traversal of the order-`n` terms without materializing them.
pub fn visit_terms<F: FnMut(&SymbolicTerm)>(n: usize, mut f: F) -> Result<()> {
    check_order(n)?;
    fn go<F: FnMut(&SymbolicTerm)>(t: &SymbolicTerm, left: usize, f: &mut F) {
        if left == 0 {
            f(t);
            return;
        }
        for c in t.commute() {
            go(&c, left - 1, f);
        }
    }
    go(&SymbolicTerm::seed(), n, &mut f);
    Ok(())
}

/// Per-term violations of the structural properties (empty if none).
pub fn term_violations(t: &SymbolicTerm, n: usize) -> Vec<String> {
    let mut v = Vec::new();
    let chains = t.lambdas.iter().filter_map(|l| match l {
        Lambda::Pi2(c) => Some(c),
        _ => None,
    });
    let m = t
        .lambdas
        .iter()
        .filter(|l| !matches!(l, Lambda::Pi2(_)))
        .count();
    let mut slots = m + t.pi1.order() + 1;
    let mut power = t.pi1.chain.total_power() + t.pi1.tail_power;
    for c in chains.clone() {
        slots += c.order() + 1;
        power += c.total_power();
        if c.order() == 0 {
            v.push("empty Π⁽²⁾".into());
        }
        if c.flats.len() != c.order() || c.sharps.len() != c.order() {
            v.push("ragged chain".into());
        }
        for l in 1..c.order() {
            if c.sharps[l - 1] == c.flats[l] {
                v.push(format!("Π⁽²⁾ connector {l} does not conserve particle number"));
            }
        }
    }
    if slots != n + 1 {
        v.push(format!("slot count: m + Σ(h+1) + (k+1) = {slots} ≠ {}", n + 1));
    }
    if power as usize != n {
        v.push(format!("η power: total {power} ≠ {n}"));
    }
    let even = t.pi1.tail_power.is_multiple_of(2);
    if even != (t.pi1.tail == Mark::Annihilate) {
        v.push("tail parity mismatch".into());
    }
    let k = t.pi1.order();
    for l in 1..k {
        if t.pi1.chain.sharps[l - 1] == t.pi1.chain.flats[l] {
            v.push(format!("Π⁽¹⁾ connector {l} does not conserve particle number"));
        }
    }
    if k > 0 && t.pi1.chain.sharps[k - 1] != t.pi1.tail.flip() {
        v.push("last Π⁽¹⁾ pair does not conserve particle number".into());
    }
    for c in chains.chain(std::iter::once(&t.pi1.chain)) {
        for l in 0..c.order() {
            if c.powers[l] == 0 {
                v.push("zero η power in a kernel".into());
            }
            if c.flats[l] == Mark::Annihilate && c.sharps[l] == Mark::Create && c.powers[l] < 2 {
                v.push(format!("non-normally-ordered kernel with power {}", c.powers[l]));
            }
        }
    }
    v
}

/// Expected distinguished term for order `n`.
pub fn distinguished_term(n: usize) -> SymbolicTerm {
    let (d, d1, tail, sign) = if n.is_multiple_of(2) {
        (n / 2, n / 2, Mark::Annihilate, 1)
    } else {
        (n.div_ceil(2), (n - 1) / 2, Mark::Create, -1)
    };
    let mut lambdas = vec![Lambda::Deficit; d];
    lambdas.extend(vec![Lambda::DeficitPlusOne; d1]);
    SymbolicTerm {
        sign,
        lambdas,
        pi1: Pi1 {
            chain: Chain::empty(),
            tail,
            tail_power: n as u32,
        },
    }
}

fn same_up_to_scalar_order(a: &SymbolicTerm, b: &SymbolicTerm) -> bool {
    let mut la = a.lambdas.clone();
    let mut lb = b.lambdas.clone();
    la.sort();
    lb.sort();
    a.sign == b.sign && a.pi1 == b.pi1 && la == lb
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub order: usize,
    pub count: u64,
    pub expected_count: u64,
    pub distinguished_count: usize,
    pub distinguished_term: Option<String>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Validator {
    n: usize,
    count: u64,
    distinguished: Vec<String>,
    violations: Vec<String>,
    expected: SymbolicTerm,
}

impl Validator {
    fn new(n: usize) -> Self {
        Self {
            n,
            count: 0,
            distinguished: Vec::new(),
            violations: Vec::new(),
            expected: distinguished_term(n),
        }
    }

    fn push(&mut self, t: &SymbolicTerm) {
        self.count += 1;
        let bad = term_violations(t, self.n);
        if !bad.is_empty() && self.violations.len() < 20 {
            self.violations.push(format!("{t}: {}", bad.join("; ")));
        }
        if t.is_distinguished() {
            if !same_up_to_scalar_order(t, &self.expected) && self.violations.len() < 20 {
                self.violations.push(format!("distinguished term has the wrong form: {t}"));
            }
            self.distinguished.push(t.to_string());
        }
    }

    fn finish(mut self) -> ValidationReport {
        let expected_count = count_terms(self.n);
        if self.count != expected_count {
            self.violations
                .insert(0, format!("count {} ≠ 2ⁿn! = {expected_count}", self.count));
        }
        if self.distinguished.len() != 1 {
            self.violations.push(format!(
                "expected exactly one distinguished term, found {}",
                self.distinguished.len()
            ));
        }
        ValidationReport {
            order: self.n,
            count: self.count,
            expected_count,
            distinguished_count: self.distinguished.len(),
            distinguished_term: self.distinguished.first().cloned(),
            violations: self.violations,
        }
    }
}

/// Checks a materialized term list against the structural properties.
pub fn validate_terms(terms: &[SymbolicTerm], n: usize) -> ValidationReport {
    let mut v = Validator::new(n);
    terms.iter().for_each(|t| v.push(t));
    v.finish()
}

/// As [`validate_terms`], generating the terms on the fly.
pub fn validate_order(n: usize) -> Result<ValidationReport> {
    let mut v = Validator::new(n);
    visit_terms(n, |t| v.push(t))?;
    Ok(v.finish())
}

/// Like [`validate_terms`] but returns the first failure as an error.
pub fn require_valid(terms: &[SymbolicTerm], n: usize) -> Result<ValidationReport> {
    let r = validate_terms(terms, n);
    match r.violations.first() {
        Some(first) => Err(Error::ValidationFailure(first.clone())),
        None => Ok(r),
    }
}

// ---------------------------------------------------------------------------
// Numeric evaluation

const SD: Factor = Factor::Diag(DiagFn::SqrtDeficit);

fn field(mark: Mark, mode: usize, b_type: bool) -> Vec<Factor> {
    match (mark, b_type) {
        (Mark::Create, false) => vec![Factor::Create(mode)],
        (Mark::Annihilate, false) => vec![Factor::Annihilate(mode)],
        (Mark::Create, true) => vec![Factor::Create(mode), SD],
        (Mark::Annihilate, true) => vec![SD, Factor::Annihilate(mode)],
    }
}

/// Context for evaluating chains on sparse vectors.
pub struct ChainEvaluator<'a> {
    pub basis: &'a FockBasis,
    modes: Vec<usize>,
}

impl<'a> ChainEvaluator<'a> {
    pub fn new(basis: &'a FockBasis) -> Self {
        Self {
            basis,
            modes: basis.lattice().nonzero_indices().collect(),
        }
    }

    fn apply(&self, state: &SparseState, string: &[Factor]) -> SparseState {
        apply_string_to_state(state, string, self.basis.n_particles(), self.basis.lattice().zero_index())
    }

    /// `K₁ ⋯ K_h` applied to `state` with kernel weights `weight(ℓ, q)`.
    /// The first field is `b`-type; the last one too when `closed`.
    pub fn apply_chain<W>(&self, chain: &Chain, closed: bool, weight: W, state: &SparseState) -> SparseState
    where
        W: Fn(usize, usize) -> f64,
    {
        let lat = self.basis.lattice();
        let h = chain.order();
        let mut cur = state.clone();
        for l in (0..h).rev() {
            let mut next = SparseState::new();
            for &q in &self.modes {
                let w = weight(l, q);
                if w == 0.0 {
                    continue;
                }
                let mq = lat.neg_index(q);
                let flat_mode = if chain.flats[l] == Mark::Create { q } else { mq };
                let sharp_mode = if chain.sharps[l] == Mark::Annihilate { q } else { mq };
                let mut string = field(chain.flats[l], flat_mode, l == 0);
                string.extend(field(chain.sharps[l], sharp_mode, closed && l == h - 1));
                for (o, v) in self.apply(&cur, &string) {
                    *next.entry(o).or_insert(0.0) += w * v;
                }
            }
            next.retain(|_, v| *v != 0.0);
            cur = next;
        }
        cur
    }

    /// One term applied to `state`, with `p` the lattice index of the
    /// momentum in `b_p` and `eta` lattice-indexed.
    pub fn apply_term(&self, t: &SymbolicTerm, eta: &[f64], p: usize, state: &SparseState) -> SparseState {
        let lat = self.basis.lattice();
        let n = self.basis.n_particles() as f64;
        let k = t.pi1.order();
        let tail_mode = match t.pi1.tail {
            Mark::Annihilate => p,
            Mark::Create => lat.neg_index(p),
        };
        let mut cur = self.apply(state, &field(t.pi1.tail, tail_mode, k == 0));
        if k > 0 {
            cur = self.apply_chain(&t.pi1.chain, false, powered(&t.pi1.chain, eta), &cur);
        }
        for lam in t.lambdas.iter().rev() {
            cur = match lam {
                Lambda::Deficit => self.apply(&cur, &[Factor::Diag(DiagFn::Deficit)]),
                Lambda::DeficitPlusOne => self.apply(&cur, &[Factor::Diag(DiagFn::DeficitPlusOne)]),
                Lambda::Pi2(c) => self.apply_chain(c, true, powered(c, eta), &cur),
            };
        }
        let scale = t.sign as f64 * eta[p].powi(t.pi1.tail_power as i32) / n.powi(t.n_power() as i32);
        cur.values_mut().for_each(|v| *v *= scale);
        cur
    }
}

fn powered<'a>(c: &'a Chain, eta: &'a [f64]) -> impl Fn(usize, usize) -> f64 + 'a {
    move |l, q| eta[q].powi(c.powers[l] as i32)
}

fn unit(occ: &Occupation) -> SparseState {
    let mut s = SparseState::new();
    s.insert(occ.clone(), 1.0);
    s
}

fn check_dims(domain: &FockBasis, codomain: &FockBasis) -> Result<()> {
    if domain.dim() > EVAL_DIM_LIMIT || codomain.dim() > EVAL_DIM_LIMIT {
        return Err(Error::DimensionOverflow { limit: EVAL_DIM_LIMIT });
    }
    Ok(())
}

/// Sum of the given terms as a matrix from `domain` to `codomain`.
pub fn evaluate_terms(
    terms: &[SymbolicTerm],
    domain: &FockBasis,
    codomain: &FockBasis,
    eta: &[f64],
    p: usize,
) -> Result<SparseOperator> {
    check_dims(domain, codomain)?;
    let ev = ChainEvaluator::new(domain);
    let triplets: Vec<(usize, usize, f64)> = (0..domain.dim())
        .into_par_iter()
        .flat_map_iter(|j| {
            let start = unit(domain.state(j));
            let mut acc = SparseState::new();
            for t in terms {
                for (o, v) in ev.apply_term(t, eta, p, &start) {
                    *acc.entry(o).or_insert(0.0) += v;
                }
            }
            acc.into_iter()
                .filter_map(|(o, v)| codomain.index_of(&o).map(|i| (i, j, v)))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(SparseOperator::from_triplets(codomain.dim(), domain.dim(), triplets))
}

/// A single term as a matrix.
pub fn evaluate_term(
    term: &SymbolicTerm,
    domain: &FockBasis,
    codomain: &FockBasis,
    eta: &[f64],
    p: usize,
) -> Result<SparseOperator> {
    evaluate_terms(std::slice::from_ref(term), domain, codomain, eta, p)
}

/// `Π⁽²⁾_{♯,♭}(f₁, …, f_h)` (without the `N^{−h}`) as a matrix, with
/// `f[ℓ]` lattice-indexed.
pub fn pi2_matrix(chain: &Chain, domain: &FockBasis, codomain: &FockBasis, f: &[Vec<f64>]) -> Result<SparseOperator> {
    check_dims(domain, codomain)?;
    let ev = ChainEvaluator::new(domain);
    let triplets: Vec<(usize, usize, f64)> = (0..domain.dim())
        .into_par_iter()
        .flat_map_iter(|j| {
            ev.apply_chain(chain, true, |l, q| f[l][q], &unit(domain.state(j)))
                .into_iter()
                .filter_map(|(o, v)| codomain.index_of(&o).map(|i| (i, j, v)))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(SparseOperator::from_triplets(codomain.dim(), domain.dim(), triplets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_closed_form() {
        for n in 0..=5 {
            assert_eq!(expand_ad(n).unwrap().len() as u64, count_terms(n));
        }
        assert_eq!(count_terms(5), 3840);
        assert_eq!(count_terms(6), 46080);
    }

    #[test]
    fn order_zero_is_b_p() {
        let t = expand_ad(0).unwrap();
        assert_eq!(t, vec![SymbolicTerm::seed()]);
        assert_eq!(t[0].to_string(), "+ P1(;b_p^0)");
    }

    #[test]
    fn order_one_distinguished_term() {
        let r = validate_terms(&expand_ad(1).unwrap(), 1);
        assert!(r.passed(), "{:?}", r.violations);
        assert_eq!(r.distinguished_term.as_deref(), Some("- D P1(;b*_-p^1)"));
    }

    #[test]
    fn order_four_passes() {
        let r = validate_terms(&expand_ad(4).unwrap(), 4);
        assert_eq!(r.count, 384);
        assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn mutated_power_is_caught() {
        let mut terms = expand_ad(2).unwrap();
        terms[3].pi1.tail_power += 1;
        assert!(matches!(require_valid(&terms, 2), Err(Error::ValidationFailure(_))));
    }

    #[test]
    fn streaming_matches_materialized() {
        let mut streamed = Vec::new();
        visit_terms(3, |t| streamed.push(t.clone())).unwrap();
        let mut a = expand_ad(3).unwrap();
        a.sort();
        streamed.sort();
        assert_eq!(a, streamed);
    }

    fn anchor_setup(n_part: usize) -> (FockBasis, FockBasis, Vec<f64>, usize) {
        use std::sync::Arc;
        let lat = Arc::new(crate::lattice::MomentumLattice::new(1));
        let src = FockBasis::excitation(&lat, n_part, Some([0, 0, 0])).unwrap();
        let tgt = src.shifted([-1, 0, 0]).unwrap();
        let eta: Vec<f64> = (0..lat.len())
            .map(|i| {
                let n2 = crate::lattice::norm_sq(lat.mode_at(i));
                if n2 == 0 { 0.0 } else { -0.3 / n2 as f64 }
            })
            .collect();
        let p = lat.index_of([1, 0, 0]).unwrap();
        (src, tgt, eta, p)
    }

    #[test]
    fn terms_sum_to_nested_commutator() {
        use crate::bogoliubov::{ad_powers, build_generator};
        let (src, tgt, eta, p) = anchor_setup(3);
        let gs = build_generator(&src, &eta).unwrap();
        let gt = build_generator(&tgt, &eta).unwrap();
        let b = crate::fock::b_operator(&src, &tgt, p, false).unwrap();
        let powers = ad_powers(&gt, &gs, &b, 3);
        for (n, exact) in powers.iter().enumerate() {
            let sym = evaluate_terms(&expand_ad(n).unwrap(), &src, &tgt, &eta, p).unwrap();
            let err = sym.max_abs_diff(exact);
            assert!(err < 1e-10, "n={n}: {err:e} (scale {:e})", exact.max_abs());
        }
    }

    #[test]
    fn too_large_order_is_rejected() {
        assert!(matches!(expand_ad(9), Err(Error::OrderTooLarge { .. })));
    }
}

//! Ground states, low spectra and derived observables: condensate
//! depletion, the diagonal of `γ⁽¹⁾`, energy offsets against `4πa₀N`, and
//! the fitted constants of the operator sandwich
//! `2π²𝒩₊ − C ≤ ½(K+V_N) − C ≤ G_N − 4πa₀N ≤ C(K+V_N+1)`.
//!
//! Finite `pmax` distorts the scattering physics, so offsets against
//! `4πa₀N` are meaningful only as trends in `N`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bogoliubov::{build_generator, expmv, BogoliubovGenerator, ConjugatedAction, DENSE_LIMIT};
use crate::error::{Error, Result};
use crate::fock::{excitation_map, number_operator, FockBasis};
use crate::hamiltonians::{build_hn, build_ln_parts, HamiltonianSet};
use crate::lattice::{Mode, MomentumLattice};
use crate::linalg::{
    dot, max_eigenvalue, norm, symmetric_eigen_sorted, FnAction, LanczosOptions, LinearAction, SparseOperator,
};
use crate::potential::PotentialSpec;
use crate::scattering::{eta_coefficients, solve_neumann};

/// Eigenvalues closer than this to the lowest one form its cluster.
pub const CLUSTER_TOL: f64 = 1e-8;
pub const MAX_K: usize = 10;
/// Largest dimension handled by the matrix-free sandwich path.
pub const SANDWICH_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Serialize)]
pub struct Observables {
    /// `⟨𝒩₊⟩`
    pub depletion: f64,
    pub condensate_fraction: f64,
    /// `⟨a_p†a_p⟩` per mode.
    pub gamma1_diag: Vec<(Mode, f64)>,
    /// `E₀ − 4πa₀N` when known.
    pub energy_offset: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub ground_vector: Vec<f64>,
    /// Eigenvectors of the lowest cluster; `ground_vector` is the first.
    #[serde(skip)]
    pub cluster: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub observables: Option<Observables>,
}

impl SpectralResult {
    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster.len()
    }
}

/// Lowest `k` eigenpairs of a symmetric action. On failure the error
/// message carries the best Ritz values found.
pub fn lanczos_lowest<A: LinearAction + ?Sized>(
    action: &A,
    k: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectralResult> {
    if k == 0 || k > MAX_K {
        return Err(Error::Config(format!("k must lie in 1..={MAX_K}")));
    }
    let out = crate::linalg::lanczos_lowest(
        action,
        &LanczosOptions {
            k,
            tol,
            max_iter,
            seed,
        },
    );
    if !out.converged {
        return Err(Error::NonConvergence(format!(
            "Lanczos after {} iterations; best Ritz values {:?}, residuals {:?}",
            out.iterations, out.eigenvalues, out.residual_norms
        )));
    }
    let e0 = out.eigenvalues[0];
    let cluster: Vec<Vec<f64>> = out
        .eigenvalues
        .iter()
        .zip(&out.eigenvectors)
        .take_while(|(e, _)| (*e - e0).abs() <= CLUSTER_TOL * e0.abs().max(1.0))
        .map(|(_, v)| v.clone())
        .collect();
    Ok(SpectralResult {
        ground_vector: out.eigenvectors[0].clone(),
        eigenvalues: out.eigenvalues,
        cluster,
        residual_norms: out.residual_norms,
        iterations: out.iterations,
        seed,
        observables: None,
    })
}

/// Observables averaged over the eigenprojection spanned by `states`
/// (each normalized), on a canonical or an excitation basis.
pub fn depletion_of(states: &[Vec<f64>], basis: &FockBasis) -> Observables {
    let lat = basis.lattice();
    let zero = lat.zero_index();
    let n = basis.n_particles() as f64;
    let mut occ = vec![0.0; lat.len()];
    let w = 1.0 / states.len() as f64;
    for v in states {
        for (i, s) in basis.states().iter().enumerate() {
            let p = v[i] * v[i] * w;
            if p == 0.0 {
                continue;
            }
            for &(m, c) in s.iter() {
                occ[m as usize] += p * c as f64;
            }
            if !basis.include_zero_mode() {
                occ[zero] += p * (n - basis.n_plus(s) as f64);
            }
        }
    }
    let depletion = lat.nonzero_indices().map(|i| occ[i]).sum::<f64>().clamp(0.0, n);
    Observables {
        depletion,
        condensate_fraction: (1.0 - depletion / n).clamp(0.0, 1.0),
        gamma1_diag: (0..lat.len()).map(|i| (lat.mode_at(i), occ[i])).collect(),
        energy_offset: None,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CondensateChain {
    pub trace_norm: f64,
    pub hs_norm: f64,
    /// `2^{3/2}(1 − ⟨φ₀, γ⁽¹⁾φ₀⟩)^{1/2}`
    pub bound: f64,
    pub holds: bool,
}

/// `tr|γ⁽¹⁾ − |φ₀⟩⟨φ₀|| ≤ 2‖γ⁽¹⁾ − |φ₀⟩⟨φ₀|‖_HS ≤ 2^{3/2}(1 − ⟨φ₀,γ⁽¹⁾φ₀⟩)^{1/2}`
/// for a state of definite total momentum, whose `γ⁽¹⁾` (normalized to
/// trace one) is diagonal in momentum.
pub fn condensate_chain(obs: &Observables, n_particles: usize) -> CondensateChain {
    let n = n_particles as f64;
    let mut tr = 0.0;
    let mut hs = 0.0;
    let mut overlap = 0.0;
    for &(m, o) in &obs.gamma1_diag {
        let g = o / n;
        let d = if m == [0, 0, 0] {
            overlap = g;
            g - 1.0
        } else {
            g
        };
        tr += d.abs();
        hs += d * d;
    }
    let hs = hs.sqrt();
    let bound = 2f64.powf(1.5) * (1.0 - overlap).max(0.0).sqrt();
    let slack = 1e-12;
    CondensateChain {
        trace_norm: tr,
        hs_norm: hs,
        bound,
        holds: tr <= 2.0 * hs + slack && 2.0 * hs <= bound + slack,
    }
}

// ---------------------------------------------------------------------------
// Sandwich

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub n_particles: usize,
    pub kappa: f64,
    pub a0: f64,
    pub dim: usize,
    /// Smallest `C ≥ 0` with `2π²𝒩₊ − C ≤ G_N − 4πa₀N`.
    pub c_lo: f64,
    /// Smallest `C ≥ 0` with `½(K+V_N) − C ≤ G_N − 4πa₀N`.
    pub c_mid: f64,
    /// Smallest `C ≥ 0` with `G_N − 4πa₀N ≤ C(K+V_N+1)`.
    pub c_hi: f64,
    /// Smallest `c ≥ 0` with `G_N − 4πa₀N ≤ K+V_N + c`.
    pub hi_additive: f64,
    /// `𝒩₊ ≤ (2π)⁻²K` on the basis.
    pub kinetic_gap_ok: bool,
    pub matrix_free: bool,
}

struct SandwichOps<'a> {
    n_plus: Vec<f64>,
    kv: SparseOperator,
    offset: f64,
    g: ConjugatedAction<'a>,
    dense_g: Option<DMatrix<f64>>,
}

impl<'a> SandwichOps<'a> {
    fn new(hams: &'a HamiltonianSet, gen: &'a BogoliubovGenerator, ln: &'a SparseOperator, a0: f64, n: usize) -> Result<Self> {
        let dim = ln.rows();
        if dim > SANDWICH_LIMIT {
            return Err(Error::DimensionOverflow { limit: SANDWICH_LIMIT });
        }
        let dense_g = if dim <= DENSE_LIMIT {
            Some(crate::bogoliubov::materialize_conjugated(gen, gen, ln)?)
        } else {
            None
        };
        Ok(Self {
            n_plus: hams.n_plus.clone(),
            kv: hams.kinetic.add(&hams.potential),
            offset: 4.0 * PI * a0 * n as f64,
            g: ConjugatedAction::new(gen, ln)?,
            dense_g,
        })
    }

    fn dim(&self) -> usize {
        self.kv.rows()
    }

    /// `G − E` applied to `x`.
    fn shifted_g(&self, x: &[f64], y: &mut [f64]) {
        match &self.dense_g {
            Some(g) => {
                let r = g * nalgebra::DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            }
            None => self.g.apply(x, y),
        }
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi -= self.offset * xi);
    }

    fn dense_shifted_g(&self) -> Option<DMatrix<f64>> {
        self.dense_g
            .as_ref()
            .map(|g| g - DMatrix::identity(g.nrows(), g.ncols()) * self.offset)
    }
}

fn combined<'b, F>(ops: &'b SandwichOps<'_>, f: F) -> impl LinearAction + 'b
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync + 'b,
{
    FnAction::new(ops.dim(), move |x: &[f64], y: &mut [f64]| {
        let mut g = vec![0.0; x.len()];
        ops.shifted_g(x, &mut g);
        f(x, &g, y);
    })
}

fn largest<A: LinearAction + ?Sized>(a: &A, seed: u64) -> Result<f64> {
    let neg = FnAction::new(a.dim(), |x: &[f64], y: &mut [f64]| {
        a.apply(x, y);
        y.iter_mut().for_each(|v| *v = -*v);
    });
    let r = lanczos_lowest(&neg, 1, 1e-9, 1500, seed)?;
    Ok(-r.eigenvalues[0])
}

fn dense_largest_pencil(a: DMatrix<f64>, m: DMatrix<f64>) -> Result<f64> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NonConvergence("K+V_N+1 is not positive definite".into()))?;
    let l = chol.l();
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonConvergence("singular Cholesky factor".into()))?;
    let s = &li * a * li.transpose();
    Ok(max_eigenvalue((&s + s.transpose()) * 0.5))
}

/// Jacobi-preconditioned conjugate gradients for an SPD sparse matrix.
fn cg_solve(m: &SparseOperator, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let d = m.diagonal_entries();
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut ap = vec![0.0; n];
    for _ in 0..10 * n.max(100) {
        if norm(&r) <= tol * bn {
            return Ok(x);
        }
        m.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        z.iter_mut().zip(r.iter().zip(&d)).for_each(|(zi, (ri, di))| *zi = ri / di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NonConvergence("conjugate gradients".into()))
}

/// Largest `θ` with `Ax = θMx`, by Lanczos on `M⁻¹A` in the `M` inner
/// product.
fn largest_pencil<F>(a: F, m: &SparseOperator, seed: u64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let dim = m.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mq = m.matvec(&q);
    let s = dot(&q, &mq).sqrt();
    q.iter_mut().for_each(|v| *v /= s);

    let mut qs: Vec<Vec<f64>> = Vec::new();
    let mut mqs: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut aq = vec![0.0; dim];
    let mut theta = f64::NAN;
    for step in 0..max_iter.min(dim) {
        a(&q, &mut aq);
        alpha.push(dot(&q, &aq));
        let mut w = cg_solve(m, &aq, 1e-13)?;
        mqs.push(m.matvec(&q));
        qs.push(q.clone());
        for _ in 0..2 {
            for (qi, mqi) in qs.iter().zip(&mqs) {
                let c = dot(mqi, &w);
                w.iter_mut().zip(qi).for_each(|(wi, v)| *wi -= c * v);
            }
        }
        let b = dot(&w, &m.matvec(&w)).max(0.0).sqrt();
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let (vals, vecs) = symmetric_eigen_sorted(t);
        theta = vals[k - 1];
        let est = (b * vecs[(k - 1, k - 1)]).abs();
        let scale = theta.abs().max(1.0);
        if est <= tol * scale || b <= 1e-14 * scale || step + 1 == dim {
            return Ok(theta);
        }
        beta.push(b);
        q = w.iter().map(|v| v / b).collect();
    }
    Err(Error::NonConvergence(format!("pencil Lanczos stalled at θ = {theta}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichMethod {
    /// Dense up to [`DENSE_LIMIT`], matrix-free above.
    Auto,
    MatrixFree,
}

/// Fits the sandwich constants. Dense up to [`DENSE_LIMIT`], matrix-free
/// Lanczos above.
pub fn sandwich_check(hams: &HamiltonianSet, gen: &BogoliubovGenerator, a0: f64, n: usize) -> Result<SandwichReport> {
    sandwich_check_with(hams, gen, a0, n, SandwichMethod::Auto)
}

pub fn sandwich_check_with(
    hams: &HamiltonianSet,
    gen: &BogoliubovGenerator,
    a0: f64,
    n: usize,
    method: SandwichMethod,
) -> Result<SandwichReport> {
    let ln = hams.l_n();
    let mut ops = SandwichOps::new(hams, gen, &ln, a0, n)?;
    if method == SandwichMethod::MatrixFree {
        ops.dense_g = None;
    }
    let dim = ops.dim();
    let kin = hams.kinetic.diagonal_entries();
    let two_pi_sq = 2.0 * PI * PI;
    let kinetic_gap_ok = ops
        .n_plus
        .iter()
        .zip(&kin)
        .all(|(np, k)| *np <= k / (4.0 * PI * PI) + 1e-12);
    let m = ops.kv.add(&SparseOperator::identity(dim));

    let (lo, mid, hi, add) = if let Some(gs) = ops.dense_shifted_g() {
        let np = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ops.n_plus.clone()));
        let kv = ops.kv.to_dense();
        (
            max_eigenvalue(np * two_pi_sq - &gs),
            max_eigenvalue(&kv * 0.5 - &gs),
            dense_largest_pencil(gs.clone(), m.to_dense())?,
            max_eigenvalue(&gs - &kv),
        )
    } else {
        let ops = &ops;
        let lo = largest(
            &combined(ops, |x: &[f64], g: &[f64], y: &mut [f64]| {
                for i in 0..x.len() {
                    y[i] = two_pi_sq * ops.n_plus[i] * x[i] - g[i];
                }
            }),
            0x10,
        )?;
        let mid = largest(
            &combined(ops, |x: &[f64], g: &[f64], y: &mut [f64]| {
                let kvx = ops.kv.matvec(x);
                for i in 0..x.len() {
                    y[i] = 0.5 * kvx[i] - g[i];
                }
            }),
            0x11,
        )?;
        let add = largest(
            &combined(ops, |x: &[f64], g: &[f64], y: &mut [f64]| {
                let kvx = ops.kv.matvec(x);
                for i in 0..x.len() {
                    y[i] = g[i] - kvx[i];
                }
            }),
            0x12,
        )?;
        let hi = largest_pencil(|x, y| ops.shifted_g(x, y), &m, 0x13, 1e-9, 1500)?;
        if ops.g.failed() {
            return Err(Error::NonConvergence("Krylov exponential inside the sandwich".into()));
        }
        (lo, mid, hi, add)
    };
    Ok(SandwichReport {
        n_particles: n,
        kappa: hams.meta.kappa,
        a0,
        dim,
        c_lo: lo.max(0.0),
        c_mid: mid.max(0.0),
        c_hi: hi.max(0.0),
        hi_additive: add.max(0.0),
        kinetic_gap_ok,
        matrix_free: ops.dense_g.is_none(),
    })
}

/// `λ_max(G_N − 4πa₀N − C(K+V_N+1))`; positive means the upper bound fails
/// for this `C`.
pub fn upper_violation(hams: &HamiltonianSet, gen: &BogoliubovGenerator, a0: f64, n: usize, c: f64) -> Result<f64> {
    let ln = hams.l_n();
    let ops = SandwichOps::new(hams, gen, &ln, a0, n)?;
    if let Some(gs) = ops.dense_shifted_g() {
        let m = ops.kv.add(&SparseOperator::identity(ops.dim())).to_dense();
        return Ok(max_eigenvalue(gs - m * c));
    }
    let dim = ops.dim();
    let ops = &ops;
    largest(
        &FnAction::new(dim, move |x: &[f64], y: &mut [f64]| {
            ops.shifted_g(x, y);
            let kvx = ops.kv.matvec(x);
            for i in 0..dim {
                y[i] -= c * (kvx[i] + x[i]);
            }
        }),
        0x14,
    )
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    pub potential: PotentialSpec,
    pub kappa: f64,
    pub ell: f64,
    pub pmax: u32,
    pub n_values: Vec<usize>,
    pub grid_points: usize,
    pub lanczos_tol: f64,
    pub lanczos_max_iter: usize,
    pub seed: u64,
    /// Also fit the sandwich constants for each `N`.
    pub sandwich: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            potential: PotentialSpec::ball(0.5, 1.0),
            kappa: 0.05,
            ell: 0.4,
            pmax: 1,
            n_values: (2..=8).collect(),
            grid_points: 4096,
            lanczos_tol: 1e-10,
            lanczos_max_iter: 600,
            seed: 0x5eed,
            sandwich: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub n: usize,
    pub kappa: f64,
    pub pmax: u32,
    pub dim: usize,
    pub a0: f64,
    pub lambda_ell: f64,
    pub eta_norm: f64,
    pub e0: f64,
    pub e0_minus_4pi_a0_n: f64,
    /// `1 − ⟨φ₀, γ⁽¹⁾φ₀⟩`
    pub depletion: f64,
    /// `⟨ψ_N, U_N* 𝒩₊ U_N ψ_N⟩`
    pub n_times_depletion: f64,
    /// `⟨Ω, G_N Ω⟩ − 4πa₀N`
    pub vac_gn_offset: f64,
    /// `⟨ξ_N, 𝒩₊ ξ_N⟩` with `ξ_N = e^{−B}U_Nψ_N`.
    pub xi_depletion: f64,
    pub ground_cluster: usize,
    pub lanczos_iterations: usize,
    pub condensate_chain: CondensateChain,
    pub c_lo: Option<f64>,
    pub c_mid: Option<f64>,
    pub c_hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub note: String,
    pub config: PipelineConfig,
    pub rows: Vec<ScanRow>,
}

pub const DESK_SCALE_NOTE: &str = "finite momentum cutoff: offsets against 4*pi*a0*N are checked for boundedness in N only";

/// Ground state and observables for a single `N`.
pub fn pipeline_row(cfg: &PipelineConfig, n: usize) -> Result<ScanRow> {
    let lat = Arc::new(MomentumLattice::new(cfg.pmax));
    let sol = solve_neumann(&cfg.potential, cfg.kappa, n, cfg.ell, cfg.grid_points)?;
    let sol = eta_coefficients(sol, &lat);
    let e_ref = 4.0 * PI * sol.a0 * n as f64;

    let canonical = FockBasis::canonical(&lat, n, Some([0, 0, 0]))?;
    let hn = build_hn(&canonical, &cfg.potential, cfg.kappa)?;
    let k = 3.min(canonical.dim());
    let spec = lanczos_lowest(&hn, k, cfg.lanczos_tol, cfg.lanczos_max_iter, cfg.seed)?;
    let mut obs = depletion_of(&spec.cluster, &canonical);
    obs.energy_offset = Some(spec.ground_energy() - e_ref);
    let condensate_chain = condensate_chain(&obs, n);

    let exc = FockBasis::excitation(&lat, n, Some([0, 0, 0]))?;
    let u = excitation_map(&canonical, &exc)?;
    let hams = build_ln_parts(&exc, &cfg.potential, cfg.kappa)?;
    let ln = hams.l_n();
    let gen = build_generator(&exc, &sol.eta)?;
    let mut omega = vec![0.0; exc.dim()];
    omega[exc.condensate_index().ok_or_else(|| Error::InvalidDomain("no vacuum in basis".into()))?] = 1.0;
    let eb_omega = expmv(&gen, &omega, 1.0)?;
    let vac_gn = dot(&eb_omega, &ln.matvec(&eb_omega));
    let np = number_operator(&exc).diagonal_entries();
    let xi_depletion = spec
        .cluster
        .iter()
        .map(|v| {
            let xi = expmv(&gen, &u.matvec(v), -1.0)?;
            Ok(xi.iter().zip(&np).map(|(x, d)| x * x * d).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / spec.cluster_size() as f64;

    let sandwich = if cfg.sandwich {
        Some(sandwich_check(&hams, &gen, sol.a0, n)?)
    } else {
        None
    };
    Ok(ScanRow {
        n,
        kappa: cfg.kappa,
        pmax: cfg.pmax,
        dim: canonical.dim(),
        a0: sol.a0,
        lambda_ell: sol.lambda_ell,
        eta_norm: sol.eta_norm(),
        e0: spec.ground_energy(),
        e0_minus_4pi_a0_n: spec.ground_energy() - e_ref,
        depletion: 1.0 - obs.condensate_fraction,
        n_times_depletion: obs.depletion,
        vac_gn_offset: vac_gn - e_ref,
        xi_depletion,
        ground_cluster: spec.cluster_size(),
        lanczos_iterations: spec.iterations,
        condensate_chain,
        c_lo: sandwich.as_ref().map(|s| s.c_lo),
        c_mid: sandwich.as_ref().map(|s| s.c_mid),
        c_hi: sandwich.as_ref().map(|s| s.c_hi),
    })
}

/// Runs [`pipeline_row`] for every `N` in the configuration, in parallel.
pub fn condensation_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.pmax == 0 {
        return Err(Error::Config("pmax must be at least 1".into()));
    }
    let rows = cfg
        .n_values
        .par_iter()
        .map(|&n| pipeline_row(cfg, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineReport {
        note: DESK_SCALE_NOTE.into(),
        config: cfg.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::b_operator;
    use crate::linalg::symmetric_eigenvalues_sorted;

    fn lat(pmax: u32) -> Arc<MomentumLattice> {
        Arc::new(MomentumLattice::new(pmax))
    }

    fn ball() -> PotentialSpec {
        PotentialSpec::ball(0.5, 1.0)
    }

    #[test]
    fn diagonal_action_gives_lowest_entries() {
        let d: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.5 - 3.0).collect();
        let op = SparseOperator::diagonal(&d);
        let r = lanczos_lowest(&op, 3, 1e-12, 200, 1).unwrap();
        assert_eq!(r.eigenvalues.len(), 3);
        for (e, x) in r.eigenvalues.iter().zip([-3.0, -2.5, -2.0]) {
            assert!((e - x).abs() < 1e-12);
        }
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let op = SparseOperator::identity(20);
        assert!(matches!(lanczos_lowest(&op, 11, 1e-10, 50, 1), Err(Error::Config(_))));
    }

    #[test]
    fn free_excitation_spectrum_has_gap_four_pi_sq() {
        let b = FockBasis::excitation(&lat(1), 2, None).unwrap();
        let h = build_ln_parts(&b, &ball(), 0.0).unwrap().l_n();
        let r = lanczos_lowest(&h, 2, 1e-10, 400, 7).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-12);
        assert!((r.eigenvalues[1] - 4.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn lanczos_matches_dense_solver() {
        let b = FockBasis::canonical(&lat(1), 4, Some([0, 0, 0])).unwrap();
        let h = build_hn(&b, &ball(), 0.3).unwrap();
        let dense = symmetric_eigenvalues_sorted(h.to_dense());
        let r = lanczos_lowest(&h, 4, 1e-11, 400, 3).unwrap();
        for (e, x) in r.eigenvalues.iter().zip(&dense) {
            assert!((e - x).abs() < 1e-9, "{e} vs {x}");
        }
        for (res, e) in r.residual_norms.iter().zip(&r.eigenvalues) {
            assert!(*res <= 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn vacuum_and_single_excitation_depletion() {
        let b = FockBasis::excitation(&lat(1), 3, None).unwrap();
        let mut v = vec![0.0; b.dim()];
        let vac = b.condensate_index().unwrap();
        v[vac] = 1.0;
        let o = depletion_of(std::slice::from_ref(&v), &b);
        assert_eq!(o.depletion, 0.0);
        assert_eq!(o.condensate_fraction, 1.0);
        let p = b.lattice().index_of([0, 1, 0]).unwrap();
        let one = b_operator(&b, &b, p, true).unwrap().matvec(&v);
        let nrm = norm(&one);
        let one: Vec<f64> = one.iter().map(|x| x / nrm).collect();
        let o = depletion_of(&[one], &b);
        assert!((o.depletion - 1.0).abs() < 1e-15);
    }

    #[test]
    fn condensate_state_concentrates_on_zero_mode() {
        let b = FockBasis::canonical(&lat(1), 3, None).unwrap();
        let mut v = vec![0.0; b.dim()];
        v[b.condensate_index().unwrap()] = 1.0;
        let o = depletion_of(&[v], &b);
        for (m, occ) in &o.gamma1_diag {
            let want = if *m == [0, 0, 0] { 3.0 } else { 0.0 };
            assert_eq!(*occ, want);
        }
    }

    #[test]
    fn ground_energies_agree_across_pictures() {
        let l = lat(1);
        let n = 3;
        let cfg = PipelineConfig::default();
        let sol = eta_coefficients(solve_neumann(&cfg.potential, 0.2, n, 0.4, 2048).unwrap(), &l);
        let can = FockBasis::canonical(&l, n, Some([0, 0, 0])).unwrap();
        let exc = FockBasis::excitation(&l, n, Some([0, 0, 0])).unwrap();
        let e_h = lanczos_lowest(&build_hn(&can, &cfg.potential, 0.2).unwrap(), 1, 1e-11, 400, 1)
            .unwrap()
            .ground_energy();
        let ln = build_ln_parts(&exc, &cfg.potential, 0.2).unwrap().l_n();
        let e_l = lanczos_lowest(&ln, 1, 1e-11, 400, 1).unwrap().ground_energy();
        let gen = build_generator(&exc, &sol.eta).unwrap();
        let g = crate::bogoliubov::materialize_conjugated(&gen, &gen, &ln).unwrap();
        let e_g = symmetric_eigenvalues_sorted((&g + g.transpose()) * 0.5)[0];
        assert!((e_h - e_l).abs() < 1e-8 && (e_l - e_g).abs() < 1e-8, "{e_h} {e_l} {e_g}");
    }

    #[test]
    fn depletion_two_routes_agree() {
        let l = lat(1);
        let can = FockBasis::canonical(&l, 4, Some([0, 0, 0])).unwrap();
        let exc = FockBasis::excitation(&l, 4, Some([0, 0, 0])).unwrap();
        let r = lanczos_lowest(&build_hn(&can, &ball(), 0.5).unwrap(), 1, 1e-11, 400, 1).unwrap();
        let u = excitation_map(&can, &exc).unwrap();
        let a = depletion_of(std::slice::from_ref(&r.ground_vector), &can);
        let uv = u.matvec(&r.ground_vector);
        let np = number_operator(&exc).diagonal_entries();
        let b: f64 = uv.iter().zip(&np).map(|(x, d)| x * x * d).sum();
        assert!((a.depletion - b).abs() < 1e-14);
        assert!(condensate_chain(&a, 4).holds);
    }

    fn sandwich_inputs(n: usize, kappa: f64) -> (HamiltonianSet, BogoliubovGenerator, f64) {
        let l = lat(1);
        let exc = FockBasis::excitation(&l, n, Some([0, 0, 0])).unwrap();
        let sol = eta_coefficients(solve_neumann(&ball(), kappa, n, 0.4, 2048).unwrap(), &l);
        let hams = build_ln_parts(&exc, &ball(), kappa).unwrap();
        let gen = build_generator(&exc, &sol.eta).unwrap();
        (hams, gen, sol.a0)
    }

    #[test]
    fn free_sandwich_has_zero_constants() {
        let (h, g, a0) = sandwich_inputs(3, 0.0);
        let r = sandwich_check(&h, &g, a0, 3).unwrap();
        assert_eq!((r.c_lo, r.c_mid, r.hi_additive), (0.0, 0.0, 0.0));
        assert!(r.kinetic_gap_ok && r.c_hi < 1.0);
    }

    #[test]
    fn matrix_free_sandwich_matches_dense() {
        let (h, g, a0) = sandwich_inputs(4, 0.5);
        let d = sandwich_check(&h, &g, a0, 4).unwrap();
        let m = sandwich_check_with(&h, &g, a0, 4, SandwichMethod::MatrixFree).unwrap();
        assert!(!d.matrix_free && m.matrix_free);
        for (x, y) in [(d.c_lo, m.c_lo), (d.c_mid, m.c_mid), (d.c_hi, m.c_hi), (d.hi_additive, m.hi_additive)] {
            assert!((x - y).abs() < 1e-7 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn halved_upper_constant_is_detected() {
        let (h, g, a0) = sandwich_inputs(3, 0.05);
        let r = sandwich_check(&h, &g, a0, 3).unwrap();
        assert!(upper_violation(&h, &g, a0, 3, r.c_hi).unwrap() <= 1e-9);
        assert!(upper_violation(&h, &g, a0, 3, 0.5 * r.c_hi).unwrap() > 0.0);
    }

    #[test]
    fn free_pipeline_is_trivial() {
        let cfg = PipelineConfig {
            kappa: 0.0,
            n_values: vec![3, 4],
            ..Default::default()
        };
        let rep = condensation_pipeline(&cfg).unwrap();
        for r in rep.rows {
            assert!(r.e0.abs() < 1e-12);
            assert!(r.n_times_depletion < 1e-20);
            assert_eq!(r.e0_minus_4pi_a0_n, r.e0);
            assert!(r.vac_gn_offset.abs() < 1e-12);
        }
    }
}

//! Radial scattering problems: the Neumann eigenproblem on the ball of
//! radius `Nℓ`, the zero-energy scattering length, the lattice coefficients
//! `η_p = −N⁻² ŵ_ℓ(p/N)` and the residual of the Fourier-space scattering
//! relation satisfied by `η̃`.
//!
//! Fourier transforms are `ĝ(q) = ∫ g(x) e^{−iq·x} dx`, the same for `V`,
//! `w_ℓ` and `χ_ℓ`; with this choice the lattice relation checked by
//! [`verify_scattering_relation`] holds with no extra constants.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::MomentumLattice;
use crate::potential::{ball_fourier, sinc, PotentialSpec};

/// Relative tolerance of the eigenvalue bisection.
pub const LAMBDA_RTOL: f64 = 1e-10;
/// Default ceiling for `max_boundary|η| / max|η|` in the residual check.
pub const DEFAULT_BOUNDARY_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct ScatteringSolution {
    pub grid: Vec<f64>,
    pub f: Vec<f64>,
    pub w: Vec<f64>,
    pub lambda_ell: f64,
    pub a0: f64,
    pub kappa: f64,
    pub ell: f64,
    pub n_particles: usize,
    /// Lattice-indexed `η`, zero at the zero mode; empty until filled.
    pub eta: Vec<f64>,
    pub eta_tilde_zero: f64,
    pub eta_pmax: Option<u32>,
    /// `max_p |η_p| p² / κ` over the lattice.
    pub eta_decay_constant: f64,
    #[serde(skip)]
    support_index: usize,
}

impl ScatteringSolution {
    pub fn boundary_radius(&self) -> f64 {
        self.n_particles as f64 * self.ell
    }

    /// `w_ℓ(r)` by linear interpolation, zero beyond `Nℓ`.
    pub fn w_at(&self, r: f64) -> f64 {
        let g = &self.grid;
        if r >= *g.last().unwrap() {
            return 0.0;
        }
        let k = g.partition_point(|&x| x <= r).max(1);
        let t = (r - g[k - 1]) / (g[k] - g[k - 1]);
        self.w[k - 1] + t * (self.w[k] - self.w[k - 1])
    }

    /// `ŵ_ℓ(q) = 4π∫₀^{Nℓ} r² w(r) sin(qr)/(qr) dr` by Simpson's rule on each
    /// uniform piece of the grid.
    pub fn w_hat(&self, q: f64) -> f64 {
        let pieces = [(0, self.support_index), (self.support_index, self.grid.len() - 1)];
        let mut total = 0.0;
        for (lo, hi) in pieces {
            if hi > lo {
                total += uniform_simpson(&self.grid[lo..=hi], |i| {
                    let r = self.grid[lo + i];
                    r * r * self.w[lo + i] * sinc(q * r)
                });
            }
        }
        4.0 * PI * total
    }

    pub fn eta_norm(&self) -> f64 {
        self.eta.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// `Σ_p p² η_p²`.
    pub fn eta_h1_sq(&self, lattice: &MomentumLattice) -> f64 {
        lattice
            .nonzero_indices()
            .map(|i| lattice.momentum_sq(i) * self.eta[i] * self.eta[i])
            .sum()
    }
}

// Simpson on a uniform slice; falls back to a trapezoid on the last panel
// when the panel count is odd.
fn uniform_simpson<F: Fn(usize) -> f64>(x: &[f64], f: F) -> f64 {
    let m = x.len() - 1;
    if m == 0 {
        return 0.0;
    }
    let h = (x[m] - x[0]) / m as f64;
    let even = m - m % 2;
    let mut acc = 0.0;
    if even > 0 {
        acc += f(0) + f(even);
        for i in 1..even {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
        }
        acc *= h / 3.0;
    }
    if m % 2 == 1 {
        acc += 0.5 * h * (f(m - 1) + f(m));
    }
    acc
}

/// Grid with a node at the support radius: `inner` panels on `[0, a]`,
/// `outer` on `[a, R]`.
fn split_grid(a: f64, r_max: f64, grid_points: usize) -> (Vec<f64>, usize) {
    let total = grid_points.max(4);
    let inner = ((total as f64 * a / r_max).round() as usize).clamp(2, total - 2);
    let outer = total - inner;
    let mut grid = Vec::with_capacity(total + 1);
    for i in 0..inner {
        grid.push(a * i as f64 / inner as f64);
    }
    for i in 0..=outer {
        grid.push(a + (r_max - a) * i as f64 / outer as f64);
    }
    (grid, inner)
}

/// RK4 for `u'' = (κV/2 − λ)u` over the grid, `u(0) = 0`, `u'(0) = 1`.
/// `V` is taken as zero past the support node.
fn shoot(
    v: &PotentialSpec,
    kappa: f64,
    lambda: f64,
    grid: &[f64],
    support: usize,
    mut record: Option<&mut Vec<f64>>,
) -> (f64, f64) {
    let mut u = 0.0;
    let mut du = 1.0;
    if let Some(rec) = record.as_deref_mut() {
        rec.clear();
        rec.push(u);
    }
    for k in 0..grid.len() - 1 {
        let (r0, r1) = (grid[k], grid[k + 1]);
        let h = r1 - r0;
        let inside = k < support;
        let q = |r: f64| {
            if inside {
                0.5 * kappa * v.value_inside(r) - lambda
            } else {
                -lambda
            }
        };
        let (q0, qm, q1) = (q(r0), q(r0 + 0.5 * h), q(r1));
        let k1u = du;
        let k1v = q0 * u;
        let k2u = du + 0.5 * h * k1v;
        let k2v = qm * (u + 0.5 * h * k1u);
        let k3u = du + 0.5 * h * k2v;
        let k3v = qm * (u + 0.5 * h * k2u);
        let k4u = du + h * k3v;
        let k4v = q1 * (u + h * k3u);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        du += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if let Some(rec) = record.as_deref_mut() {
            rec.push(u);
        }
    }
    (u, du)
}

fn check_inputs(v: &PotentialSpec, kappa: f64) -> Result<()> {
    v.validate()?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!("kappa must be non-negative, got {kappa}")));
    }
    Ok(())
}

/// Scattering length of `κV`: `a₀ = a − u(a)/u'(a)` from the zero-energy
/// radial solution at the support radius `a`.
pub fn scattering_length(v: &PotentialSpec, kappa: f64) -> Result<f64> {
    check_inputs(v, kappa)?;
    if kappa == 0.0 || v.amplitude == 0.0 {
        return Ok(0.0);
    }
    let steps = 20_000;
    let grid: Vec<f64> = (0..=steps).map(|i| v.radius * i as f64 / steps as f64).collect();
    let (u, du) = shoot(v, kappa, 0.0, &grid, steps, None);
    let a0 = v.radius - u / du;
    if !a0.is_finite() {
        return Err(Error::NonConvergence("zero-energy integration overflowed".into()));
    }
    Ok(a0)
}

/// Lowest Neumann eigenpair of `−Δ + κV/2` on the ball of radius `Nℓ`,
/// normalized by `f(Nℓ) = 1`. `η` is left empty.
pub fn solve_neumann(
    v: &PotentialSpec,
    kappa: f64,
    n_particles: usize,
    ell: f64,
    grid_points: usize,
) -> Result<ScatteringSolution> {
    check_inputs(v, kappa)?;
    if !(ell > 0.0 && ell < 0.5) {
        return Err(Error::Config(format!("ell must lie in (0, 1/2), got {ell}")));
    }
    if grid_points < 256 {
        return Err(Error::Config("grid_points must be at least 256".into()));
    }
    if n_particles == 0 {
        return Err(Error::Config("n_particles must be positive".into()));
    }
    let r_max = n_particles as f64 * ell;
    if r_max <= v.radius {
        return Err(Error::InvalidDomain(format!(
            "N·ℓ = {r_max} does not exceed the potential radius {}",
            v.radius
        )));
    }
    let a0 = scattering_length(v, kappa)?;
    let (grid, support) = split_grid(v.radius, r_max, grid_points);

    let mut sol = ScatteringSolution {
        f: vec![1.0; grid.len()],
        w: vec![0.0; grid.len()],
        grid,
        lambda_ell: 0.0,
        a0,
        kappa,
        ell,
        n_particles,
        eta: Vec::new(),
        eta_tilde_zero: 0.0,
        eta_pmax: None,
        eta_decay_constant: 0.0,
        support_index: support,
    };
    if kappa == 0.0 || v.amplitude == 0.0 {
        return Ok(sol);
    }

    // Neumann mismatch R·u'(R) − u(R) ∝ f'(R).
    let mismatch = |lambda: f64| {
        let (u, du) = shoot(v, kappa, lambda, &sol.grid, support, None);
        r_max * du - u
    };
    // First nonzero free Neumann level: tan(kR) = kR at kR ≈ 4.4934.
    let upper = (4.4934 / r_max).powi(2);
    let scan = 400;
    let mut lo = 0.0;
    let mut g_lo = mismatch(lo);
    let mut hi = None;
    for i in 1..=scan {
        let x = upper * i as f64 / scan as f64;
        let g = mismatch(x);
        if g == 0.0 || g.signum() != g_lo.signum() {
            hi = Some((x, g));
            break;
        }
        lo = x;
        g_lo = g;
    }
    let (mut hi, _) = hi.ok_or_else(|| {
        Error::NonConvergence("no sign change of the Neumann mismatch below the first free level".into())
    })?;
    let mut iterations = 0;
    while hi - lo > LAMBDA_RTOL * hi.abs() * 0.5 {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NonConvergence("eigenvalue bisection did not converge".into()));
        }
        let mid = 0.5 * (lo + hi);
        let g = mismatch(mid);
        if g == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let mut u = Vec::new();
    shoot(v, kappa, lambda, &sol.grid, support, Some(&mut u));
    let scale = u.last().copied().unwrap() / r_max;
    for (i, &r) in sol.grid.iter().enumerate() {
        let f = if r == 0.0 { 1.0 / scale } else { u[i] / (r * scale) };
        sol.f[i] = f;
        sol.w[i] = 1.0 - f;
    }
    *sol.f.last_mut().unwrap() = 1.0;
    *sol.w.last_mut().unwrap() = 0.0;
    sol.lambda_ell = lambda;
    Ok(sol)
}

/// Fills `η_p = −N⁻² ŵ_ℓ(|p|/N)` on the lattice and `η̃₀`.
pub fn eta_coefficients(mut sol: ScatteringSolution, lattice: &MomentumLattice) -> ScatteringSolution {
    let n = sol.n_particles as f64;
    let zero = lattice.zero_index();
    let eta: Vec<f64> = (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            if i == zero || sol.kappa == 0.0 {
                0.0
            } else {
                -sol.w_hat(lattice.momentum_abs(i) / n) / (n * n)
            }
        })
        .collect();
    sol.eta_tilde_zero = if sol.kappa == 0.0 { 0.0 } else { -sol.w_hat(0.0) / (n * n) };
    sol.eta_decay_constant = if sol.kappa == 0.0 {
        0.0
    } else {
        lattice
            .nonzero_indices()
            .map(|i| eta[i].abs() * lattice.momentum_sq(i) / sol.kappa)
            .fold(0.0, f64::max)
    };
    sol.eta = eta;
    sol.eta_pmax = Some(lattice.pmax());
    sol
}

/// `χ̂_ℓ(p)`, the transform of the indicator of the ball of radius `ℓ`.
pub fn chi_hat(ell: f64, p: f64) -> f64 {
    ball_fourier(ell, p)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Lattice-indexed `|lhs − rhs|`, zero at the zero mode.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `max_residual / (κ·max_p |V̂(p/N)|)`.
    pub relative: f64,
    pub boundary_ratio: f64,
}

/// Residual of the cube-truncated relation
/// `p²η̃_p + (κ/2)V̂(p/N) + (κ/2N)Σ_q V̂((p−q)/N)η̃_q
///   = N³λχ̂(p) + N²λ Σ_q χ̂(p−q)η̃_q` for `p ≠ 0`.
pub fn verify_scattering_relation(
    sol: &ScatteringSolution,
    lattice: &MomentumLattice,
    v: &PotentialSpec,
    boundary_threshold: f64,
) -> Result<ResidualReport> {
    if sol.eta_pmax != Some(lattice.pmax()) || sol.eta.len() != lattice.len() {
        return Err(Error::InvalidDomain("eta has not been computed on this lattice".into()));
    }
    let len = lattice.len();
    if sol.kappa == 0.0 {
        return Ok(ResidualReport {
            residuals: vec![0.0; len],
            max_residual: 0.0,
            relative: 0.0,
            boundary_ratio: 0.0,
        });
    }
    let max_eta = sol.eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let max_boundary = lattice
        .nonzero_indices()
        .filter(|&i| lattice.on_boundary(i))
        .map(|i| sol.eta[i].abs())
        .fold(0.0, f64::max);
    let boundary_ratio = if max_eta > 0.0 { max_boundary / max_eta } else { 0.0 };
    if boundary_ratio > boundary_threshold {
        return Err(Error::CutoffTooSmall {
            ratio: boundary_ratio,
            threshold: boundary_threshold,
        });
    }

    let n = sol.n_particles as f64;
    let (kappa, lambda, ell) = (sol.kappa, sol.lambda_ell, sol.ell);
    let zero = lattice.zero_index();
    let eta_t = |i: usize| if i == zero { sol.eta_tilde_zero } else { sol.eta[i] };
    let modes = lattice.modes();
    let dist = |i: usize, j: usize| {
        let (a, b) = (modes[i], modes[j]);
        let d = [(a[0] - b[0]) as f64, (a[1] - b[1]) as f64, (a[2] - b[2]) as f64];
        2.0 * PI * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };
    let residuals: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|i| {
            if i == zero {
                return 0.0;
            }
            let p = lattice.momentum_abs(i);
            let mut conv_v = 0.0;
            let mut conv_chi = 0.0;
            for j in 0..len {
                let d = dist(i, j);
                let e = eta_t(j);
                conv_v += v.fourier(d / n) * e;
                conv_chi += chi_hat(ell, d) * e;
            }
            let lhs = p * p * sol.eta[i] + 0.5 * kappa * v.fourier(p / n) + kappa / (2.0 * n) * conv_v;
            let rhs = n.powi(3) * lambda * chi_hat(ell, p) + n * n * lambda * conv_chi;
            (lhs - rhs).abs()
        })
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let vmax = lattice
        .nonzero_indices()
        .map(|i| v.fourier(lattice.momentum_abs(i) / n).abs())
        .fold(0.0, f64::max);
    Ok(ResidualReport {
        residuals,
        max_residual,
        relative: max_residual / (kappa * vmax),
        boundary_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> PotentialSpec {
        PotentialSpec::ball(1.0, 1.0)
    }

    #[test]
    fn free_problem_is_trivial() {
        let s = solve_neumann(&ball(), 0.0, 8, 0.4, 512).unwrap();
        assert_eq!(s.lambda_ell, 0.0);
        assert!(s.f.iter().all(|&f| f == 1.0) && s.w.iter().all(|&w| w == 0.0));
        assert_eq!(scattering_length(&ball(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ball_scattering_length_matches_closed_form() {
        for kappa in [0.01, 0.5, 4.0] {
            let mu = (kappa / 2.0f64).sqrt();
            let exact = 1.0 - mu.tanh() / mu;
            let a0 = scattering_length(&ball(), kappa).unwrap();
            assert!((a0 - exact).abs() < 1e-12, "kappa={kappa}: {a0} vs {exact}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            solve_neumann(&ball(), 0.1, 2, 0.4, 512),
            Err(Error::InvalidDomain(_))
        ));
        assert!(solve_neumann(&ball(), 0.1, 8, 0.6, 512).is_err());
        assert!(solve_neumann(&ball(), 0.1, 8, 0.4, 100).is_err());
    }

    #[test]
    fn profile_bounds_and_normalization() {
        let s = solve_neumann(&ball(), 0.1, 8, 0.4, 1024).unwrap();
        assert_eq!(*s.f.last().unwrap(), 1.0);
        for (&f, &w) in s.f.iter().zip(&s.w) {
            assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&w));
        }
        assert!(s.lambda_ell > 0.0);
    }

    #[test]
    fn eta_is_inversion_symmetric() {
        let lat = MomentumLattice::new(2);
        let s = eta_coefficients(solve_neumann(&ball(), 0.1, 8, 0.4, 1024).unwrap(), &lat);
        for i in 0..lat.len() {
            assert_eq!(s.eta[i], s.eta[lat.neg_index(i)]);
        }
        assert!(s.eta_tilde_zero < 0.0 && s.eta_decay_constant.is_finite());
    }

    #[test]
    fn free_eta_and_residual_vanish() {
        let lat = MomentumLattice::new(2);
        let s = eta_coefficients(solve_neumann(&ball(), 0.0, 8, 0.4, 512).unwrap(), &lat);
        assert!(s.eta.iter().all(|&e| e == 0.0) && s.eta_tilde_zero == 0.0);
        let r = verify_scattering_relation(&s, &lat, &ball(), DEFAULT_BOUNDARY_RATIO).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }
}

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpbec::bogoliubov::{build_generator, expmv, materialize_conjugated, materialize_exp};
use gpbec::fock::{b_operator, ladder_bilinear, number_operator, total_momentum, FockBasis, Occupation};
use gpbec::hamiltonians::{build_hn, build_ln_parts};
use gpbec::lattice::{add_modes, neg_mode, sub_modes, Mode, MomentumLattice};
use gpbec::linalg::SparseOperator;
use gpbec::potential::PotentialSpec;
use gpbec::scattering::{eta_coefficients, solve_neumann};
use gpbec::spectra::{lanczos_lowest, condensation_pipeline, PipelineConfig};
use gpbec::symbolic::{count_terms, expand_ad, visit_terms};

fn sorted_eigs(m: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn random_eta(lat: &MomentumLattice, norm: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eta = vec![0.0; lat.len()];
    for i in lat.nonzero_indices() {
        let j = lat.neg_index(i);
        if i < j {
            let v = rng.gen::<f64>() - 0.5;
            eta[i] = v;
            eta[j] = v;
        }
    }
    let s = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
    eta.iter_mut().for_each(|x| *x *= norm / s);
    eta
}

fn small_mode() -> impl Strategy<Value = Mode> {
    [-1i32..=1, -1i32..=1, -1i32..=1]
}

fn n_plus(b: &FockBasis, s: &Occupation) -> usize {
    let z = b.lattice().zero_index() as u16;
    s.iter().filter(|e| e.0 != z).map(|e| e.1 as usize).sum()
}

// Ball transform with the convention ĝ(k) = ∫ g(x) e^{−ikx} dx.
fn ball_hat(radius: f64, k: f64) -> f64 {
    let s = k * radius;
    let r3 = radius.powi(3);
    if s < 1e-3 {
        4.0 * PI * r3 * (1.0 / 3.0 - s * s / 30.0)
    } else {
        4.0 * PI * r3 * (s.sin() - s * s.cos()) / s.powi(3)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lattice_inversion_round_trip_and_determinism(pmax in 1u32..=4) {
        let a = MomentumLattice::new(pmax);
        let b = MomentumLattice::new(pmax);
        prop_assert_eq!(a.modes(), b.modes());
        for i in 0..a.len() {
            let m = a.mode_at(i);
            prop_assert!(a.index_of(neg_mode(m)).is_some());
            prop_assert_eq!(a.index_of(m), Some(i));
        }
        let p = pmax as i32;
        prop_assert_eq!(a.len() as i32, (2 * p + 1).pow(3));
        prop_assert!(a.index_of([p + 1, 0, 0]).is_none());
    }

    #[test]
    fn bilinears_shift_momentum_by_p_minus_q(p in small_mode(), q in small_mode(), n in 1usize..=3) {
        prop_assume!(p != [0, 0, 0] && q != [0, 0, 0]);
        let lat = Arc::new(MomentumLattice::new(1));
        let b = FockBasis::excitation(&lat, n, None).unwrap();
        let (pi, qi) = (lat.index_of(p).unwrap(), lat.index_of(q).unwrap());
        let op = ladder_bilinear(&b, &b, pi, qi).unwrap();
        for (i, j, _) in op.triplets() {
            let shift = sub_modes(total_momentum(b.state(i), &lat), total_momentum(b.state(j), &lat));
            prop_assert_eq!(shift, sub_modes(p, q));
        }
        let bp = b_operator(&b, &b, pi, false).unwrap();
        for (i, j, _) in bp.triplets() {
            prop_assert_eq!(total_momentum(b.state(j), &lat), add_modes(total_momentum(b.state(i), &lat), p));
        }
        let num = number_operator(&b);
        prop_assert!(num.triplets().all(|(i, j, _)| i == j));
    }

    #[test]
    fn sectored_bilinear_lands_in_shifted_sector(p in small_mode(), q in small_mode()) {
        prop_assume!(p != [0, 0, 0] && q != [0, 0, 0] && p != q);
        let lat = Arc::new(MomentumLattice::new(1));
        let dom = FockBasis::excitation(&lat, 2, Some([0, 0, 0])).unwrap();
        let good = FockBasis::excitation(&lat, 2, Some(sub_modes(p, q))).unwrap();
        prop_assert!(ladder_bilinear(&dom, &good, lat.index_of(p).unwrap(), lat.index_of(q).unwrap()).is_ok());
        prop_assert!(ladder_bilinear(&dom, &dom, lat.index_of(p).unwrap(), lat.index_of(q).unwrap()).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // The second-quantized H_N against the first-quantized two-body matrix
    // −Δ₁ − Δ₂ + κN²V(N(x₁ − x₂)) restricted to plane waves in the cube.
    #[test]
    fn two_body_oracle(kappa in 0.01f64..1.0, radius in 0.2f64..0.9, amp in 0.1f64..2.0) {
        let lat = Arc::new(MomentumLattice::new(1));
        let n = 2usize;
        let v = PotentialSpec::ball(radius, amp);
        let basis = FockBasis::canonical(&lat, n, None).unwrap();
        let h = build_hn(&basis, &v, kappa).unwrap().to_dense();
        let modes: Vec<Mode> = lat.modes().to_vec();
        let k2 = |m: Mode| 4.0 * PI * PI * (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64;
        let w = |r: Mode| kappa / n as f64 * amp * ball_hat(radius, k2(r).sqrt() / n as f64);
        // Symmetric pair states as ordered-pair amplitudes.
        let components = |a: usize, b: usize| -> Vec<((usize, usize), f64)> {
            if a == b { vec![((a, a), 1.0)] } else { vec![((a, b), 0.5f64.sqrt()), ((b, a), 0.5f64.sqrt())] }
        };
        let mut index = BTreeMap::new();
        for (k, s) in basis.states().iter().enumerate() {
            let ms: Vec<usize> = s.iter().flat_map(|e| std::iter::repeat_n(e.0 as usize, e.1 as usize)).collect();
            index.insert((ms[0], ms[1]), k);
        }
        let mut worst = 0.0f64;
        for (&(a, b), &i) in &index {
            for (&(c, d), &j) in &index {
                let mut val = 0.0;
                for ((x1, x2), ca) in components(a, b) {
                    for ((y1, y2), cb) in components(c, d) {
                        if add_modes(modes[x1], modes[x2]) != add_modes(modes[y1], modes[y2]) {
                            continue;
                        }
                        if (x1, x2) == (y1, y2) {
                            val += ca * cb * (k2(modes[y1]) + k2(modes[y2]));
                        }
                        val += ca * cb * w(sub_modes(modes[x1], modes[y1]));
                    }
                }
                worst = worst.max((h[(i, j)] - val).abs());
            }
        }
        prop_assert!(worst < 1e-10, "max defect {}", worst);
    }

    #[test]
    fn excitation_hamiltonian_structure(kappa in 0.0f64..0.5, n in 2usize..=4, sx in -1i32..=1) {
        let lat = Arc::new(MomentumLattice::new(1));
        let v = PotentialSpec::ball(0.5, 1.0);
        let sector = [sx, 0, 0];
        let exc = FockBasis::excitation(&lat, n, Some(sector)).unwrap();
        let can = FockBasis::canonical(&lat, n, Some(sector)).unwrap();
        let parts = build_ln_parts(&exc, &v, kappa).unwrap();
        let np: Vec<usize> = exc.states().iter().map(|s| n_plus(&exc, s)).collect();
        let grade = |op: &SparseOperator| -> Vec<i64> {
            let mut g: Vec<i64> = op.triplets().map(|(i, j, _)| np[i] as i64 - np[j] as i64).collect();
            g.sort();
            g.dedup();
            g
        };
        prop_assert!(grade(&parts.l3).iter().all(|d| d.abs() == 1));
        prop_assert!(grade(&parts.l2).iter().all(|d| [0, 2].contains(&d.abs())));
        prop_assert!(grade(&parts.l0).iter().all(|&d| d == 0));
        prop_assert!(grade(&parts.l4).iter().all(|&d| d == 0));
        prop_assert!(grade(&parts.kinetic).iter().all(|&d| d == 0));

        let vmin = sorted_eigs(parts.potential.to_dense())[0];
        prop_assert!(vmin >= -1e-10, "V_N min eigenvalue {}", vmin);
        let kin = sorted_eigs(parts.kinetic.to_dense());
        let gap = kin.iter().copied().find(|&x| x > 1e-9);
        if let Some(g) = gap {
            prop_assert!(g >= 4.0 * PI * PI - 1e-9);
        }

        let hs = sorted_eigs(build_hn(&can, &v, kappa).unwrap().to_dense());
        let ls = sorted_eigs(parts.l_n().to_dense());
        let d = hs.iter().zip(&ls).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(d < 1e-10, "spectra differ by {}", d);
    }

    #[test]
    fn conjugation_is_orthogonal_and_preserves_ground_energy(seed in 0u64..1000, norm in 0.05f64..0.5, kappa in 0.01f64..0.3) {
        let lat = Arc::new(MomentumLattice::new(1));
        let v = PotentialSpec::ball(0.5, 1.0);
        let n = 3;
        let can = FockBasis::canonical(&lat, n, Some([0, 0, 0])).unwrap();
        let exc = FockBasis::excitation(&lat, n, Some([0, 0, 0])).unwrap();
        let gen = build_generator(&exc, &random_eta(&lat, norm, seed)).unwrap();
        let e = materialize_exp(&gen, 1.0).unwrap();
        prop_assert!((e.transpose() * &e - DMatrix::identity(exc.dim(), exc.dim())).amax() < 1e-10);
        let l = build_ln_parts(&exc, &v, kappa).unwrap().l_n();
        let g = materialize_conjugated(&gen, &gen, &l).unwrap();
        prop_assert!((&g - g.transpose()).amax() < 1e-9);
        let eg = sorted_eigs((&g + g.transpose()) * 0.5)[0];
        let el = lanczos_lowest(&l, 1, 1e-12, 400, seed).unwrap().ground_energy();
        let eh = lanczos_lowest(&build_hn(&can, &v, kappa).unwrap(), 1, 1e-12, 400, seed).unwrap().ground_energy();
        prop_assert!((eg - el).abs() < 1e-8 && (eh - el).abs() < 1e-8, "{} {} {}", eg, el, eh);
    }

    #[test]
    fn eta_norm_grows_with_kappa(k1 in 0.001f64..0.5, k2 in 0.001f64..0.5) {
        prop_assume!((k1 - k2).abs() > 1e-3);
        let v = PotentialSpec::ball(1.0, 1.0);
        let lat = MomentumLattice::new(2);
        let norm = |k: f64| eta_coefficients(solve_neumann(&v, k, 6, 0.4, 2048).unwrap(), &lat).eta_norm();
        let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
        prop_assert!(norm(lo) < norm(hi));
    }
}

#[test]
fn eta_vanishes_as_kappa_goes_to_zero() {
    let v = PotentialSpec::ball(1.0, 1.0);
    let lat = MomentumLattice::new(2);
    let norms: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&k| eta_coefficients(solve_neumann(&v, k, 6, 0.4, 2048).unwrap(), &lat).eta_norm())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < 0.2 * w[0]), "{norms:?}");
    assert!(norms[3] < 1e-5);
}

#[test]
fn scattering_profile_constants_are_stable() {
    let v = PotentialSpec::ball(1.0, 1.0);
    let lat = MomentumLattice::new(3);
    let mut cw = Vec::new();
    let mut cwhat = Vec::new();
    let mut ch1 = Vec::new();
    for &k in &[0.01, 0.05, 0.1, 0.3, 0.6] {
        let n = 6;
        let s = eta_coefficients(solve_neumann(&v, k, n, 0.4, 4096).unwrap(), &lat);
        cw.push(s.grid.iter().zip(&s.w).map(|(r, w)| w * (r + 1.0) / k).fold(0.0f64, f64::max));
        cwhat.push((1..400).map(|i| 0.25 * i as f64).map(|q| s.w_hat(q).abs() * q * q / k).fold(0.0f64, f64::max));
        let fine = s.eta_h1_sq(&lat) / (n as f64 * k * k);
        let coarse = eta_coefficients(solve_neumann(&v, k, n, 0.4, 1024).unwrap(), &lat).eta_h1_sq(&lat)
            / (n as f64 * k * k);
        assert!((fine - coarse).abs() <= 1e-3 * fine, "grid refinement moved C from {coarse} to {fine}");
        ch1.push(fine);
    }
    for c in [&cw, &cwhat, &ch1] {
        let max = c.iter().cloned().fold(0.0, f64::max);
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max.is_finite() && max <= 1.5 * min, "{c:?}");
    }
}

#[test]
fn neumann_eigenvalue_scales_as_inverse_cube() {
    let v = PotentialSpec::ball(1.0, 1.0);
    for n in [4, 8, 16] {
        let a = solve_neumann(&v, 0.1, n, 0.4, 4096).unwrap().lambda_ell;
        let b = solve_neumann(&v, 0.1, 2 * n, 0.4, 4096).unwrap().lambda_ell;
        let r = b / a;
        assert!((0.8 / 8.0..=1.2 / 8.0).contains(&r), "N={n}: {r}");
    }
}

// Rayleigh quotients of (𝒩₊+1)^{n₁}(N+1−𝒩₊)^{n₂} under e^{B}.
#[test]
fn number_growth_is_bounded_under_conjugation() {
    let lat = Arc::new(MomentumLattice::new(1));
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let eta = random_eta(&lat, 0.3, 3);
    let mut worst = 0.0f64;
    for n in 3..=6 {
        let b = FockBasis::excitation(&lat, n, Some([0, 0, 0])).unwrap();
        let gen = build_generator(&b, &eta).unwrap();
        let np: Vec<f64> = b.states().iter().map(|s| n_plus(&b, s) as f64).collect();
        for draw in 0..100 {
            let xi: Vec<f64> = if draw % 4 == 0 {
                let mut x = vec![0.0; b.dim()];
                x[rng.gen_range(0..b.dim())] = 1.0;
                x
            } else {
                (0..b.dim()).map(|_| rng.gen::<f64>() - 0.5).collect()
            };
            let y = expmv(&gen, &xi, 1.0).unwrap();
            for (n1, n2) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
                let w = |v: &[f64]| -> f64 {
                    v.iter()
                        .zip(&np)
                        .map(|(x, k)| (k + 1.0).powi(n1) * (n as f64 + 1.0 - k).powi(n2) * x * x)
                        .sum()
                };
                worst = worst.max(w(&y) / w(&xi));
            }
        }
    }
    assert!(worst < 2.0, "largest quotient {worst}");
}

#[test]
fn closed_form_count_matches_generated_count() {
    for n in 0..=7 {
        let mut count = 0u64;
        visit_terms(n, |_| count += 1).unwrap();
        assert_eq!(count, count_terms(n));
        assert_eq!(count, (1..=n as u64).product::<u64>() << n);
    }
}

#[test]
fn re_expansion_is_consistent() {
    for n in 0..=4 {
        let mut next: Vec<String> = expand_ad(n + 1).unwrap().iter().map(|t| t.to_string()).collect();
        let mut again: Vec<String> = expand_ad(n)
            .unwrap()
            .iter()
            .flat_map(|t| t.commute())
            .map(|t| t.to_string())
            .collect();
        next.sort();
        again.sort();
        assert_eq!(next, again);
    }
}

#[test]
fn pipeline_is_deterministic_across_runs() {
    let cfg = PipelineConfig {
        n_values: vec![2, 3],
        ..Default::default()
    };
    let a = serde_json::to_string(&condensation_pipeline(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&condensation_pipeline(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

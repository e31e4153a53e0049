//! Truncated momentum lattice.
//!
//! Momenta live on `2π·ℤ³`; we keep the sharp cube `‖n‖_∞ ≤ pmax` of integer
//! labels and compute physical momenta on demand. Modes are ordered
//! lexicographically on `(nx, ny, nz)`, which makes the position of a mode a
//! closed-form function of its label.

use std::f64::consts::PI;

/// Integer momentum label; the physical momentum is `2π·n`.
pub type Mode = [i32; 3];

/// `(2π)²`, the smallest nonzero kinetic energy on the lattice.
pub const FOUR_PI_SQ: f64 = 4.0 * PI * PI;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentumLattice {
    pmax: u32,
    side: usize,
    modes: Vec<Mode>,
    zero_index: usize,
}

impl MomentumLattice {
    pub fn new(pmax: u32) -> Self {
        let p = pmax as i32;
        let side = 2 * pmax as usize + 1;
        let mut modes = Vec::with_capacity(side * side * side);
        for nx in -p..=p {
            for ny in -p..=p {
                for nz in -p..=p {
                    modes.push([nx, ny, nz]);
                }
            }
        }
        let zero_index = modes.len() / 2;
        debug_assert_eq!(modes[zero_index], [0, 0, 0]);
        Self {
            pmax,
            side,
            modes,
            zero_index,
        }
    }

    pub fn pmax(&self) -> u32 {
        self.pmax
    }

    /// Number of modes including the zero mode.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    pub fn mode_count_plus(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_at(&self, i: usize) -> Mode {
        self.modes[i]
    }

    pub fn index_of(&self, n: Mode) -> Option<usize> {
        let p = self.pmax as i32;
        if n.iter().any(|c| c.abs() > p) {
            return None;
        }
        let s = self.side;
        let shift = |c: i32| (c + p) as usize;
        Some((shift(n[0]) * s + shift(n[1])) * s + shift(n[2]))
    }

    /// Index of `-n` for the mode stored at `i`.
    pub fn neg_index(&self, i: usize) -> usize {
        // Lexicographic order on a symmetric cube is reversed by inversion.
        self.modes.len() - 1 - i
    }

    /// Index of `n_i + sign·n_j`, if it stays in the cube.
    pub fn combine(&self, i: usize, j: usize, sign: i32) -> Option<usize> {
        let a = self.modes[i];
        let b = self.modes[j];
        self.index_of([a[0] + sign * b[0], a[1] + sign * b[1], a[2] + sign * b[2]])
    }

    /// Indices of every nonzero mode, in lattice order.
    pub fn nonzero_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let z = self.zero_index;
        (0..self.modes.len()).filter(move |&i| i != z)
    }

    /// `p² = 4π²‖n‖²`.
    pub fn momentum_sq(&self, i: usize) -> f64 {
        FOUR_PI_SQ * norm_sq(self.modes[i]) as f64
    }

    /// `|p| = 2π‖n‖`.
    pub fn momentum_abs(&self, i: usize) -> f64 {
        2.0 * PI * (norm_sq(self.modes[i]) as f64).sqrt()
    }

    /// Whether the mode sits on a face of the cube.
    pub fn on_boundary(&self, i: usize) -> bool {
        let p = self.pmax as i32;
        self.modes[i].iter().any(|c| c.abs() == p)
    }
}

pub fn norm_sq(n: Mode) -> i64 {
    n.iter().map(|&c| (c as i64) * (c as i64)).sum()
}

pub fn add_modes(a: Mode, b: Mode) -> Mode {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub_modes(a: Mode, b: Mode) -> Mode {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn neg_mode(a: Mode) -> Mode {
    [-a[0], -a[1], -a[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_counts() {
        assert_eq!(MomentumLattice::new(0).mode_count_plus(), 0);
        assert_eq!(MomentumLattice::new(1).mode_count_plus(), 26);
        assert_eq!(MomentumLattice::new(2).mode_count_plus(), 124);
    }

    #[test]
    fn index_lookups() {
        let lat = MomentumLattice::new(1);
        assert_eq!(lat.index_of([0, 0, 0]), Some(lat.zero_index()));
        assert_eq!(lat.index_of([2, 0, 0]), None);
        let i = lat.index_of([1, -1, 0]).unwrap();
        assert_eq!(lat.mode_at(i), [1, -1, 0]);
    }

    #[test]
    fn inversion_and_round_trip() {
        for pmax in 0..4 {
            let lat = MomentumLattice::new(pmax);
            for i in 0..lat.len() {
                let n = lat.mode_at(i);
                assert_eq!(lat.index_of(n), Some(i));
                let j = lat.index_of(neg_mode(n)).expect("closed under inversion");
                assert_eq!(j, lat.neg_index(i));
            }
        }
    }

    #[test]
    fn deterministic_ordering() {
        assert_eq!(MomentumLattice::new(2), MomentumLattice::new(2));
        let lat = MomentumLattice::new(1);
        assert!(lat.modes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn combine_respects_cube() {
        let lat = MomentumLattice::new(1);
        let a = lat.index_of([1, 0, 0]).unwrap();
        assert_eq!(lat.combine(a, a, 1), None);
        assert_eq!(lat.combine(a, a, -1), Some(lat.zero_index()));
    }
}

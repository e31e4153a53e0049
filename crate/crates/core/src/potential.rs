//! Radial, non-negative, compactly supported pair potentials and their
//! Fourier transforms `V̂(q) = ∫ V(x) e^{−iq·x} dx = 4π∫ r² V(r) sin(qr)/(qr) dr`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `amplitude` on `r ≤ radius`.
    Ball,
    /// `amplitude·exp(−4r²/radius²)` on `r ≤ radius`.
    GaussianTruncated,
    /// Piecewise-linear interpolation of `table`, zero beyond `radius`.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub radius: f64,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

/// Panels per unit radius for radial quadrature of non-analytic kinds.
const QUAD_PANELS: usize = 4000;

impl PotentialSpec {
    pub fn ball(radius: f64, amplitude: f64) -> Self {
        Self {
            kind: PotentialKind::Ball,
            radius,
            amplitude,
            table: None,
        }
    }

    pub fn gaussian_truncated(radius: f64, amplitude: f64) -> Self {
        Self {
            kind: PotentialKind::GaussianTruncated,
            radius,
            amplitude,
            table: None,
        }
    }

    /// The table must start at `r = 0`, be increasing in `r`, and be
    /// non-negative; `radius` is taken from its last node.
    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        let radius = table.last().map(|e| e.0).unwrap_or(0.0);
        let spec = Self {
            kind: PotentialKind::Tabulated,
            radius,
            amplitude: table.iter().map(|e| e.1).fold(0.0, f64::max),
            table: Some(table),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config("potential radius must be positive".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config("potential amplitude must be non-negative".into()));
        }
        if self.kind == PotentialKind::Tabulated {
            let t = self
                .table
                .as_ref()
                .ok_or_else(|| Error::Config("tabulated potential needs a table".into()))?;
            if t.len() < 2 || t[0].0 != 0.0 {
                return Err(Error::Config("table must start at r = 0 with at least two nodes".into()));
            }
            if t.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::Config("table radii must be strictly increasing".into()));
            }
            if t.iter().any(|e| !(e.1 >= 0.0 && e.1.is_finite())) {
                return Err(Error::Config("tabulated potential must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// `V(r)`, with the support closed at `radius`.
    pub fn value(&self, r: f64) -> f64 {
        if r > self.radius || r < 0.0 {
            return 0.0;
        }
        match self.kind {
            PotentialKind::Ball => self.amplitude,
            PotentialKind::GaussianTruncated => {
                let x = r / self.radius;
                self.amplitude * (-4.0 * x * x).exp()
            }
            PotentialKind::Tabulated => {
                let t = self.table.as_deref().unwrap_or(&[]);
                let k = t.partition_point(|e| e.0 <= r);
                if k == 0 {
                    return t.first().map(|e| e.1).unwrap_or(0.0);
                }
                if k == t.len() {
                    return t[k - 1].1;
                }
                let (r0, v0) = t[k - 1];
                let (r1, v1) = t[k];
                v0 + (v1 - v0) * (r - r0) / (r1 - r0)
            }
        }
    }

    /// `∫ V = V̂(0)`.
    pub fn integral(&self) -> f64 {
        self.fourier(0.0)
    }

    /// `V̂(q)` for `q = |q|`.
    pub fn fourier(&self, q: f64) -> f64 {
        let q = q.abs();
        match self.kind {
            PotentialKind::Ball => self.amplitude * ball_fourier(self.radius, q),
            _ => {
                let panels = (QUAD_PANELS as f64 * self.radius).ceil().max(200.0) as usize;
                let nodes = self.quadrature_breakpoints();
                let mut total = 0.0;
                for w in nodes.windows(2) {
                    let m = ((panels as f64 * (w[1] - w[0]) / self.radius).ceil() as usize).max(2);
                    total += simpson(w[0], w[1], m, |r| r * r * self.value_inside(r) * sinc(q * r));
                }
                4.0 * PI * total
            }
        }
    }

    // Breakpoints where the integrand may have kinks.
    fn quadrature_breakpoints(&self) -> Vec<f64> {
        match (&self.kind, &self.table) {
            (PotentialKind::Tabulated, Some(t)) => t.iter().map(|e| e.0).collect(),
            _ => vec![0.0, self.radius],
        }
    }

    // Value with the support treated as closed from the inside; used by
    // integrators that place a node at `radius`.
    pub(crate) fn value_inside(&self, r: f64) -> f64 {
        self.value(r.min(self.radius))
    }
}

/// `sin(x)/x` with its removable singularity.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Fourier transform of the indicator of a ball: `4π(sin s − s cos s)/q³`
/// with `s = qR`.
pub fn ball_fourier(radius: f64, q: f64) -> f64 {
    let s = q.abs() * radius;
    let r3 = radius.powi(3);
    if s < 0.1 {
        let s2 = s * s;
        4.0 * PI * r3 * (1.0 / 3.0 - s2 / 30.0 + s2 * s2 / 840.0 - s2 * s2 * s2 / 45360.0)
    } else {
        4.0 * PI * r3 * (s.sin() - s * s.cos()) / (s * s * s)
    }
}

/// Composite Simpson rule with `m` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, m: usize, f: F) -> f64 {
    let m = m + m % 2;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_integral() {
        let v = PotentialSpec::ball(1.0, 1.0);
        assert!((v.integral() - 4.0 * PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn ball_series_matches_closed_form_near_switch() {
        let a = ball_fourier(1.0, 0.1 - 1e-13);
        let b = ball_fourier(1.0, 0.1 + 1e-13);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tabulated_ball_matches_analytic_transform() {
        let t: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 / 100.0, 1.0)).collect();
        let v = PotentialSpec::tabulated(t).unwrap();
        for q in [0.0, 0.5, 3.0, 10.0] {
            let exact = ball_fourier(1.0, q);
            assert!((v.fourier(q) - exact).abs() < 1e-9 * exact.abs().max(1.0), "q={q}");
        }
    }

    #[test]
    fn negative_table_is_rejected() {
        assert!(PotentialSpec::tabulated(vec![(0.0, 1.0), (1.0, -0.5)]).is_err());
    }

    #[test]
    fn gaussian_transform_is_even_and_bounded_by_integral() {
        let v = PotentialSpec::gaussian_truncated(1.0, 2.0);
        let i = v.integral();
        for q in [0.3, 1.0, 7.0] {
            assert!(v.fourier(q).abs() <= i + 1e-12);
            assert_eq!(v.fourier(q), v.fourier(-q));
        }
    }
}

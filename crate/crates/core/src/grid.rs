//! Uniform spatial grid, quadrature and finite differences.
//!
//! Points sit at cell midpoints of `[min, max]` on each axis, and the field
//! vanishes one spacing beyond the last point (hard walls). An axis with a
//! single point is collapsed: it carries no derivative and no quadrature
//! weight, and its degree of freedom is assumed frozen in the transverse
//! ground state.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex field sampled on a [`Grid`].
pub type Field = Vec<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl Axis {
    pub fn new(count: usize, min: f64, max: f64) -> Self {
        Self { count, min, max }
    }

    /// A single point at the origin.
    pub fn collapsed() -> Self {
        Self { count: 1, min: 0.0, max: 0.0 }
    }

    pub fn is_active(&self) -> bool {
        self.count > 1
    }

    pub fn spacing(&self) -> f64 {
        if self.is_active() {
            (self.max - self.min) / self.count as f64
        } else {
            0.0
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if self.is_active() {
            self.min + (i as f64 + 0.5) * self.spacing()
        } else {
            0.5 * (self.min + self.max)
        }
    }
}

/// Cartesian grid with axes ordered `x, y, z`; `z` varies fastest in storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: [Axis; 3],
}

/// Finite-difference rule for first derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// `(f(r + h) - f(r)) / h`; its quadratic form equals the 3-point Laplacian.
    #[default]
    Forward,
    /// `(f(r + h) - f(r - h)) / 2h`.
    Centered,
}

impl Grid {
    pub fn new(axes: [Axis; 3]) -> Result<Self> {
        for (name, a) in ["x", "y", "z"].iter().zip(axes.iter()) {
            if a.count == 0 {
                return Err(Error::InvalidParameter(format!("axis {name} has no points")));
            }
            if a.is_active() && !(a.max > a.min) {
                return Err(Error::InvalidParameter(format!(
                    "axis {name} needs max > min, got [{}, {}]",
                    a.min, a.max
                )));
            }
        }
        Ok(Self { axes })
    }

    /// Grid along `z` only, spanning `[-half_width, half_width]`.
    pub fn line(count: usize, half_width: f64) -> Result<Self> {
        Self::new([Axis::collapsed(), Axis::collapsed(), Axis::new(count, -half_width, half_width)])
    }

    pub fn axes(&self) -> &[Axis; 3] {
        &self.axes
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.axes[0].count, self.axes[1].count, self.axes[2].count]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; 3] {
        let s = self.shape();
        [s[1] * s[2], s[2], 1]
    }

    pub fn active_axes(&self) -> Vec<usize> {
        (0..3).filter(|&a| self.axes[a].is_active()).collect()
    }

    pub fn collapsed_axes(&self) -> usize {
        3 - self.active_axes().len()
    }

    /// The single active axis, if the grid is one-dimensional.
    pub fn line_axis(&self) -> Option<usize> {
        match self.active_axes().as_slice() {
            [a] => Some(*a),
            _ => None,
        }
    }

    /// Quadrature weight of one grid point.
    pub fn dv(&self) -> f64 {
        self.axes.iter().filter(|a| a.is_active()).map(|a| a.spacing()).product()
    }

    pub fn volume(&self) -> f64 {
        self.dv() * self.len() as f64
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let s = self.shape();
        [idx / (s[1] * s[2]), (idx / s[2]) % s[1], idx % s[2]]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        [self.axes[0].coord(i), self.axes[1].coord(j), self.axes[2].coord(k)]
    }

    /// Coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.axes[axis].count).map(|i| self.axes[axis].coord(i)).collect()
    }

    pub fn sample<F: Fn([f64; 3]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.coords(i))).collect()
    }

    pub fn sample_complex<F: Fn([f64; 3]) -> C64>(&self, f: F) -> Field {
        (0..self.len()).map(|i| f(self.coords(i))).collect()
    }

    pub fn check(&self, field_len: usize) -> Result<()> {
        if field_len != self.len() {
            return Err(Error::Shape(format!(
                "field has {field_len} points, grid has {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// `∫ a* b`.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>() * self.dv()
    }

    pub fn norm_sq(&self, a: &[C64]) -> f64 {
        a.iter().map(|x| x.norm_sqr()).sum::<f64>() * self.dv()
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        self.norm_sq(a).sqrt()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.dv()
    }

    pub fn integrate_complex(&self, f: &[C64]) -> C64 {
        f.iter().sum::<C64>() * self.dv()
    }

    /// Rescales `a` to unit norm; returns the norm it had.
    pub fn normalize(&self, a: &mut [C64]) -> f64 {
        let n = self.norm(a);
        if n > 0.0 {
            let s = 1.0 / n;
            a.iter_mut().for_each(|x| *x *= s);
        }
        n
    }

    /// 3-point Laplacian with zero boundary values beyond the grid.
    pub fn laplacian(&self, f: &[C64]) -> Field {
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        self.add_laplacian(f, 1.0, &mut out);
        out
    }

    /// `out += scale * laplacian(f)`.
    pub fn add_laplacian(&self, f: &[C64], scale: f64, out: &mut [C64]) {
        let shape = self.shape();
        let strides = self.strides();
        for axis in self.active_axes() {
            let h = self.axes[axis].spacing();
            let c = scale / (h * h);
            let stride = strides[axis];
            let count = shape[axis];
            for (idx, o) in out.iter_mut().enumerate() {
                let pos = (idx / stride) % count;
                let mut acc = -2.0 * f[idx];
                if pos > 0 {
                    acc += f[idx - stride];
                }
                if pos + 1 < count {
                    acc += f[idx + stride];
                }
                *o += acc * c;
            }
        }
    }

    /// `(-1/2 ∇² + V) f`.
    pub fn apply_hamiltonian(&self, f: &[C64], potential: &[f64]) -> Field {
        let mut out: Field = f.iter().zip(potential).map(|(x, v)| x * v).collect();
        self.add_laplacian(f, -0.5, &mut out);
        out
    }

    /// First derivative along `axis` with zero values beyond the walls.
    pub fn derivative(&self, f: &[C64], axis: usize, scheme: DerivativeScheme) -> Field {
        let count = self.shape()[axis];
        let stride = self.strides()[axis];
        let h = self.axes[axis].spacing();
        let zero = C64::new(0.0, 0.0);
        (0..f.len())
            .map(|idx| {
                let pos = (idx / stride) % count;
                let next = if pos + 1 < count { f[idx + stride] } else { zero };
                match scheme {
                    DerivativeScheme::Forward => (next - f[idx]) / h,
                    DerivativeScheme::Centered => {
                        let prev = if pos > 0 { f[idx - stride] } else { zero };
                        (next - prev) / (2.0 * h)
                    }
                }
            })
            .collect()
    }

    /// Diagonal and off-diagonal of the 1D operator `-1/2 d²/dz² + V`.
    pub fn line_hamiltonian(&self, potential: &[f64]) -> Option<(Vec<f64>, f64)> {
        let axis = self.line_axis()?;
        let h = self.axes[axis].spacing();
        let kin = 1.0 / (h * h);
        Some((potential.iter().map(|v| v + kin).collect(), -0.5 * kin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_volume() {
        let g = Grid::line(400, 10.0).unwrap();
        assert!((g.volume() - 20.0).abs() < 1e-12);
        let g3 = Grid::new([Axis::new(10, -1.0, 1.0), Axis::new(5, 0.0, 1.0), Axis::new(8, -2.0, 2.0)]).unwrap();
        assert!((g3.volume() - 2.0 * 1.0 * 4.0).abs() < 1e-12);
        assert!((g3.integrate(&vec![1.0; g3.len()]) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_normalization() {
        // width 1 with spacing 0.25: four points per width
        let g = Grid::line(160, 20.0).unwrap();
        let f = g.sample_complex(|r| C64::new(PI.powf(-0.25) * (-r[2] * r[2] / 2.0).exp(), 0.0));
        assert!((g.norm_sq(&f) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn forward_difference_form_matches_laplacian() {
        let g = Grid::line(200, 8.0).unwrap();
        let f = g.sample_complex(|r| C64::new((-r[2] * r[2]).exp(), 0.3 * r[2] * (-r[2] * r[2]).exp()));
        let d = g.derivative(&f, 2, DerivativeScheme::Forward);
        let grad_form: f64 = g.norm_sq(&d);
        let lap = g.laplacian(&f);
        let lap_form = -g.inner(&f, &lap).re;
        assert!((grad_form - lap_form).abs() < 1e-12 * lap_form);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Grid::line(10, 1.0).unwrap();
        assert!(matches!(g.check(11), Err(Error::Shape(_))));
    }
}

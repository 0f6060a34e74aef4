//! Density kernels of the mode pair and the amplitude-equation matrices.
//!
//! For modes `φ_1, φ_2` with time derivatives `∂_t φ_i`:
//!
//! ```text
//! W_ij   = (1/2) Σ_μ ∂_μφ_i* ∂_μφ_j + φ_i* V φ_j
//! V_ijmn = (g/2) φ_i* φ_j* φ_m φ_n
//! T_ij   = (1/2i) (∂_tφ_i* φ_j - φ_i* ∂_tφ_j)
//! ```
//!
//! and, with the coefficients of [`crate::spin_basis`],
//!
//! ```text
//! H_kl = Σ_ij X^{ij}_{kl} ∫W_ij + Σ_ijmn Y^{ijmn}_{kl} ∫V_ijmn
//! U_kl = Σ_ij X^{ij}_{kl} ∫T_ij
//! ```

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DerivativeScheme, Field, Grid};
use crate::spin_basis::{x_elem, y_elem, FragBasis};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// The two mode functions, their time derivatives and the time they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    pub phi: [Field; 2],
    pub dt: [Field; 2],
    pub time: f64,
}

impl ModePair {
    /// Modes with vanishing time derivatives.
    pub fn stationary(phi: [Field; 2], time: f64) -> Self {
        let zeros = vec![ZERO; phi[0].len()];
        Self { dt: [zeros.clone(), zeros], phi, time }
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        for f in self.phi.iter().chain(self.dt.iter()) {
            grid.check(f.len())?;
        }
        Ok(())
    }

    /// Largest `|<φ_i|φ_j> - δ_ij|`.
    pub fn orthonormality_error(&self, grid: &Grid) -> f64 {
        crate::linalg::orthonormality_error(grid, &self.phi)
    }

    /// Spatial derivatives `∂_μ φ_i`, indexed `[mode][active axis]`.
    pub fn spatial_derivatives(&self, grid: &Grid, scheme: DerivativeScheme) -> [Vec<Field>; 2] {
        let d = |f: &Field| grid.active_axes().into_iter().map(|a| grid.derivative(f, a, scheme)).collect();
        [d(&self.phi[0]), d(&self.phi[1])]
    }

    /// Multiplies mode 2 and its time derivative by `e^{iα}`.
    pub fn rephase_mode2(&mut self, alpha: f64) {
        let p = C64::from_polar(1.0, alpha);
        self.phi[1].iter_mut().for_each(|x| *x *= p);
        self.dt[1].iter_mut().for_each(|x| *x *= p);
    }
}

/// Flat index of `(i, j, m, n)` into a 16-entry quartic table.
#[inline]
pub fn quartic_index(i: usize, j: usize, m: usize, n: usize) -> usize {
    ((i * 2 + j) * 2 + m) * 2 + n
}

fn find_non_finite(grid: &Grid, label: &str, fields: &[&Field]) -> Result<()> {
    for (which, f) in fields.iter().enumerate() {
        if let Some(idx) = f.iter().position(|x| !x.re.is_finite() || !x.im.is_finite()) {
            let r = grid.coords(idx);
            return Err(Error::Numerical(format!(
                "non-finite {label} in field {which} at grid point {idx} (x, y, z) = ({:.4}, {:.4}, {:.4})",
                r[0], r[1], r[2]
            )));
        }
    }
    Ok(())
}

/// Pointwise `W_ij`, indexed `[i][j]`.
pub fn kernel_w(grid: &Grid, modes: &ModePair, potential: &[f64], scheme: DerivativeScheme) -> Result<[[Vec<C64>; 2]; 2]> {
    modes.check(grid)?;
    grid.check(potential.len())?;
    let der = modes.spatial_derivatives(grid, scheme);
    let point = |i: usize, j: usize| -> Vec<C64> {
        (0..grid.len())
            .map(|p| {
                let kin: C64 = der[i].iter().zip(&der[j]).map(|(a, b)| a[p].conj() * b[p]).sum();
                0.5 * kin + modes.phi[i][p].conj() * potential[p] * modes.phi[j][p]
            })
            .collect()
    };
    Ok([[point(0, 0), point(0, 1)], [point(1, 0), point(1, 1)]])
}

/// Pointwise `V_ijmn`, in [`quartic_index`] order.
pub fn kernel_v(grid: &Grid, modes: &ModePair, g: f64) -> Result<Vec<Vec<C64>>> {
    modes.check(grid)?;
    let phi = &modes.phi;
    let mut out = Vec::with_capacity(16);
    for i in 0..2 {
        for j in 0..2 {
            for m in 0..2 {
                for n in 0..2 {
                    out.push(
                        (0..grid.len())
                            .map(|p| 0.5 * g * phi[i][p].conj() * phi[j][p].conj() * phi[m][p] * phi[n][p])
                            .collect(),
                    );
                }
            }
        }
    }
    Ok(out)
}

/// Pointwise `T_ij`, indexed `[i][j]`.
pub fn kernel_t(grid: &Grid, modes: &ModePair) -> Result<[[Vec<C64>; 2]; 2]> {
    modes.check(grid)?;
    let (phi, dt) = (&modes.phi, &modes.dt);
    let half_over_i = C64::new(0.0, -0.5);
    let point = |i: usize, j: usize| -> Vec<C64> {
        (0..grid.len())
            .map(|p| half_over_i * (dt[i][p].conj() * phi[j][p] - phi[i][p].conj() * dt[j][p]))
            .collect()
    };
    Ok([[point(0, 0), point(0, 1)], [point(1, 0), point(1, 1)]])
}

/// Space integrals of the three kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelIntegrals {
    pub w: [[C64; 2]; 2],
    /// `∫V_ijmn` in [`quartic_index`] order.
    pub v: [C64; 16],
    pub t: [[C64; 2]; 2],
}

impl KernelIntegrals {
    pub fn compute(grid: &Grid, modes: &ModePair, potential: &[f64], g: f64, scheme: DerivativeScheme) -> Result<Self> {
        modes.check(grid)?;
        grid.check(potential.len())?;
        let all: Vec<&Field> = modes.phi.iter().chain(modes.dt.iter()).collect();
        find_non_finite(grid, "mode value", &all)?;
        if let Some(idx) = potential.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite potential at grid point {idx}")));
        }

        let kw = kernel_w(grid, modes, potential, scheme)?;
        let kt = kernel_t(grid, modes)?;
        let mut w = [[ZERO; 2]; 2];
        let mut t = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                w[i][j] = grid.integrate_complex(&kw[i][j]);
                t[i][j] = grid.integrate_complex(&kt[i][j]);
            }
        }

        // One pass over the grid for all sixteen quartic integrals.
        let phi = &modes.phi;
        let mut v = [ZERO; 16];
        for p in 0..grid.len() {
            let f = [phi[0][p], phi[1][p]];
            let fc = [f[0].conj(), f[1].conj()];
            for i in 0..2 {
                for j in 0..2 {
                    let left = fc[i] * fc[j];
                    for m in 0..2 {
                        for n in 0..2 {
                            v[quartic_index(i, j, m, n)] += left * f[m] * f[n];
                        }
                    }
                }
            }
        }
        let scale = 0.5 * g * grid.dv();
        v.iter_mut().for_each(|x| *x *= scale);
        Ok(Self { w, v, t })
    }
}

/// Square matrix with nonzero entries only within `bandwidth` of the
/// diagonal. `bands[d + bandwidth][k] = M_{k, k + d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedMatrix {
    dim: usize,
    bandwidth: usize,
    bands: Vec<Vec<C64>>,
}

impl BandedMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        Self { dim, bandwidth, bands: vec![vec![ZERO; dim]; 2 * bandwidth + 1] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `M_{k,l}` by 0-based row and column.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        let d = col as i64 - row as i64;
        if d.unsigned_abs() as usize > self.bandwidth {
            return ZERO;
        }
        self.bands[(d + self.bandwidth as i64) as usize][row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        let d = col as i64 - row as i64;
        assert!(d.unsigned_abs() as usize <= self.bandwidth, "entry ({row}, {col}) outside the band");
        self.bands[(d + self.bandwidth as i64) as usize][row] = value;
    }

    /// `M b`.
    pub fn apply(&self, b: &[C64]) -> Vec<C64> {
        let w = self.bandwidth as i64;
        (0..self.dim)
            .map(|row| {
                let mut acc = ZERO;
                for d in -w..=w {
                    let col = row as i64 + d;
                    if col >= 0 && (col as usize) < self.dim {
                        acc += self.bands[(d + w) as usize][row] * b[col as usize];
                    }
                }
                acc
            })
            .collect()
    }

    /// `b† M b`.
    pub fn expectation(&self, b: &[C64]) -> C64 {
        b.iter().zip(self.apply(b)).map(|(x, y)| x.conj() * y).sum()
    }

    /// `self + s · other`; the result has the wider bandwidth.
    pub fn add_scaled(&self, other: &BandedMatrix, s: C64) -> BandedMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = BandedMatrix::zeros(self.dim, self.bandwidth.max(other.bandwidth));
        for row in 0..self.dim {
            let lo = row.saturating_sub(out.bandwidth);
            let hi = (row + out.bandwidth).min(self.dim - 1);
            for col in lo..=hi {
                out.set(row, col, self.get(row, col) + s * other.get(row, col));
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |r, c| self.get(r, c))
    }

    pub fn max_abs(&self) -> f64 {
        self.bands.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// `max |M_kl - M_lk*|`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in 0..self.dim {
            for col in row..(row + self.bandwidth + 1).min(self.dim) {
                worst = worst.max((self.get(row, col) - self.get(col, row).conj()).norm());
            }
        }
        worst
    }
}

/// Hamiltonian and rotation matrices of the amplitude equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPair {
    /// `H`, bandwidth 2.
    pub h: BandedMatrix,
    /// `U`, bandwidth 1.
    pub u: BandedMatrix,
}

impl MatrixPair {
    /// `H - U`, the generator in `i ḃ = (H - U) b`.
    pub fn generator(&self) -> BandedMatrix {
        self.h.add_scaled(&self.u, C64::new(-1.0, 0.0))
    }
}

/// Builds `H` and `U` from precomputed kernel integrals.
pub fn matrices_from_integrals(basis: &FragBasis, ints: &KernelIntegrals) -> MatrixPair {
    let dim = basis.dim();
    let mut h = BandedMatrix::zeros(dim, 2);
    let mut u = BandedMatrix::zeros(dim, 1);
    for k in basis.k_range() {
        for l in (k - 2).max(basis.k_min())..=(k + 2).min(basis.k_max()) {
            let (r, c) = (basis.index(k), basis.index(l));
            let mut hkl = ZERO;
            let mut ukl = ZERO;
            for i in 0..2 {
                for j in 0..2 {
                    let x = x_elem(basis, i, j, k, l);
                    if x != 0.0 {
                        hkl += x * ints.w[i][j];
                        ukl += x * ints.t[i][j];
                    }
                    for m in 0..2 {
                        for n in 0..2 {
                            let y = y_elem(basis, [i, j, m, n], k, l);
                            if y != 0.0 {
                                hkl += y * ints.v[quartic_index(i, j, m, n)];
                            }
                        }
                    }
                }
            }
            h.set(r, c, hkl);
            if (k - l).abs() <= 1 {
                u.set(r, c, ukl);
            }
        }
    }
    MatrixPair { h, u }
}

/// `H` and `U` for the given modes, potential and coupling.
pub fn assemble_matrices(
    grid: &Grid,
    basis: &FragBasis,
    modes: &ModePair,
    potential: &[f64],
    g: f64,
    scheme: DerivativeScheme,
) -> Result<MatrixPair> {
    let ints = KernelIntegrals::compute(grid, modes, potential, g, scheme)?;
    Ok(matrices_from_integrals(basis, &ints))
}

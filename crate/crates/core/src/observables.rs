//! Measurements on a state: mode-2 occupation, first-order correlation,
//! density and the two-mode validity bounds.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::amplitudes::AmplitudeVector;
use crate::densities::ModePair;
use crate::error::Result;
use crate::grid::Grid;
use crate::units::{BOLTZMANN, HBAR};

/// `N_2 = N/2 + Σ_k k |b_k|²`.
pub fn n2(b: &AmplitudeVector) -> f64 {
    let basis = b.basis();
    let mean_k: f64 = basis.k_range().map(|k| k as f64 * b.at(k).norm_sqr()).sum();
    basis.j() as f64 + mean_k
}

/// One-body density matrix in the mode basis: `x11 = <c_1†c_1>`,
/// `x22 = <c_2†c_2>`, `x12 = <c_1†c_2>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCoefficients {
    pub x11: f64,
    pub x22: f64,
    pub x12: C64,
}

pub fn band_coefficients(b: &AmplitudeVector) -> BandCoefficients {
    let basis = b.basis();
    let (mut x11, mut x22, mut x12) = (0.0, 0.0, C64::new(0.0, 0.0));
    for k in basis.k_range() {
        let p = b.at(k).norm_sqr();
        x11 += basis.n1(k) as f64 * p;
        x22 += basis.n2(k) as f64 * p;
        // c_1† c_2 |k> = sqrt(n2 (n1 + 1)) |k - 1>
        if k > basis.k_min() {
            let amp = ((basis.n2(k) * (basis.n1(k) + 1)) as f64).sqrt();
            x12 += b.at(k - 1).conj() * b.at(k) * amp;
        }
    }
    BandCoefficients { x11, x22, x12 }
}

/// `G¹(r, r') = <ψ†(r) ψ(r')>` sampled on every pair of grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationField {
    pub t: f64,
    pub points: usize,
    /// Row-major in `(r, r')`.
    pub values: Vec<C64>,
    pub warnings: Vec<String>,
}

impl CorrelationField {
    pub fn get(&self, r: usize, rp: usize) -> C64 {
        self.values[r * self.points + rp]
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.points {
            for rp in r..self.points {
                worst = worst.max((self.get(r, rp) - self.get(rp, r).conj()).norm());
            }
        }
        worst
    }

    /// `∫ G¹(r, r) dr`.
    pub fn trace(&self, grid: &Grid) -> f64 {
        (0..self.points).map(|r| self.get(r, r).re).sum::<f64>() * grid.dv()
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_row_slice(self.points, self.points, &self.values)
    }
}

/// Orthonormality slack tolerated before [`g1`] attaches a warning.
const ORTHONORMALITY_WARNING: f64 = 1e-8;

pub fn g1(grid: &Grid, b: &AmplitudeVector, modes: &ModePair) -> Result<CorrelationField> {
    modes.check(grid)?;
    let c = band_coefficients(b);
    let x = [[C64::new(c.x11, 0.0), c.x12], [c.x12.conj(), C64::new(c.x22, 0.0)]];
    let p = grid.len();
    let phi = &modes.phi;
    let mut values = vec![C64::new(0.0, 0.0); p * p];
    for r in 0..p {
        let left = [phi[0][r].conj(), phi[1][r].conj()];
        for rp in 0..p {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    acc += x[i][j] * left[i] * phi[j][rp];
                }
            }
            values[r * p + rp] = acc;
        }
    }
    let mut warnings = Vec::new();
    let err = modes.orthonormality_error(grid);
    if err > ORTHONORMALITY_WARNING {
        warnings.push(format!("modes deviate from orthonormality by {err:.3e}; G1 trace is not N"));
    }
    Ok(CorrelationField { t: b.t, points: p, values, warnings })
}

/// `n(r) = G¹(r, r)`.
pub fn density(grid: &Grid, b: &AmplitudeVector, modes: &ModePair) -> Result<Vec<f64>> {
    modes.check(grid)?;
    let c = band_coefficients(b);
    let phi = &modes.phi;
    Ok((0..grid.len())
        .map(|r| {
            c.x11 * phi[0][r].norm_sqr() + c.x22 * phi[1][r].norm_sqr() + 2.0 * (c.x12 * phi[0][r].conj() * phi[1][r]).re
        })
        .collect())
}

/// Margins of the two-mode conditions `N ≪ a₀/a_s` and
/// `T ≪ 0.94 N^{1/3} ħω₀/k_B`. Margins are ratios; small is good.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub n: usize,
    /// `None` when the scattering length vanishes.
    pub n_bound: Option<f64>,
    pub n_margin: Option<f64>,
    pub temperature: f64,
    pub t_bound: f64,
    pub t_margin: f64,
}

/// Lengths in metres, temperature in kelvin, `omega0` in rad/s.
pub fn validity_check(n: usize, temperature: f64, a0: f64, a_s: f64, omega0: f64) -> ValidityReport {
    let n_bound = if a_s > 0.0 { Some(a0 / a_s) } else { None };
    let t_bound = 0.94 * (n as f64).cbrt() * HBAR * omega0 / BOLTZMANN;
    ValidityReport {
        n,
        n_bound,
        n_margin: n_bound.map(|b| n as f64 / b),
        temperature,
        t_bound,
        t_margin: if t_bound > 0.0 { temperature / t_bound } else { f64::INFINITY },
    }
}

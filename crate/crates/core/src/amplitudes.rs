//! Amplitudes `b_k` of the fragmented states and their time stepping under
//! `i ḃ = (H - U) b`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::densities::{BandedMatrix, MatrixPair};
use crate::error::{Error, Result};
use crate::spin_basis::FragBasis;

/// State vector in the fragmentation basis. `b[basis.index(k)] = b_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeVector {
    basis: FragBasis,
    b: Vec<C64>,
    pub t: f64,
}

impl AmplitudeVector {
    pub fn from_vec(basis: FragBasis, b: Vec<C64>, t: f64) -> Result<Self> {
        if b.len() != basis.dim() {
            return Err(Error::Shape(format!(
                "{} amplitudes for a basis of dimension {}",
                b.len(),
                basis.dim()
            )));
        }
        Ok(Self { basis, b, t })
    }

    /// Rescales `b` to unit norm.
    pub fn normalized(basis: FragBasis, mut b: Vec<C64>, t: f64) -> Result<Self> {
        let norm = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 1e-150) || !norm.is_finite() {
            return Err(Error::Numerical(format!("amplitude norm {norm:e} cannot be renormalized")));
        }
        b.iter_mut().for_each(|x| *x /= norm);
        Self::from_vec(basis, b, t)
    }

    pub fn basis(&self) -> FragBasis {
        self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn b(&self) -> &[C64] {
        &self.b
    }

    /// `b_k`.
    pub fn at(&self, k: i64) -> C64 {
        self.b[self.basis.index(k)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.b.iter().map(|x| x.norm_sqr()).sum()
    }

    /// `Σ_k a_k* b_k`.
    pub fn overlap(&self, other: &AmplitudeVector) -> C64 {
        self.b.iter().zip(&other.b).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|b_k|²` in ascending `k`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.b.iter().map(|x| x.norm_sqr()).collect()
    }

    /// Compensates `φ_2 → e^{iα} φ_2`: `b_k → e^{-iα(N/2 + k)} b_k`, which
    /// leaves the many-body state unchanged.
    pub fn rephase_mode2(&mut self, alpha: f64) {
        for k in self.basis.k_range() {
            let p = C64::from_polar(1.0, -alpha * self.basis.n2(k) as f64);
            self.b[self.basis.index(k)] *= p;
        }
    }
}

/// All bosons in mode 1: `b_k = δ_{k,-N/2}`.
pub fn initial_state(n: usize) -> Result<AmplitudeVector> {
    let basis = FragBasis::new(n)?;
    let mut b = vec![C64::new(0.0, 0.0); basis.dim()];
    b[0] = C64::new(1.0, 0.0);
    AmplitudeVector::from_vec(basis, b, 0.0)
}

/// All bosons in one mixed mode:
/// `b_k = sqrt(C(N, N/2+k)) cos^{N/2-k}θ sin^{N/2+k}θ e^{-ikχ}`.
pub fn binomial_state(n: usize, theta: f64, chi: f64) -> Result<AmplitudeVector> {
    let basis = FragBasis::new(n)?;
    let (c, s) = (theta.cos(), theta.sin());
    let mut ln_choose = 0.0;
    let mut b = Vec::with_capacity(basis.dim());
    for (m, k) in basis.k_range().enumerate() {
        if m > 0 {
            ln_choose += ((n - m + 1) as f64).ln() - (m as f64).ln();
        }
        let modulus = (0.5 * ln_choose).exp() * c.powi(basis.n1(k) as i32) * s.powi(basis.n2(k) as i32);
        b.push(C64::from_polar(modulus, -(k as f64) * chi));
    }
    AmplitudeVector::normalized(basis, b, 0.0)
}

/// `P(n) = |b_{n - N/2}|²`, the probability of `n` bosons in mode 2.
pub fn transfer_probabilities(b: &AmplitudeVector) -> Vec<f64> {
    b.probabilities()
}

/// `-i A b`.
fn derivative(gen: &BandedMatrix, b: &[C64]) -> Vec<C64> {
    let minus_i = C64::new(0.0, -1.0);
    gen.apply(b).into_iter().map(|x| minus_i * x).collect()
}

/// Unnormalized forward-Euler update `b + Δt (-i)(H - U) b`.
pub fn euler_update(b: &[C64], gen: &BandedMatrix, dt: f64) -> Vec<C64> {
    b.iter().zip(derivative(gen, b)).map(|(x, d)| x + dt * d).collect()
}

/// Unnormalized classical Runge-Kutta update; `gens` are the generators at
/// `t`, `t + Δt/2` and `t + Δt`.
pub fn rk4_update(b: &[C64], gens: [&BandedMatrix; 3], dt: f64) -> Vec<C64> {
    let axpy = |x: &[C64], s: f64, d: &[C64]| -> Vec<C64> { x.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let k1 = derivative(gens[0], b);
    let k2 = derivative(gens[1], &axpy(b, 0.5 * dt, &k1));
    let k3 = derivative(gens[1], &axpy(b, 0.5 * dt, &k2));
    let k4 = derivative(gens[2], &axpy(b, dt, &k3));
    (0..b.len())
        .map(|i| b[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// One Euler step followed by renormalization.
pub fn step_euler(b: &AmplitudeVector, m: &MatrixPair, dt: f64) -> Result<AmplitudeVector> {
    check_step(dt)?;
    let raw = euler_update(b.b(), &m.generator(), dt);
    AmplitudeVector::normalized(b.basis(), raw, b.t + dt)
}

/// Euler step with the energy reference moved to `λ = Re <b|H - U|b>`.
///
/// The shift multiplies the exact state by the global phase `e^{iλΔt}`,
/// which no observable sees, but removes the large common frequency from
/// the truncation error of the Euler update.
pub fn step_euler_referenced(b: &AmplitudeVector, m: &MatrixPair, dt: f64) -> Result<AmplitudeVector> {
    check_step(dt)?;
    let raw = euler_update(b.b(), &referenced_generator(b, m), dt);
    AmplitudeVector::normalized(b.basis(), raw, b.t + dt)
}

/// `H - U - λ` with `λ = Re <b|H - U|b> / <b|b>`.
pub fn referenced_generator(b: &AmplitudeVector, m: &MatrixPair) -> BandedMatrix {
    let mut gen = m.generator();
    let lambda = gen.expectation(b.b()).re / b.norm_sq();
    for r in 0..gen.dim() {
        let d = gen.get(r, r);
        gen.set(r, r, d - lambda);
    }
    gen
}

/// One RK4 step. `sample(s)` returns the matrices at `b.t + s`.
pub fn step_rk4<F>(b: &AmplitudeVector, mut sample: F, dt: f64) -> Result<AmplitudeVector>
where
    F: FnMut(f64) -> Result<MatrixPair>,
{
    check_step(dt)?;
    let g0 = sample(0.0)?.generator();
    let g1 = sample(0.5 * dt)?.generator();
    let g2 = sample(dt)?.generator();
    let raw = rk4_update(b.b(), [&g0, &g1, &g2], dt);
    AmplitudeVector::normalized(b.basis(), raw, b.t + dt)
}

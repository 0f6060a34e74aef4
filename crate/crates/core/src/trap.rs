//! Time-dependent trapping potential, single-particle eigenmodes and the
//! Bose-Hubbard regime estimates.
//!
//! All quantities are in oscillator units of the axial trap. The potential is
//!
//! ```text
//! V(r, t) = w_perp²(x² + y²)/2 + z²/2 + V_B(t) exp(-z²/2σ²) + ε(t) z
//! ```
//!
//! so the trap is a single harmonic well while the barrier and tilt are off,
//! and an asymmetric double well while they are on.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::amplitudes::{binomial_state, AmplitudeVector};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg;
use crate::spin_basis::FragBasis;

/// Time envelope `s(t/T) ∈ [0, 1]` of a ramped trap parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RampShape {
    /// `s = 1` throughout.
    Constant,
    /// `s = sin²(π t/T)`: single well at both ends, full split at `T/2`.
    SineSquared,
    /// Linear rise over `rise_fraction` of the run, hold, linear fall.
    Trapezoid { rise_fraction: f64 },
}

impl RampShape {
    pub fn envelope(&self, fraction: f64) -> f64 {
        let u = fraction.clamp(0.0, 1.0);
        match *self {
            RampShape::Constant => 1.0,
            RampShape::SineSquared => (PI * u).sin().powi(2),
            RampShape::Trapezoid { rise_fraction } => {
                let r = rise_fraction.clamp(1e-12, 0.5);
                if u < r {
                    u / r
                } else if u > 1.0 - r {
                    (1.0 - u) / r
                } else {
                    1.0
                }
            }
        }
    }
}

/// A parameter following `peak · s(t/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub peak: f64,
    pub shape: RampShape,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self { peak: value, shape: RampShape::Constant }
    }

    pub fn ramped(peak: f64, shape: RampShape) -> Self {
        Self { peak, shape }
    }

    pub fn at(&self, t: f64, duration: f64) -> f64 {
        let fraction = if duration > 0.0 { t / duration } else { 0.0 };
        self.peak * self.shape.envelope(fraction)
    }
}

/// Trap parameters in oscillator units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    /// Transverse to axial frequency ratio `w_perp / w0`.
    pub omega_perp: f64,
    /// Barrier width `σ`.
    pub barrier_width: f64,
    /// Barrier height `V_B(t)`.
    pub barrier: Profile,
    /// Half-separation `d(t)` of the two wells, used by the Hubbard estimates.
    pub half_separation: Profile,
    /// Linear tilt `ε(t)` (energy per length).
    pub tilt: Profile,
    /// Ramp duration `T`.
    pub duration: f64,
}

impl TrapSpec {
    /// Static single harmonic well.
    pub fn harmonic(omega_perp: f64) -> Self {
        Self {
            omega_perp,
            barrier_width: 1.0,
            barrier: Profile::constant(0.0),
            half_separation: Profile::constant(0.0),
            tilt: Profile::constant(0.0),
            duration: 0.0,
        }
    }

    pub fn barrier_at(&self, t: f64) -> f64 {
        self.barrier.at(t, self.duration)
    }

    pub fn half_separation_at(&self, t: f64) -> f64 {
        self.half_separation.at(t, self.duration)
    }

    pub fn tilt_at(&self, t: f64) -> f64 {
        self.tilt.at(t, self.duration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_perp > 0.0) {
            return Err(Error::InvalidParameter("transverse frequency must be positive".into()));
        }
        if !(self.barrier_width > 0.0) {
            return Err(Error::InvalidParameter("barrier width must be positive".into()));
        }
        if self.duration < 0.0 {
            return Err(Error::InvalidParameter("ramp duration must be non-negative".into()));
        }
        Ok(())
    }
}

/// `V(r, t)`.
pub fn potential(spec: &TrapSpec, r: [f64; 3], t: f64) -> f64 {
    let [x, y, z] = r;
    let wp2 = spec.omega_perp * spec.omega_perp;
    let s2 = spec.barrier_width * spec.barrier_width;
    0.5 * wp2 * (x * x + y * y)
        + 0.5 * z * z
        + spec.barrier_at(t) * (-z * z / (2.0 * s2)).exp()
        + spec.tilt_at(t) * z
}

/// `V(·, t)` sampled on the grid. On collapsed axes the coordinate is 0, so
/// the transverse zero-point energy is left out of a reduced grid.
pub fn potential_on(spec: &TrapSpec, grid: &Grid, t: f64) -> Vec<f64> {
    grid.sample(|r| potential(spec, r, t))
}

/// Harmonic-oscillator ground states centred at `z = ∓d` (left, right).
/// Collapsed axes carry no factor; on active transverse axes the states are
/// oscillator ground states of width 1.
pub fn ho_localized_modes(grid: &Grid, d: f64) -> Result<(Field, Field)> {
    if d < 0.0 {
        return Err(Error::InvalidParameter("half-separation must be non-negative".into()));
    }
    let dims = grid.active_axes().len() as f64;
    let norm = PI.powf(-0.25 * dims);
    let make = |centre: f64| {
        grid.sample_complex(|r| {
            let [x, y, z] = r;
            C64::new(norm * (-(x * x + y * y + (z - centre).powi(2)) / 2.0).exp(), 0.0)
        })
    };
    Ok((make(-d), make(d)))
}

/// Bose-Hubbard parameters of a symmetric double well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubbardParams {
    /// Tunnelling energy from the non-orthogonal localized Gaussians.
    pub j: f64,
    /// On-site interaction energy.
    pub u: f64,
    /// Tunnelling energy after symmetric orthogonalization of the Gaussians;
    /// `None` when the Gaussians coincide.
    pub j_orthogonalized: Option<f64>,
    /// Closed-form estimate `(V_B/ħω0)(a0/a_s) exp(-d²/a0²)`.
    pub ratio_closed_form: f64,
}

impl HubbardParams {
    pub fn ratio(&self) -> f64 {
        self.j / self.u
    }

    pub fn ratio_orthogonalized(&self) -> Option<f64> {
        self.j_orthogonalized.map(|j| j / self.u)
    }
}

/// Which limit of the Bose-Hubbard model a tunnelling ratio sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `J ≫ U`: one delocalized condensate.
    Josephson,
    /// `U ≫ J`: fragmented, fixed number per well.
    Fock,
    /// Neither ratio dominates by a factor of ten.
    Crossover,
}

impl Regime {
    pub fn classify(j_over_u: f64) -> Self {
        if j_over_u >= 10.0 {
            Regime::Josephson
        } else if j_over_u <= 0.1 {
            Regime::Fock
        } else {
            Regime::Crossover
        }
    }
}

/// Double well used for the tunnelling estimate: two harmonic wells of unit
/// frequency centred at `±d`, capped at the barrier height.
pub fn estimate_potential(z: f64, d: f64, barrier: f64) -> f64 {
    (0.5 * (z.abs() - d).powi(2)).min(barrier)
}

/// `J = -2 ∫ φ_L (-∇²/2 + V) φ_R` and `U = g ∫ |φ_L|⁴` with harmonic-oscillator
/// localized states on the grid.
///
/// `g` is the coupling appropriate to the grid (reduced when axes are
/// collapsed); `scattering_length` is `a_s/a0` for the closed form.
pub fn hubbard_estimate(
    grid: &Grid,
    d: f64,
    barrier: f64,
    g: f64,
    scattering_length: f64,
) -> Result<HubbardParams> {
    let axis = grid.line_axis().filter(|&a| a == 2).ok_or_else(|| {
        Error::InvalidParameter("the Hubbard estimate needs a grid along z only".into())
    })?;
    let ax = grid.axes()[axis];
    let h = ax.spacing();
    if h > 0.25 {
        return Err(Error::Resolution(format!(
            "spacing {h} exceeds a quarter of the oscillator length"
        )));
    }
    if ax.min > -d - 8.0 || ax.max < d + 8.0 {
        return Err(Error::Resolution(format!(
            "grid [{}, {}] does not contain both wells at ±{d} with 8 oscillator lengths of margin",
            ax.min, ax.max
        )));
    }
    let (left, right) = ho_localized_modes(grid, d)?;
    let v = grid.sample(|r| estimate_potential(r[2], d, barrier));
    let hop = |a: &Field, b: &Field| grid.inner(a, &grid.apply_hamiltonian(b, &v)).re;
    let j = -2.0 * hop(&left, &right);
    let u = g * left.iter().map(|x| x.norm_sqr().powi(2)).sum::<f64>() * grid.dv();

    let j_orthogonalized = if grid.inner(&left, &right).re < 1.0 - 1e-10 {
        let mut pair = vec![left, right];
        linalg::lowdin(grid, &mut pair)?;
        Some(-2.0 * hop(&pair[0], &pair[1]))
    } else {
        None
    };

    let ratio_closed_form = if scattering_length > 0.0 {
        barrier / scattering_length * (-d * d).exp()
    } else {
        f64::INFINITY
    };
    Ok(HubbardParams { j, u, j_orthogonalized, ratio_closed_form })
}

/// Exact ground state of
/// `H = -J/2 (a_R† a_L + a_L† a_R) + U/2 (n_L(n_L-1) + n_R(n_R-1))`
/// on the fragmentation basis with mode 1 = left and mode 2 = right.
pub fn hubbard_ground_state(j: f64, u: f64, n: usize) -> Result<(f64, AmplitudeVector)> {
    let basis = FragBasis::new(n)?;
    let dim = basis.dim();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for k in basis.k_range() {
        let a = basis.index(k);
        let (nl, nr) = (basis.n1(k) as f64, basis.n2(k) as f64);
        h[(a, a)] = 0.5 * u * (nl * (nl - 1.0) + nr * (nr - 1.0));
        if k < basis.k_max() {
            // <k+1| a_R† a_L |k> moves one boson from left to right.
            let amp = -0.5 * j * (nl * (nr + 1.0)).sqrt();
            h[(a + 1, a)] = amp;
            h[(a, a + 1)] = amp;
        }
    }
    let eig = SymmetricEigen::new(h);
    let (imin, energy) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &e)| (i, e))
        .ok_or_else(|| Error::Numerical("empty Hubbard spectrum".into()))?;
    let col = eig.eigenvectors.column(imin);
    // Fix the sign so the largest component is positive.
    let big = col.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    let sign = if big < 0.0 { -1.0 } else { 1.0 };
    let b: Vec<C64> = col.iter().map(|&x| C64::new(sign * x, 0.0)).collect();
    Ok((energy, AmplitudeVector::from_vec(basis, b, 0.0)?))
}

/// Josephson-limit ground state: all bosons in `(φ_L + φ_R)/√2`.
pub fn josephson_state(n: usize) -> Result<AmplitudeVector> {
    binomial_state(n, PI / 4.0, 0.0)
}

/// `-JN/2 + UN(N-1)/4`.
pub fn josephson_energy(j: f64, u: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * j * n + 0.25 * u * n * (n - 1.0)
}

/// `UN(N-2)/4`.
pub fn fock_energy(u: f64, n: usize) -> f64 {
    let n = n as f64;
    0.25 * u * n * (n - 2.0)
}

/// Lowest single-particle eigenpairs of `-∇²/2 + V(·, t)`.
#[derive(Debug, Clone)]
pub struct Eigenmodes {
    pub energies: Vec<f64>,
    /// Unit-normalized on the grid, largest-magnitude sample positive.
    pub modes: Vec<Field>,
}

pub fn single_particle_modes(spec: &TrapSpec, grid: &Grid, t: f64, count: usize) -> Result<Eigenmodes> {
    let v = potential_on(spec, grid, t);
    lowest_modes(grid, &v, count)
}

/// Lowest eigenpairs of `-∇²/2 + V` for an arbitrary sampled potential.
pub fn lowest_modes(grid: &Grid, v: &[f64], count: usize) -> Result<Eigenmodes> {
    if count < 1 {
        return Err(Error::InvalidParameter("need at least one mode".into()));
    }
    grid.check(v.len())?;
    let (energies, mut modes) = match grid.line_hamiltonian(v) {
        Some((diag, off)) => {
            let (vals, vecs) = linalg::tridiagonal_lowest(&diag, off, count)?;
            let modes = vecs
                .into_iter()
                .map(|u| u.into_iter().map(|x| C64::new(x, 0.0)).collect::<Field>())
                .collect();
            (vals, modes)
        }
        None => block_eigensolve(grid, v, count)?,
    };
    for m in modes.iter_mut() {
        grid.normalize(m);
        let big = m.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C64::new(1.0, 0.0));
        let phase = big.conj() / big.norm();
        m.iter_mut().for_each(|x| *x *= phase);
    }
    Ok(Eigenmodes { energies, modes })
}

/// Block Davidson iteration with a shifted-Laplacian preconditioner, for
/// grids with more than one active axis.
fn block_eigensolve(grid: &Grid, v: &[f64], count: usize) -> Result<(Vec<f64>, Vec<Field>)> {
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - vmin.min(0.0);
    let precondition = |r: &Field| {
        linalg::conjugate_gradient(
            |x| {
                let mut out = grid.apply_hamiltonian(x, v);
                out.iter_mut().zip(x).for_each(|(o, xi)| *o += (shift - vmin.max(0.0)) * xi);
                out
            },
            r,
            1e-3,
            40,
        )
    };
    // Start from smooth polynomial-times-Gaussian fields.
    let mut block: Vec<Field> = (0..count)
        .map(|m| {
            grid.sample_complex(|r| {
                let poly = match m % 4 {
                    0 => 1.0,
                    1 => r[2],
                    2 => r[0] + 0.5 * r[1],
                    _ => r[2] * r[2] - 0.5,
                } + 0.01 * (m as f64);
                C64::new(poly * (-(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) / 2.0).exp(), 0.0)
            })
        })
        .collect();
    linalg::lowdin(grid, &mut block)?;
    let mut energies = vec![0.0; count];
    for _ in 0..2000 {
        let hx: Vec<Field> = block.iter().map(|x| grid.apply_hamiltonian(x, v)).collect();
        let mut worst: f64 = 0.0;
        let mut residuals = Vec::with_capacity(count);
        for m in 0..count {
            let e = grid.inner(&block[m], &hx[m]).re;
            energies[m] = e;
            let r: Field = hx[m].iter().zip(&block[m]).map(|(a, b)| a - e * b).collect();
            worst = worst.max(grid.norm(&r));
            residuals.push(r);
        }
        if worst < 1e-9 {
            return Ok((energies, block));
        }
        let mut basis = block.clone();
        for r in &residuals {
            basis.push(precondition(r));
        }
        orthonormalize_gram_schmidt(grid, &mut basis);
        let hb: Vec<Field> = basis.iter().map(|x| grid.apply_hamiltonian(x, v)).collect();
        let dim = basis.len();
        let proj = DMatrix::<C64>::from_fn(dim, dim, |i, j| grid.inner(&basis[i], &hb[j]));
        let (vals, vecs) = linalg::hermitian_eigen(&proj);
        block = (0..count)
            .map(|m| {
                let mut f = vec![C64::new(0.0, 0.0); grid.len()];
                for (i, b) in basis.iter().enumerate() {
                    let c = vecs[(i, m)];
                    f.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
                }
                f
            })
            .collect();
        energies.copy_from_slice(&vals[..count]);
    }
    Err(Error::Numerical("block eigensolver did not converge".into()))
}

fn orthonormalize_gram_schmidt(grid: &Grid, fields: &mut Vec<Field>) {
    let mut kept: Vec<Field> = Vec::with_capacity(fields.len());
    for f in fields.drain(..) {
        let mut g = f;
        for _ in 0..2 {
            for k in &kept {
                let c = grid.inner(k, &g);
                g.iter_mut().zip(k).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = grid.norm(&g);
        if n > 1e-10 {
            g.iter_mut().for_each(|x| *x /= n);
            kept.push(g);
        }
    }
    *fields = kept;
}

//! Coupled mode equations
//!
//! ```text
//! N Σ_j μ_ij φ_j = Σ_j X_ij (-∇²/2 + V) φ_j + g Σ_jmn Y_ijmn φ_j* φ_m φ_n
//! ```
//!
//! for an orthonormal pair, with `X`, `Y` the one- and two-body expectation
//! values of the amplitude vector. The right-hand side is `∂E/∂φ_i*` of
//!
//! ```text
//! E = Σ_ij X_ij <φ_i|h|φ_j> + (g/2) Σ_ijmn Y_ijmn ∫ φ_i* φ_j* φ_m φ_n,
//! ```
//!
//! and the solver minimizes `E` on the set of orthonormal pairs by a
//! Riemannian Newton iteration with truncated preconditioned conjugate
//! gradients. Work is done in the natural-orbital frame where `X` is
//! diagonal, so a weakly occupied mode keeps its own scale instead of being
//! swamped by the occupied one.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::amplitudes::AmplitudeVector;
use crate::densities::quartic_index;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg;
use crate::spin_basis::{x_elem, y_elem};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Relative size below which a phase-sensitive coupling is treated as absent.
const PHASE_COUPLING_FLOOR: f64 = 1e-13;

/// `X_ij = <c_i† c_j>` and `Y_ijmn = <c_i† c_j† c_m c_n>` (0-based modes,
/// `Y` in [`quartic_index`] order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingWeights {
    pub x: [[C64; 2]; 2],
    pub y: [C64; 16],
}

impl CouplingWeights {
    /// `Σ_i X_ii`, the boson number.
    pub fn trace(&self) -> f64 {
        self.x[0][0].re + self.x[1][1].re
    }

    /// Largest violation of `X_ij = X_ji*` and `Y_ijmn = Y_nmji*`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = (self.x[0][1] - self.x[1][0].conj()).norm();
        worst = worst.max(self.x[0][0].im.abs()).max(self.x[1][1].im.abs());
        for i in 0..2 {
            for j in 0..2 {
                for m in 0..2 {
                    for n in 0..2 {
                        let d = self.y[quartic_index(i, j, m, n)] - self.y[quartic_index(n, m, j, i)].conj();
                        worst = worst.max(d.norm());
                    }
                }
            }
        }
        worst
    }

    /// Natural occupations (descending) and the unitary whose columns are
    /// the corresponding eigenvectors of `X`.
    pub fn natural_occupations(&self) -> ([f64; 2], [[C64; 2]; 2]) {
        let m = nalgebra::DMatrix::from_fn(2, 2, |r, c| self.x[r][c]);
        let (vals, vecs) = linalg::hermitian_eigen(&m);
        let mut v = [[ZERO; 2]; 2];
        for a in 0..2 {
            let col = 1 - a;
            // Largest component real and positive.
            let big = if vecs[(0, col)].norm() >= vecs[(1, col)].norm() { vecs[(0, col)] } else { vecs[(1, col)] };
            let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { C64::new(1.0, 0.0) };
            for i in 0..2 {
                v[i][a] = vecs[(i, col)] * phase;
            }
        }
        ([vals[1], vals[0]], v)
    }

    /// True when a constant phase on mode 2 leaves the energy unchanged.
    pub fn phase_decoupled(&self, g: f64) -> bool {
        let n = self.trace().max(1.0);
        if self.x[0][1].norm() > PHASE_COUPLING_FLOOR * n {
            return false;
        }
        g == 0.0 || phase_sensitive_max(&self.y, 2) <= PHASE_COUPLING_FLOOR * n * n
    }
}

/// `X`, `Y` for the amplitude vector `b`.
pub fn coupling_weights(b: &AmplitudeVector) -> CouplingWeights {
    let basis = b.basis();
    let mut x = [[ZERO; 2]; 2];
    let mut y = [ZERO; 16];
    for k in basis.k_range() {
        let bk = b.at(k).conj();
        if bk == ZERO {
            continue;
        }
        for l in (k - 2).max(basis.k_min())..=(k + 2).min(basis.k_max()) {
            let w = bk * b.at(l);
            for i in 0..2 {
                for j in 0..2 {
                    x[i][j] += x_elem(&basis, i, j, k, l) * w;
                    for m in 0..2 {
                        for n in 0..2 {
                            y[quartic_index(i, j, m, n)] += y_elem(&basis, [i, j, m, n], k, l) * w;
                        }
                    }
                }
            }
        }
    }
    CouplingWeights { x, y }
}

/// Largest `|y_abcd|` whose index set changes the mode-2 count, for a table
/// over `k` modes.
fn phase_sensitive_max(y: &[C64], k: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                for d in 0..k {
                    if a + b != c + d {
                        worst = worst.max(y[((a * k + b) * k + c) * k + d].norm());
                    }
                }
            }
        }
    }
    worst
}

/// Lagrange multipliers `μ_ij`, Hermitian, in units of energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemicalPotentialMatrix {
    pub mu: [[C64; 2]; 2],
}

impl ChemicalPotentialMatrix {
    pub fn hermiticity_error(&self) -> f64 {
        (self.mu[0][1] - self.mu[1][0].conj())
            .norm()
            .max(self.mu[0][0].im.abs())
            .max(self.mu[1][1].im.abs())
    }
}

/// `Σ_i μ_ii`.
pub fn chemical_potential(mu: &ChemicalPotentialMatrix) -> f64 {
    mu.mu[0][0].re + mu.mu[1][1].re
}

/// The static ingredients of one mode solve.
#[derive(Debug, Clone, Copy)]
pub struct ModeProblem<'a> {
    pub grid: &'a Grid,
    pub potential: &'a [f64],
    pub g: f64,
    /// Time stamp used in error reports.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop when every natural-frame residual divided by its occupation is
    /// below this.
    pub tol: f64,
    pub max_iter: usize,
    /// A natural occupation below `unoccupied_threshold · N` marks the mode
    /// as unoccupied.
    pub unoccupied_threshold: f64,
    /// Mode 2 is also chosen by orthogonality while `g · max|Y'| · max|χ₁|²`
    /// over the entries that change its count exceeds `pair_limit · n₂`.
    /// Past that point the equation for a weakly occupied mode is ruled by
    /// pair terms and its energy minimum collapses to the grid scale.
    pub pair_limit: f64,
    pub cg_max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60, unoccupied_threshold: 1e-8, pair_limit: 0.5, cg_max_iter: 400 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    pub phi: [Field; 2],
    pub mu: ChemicalPotentialMatrix,
    pub energy: f64,
    /// `‖Σ_j X_ij h φ_j + g Σ Y φ*φφ - N Σ_j μ_ij φ_j‖` per mode.
    pub residual_norms: [f64; 2],
    /// Newton iterations over all sub-solves.
    pub iterations: usize,
    /// Scaled residual after each Newton iteration.
    pub history: Vec<f64>,
    /// The less occupied natural mode was unoccupied or pair-dominated and
    /// was chosen by orthogonality.
    pub unoccupied: bool,
}

/// `E` for the given pair.
pub fn energy(grid: &Grid, weights: &CouplingWeights, phi: &[Field; 2], potential: &[f64], g: f64) -> f64 {
    let hphi = [grid.apply_hamiltonian(&phi[0], potential), grid.apply_hamiltonian(&phi[1], potential)];
    let mut e = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            e += weights.x[i][j] * grid.inner(&phi[i], &hphi[j]);
        }
    }
    if g != 0.0 {
        let mut q = ZERO;
        for p in 0..grid.len() {
            let f = [phi[0][p], phi[1][p]];
            for i in 0..2 {
                for j in 0..2 {
                    let left = f[i].conj() * f[j].conj();
                    for m in 0..2 {
                        for n in 0..2 {
                            q += weights.y[quartic_index(i, j, m, n)] * left * f[m] * f[n];
                        }
                    }
                }
            }
        }
        e += 0.5 * g * q * grid.dv();
    }
    e.re
}

/// Right-hand sides `Σ_j X_ij h φ_j + g Σ_jmn Y_ijmn φ_j* φ_m φ_n`.
pub fn mode_gradient(grid: &Grid, weights: &CouplingWeights, phi: &[Field; 2], potential: &[f64], g: f64) -> [Field; 2] {
    let f = Functional {
        grid,
        v: potential,
        g,
        k: 2,
        w: vec![],
        x: Some(weights.x),
        y: weights.y.to_vec(),
        fixed: vec![],
        shift: 0.0,
        line: None,
        coupled: true,
    };
    let ev = f.evaluate(phi);
    [ev.grad[0].clone(), ev.grad[1].clone()]
}

/// Multipliers `μ_ij = <φ_j|G_i> / N`, Hermitized, and the residuals
/// `G_i - N Σ_j μ_ij φ_j`.
pub fn multipliers(grid: &Grid, phi: &[Field; 2], grad: &[Field; 2], n: f64) -> (ChemicalPotentialMatrix, [f64; 2]) {
    let mut m = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = grid.inner(&phi[j], &grad[i]);
        }
    }
    let mut mu = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            mu[i][j] = 0.5 * (m[i][j] + m[j][i].conj());
        }
    }
    let mut res = [0.0; 2];
    for i in 0..2 {
        let r: Field = (0..grid.len()).map(|p| grad[i][p] - mu[i][0] * phi[0][p] - mu[i][1] * phi[1][p]).collect();
        res[i] = grid.norm(&r);
    }
    let scale = if n > 0.0 { 1.0 / n } else { 0.0 };
    for row in mu.iter_mut() {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    (ChemicalPotentialMatrix { mu }, res)
}

/// Solves the mode equations starting from `seed`, which should be an
/// orthonormal pair close to the solution (the previous time step's modes,
/// or single-particle eigenmodes at the start).
///
/// Phases follow the seed: when the energy depends on the relative phase
/// of the modes only the common phase is free and it is chosen so that
/// `Σ_i <seed_i|φ_i>` is real and positive; otherwise each
/// `<seed_i|φ_i>` is made real and positive.
pub fn solve_modes(problem: &ModeProblem, weights: &CouplingWeights, seed: &[Field; 2], opts: &SolveOptions) -> Result<ModeSolution> {
    let grid = problem.grid;
    for f in seed {
        grid.check(f.len())?;
    }
    grid.check(problem.potential.len())?;
    let n_total = weights.trace();
    if !(n_total > 0.0) {
        return Err(Error::InvalidParameter("coupling weights carry no bosons".into()));
    }
    let (occ, v) = weights.natural_occupations();
    // χ_a = Σ_i φ_i conj(V_ia).
    let to_natural = |phi: &[Field; 2]| -> Vec<Field> {
        (0..2)
            .map(|a| (0..grid.len()).map(|p| phi[0][p] * v[0][a].conj() + phi[1][p] * v[1][a].conj()).collect())
            .collect()
    };
    let chi_seed = to_natural(seed);
    let y_nat = transform_quartic(&weights.y, &v);

    let vmin = problem.potential.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = (-vmin).max(0.0) + 1.0;
    let line = grid.line_hamiltonian(problem.potential);
    let base = |w: Vec<f64>, y: Vec<C64>, g: f64, fixed: Vec<Field>, k: usize| {
        let mut f = Functional {
            grid,
            v: problem.potential,
            g,
            k,
            w,
            x: None,
            y,
            fixed,
            shift,
            line: line.clone(),
            coupled: true,
        };
        f.coupled = k > 1 && g != 0.0 && {
            let scale = f.w.iter().cloned().fold(0.0, f64::max) + g * f.y.iter().map(|x| x.norm()).fold(0.0, f64::max);
            g * phase_sensitive_max(&f.y, k) > PHASE_COUPLING_FLOOR * scale
        };
        f
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    let peak = chi_seed[0].iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let pair_drive = problem.g * phase_sensitive_max(&y_nat, 2) * peak;
    let unoccupied = occ[1] < opts.unoccupied_threshold * n_total || pair_drive > opts.pair_limit * occ[1];
    let mut chi: Vec<Field>;
    if unoccupied {
        let f1 = base(vec![occ[0]], vec![y_nat[0]], problem.g, vec![], 1);
        let out1 = f1.minimize(vec![chi_seed[0].clone()], opts, problem.time, Merit::Energy)?;
        iterations += out1.iterations;
        history.extend(out1.history);
        let mut chi1 = out1.phi.into_iter().next().unwrap();
        align_phase(grid, &mut chi1, &chi_seed[0]);

        let f2 = base(vec![1.0], vec![ZERO], 0.0, vec![chi1.clone()], 1);
        let mut seed2 = chi_seed[1].clone();
        f2.project_fixed(&mut seed2);
        if grid.norm(&seed2) < 1e-6 {
            let em = crate::trap::lowest_modes(grid, problem.potential, 2)?;
            seed2 = em.modes[1].clone();
            f2.project_fixed(&mut seed2);
        }
        let out2 = f2.minimize(vec![seed2], opts, problem.time, Merit::Energy)?;
        iterations += out2.iterations;
        history.extend(out2.history);
        let mut chi2 = out2.phi.into_iter().next().unwrap();
        align_phase(grid, &mut chi2, &chi_seed[1]);
        chi = vec![chi1, chi2];
    } else {
        let f = base(occ.to_vec(), y_nat.to_vec(), problem.g, vec![], 2);
        // Residual descent can stall at a nonzero local minimum of |r| far
        // from any stationary point; the energy minimum always exists.
        let out = match f.minimize(chi_seed.clone(), opts, problem.time, Merit::Residual) {
            Err(Error::Convergence { residual, .. }) => {
                log::debug!("residual descent stalled at {residual:.3e}; descending the energy");
                f.minimize(chi_seed.clone(), opts, problem.time, Merit::Energy)?
            }
            other => other?,
        };
        iterations += out.iterations;
        history.extend(out.history);
        chi = out.phi;
        if f.coupled {
            align_common_phase(grid, &mut chi, &chi_seed);
        } else {
            for a in 0..2 {
                align_phase(grid, &mut chi[a], &chi_seed[a]);
            }
        }
    }

    // φ_i = Σ_a χ_a V_ia.
    let mut phi: [Field; 2] = [0, 1].map(|i| (0..grid.len()).map(|p| chi[0][p] * v[i][0] + chi[1][p] * v[i][1]).collect());
    if weights.phase_decoupled(problem.g) {
        for i in 0..2 {
            align_phase(grid, &mut phi[i], &seed[i]);
        }
    } else {
        let seed_vec = seed.to_vec();
        let mut pair = phi.to_vec();
        align_common_phase(grid, &mut pair, &seed_vec);
        phi = [pair[0].clone(), pair[1].clone()];
    }

    let grad = mode_gradient(grid, weights, &phi, problem.potential, problem.g);
    let (mu, residual_norms) = multipliers(grid, &phi, &grad, n_total);
    let e = energy(grid, weights, &phi, problem.potential, problem.g);
    Ok(ModeSolution { phi, mu, energy: e, residual_norms, iterations, history, unoccupied })
}

/// `y'_abcd = Σ y_ijmn conj(V_ia) conj(V_jb) V_mc V_nd`.
fn transform_quartic(y: &[C64; 16], v: &[[C64; 2]; 2]) -> [C64; 16] {
    let mut out = [ZERO; 16];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    let mut acc = ZERO;
                    for i in 0..2 {
                        for j in 0..2 {
                            for m in 0..2 {
                                for n in 0..2 {
                                    acc += y[quartic_index(i, j, m, n)] * v[i][a].conj() * v[j][b].conj() * v[m][c] * v[n][d];
                                }
                            }
                        }
                    }
                    out[quartic_index(a, b, c, d)] = acc;
                }
            }
        }
    }
    out
}

/// Rotates `f` by a constant phase so that `<reference|f>` is real and
/// non-negative.
pub fn align_phase(grid: &Grid, f: &mut Field, reference: &Field) {
    let o = grid.inner(reference, f);
    if o.norm() > 0.0 {
        let p = o.conj() / o.norm();
        f.iter_mut().for_each(|x| *x *= p);
    }
}

fn align_common_phase(grid: &Grid, fs: &mut [Field], reference: &[Field]) {
    let o: C64 = fs.iter().zip(reference).map(|(f, r)| grid.inner(r, f)).sum();
    if o.norm() > 0.0 {
        let p = o.conj() / o.norm();
        fs.iter_mut().flatten().for_each(|x| *x *= p);
    }
}

/// What a Newton step has to decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Merit {
    /// Descend to a minimum; for ground states from distant seeds.
    Energy,
    /// Reach the stationary point nearest the seed, minimum or not.
    Residual,
}

struct Evaluation {
    energy: f64,
    grad: Vec<Field>,
}

struct Minimized {
    phi: Vec<Field>,
    iterations: usize,
    history: Vec<f64>,
}

/// Energy of `k` free modes with diagonal one-body weights `w` (or a full
/// `x` when evaluating in the original frame), quartic table `y` over the
/// free modes, kept orthogonal to the `fixed` fields.
struct Functional<'a> {
    grid: &'a Grid,
    v: &'a [f64],
    g: f64,
    k: usize,
    w: Vec<f64>,
    x: Option<[[C64; 2]; 2]>,
    y: Vec<C64>,
    fixed: Vec<Field>,
    /// Preconditioner shift making `h + shift` positive definite.
    shift: f64,
    line: Option<(Vec<f64>, f64)>,
    /// The energy depends on the relative phase of the free modes.
    coupled: bool,
}

impl<'a> Functional<'a> {
    fn yv(&self, a: usize, b: usize, c: usize, d: usize) -> C64 {
        let k = self.k;
        self.y[((a * k + b) * k + c) * k + d]
    }

    fn evaluate(&self, phi: &[Field]) -> Evaluation {
        let grid = self.grid;
        let k = self.k;
        let hphi: Vec<Field> = phi.iter().map(|f| grid.apply_hamiltonian(f, self.v)).collect();
        let mut grad: Vec<Field> = match self.x {
            Some(x) => (0..k)
                .map(|a| (0..grid.len()).map(|p| (0..k).map(|b| x[a][b] * hphi[b][p]).sum()).collect())
                .collect(),
            None => (0..k).map(|a| hphi[a].iter().map(|h| self.w[a] * h).collect()).collect(),
        };
        let mut e = ZERO;
        for a in 0..k {
            e += grid.inner(&phi[a], &grad[a]);
        }
        if self.g != 0.0 {
            let mut q = ZERO;
            for p in 0..grid.len() {
                for a in 0..k {
                    let mut s = ZERO;
                    for b in 0..k {
                        let fb = phi[b][p].conj();
                        for c in 0..k {
                            let fbc = fb * phi[c][p];
                            for d in 0..k {
                                s += self.yv(a, b, c, d) * fbc * phi[d][p];
                            }
                        }
                    }
                    q += phi[a][p].conj() * s;
                    grad[a][p] += self.g * s;
                }
            }
            e += 0.5 * self.g * q * grid.dv();
        }
        Evaluation { energy: e.re, grad }
    }

    fn dot(&self, a: &[Field], b: &[Field]) -> f64 {
        a.iter().zip(b).map(|(x, y)| self.grid.inner(x, y).re).sum()
    }

    fn project_fixed(&self, f: &mut Field) {
        for fx in &self.fixed {
            let c = self.grid.inner(fx, f);
            f.iter_mut().zip(fx).for_each(|(x, y)| *x -= c * y);
        }
    }

    /// Orthogonal projection onto the tangent space at `phi`.
    fn project(&self, phi: &[Field], z: &mut [Field]) {
        let k = self.k;
        let mut a = vec![vec![ZERO; k]; k];
        for i in 0..k {
            for j in 0..k {
                // a[j][i] = <φ_j|z_i>
                a[j][i] = self.grid.inner(&phi[j], &z[i]);
            }
        }
        for i in 0..k {
            self.project_fixed(&mut z[i]);
            for j in 0..k {
                let s = 0.5 * (a[j][i] + a[i][j].conj());
                z[i].iter_mut().zip(&phi[j]).for_each(|(x, y)| *x -= s * y);
            }
        }
    }

    /// Hermitized multipliers `M_ab = (<φ_b|G_a> + <G_b|φ_a>)/2`.
    fn multipliers(&self, phi: &[Field], grad: &[Field]) -> Vec<Vec<C64>> {
        let k = self.k;
        let m: Vec<Vec<C64>> = (0..k).map(|a| (0..k).map(|b| self.grid.inner(&phi[b], &grad[a])).collect()).collect();
        (0..k).map(|a| (0..k).map(|b| 0.5 * (m[a][b] + m[b][a].conj())).collect()).collect()
    }

    fn residual(&self, phi: &[Field], grad: &[Field]) -> Vec<Field> {
        let mut r = grad.to_vec();
        self.project(phi, &mut r);
        r
    }

    /// Out-of-span residual of each mode divided by its weight, and the
    /// in-span (rotation) part divided by the largest weight, which sets its
    /// curvature.
    fn scaled_residual(&self, phi: &[Field], r: &[Field]) -> f64 {
        let k = self.k;
        let wmax = self.curvature_scale();
        let mut worst: f64 = 0.0;
        let mut rot = 0.0;
        for a in 0..k {
            let mut perp = r[a].clone();
            for b in 0..k {
                let c = self.grid.inner(&phi[b], &r[a]);
                rot += c.norm_sqr();
                perp.iter_mut().zip(&phi[b]).for_each(|(x, y)| *x -= c * y);
            }
            worst = worst.max(self.grid.norm(&perp) / self.w[a]);
        }
        worst.max(rot.sqrt() / wmax)
    }

    fn hessian(&self, phi: &[Field], mh: &[Vec<C64>], xi: &[Field]) -> Vec<Field> {
        let grid = self.grid;
        let k = self.k;
        let mut out: Vec<Field> = (0..k)
            .map(|a| {
                let hx = grid.apply_hamiltonian(&xi[a], self.v);
                hx.into_iter().map(|h| self.w[a] * h).collect()
            })
            .collect();
        if self.g != 0.0 {
            for p in 0..grid.len() {
                for a in 0..k {
                    let mut s = ZERO;
                    for b in 0..k {
                        for c in 0..k {
                            for d in 0..k {
                                let y = self.yv(a, b, c, d);
                                if y == ZERO {
                                    continue;
                                }
                                s += y
                                    * (xi[b][p].conj() * phi[c][p] * phi[d][p]
                                        + phi[b][p].conj() * xi[c][p] * phi[d][p]
                                        + phi[b][p].conj() * phi[c][p] * xi[d][p]);
                            }
                        }
                    }
                    out[a][p] += self.g * s;
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                let m = mh[a][b];
                out[a].iter_mut().zip(&xi[b]).for_each(|(o, x)| *o -= m * x);
            }
        }
        self.project(phi, &mut out);
        out
    }

    fn shifted_solve(&self, r: &Field) -> Field {
        match &self.line {
            Some((diag, off)) => linalg::solve_tridiagonal(diag, *off, self.shift, r),
            None => linalg::conjugate_gradient(
                |x| {
                    let mut out = self.grid.apply_hamiltonian(x, self.v);
                    out.iter_mut().zip(x).for_each(|(o, xi)| *o += self.shift * xi);
                    out
                },
                r,
                1e-3,
                60,
            ),
        }
    }

    fn precondition(&self, phi: &[Field], r: &[Field]) -> Vec<Field> {
        let k = self.k;
        let rot = self.w.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::with_capacity(k);
        for a in 0..k {
            let mut perp = r[a].clone();
            self.project_fixed(&mut perp);
            let coeffs: Vec<C64> = (0..k).map(|b| self.grid.inner(&phi[b], &perp)).collect();
            for b in 0..k {
                perp.iter_mut().zip(&phi[b]).for_each(|(x, y)| *x -= coeffs[b] * y);
            }
            let mut z: Field = self.shifted_solve(&perp).into_iter().map(|x| x / self.w[a]).collect();
            self.project_fixed(&mut z);
            for b in 0..k {
                let c = self.grid.inner(&phi[b], &z);
                z.iter_mut().zip(&phi[b]).for_each(|(x, y)| *x -= c * y);
            }
            for b in 0..k {
                let c = coeffs[b] / rot;
                z.iter_mut().zip(&phi[b]).for_each(|(x, y)| *x += c * y);
            }
            out.push(z);
        }
        out
    }

    /// Directions along which the energy is exactly flat: the common phase,
    /// or every mode's own phase when the modes are phase-decoupled.
    fn gauge_directions(&self, phi: &[Field]) -> Vec<Vec<Field>> {
        let i = C64::new(0.0, 1.0);
        let k = self.k;
        let zero = vec![ZERO; self.grid.len()];
        if self.coupled {
            vec![phi.iter().map(|f| f.iter().map(|x| i * x).collect()).collect()]
        } else {
            (0..k)
                .map(|a| (0..k).map(|b| if a == b { phi[b].iter().map(|x| i * x).collect() } else { zero.clone() }).collect())
                .collect()
        }
    }

    fn remove_gauge(&self, dirs: &[Vec<Field>], z: &mut [Field]) {
        for d in dirs {
            let dd = self.dot(d, d);
            if dd > 0.0 {
                let c = self.dot(d, z) / dd;
                for (zi, di) in z.iter_mut().zip(d) {
                    zi.iter_mut().zip(di).for_each(|(x, y)| *x -= c * y);
                }
            }
        }
    }

    /// Truncated preconditioned CG for `Hess ξ = -R`.
    fn newton_direction(&self, phi: &[Field], mh: &[Vec<C64>], r0: &[Field], forcing: f64, max_iter: usize) -> Vec<Field> {
        let (x, iters, reason) = self.newton_cg(phi, mh, r0, forcing, max_iter);
        log::trace!("cg: {iters} iterations, stop: {reason}");
        x
    }

    fn newton_cg(&self, phi: &[Field], mh: &[Vec<C64>], r0: &[Field], forcing: f64, max_iter: usize) -> (Vec<Field>, usize, &'static str) {
        let k = self.k;
        let gauge = self.gauge_directions(phi);
        let zero: Vec<Field> = (0..k).map(|_| vec![ZERO; self.grid.len()]).collect();
        let mut x = zero.clone();
        let mut r: Vec<Field> = r0.iter().map(|f| f.iter().map(|v| -v).collect()).collect();
        self.remove_gauge(&gauge, &mut r);
        let r0n = self.dot(&r, &r).sqrt();
        let mut z = self.precondition(phi, &r);
        self.project(phi, &mut z);
        self.remove_gauge(&gauge, &mut z);
        let mut p = z.clone();
        let mut rz = self.dot(&r, &z);
        // Rounding leaves a residual floor the iteration cannot cross; past
        // it the iterates drift, so the best one seen is returned.
        let mut best = (x.clone(), r0n);
        // Every iterate past the first is a descent direction; zero is not.
        let pick = |best: (Vec<Field>, f64), x: Vec<Field>| if best.1 < r0n { best.0 } else { x };
        let mut stalled = 0;
        for it in 0..max_iter {
            let hp = self.hessian(phi, mh, &p);
            let pp = self.dot(&p, &p);
            let curv = self.dot(&p, &hp);
            if !(curv > 1e-14 * pp * self.curvature_scale()) {
                if it == 0 {
                    return (p, 0, "negative curvature");
                }
                return (pick(best, x), it, "negative curvature");
            }
            let alpha = rz / curv;
            let r_old = r.clone();
            for a in 0..k {
                x[a].iter_mut().zip(&p[a]).for_each(|(xv, pv)| *xv += alpha * pv);
                r[a].iter_mut().zip(&hp[a]).for_each(|(rv, hv)| *rv -= alpha * hv);
            }
            let rn = self.dot(&r, &r).sqrt();
            if rn <= forcing * r0n {
                return (x, it + 1, "forcing");
            }
            if rn < 0.9 * best.1 {
                best = (x.clone(), rn);
                stalled = 0;
            } else {
                stalled += 1;
                if stalled == 5 {
                    return (pick(best, x), it + 1, "stalled");
                }
            }
            let mut z_new = self.precondition(phi, &r);
            self.project(phi, &mut z_new);
            self.remove_gauge(&gauge, &mut z_new);
            let diff: Vec<Field> = r.iter().zip(&r_old).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect()).collect();
            let beta = (self.dot(&z_new, &diff) / rz).max(0.0);
            rz = self.dot(&r, &z_new);
            for a in 0..k {
                p[a].iter_mut().zip(&z_new[a]).for_each(|(pv, zv)| *pv = zv + beta * *pv);
            }
            if !(rz > 0.0) {
                return (pick(best, x), it + 1, "breakdown");
            }
        }
        (pick(best, x), max_iter, "cap")
    }

    /// Preconditioned MINRES for the (possibly indefinite) system
    /// `Hess ξ = -R` on the gauge-free tangent space.
    fn minres(&self, phi: &[Field], mh: &[Vec<C64>], r0: &[Field], rtol: f64, max_iter: usize) -> Vec<Field> {
        let k = self.k;
        let gauge = self.gauge_directions(phi);
        let axpy = |y: &mut Vec<Field>, a: f64, x: &[Field]| {
            for (yi, xi) in y.iter_mut().zip(x) {
                yi.iter_mut().zip(xi).for_each(|(u, v)| *u += a * v);
            }
        };
        let prec = |r: &[Field]| {
            let mut z = self.precondition(phi, r);
            self.project(phi, &mut z);
            self.remove_gauge(&gauge, &mut z);
            z
        };
        let zero: Vec<Field> = (0..k).map(|_| vec![ZERO; self.grid.len()]).collect();
        let mut b: Vec<Field> = r0.iter().map(|f| f.iter().map(|v| -v).collect()).collect();
        self.remove_gauge(&gauge, &mut b);

        let mut x = zero.clone();
        let mut r1 = b.clone();
        let mut y = prec(&r1);
        let beta1 = self.dot(&r1, &y);
        if !(beta1 > 0.0) {
            return x;
        }
        let beta1 = beta1.sqrt();
        let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
        let (mut cs, mut sn) = (-1.0, 0.0);
        let mut w = zero.clone();
        let mut w2 = zero.clone();
        let mut r2 = r1.clone();
        let mut iters = 0;
        for itn in 0..max_iter {
            iters = itn + 1;
            let v: Vec<Field> = y.iter().map(|f| f.iter().map(|c| c / beta).collect()).collect();
            y = self.hessian(phi, mh, &v);
            self.remove_gauge(&gauge, &mut y);
            if itn > 0 {
                axpy(&mut y, -beta / oldb, &r1);
            }
            let alfa = self.dot(&v, &y);
            axpy(&mut y, -alfa / beta, &r2);
            r1 = std::mem::replace(&mut r2, y);
            y = prec(&r2);
            oldb = beta;
            let bb = self.dot(&r2, &y);
            if !(bb >= 0.0) {
                break;
            }
            beta = bb.sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(f64::EPSILON);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi_step = cs * phibar;
            phibar *= sn;
            let w1 = std::mem::replace(&mut w2, w);
            w = v;
            axpy(&mut w, -oldeps, &w1);
            axpy(&mut w, -delta, &w2);
            w.iter_mut().for_each(|f| f.iter_mut().for_each(|c| *c /= gamma));
            axpy(&mut x, phi_step, &w);
            if phibar <= rtol * beta1 || beta == 0.0 {
                break;
            }
        }
        log::trace!("minres: {iters} iterations, relative residual {:.2e}", phibar / beta1);
        x
    }

    fn curvature_scale(&self) -> f64 {
        self.w.iter().cloned().fold(0.0, f64::max).max(1e-300)
    }

    fn retract(&self, phi: &[Field], xi: &[Field], alpha: f64) -> Result<Vec<Field>> {
        let mut trial: Vec<Field> = phi
            .iter()
            .zip(xi)
            .map(|(f, d)| f.iter().zip(d).map(|(a, b)| a + alpha * b).collect())
            .collect();
        for t in trial.iter_mut() {
            self.project_fixed(t);
        }
        linalg::lowdin(self.grid, &mut trial)?;
        Ok(trial)
    }

    fn minimize(&self, seed: Vec<Field>, opts: &SolveOptions, time: f64, merit: Merit) -> Result<Minimized> {
        let mut phi = seed;
        for f in phi.iter_mut() {
            self.project_fixed(f);
        }
        linalg::lowdin(self.grid, &mut phi)?;
        let mut ev = self.evaluate(&phi);
        let mut history = Vec::new();
        for iter in 0..opts.max_iter {
            let r = self.residual(&phi, &ev.grad);
            let res = self.scaled_residual(&phi, &r);
            history.push(res);
            if !res.is_finite() || !ev.energy.is_finite() {
                return Err(Error::Numerical(format!("mode solve produced a non-finite residual at t = {time}")));
            }
            if res < opts.tol {
                return Ok(Minimized { phi, iterations: iter, history });
            }
            let mh = self.multipliers(&phi, &ev.grad);
            let forcing = 0.1f64.min(res.sqrt());
            let xi = match merit {
                Merit::Energy => self.newton_direction(&phi, &mh, &r, forcing, opts.cg_max_iter),
                Merit::Residual => self.minres(&phi, &mh, &r, forcing, opts.cg_max_iter),
            };
            let slope = 2.0 * self.dot(&r, &xi);
            // Energy differences below this are rounding.
            let noise = 1e-12 * ev.energy.abs().max(self.curvature_scale());
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = self.retract(&phi, &xi, alpha)?;
                let ev_t = self.evaluate(&trial);
                let ok = match merit {
                    Merit::Energy if -slope * alpha > 10.0 * noise => ev_t.energy <= ev.energy + 1e-4 * alpha * slope,
                    Merit::Energy => {
                        ev_t.energy <= ev.energy + noise && self.scaled_residual(&trial, &self.residual(&trial, &ev_t.grad)) < res
                    }
                    Merit::Residual => {
                        self.scaled_residual(&trial, &self.residual(&trial, &ev_t.grad)) <= (1.0 - 1e-4 * alpha) * res
                    }
                };
                if ok {
                    log::trace!("newton {iter}: res {res:.3e} energy {:.15e} step {alpha}", ev_t.energy);
                    phi = trial;
                    ev = ev_t;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::Convergence {
                    time,
                    iterations: iter + 1,
                    residual: res,
                    tolerance: opts.tol,
                    history,
                });
            }
        }
        let r = self.residual(&phi, &ev.grad);
        let res = self.scaled_residual(&phi, &r);
        history.push(res);
        if res < opts.tol {
            return Ok(Minimized { phi, iterations: opts.max_iter, history });
        }
        Err(Error::Convergence { time, iterations: opts.max_iter, residual: res, tolerance: opts.tol, history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitudes::{binomial_state, initial_state};
    use crate::spin_basis::FragBasis;
    use crate::trap::{lowest_modes, potential_on, Profile, TrapSpec};

    fn harmonic(count: usize, half: f64) -> (Grid, Vec<f64>) {
        let grid = Grid::line(count, half).unwrap();
        let v = potential_on(&TrapSpec::harmonic(1.0), &grid, 0.0);
        (grid, v)
    }

    fn eigen_seed(grid: &Grid, v: &[f64]) -> ([Field; 2], Vec<f64>) {
        let m = lowest_modes(grid, v, 2).unwrap();
        ([m.modes[0].clone(), m.modes[1].clone()], m.energies)
    }

    fn fock_state(n: usize, k: i64) -> AmplitudeVector {
        let basis = FragBasis::new(n).unwrap();
        let mut b = vec![ZERO; basis.dim()];
        b[basis.index(k)] = C64::new(1.0, 0.0);
        AmplitudeVector::from_vec(basis, b, 0.0).unwrap()
    }

    #[test]
    fn weights_examples() {
        let n = 6;
        let w = coupling_weights(&initial_state(n).unwrap());
        assert_eq!(w.x[0][0].re, 6.0);
        assert_eq!(w.y[quartic_index(0, 0, 0, 0)].re, 30.0);
        let nonzero = w.y.iter().filter(|x| x.norm() > 0.0).count() + w.x.iter().flatten().filter(|x| x.norm() > 0.0).count();
        assert_eq!(nonzero, 2);

        let top = coupling_weights(&binomial_state(n, std::f64::consts::FRAC_PI_2, 0.0).unwrap());
        assert!((top.x[1][1].re - 6.0).abs() < 1e-12);
        assert!((top.y[quartic_index(1, 1, 1, 1)].re - 30.0).abs() < 1e-12);

        let mid = coupling_weights(&fock_state(4, 0));
        assert_eq!(mid.x[0][0].re, 2.0);
        assert_eq!(mid.x[1][1].re, 2.0);
        assert_eq!(mid.y[quartic_index(0, 1, 0, 1)].re, 4.0);
    }

    #[test]
    fn weights_are_hermitian_with_trace_n() {
        let b = binomial_state(8, 0.7, 0.4).unwrap();
        let w = coupling_weights(&b);
        assert!((w.trace() - 8.0).abs() < 1e-12);
        assert!(w.hermiticity_error() < 1e-12);
    }

    #[test]
    fn noninteracting_initial_modes() {
        let (grid, v) = harmonic(1000, 10.0);
        let (seed, eps) = eigen_seed(&grid, &v);
        let w = coupling_weights(&initial_state(8).unwrap());
        let problem = ModeProblem { grid: &grid, potential: &v, g: 0.0, time: 0.0 };
        let sol = solve_modes(&problem, &w, &seed, &SolveOptions::default()).unwrap();
        assert!(sol.unoccupied);
        assert!((sol.mu.mu[0][0].re - 0.5).abs() < 2e-3);
        assert!((chemical_potential(&sol.mu) - eps[0]).abs() < 1e-10);
        assert!(sol.mu.mu[1][1].norm() < 1e-12);
        assert!((grid.inner(&sol.phi[0], &seed[0]).norm() - 1.0).abs() < 1e-10);
        assert!((grid.inner(&sol.phi[1], &seed[1]).norm() - 1.0).abs() < 1e-10);
        assert!((sol.energy - 8.0 * eps[0]).abs() < 1e-10);
    }

    #[test]
    fn noninteracting_fragmented_energy() {
        let (grid, v) = harmonic(400, 8.0);
        let (seed, eps) = eigen_seed(&grid, &v);
        let n = 6;
        let w = coupling_weights(&fock_state(n, 0));
        let problem = ModeProblem { grid: &grid, potential: &v, g: 0.0, time: 0.0 };
        let sol = solve_modes(&problem, &w, &seed, &SolveOptions::default()).unwrap();
        assert!((sol.energy - 3.0 * (eps[0] + eps[1])).abs() < 1e-9);
    }

    fn tilted_trap() -> TrapSpec {
        let mut spec = TrapSpec::harmonic(1.0);
        spec.barrier = Profile::constant(1.5);
        spec.barrier_width = 0.6;
        spec.tilt = Profile::constant(0.1);
        spec
    }

    #[test]
    fn interacting_coupled_solution_is_certified() {
        let grid = Grid::line(256, 8.0).unwrap();
        let v = potential_on(&tilted_trap(), &grid, 0.0);
        let (seed, _) = eigen_seed(&grid, &v);
        let basis = FragBasis::new(6).unwrap();
        let b: Vec<C64> = (0..basis.dim()).map(|i| C64::from_polar(1.0 / (1.0 + (i as f64 - 3.0).abs()), 0.3 * i as f64)).collect();
        let b = AmplitudeVector::normalized(basis, b, 0.0).unwrap();
        let w = coupling_weights(&b);
        let g = 0.2;
        let problem = ModeProblem { grid: &grid, potential: &v, g, time: 0.0 };
        let sol = solve_modes(&problem, &w, &seed, &SolveOptions::default()).unwrap();
        assert!(!sol.unoccupied);
        assert!(sol.residual_norms.iter().all(|&r| r < 1e-8), "{:?}", sol.residual_norms);
        assert!(linalg::orthonormality_error(&grid, &sol.phi) < 1e-10);
        assert!(sol.mu.hermiticity_error() < 1e-10);

        // Second-order stationarity under tangent perturbations.
        let noise: [Field; 2] = [
            grid.sample_complex(|r| C64::new((1.3 * r[2]).sin(), 0.2 * r[2]) * (-r[2] * r[2] / 4.0).exp()),
            grid.sample_complex(|r| C64::new(0.5, (0.7 * r[2]).cos()) * (-r[2] * r[2] / 3.0).exp()),
        ];
        let rise = |delta: f64| {
            let mut trial: Vec<Field> = (0..2).map(|i| sol.phi[i].iter().zip(&noise[i]).map(|(a, b)| a + delta * b).collect()).collect();
            linalg::lowdin(&grid, &mut trial).unwrap();
            energy(&grid, &w, &[trial[0].clone(), trial[1].clone()], &v, g) - sol.energy
        };
        let (big, small) = (rise(1e-3), rise(1e-4));
        assert!(big > 0.0 && small > 0.0);
        assert!((big / small - 100.0).abs() < 5.0, "ratio {}", big / small);
    }

    #[test]
    fn chemical_potential_rises_with_interaction() {
        let (grid, v) = harmonic(400, 8.0);
        let (seed, _) = eigen_seed(&grid, &v);
        let w = coupling_weights(&initial_state(4).unwrap());
        let mut last = 0.0;
        for step in 0..5 {
            let g = 0.1 * (1 << step) as f64;
            let problem = ModeProblem { grid: &grid, potential: &v, g, time: 0.0 };
            let mu = solve_modes(&problem, &w, &seed, &SolveOptions::default()).unwrap().mu.mu[0][0].re;
            assert!(mu > last);
            last = mu;
        }
    }

    #[test]
    fn chemical_potential_is_leading_order_energy_slope() {
        let (grid, v) = harmonic(400, 8.0);
        let (seed, _) = eigen_seed(&grid, &v);
        let g = 0.05;
        let problem = ModeProblem { grid: &grid, potential: &v, g, time: 0.0 };
        let at = |n: usize| solve_modes(&problem, &coupling_weights(&initial_state(n).unwrap()), &seed, &SolveOptions::default()).unwrap();
        let (lo, hi) = (at(20), at(22));
        let slope = (hi.energy - lo.energy) / 2.0;
        assert!((slope - chemical_potential(&lo.mu)).abs() < 1.0);
    }

    #[test]
    fn phase_follows_seed() {
        let (grid, v) = harmonic(300, 8.0);
        let (mut seed, _) = eigen_seed(&grid, &v);
        let rot = C64::from_polar(1.0, 2.1);
        seed[1].iter_mut().for_each(|x| *x *= rot);
        let w = coupling_weights(&initial_state(4).unwrap());
        let problem = ModeProblem { grid: &grid, potential: &v, g: 0.3, time: 0.0 };
        let sol = solve_modes(&problem, &w, &seed, &SolveOptions::default()).unwrap();
        for i in 0..2 {
            let o = grid.inner(&seed[i], &sol.phi[i]);
            assert!(o.re > 0.0 && o.im.abs() < 1e-12);
        }
    }

    /// Normalized gradient flow in imaginary time for the single-mode
    /// equation on cell-centred points with zero values beyond the ends.
    fn imaginary_time_mu(count: usize, half: f64, gn: f64) -> f64 {
        let dx = 2.0 * half / count as f64;
        let x: Vec<f64> = (0..count).map(|i| -half + (i as f64 + 0.5) * dx).collect();
        let lap = |f: &[f64], i: usize| {
            let l = if i > 0 { f[i - 1] } else { 0.0 };
            let r = if i + 1 < count { f[i + 1] } else { 0.0 };
            (l - 2.0 * f[i] + r) / (dx * dx)
        };
        let norm = |f: &mut Vec<f64>| {
            let s = (f.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
            f.iter_mut().for_each(|v| *v /= s);
        };
        let mut f: Vec<f64> = x.iter().map(|x| (-x * x / 2.0).exp()).collect();
        norm(&mut f);
        let tau = 0.4 * dx * dx;
        for _ in 0..(40.0 / tau) as usize {
            let next: Vec<f64> = (0..count)
                .map(|i| f[i] - tau * (-0.5 * lap(&f, i) + (0.5 * x[i] * x[i] + gn * f[i] * f[i]) * f[i]))
                .collect();
            f = next;
            norm(&mut f);
        }
        (0..count).map(|i| f[i] * (-0.5 * lap(&f, i) + (0.5 * x[i] * x[i] + gn * f[i] * f[i]) * f[i])).sum::<f64>() * dx
    }

    #[test]
    fn interacting_initial_mode_matches_imaginary_time() {
        let (count, half, n, g) = (200, 8.0, 8, 0.25);
        let (grid, v) = harmonic(count, half);
        let (seed, _) = eigen_seed(&grid, &v);
        let problem = ModeProblem { grid: &grid, potential: &v, g, time: 0.0 };
        let sol = solve_modes(&problem, &coupling_weights(&initial_state(n).unwrap()), &seed, &SolveOptions::default()).unwrap();
        let oracle = imaginary_time_mu(count, half, g * (n - 1) as f64);
        let mu11 = sol.mu.mu[0][0].re;
        assert!(((mu11 - oracle) / oracle).abs() < 1e-6, "{mu11} vs {oracle}");
        assert!(mu11 > 0.6);
    }

    #[test]
    fn energy_is_the_hamiltonian_expectation() {
        use crate::densities::{assemble_matrices, ModePair};
        use crate::grid::DerivativeScheme;
        let grid = Grid::line(120, 7.0).unwrap();
        let v = potential_on(&tilted_trap(), &grid, 0.0);
        let basis = FragBasis::new(6).unwrap();
        let g = 0.7;
        for s in 0..10u32 {
            let t = s as f64;
            let mut pair = vec![
                grid.sample_complex(|r| C64::from_polar((-(r[2] - 0.1 * t).powi(2) / 2.0).exp(), 0.2 * t * r[2])),
                grid.sample_complex(|r| C64::from_polar((r[2] + 0.3) * (-r[2] * r[2] / 1.5).exp(), 0.4 - 0.1 * t * r[2])),
            ];
            linalg::lowdin(&grid, &mut pair).unwrap();
            let phi = [pair[0].clone(), pair[1].clone()];
            let b: Vec<C64> = (0..basis.dim()).map(|i| C64::from_polar(1.0 + ((i as f64 + t) * 1.7).sin(), 0.9 * i as f64 * t)).collect();
            let b = AmplitudeVector::normalized(basis, b, 0.0).unwrap();
            let m = assemble_matrices(&grid, &basis, &ModePair::stationary(phi.clone(), 0.0), &v, g, DerivativeScheme::Forward).unwrap();
            let direct = m.h.expectation(b.b()).re;
            let e = energy(&grid, &coupling_weights(&b), &phi, &v, g);
            assert!(((e - direct) / direct).abs() < 1e-8, "{e} vs {direct}");
        }
    }
}

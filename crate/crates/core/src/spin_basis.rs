//! Fragmentation basis of the two-mode boson system and its angular-momentum
//! coefficients.
//!
//! The basis state `|k>` holds `N/2 - k` bosons in mode 1 and `N/2 + k` in
//! mode 2, with `k = -N/2, ..., N/2`. Viewed as a spin `j = N/2` multiplet,
//! `|k>` is the `S_z = k` eigenstate. States are stored in ascending `k`, so
//! index 0 is the all-in-mode-1 state.
//!
//! The one- and two-body coefficients
//!
//! ```text
//! X^{ij}_{kl}    = <k| c_i^† c_j |l>
//! Y^{ij mn}_{kl} = <k| c_i^† c_j^† c_m c_n |l>
//! ```
//!
//! are evaluated from closed forms on demand. They are banded: `X` vanishes
//! unless `|k - l| <= 1` and `Y` unless `|k - l| <= 2`. [`FockOracle`] builds
//! the same matrix elements by brute force for validation.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Default largest boson number accepted by [`FockOracle`].
pub const ORACLE_CAP: usize = 64;

/// Basis of fragmented states for an even number of bosons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FragBasis {
    n: usize,
}

impl FragBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::OddBosonCount(n));
        }
        Ok(Self { n })
    }

    /// Boson number `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Spin quantum number `j = N/2`.
    pub fn j(&self) -> i64 {
        (self.n / 2) as i64
    }

    /// Number of basis states, `N + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn k_min(&self) -> i64 {
        -self.j()
    }

    pub fn k_max(&self) -> i64 {
        self.j()
    }

    pub fn k_range(&self) -> std::ops::RangeInclusive<i64> {
        self.k_min()..=self.k_max()
    }

    pub fn contains(&self, k: i64) -> bool {
        k.abs() <= self.j()
    }

    /// Storage index of fragmentation index `k`.
    pub fn index(&self, k: i64) -> usize {
        debug_assert!(self.contains(k));
        (k + self.j()) as usize
    }

    /// Fragmentation index stored at `index`.
    pub fn k_at(&self, index: usize) -> i64 {
        index as i64 - self.j()
    }

    /// Occupation of mode 1 in `|k>`.
    pub fn n1(&self, k: i64) -> i64 {
        self.j() - k
    }

    /// Occupation of mode 2 in `|k>`.
    pub fn n2(&self, k: i64) -> i64 {
        self.j() + k
    }
}

fn check_modes(modes: &[usize]) -> Result<()> {
    for &m in modes {
        if m != 1 && m != 2 {
            return Err(Error::Index(format!("mode index {m} is not 1 or 2")));
        }
    }
    Ok(())
}

fn check_frag(basis: &FragBasis, k: i64, l: i64) -> Result<()> {
    for idx in [k, l] {
        if !basis.contains(idx) {
            return Err(Error::Index(format!(
                "fragmentation index {idx} outside [-{j}, {j}]",
                j = basis.j()
            )));
        }
    }
    Ok(())
}

/// `X^{ij}_{kl}` with 1-based mode indices.
pub fn x_coeff(i: usize, j: usize, k: i64, l: i64, n: usize) -> Result<f64> {
    let basis = FragBasis::new(n)?;
    check_modes(&[i, j])?;
    check_frag(&basis, k, l)?;
    Ok(x_elem(&basis, i - 1, j - 1, k, l))
}

/// `Y^{ij mn}_{kl}` with 1-based mode indices.
pub fn y_coeff(i: usize, j: usize, m: usize, n_: usize, k: i64, l: i64, n: usize) -> Result<f64> {
    let basis = FragBasis::new(n)?;
    check_modes(&[i, j, m, n_])?;
    check_frag(&basis, k, l)?;
    Ok(y_elem(&basis, [i - 1, j - 1, m - 1, n_ - 1], k, l))
}

/// Unchecked `X^{ij}_{kl}` with 0-based mode indices.
#[inline]
pub fn x_elem(basis: &FragBasis, i: usize, j: usize, k: i64, l: i64) -> f64 {
    let h = basis.j() as f64;
    let (kf, lf) = (k as f64, l as f64);
    match (i, j) {
        (0, 0) if k == l => h - kf,
        (1, 1) if k == l => h + kf,
        (0, 1) if k == l - 1 => ((h - kf) * (h + lf)).sqrt(),
        (1, 0) if l == k - 1 => ((h - lf) * (h + kf)).sqrt(),
        _ => 0.0,
    }
}

/// Unchecked `Y^{ij mn}_{kl}` with 0-based mode indices `[i, j, m, n]`.
///
/// Every one of the sixteen index combinations appears in the closed-form
/// table; anything failing its Kronecker selection rule is zero.
#[inline]
pub fn y_elem(basis: &FragBasis, idx: [usize; 4], k: i64, l: i64) -> f64 {
    let h = basis.j() as f64;
    let (kf, lf) = (k as f64, l as f64);
    // Modes are symmetric within the creation pair and within the
    // annihilation pair, so classify by how many 2s appear in each.
    let created_in_2 = idx[0] + idx[1];
    let removed_from_2 = idx[2] + idx[3];
    match (created_in_2, removed_from_2) {
        // 11 11
        (0, 0) if k == l => (h - kf) * (h - kf - 1.0),
        // 22 22
        (2, 2) if k == l => (h + kf) * (h + kf - 1.0),
        // 12 12 and permutations
        (1, 1) if k == l => (h - kf) * (h + kf),
        // 11 12: one boson moved from mode 2 into mode 1
        (0, 1) if k == l - 1 => (h - lf) * ((h - kf) * (h + lf)).sqrt(),
        // 12 22
        (1, 2) if k == l - 1 => (h + kf) * ((h - kf) * (h + lf)).sqrt(),
        // 12 11: one boson moved from mode 1 into mode 2
        (1, 0) if l == k - 1 => (h - kf) * ((h - lf) * (h + kf)).sqrt(),
        // 22 12
        (2, 1) if l == k - 1 => (h + lf) * ((h - lf) * (h + kf)).sqrt(),
        // 11 22: two bosons moved from mode 2 into mode 1
        (0, 2) if k == l - 2 => ((h - lf + 1.0) * (h - kf) * (h + lf) * (h + kf + 1.0)).sqrt(),
        // 22 11
        (2, 0) if l == k - 2 => ((h - kf + 1.0) * (h - lf) * (h + kf) * (h + lf + 1.0)).sqrt(),
        _ => 0.0,
    }
}

/// Spin operators of the `j = N/2` multiplet in the `|k>` basis.
#[derive(Debug, Clone)]
pub struct SpinMatrices {
    pub sx: DMatrix<C64>,
    pub sy: DMatrix<C64>,
    pub sz: DMatrix<C64>,
    pub s_plus: DMatrix<C64>,
    pub s_minus: DMatrix<C64>,
}

impl SpinMatrices {
    /// `S_x^2 + S_y^2 + S_z^2`.
    pub fn s_squared(&self) -> DMatrix<C64> {
        &self.sx * &self.sx + &self.sy * &self.sy + &self.sz * &self.sz
    }
}

/// Builds `S_x, S_y, S_z, S_±` from the ladder action
/// `S_± |j,k> = sqrt(j(j+1) - k(k±1)) |j,k±1>`.
pub fn spin_matrices(n: usize) -> Result<SpinMatrices> {
    let basis = FragBasis::new(n)?;
    if n > ORACLE_CAP {
        return Err(Error::Capacity { what: "boson number", value: n, cap: ORACLE_CAP });
    }
    let dim = basis.dim();
    let j = basis.j() as f64;
    let mut sz = DMatrix::<C64>::zeros(dim, dim);
    let mut s_plus = DMatrix::<C64>::zeros(dim, dim);
    for k in basis.k_range() {
        let a = basis.index(k);
        sz[(a, a)] = C64::new(k as f64, 0.0);
        if k < basis.k_max() {
            let kf = k as f64;
            s_plus[(a + 1, a)] = C64::new((j * (j + 1.0) - kf * (kf + 1.0)).sqrt(), 0.0);
        }
    }
    let s_minus = s_plus.adjoint();
    let sx = (&s_plus + &s_minus).scale(0.5);
    let sy = (&s_plus - &s_minus) * C64::new(0.0, -0.5);
    Ok(SpinMatrices { sx, sy, sz, s_plus, s_minus })
}

/// Brute-force two-mode Fock-space operators for validating the closed forms.
///
/// Each mode gets a truncated ladder matrix over occupations `0..=N`. Two-mode
/// operator strings factor into a mode-1 part and a mode-2 part (operators of
/// different modes commute), so matrix elements between fixed-`N` basis
/// states are products of single-mode matrix elements.
#[derive(Debug, Clone)]
pub struct FockOracle {
    basis: FragBasis,
    /// Single-mode annihilation operator on occupations `0..=N`.
    annihilate: DMatrix<f64>,
    /// Single-mode creation operator on occupations `0..=N`.
    create: DMatrix<f64>,
}

impl FockOracle {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_cap(n, ORACLE_CAP)
    }

    pub fn with_cap(n: usize, cap: usize) -> Result<Self> {
        let basis = FragBasis::new(n)?;
        if n > cap {
            return Err(Error::Capacity { what: "boson number", value: n, cap });
        }
        let dim = n + 1;
        let mut annihilate = DMatrix::<f64>::zeros(dim, dim);
        for occ in 1..dim {
            annihilate[(occ - 1, occ)] = (occ as f64).sqrt();
        }
        let create = annihilate.transpose();
        Ok(Self { basis, annihilate, create })
    }

    pub fn basis(&self) -> FragBasis {
        self.basis
    }

    /// Single-mode annihilation matrix (the same for both modes).
    pub fn annihilation(&self) -> &DMatrix<f64> {
        &self.annihilate
    }

    pub fn creation(&self) -> &DMatrix<f64> {
        &self.create
    }

    /// Matrix of a normal-ordered operator string over the fixed-`N` basis.
    /// `string` lists `(mode, is_creation)` from left to right, modes 0-based.
    pub fn string_matrix(&self, string: &[(usize, bool)]) -> DMatrix<f64> {
        let occ_dim = self.annihilate.nrows();
        let mut per_mode = [DMatrix::<f64>::identity(occ_dim, occ_dim), DMatrix::identity(occ_dim, occ_dim)];
        for &(mode, dagger) in string {
            let op = if dagger { &self.create } else { &self.annihilate };
            per_mode[mode] = &per_mode[mode] * op;
        }
        let dim = self.basis.dim();
        let mut out = DMatrix::<f64>::zeros(dim, dim);
        for k in self.basis.k_range() {
            for l in self.basis.k_range() {
                let (n1k, n2k) = (self.basis.n1(k) as usize, self.basis.n2(k) as usize);
                let (n1l, n2l) = (self.basis.n1(l) as usize, self.basis.n2(l) as usize);
                out[(self.basis.index(k), self.basis.index(l))] =
                    per_mode[0][(n1k, n1l)] * per_mode[1][(n2k, n2l)];
            }
        }
        out
    }

    /// `<k| c_i^† c_j |l>` for 0-based modes.
    pub fn one_body(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.string_matrix(&[(i, true), (j, false)])
    }

    /// `<k| c_i^† c_j^† c_m c_n |l>` for 0-based modes.
    pub fn two_body(&self, i: usize, j: usize, m: usize, n: usize) -> DMatrix<f64> {
        self.string_matrix(&[(i, true), (j, true), (m, false), (n, false)])
    }

    /// Spin operators assembled from mode operators:
    /// `S_x = (c2†c1 + c1†c2)/2`, `S_y = (c2†c1 - c1†c2)/2i`, `S_z = (c2†c2 - c1†c1)/2`.
    pub fn spin_from_modes(&self) -> SpinMatrices {
        let c = |m: DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
        let c21 = c(self.one_body(1, 0));
        let c12 = c(self.one_body(0, 1));
        let c22 = c(self.one_body(1, 1));
        let c11 = c(self.one_body(0, 0));
        let sx = (&c21 + &c12).scale(0.5);
        let sy = (&c21 - &c12) * C64::new(0.0, -0.5);
        let sz = (&c22 - &c11).scale(0.5);
        let s_plus = &sx + &sy * C64::new(0.0, 1.0);
        let s_minus = &sx - &sy * C64::new(0.0, 1.0);
        SpinMatrices { sx, sy, sz, s_plus, s_minus }
    }
}

/// Largest deviation between the closed-form coefficients and the oracle
/// over every index combination for boson number `n`.
pub fn max_oracle_deviation(n: usize) -> Result<f64> {
    let oracle = FockOracle::new(n)?;
    let basis = oracle.basis();
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let m = oracle.one_body(i, j);
            for k in basis.k_range() {
                for l in basis.k_range() {
                    let d = (x_elem(&basis, i, j, k, l) - m[(basis.index(k), basis.index(l))]).abs();
                    worst = worst.max(d);
                }
            }
        }
    }
    for idx in 0..16usize {
        let q = [(idx >> 3) & 1, (idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
        let m = oracle.two_body(q[0], q[1], q[2], q[3]);
        for k in basis.k_range() {
            for l in basis.k_range() {
                let d = (y_elem(&basis, q, k, l) - m[(basis.index(k), basis.index(l))]).abs();
                worst = worst.max(d);
            }
        }
    }
    Ok(worst)
}

//! Small numerical kernels: tridiagonal solves and eigenpairs, conjugate
//! gradients, and orthonormalization of short lists of fields.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Solves `(T + shift) x = rhs` for the symmetric tridiagonal `T` with
/// diagonal `diag` and constant off-diagonal `off`.
pub fn solve_tridiagonal(diag: &[f64], off: f64, shift: f64, rhs: &[C64]) -> Field {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x: Field = vec![C64::new(0.0, 0.0); n];
    let tiny = 1e-300;
    let mut piv = diag[0] + shift;
    if piv.abs() < tiny {
        piv = tiny;
    }
    x[0] = rhs[0] / piv;
    for i in 1..n {
        c[i - 1] = off / piv;
        piv = diag[i] + shift - off * c[i - 1];
        if piv.abs() < tiny {
            piv = tiny;
        }
        x[i] = (rhs[i] - off * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(diag: &[f64], off: f64, x: f64) -> usize {
    let e2 = off * off;
    let mut count = 0;
    let mut q = 1.0;
    for (i, d) in diag.iter().enumerate() {
        q = if i == 0 { d - x } else { d - x - e2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (d.abs() + off.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest `count` eigenpairs of a symmetric tridiagonal matrix by Sturm
/// bisection and inverse iteration. Vectors have unit Euclidean norm.
pub fn tridiagonal_lowest(diag: &[f64], off: f64, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = diag.len();
    if count > n {
        return Err(Error::InvalidParameter(format!("asked for {count} eigenpairs of a {n}x{n} matrix")));
    }
    let lo0 = diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * off.abs();
    let hi0 = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * off.abs();
    let scale = lo0.abs().max(hi0.abs()).max(1.0);

    let mut values = Vec::with_capacity(count);
    for m in 0..count {
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sturm_count(diag, off, mid) > m {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        values.push(0.5 * (lo + hi));
    }

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (m, &lambda) in values.iter().enumerate() {
        // Deterministic start vector with components along every eigenvector.
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + m * 13) % 11) as f64).collect();
        let cluster: Vec<usize> = (0..m)
            .filter(|&p| (values[p] - lambda).abs() < 1e-9 * scale)
            .collect();
        let shift = -(lambda + 1e-13 * scale);
        for _ in 0..6 {
            let rhs: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
            let sol = solve_tridiagonal(diag, off, shift, &rhs);
            v = sol.iter().map(|z| z.re).collect();
            for &p in &cluster {
                let dot: f64 = v.iter().zip(&vectors[p]).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(&vectors[p]).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numerical("inverse iteration lost its vector".into()));
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        let mut res = 0.0;
        for i in 0..n {
            let mut tv = diag[i] * v[i];
            if i > 0 {
                tv += off * v[i - 1];
            }
            if i + 1 < n {
                tv += off * v[i + 1];
            }
            res += (tv - lambda * v[i]).powi(2);
        }
        if res.sqrt() > 1e-8 * scale {
            return Err(Error::Numerical(format!(
                "eigenpair {m} did not converge (residual {:.3e})",
                res.sqrt()
            )));
        }
        vectors.push(v);
    }
    Ok((values, vectors))
}

/// Conjugate gradients for a Hermitian positive definite operator.
pub fn conjugate_gradient<A>(apply: A, rhs: &[C64], tol: f64, max_iter: usize) -> Field
where
    A: Fn(&[C64]) -> Field,
{
    let dot = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
    let mut x: Field = vec![C64::new(0.0, 0.0); rhs.len()];
    let mut r: Field = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r).re;
    let stop = tol * tol * rr.max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap).re;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r).re;
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

/// Gram matrix `S_ij = <f_i|f_j>`.
pub fn gram(grid: &Grid, fields: &[Field]) -> DMatrix<C64> {
    let k = fields.len();
    DMatrix::from_fn(k, k, |i, j| grid.inner(&fields[i], &fields[j]))
}

/// Hermitian eigen-decomposition of a small complex matrix, eigenvalues
/// ascending.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let k = m.nrows();
    let sym = DMatrix::<C64>::from_fn(k, k, |r, c| 0.5 * (m[(r, c)] + m[(c, r)].conj()));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::<C64>::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vecs)
}

/// Replaces `fields` by the symmetric (Löwdin) orthonormalization
/// `F S^{-1/2}`, the orthonormal set closest to the input.
pub fn lowdin(grid: &Grid, fields: &mut [Field]) -> Result<()> {
    let s = gram(grid, fields);
    let (vals, vecs) = hermitian_eigen(&s);
    if vals.iter().any(|&v| !(v > 1e-14)) {
        return Err(Error::Numerical("mode functions became linearly dependent".into()));
    }
    let k = fields.len();
    let inv_sqrt = DMatrix::<C64>::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        vals.iter().map(|v| C64::new(1.0 / v.sqrt(), 0.0)),
    ));
    let t = &vecs * inv_sqrt * vecs.adjoint();
    let old: Vec<Field> = fields.to_vec();
    for (j, f) in fields.iter_mut().enumerate() {
        for (p, x) in f.iter_mut().enumerate() {
            *x = (0..k).map(|i| old[i][p] * t[(i, j)]).sum();
        }
    }
    Ok(())
}

/// Largest entry of `|S - I|` for the Gram matrix of `fields`.
pub fn orthonormality_error(grid: &Grid, fields: &[Field]) -> f64 {
    let s = gram(grid, fields);
    let mut worst: f64 = 0.0;
    for i in 0..fields.len() {
        for j in 0..fields.len() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s[(i, j)] - want).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve_roundtrip() {
        let diag = vec![4.0, 5.0, 6.0, 7.0];
        let off = -1.0;
        let rhs: Field = (0..4).map(|i| C64::new(i as f64, 1.0)).collect();
        let x = solve_tridiagonal(&diag, off, 0.5, &rhs);
        for i in 0..4 {
            let mut tx = (diag[i] + 0.5) * x[i];
            if i > 0 {
                tx += off * x[i - 1];
            }
            if i < 3 {
                tx += off * x[i + 1];
            }
            assert!((tx - rhs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_spectrum_of_discrete_laplacian() {
        // -f'' on n points with walls: eigenvalues 2 - 2 cos(pi m / (n+1))
        let n = 50;
        let (vals, vecs) = tridiagonal_lowest(&vec![2.0; n], -1.0, 3).unwrap();
        for (m, v) in vals.iter().enumerate() {
            let want = 2.0 - 2.0 * (std::f64::consts::PI * (m + 1) as f64 / (n + 1) as f64).cos();
            assert!((v - want).abs() < 1e-12);
        }
        let d: f64 = vecs[0].iter().zip(&vecs[1]).map(|(a, b)| a * b).sum();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn hermitian_eigen_2x2() {
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 2.0), C64::new(0.0, -2.0), C64::new(1.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] + 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let recon = &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(2, vals.iter().map(|&v| C64::new(v, 0.0)))) * vecs.adjoint();
        assert!((recon - m).camax() < 1e-12);
    }
}

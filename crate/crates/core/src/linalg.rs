//! Real linear algebra behind the resolvent solves.
//!
//! Every Liouvillian assembled here maps Hermitian matrices to Hermitian
//! matrices, so solves run on the n² real coordinates of a Hermitian matrix
//! (diagonal entries, then real and imaginary parts of the upper triangle)
//! instead of the n² complex entries of vec(ρ).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{EetError, Result};
use crate::sparse::CsrMatrix;

/// Real coordinates of n×n Hermitian matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianCoords {
    n: usize,
}

impl HermitianCoords {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn diag(&self, k: usize) -> usize {
        k
    }

    /// Coordinate of Re ρ_kl (and Im ρ_kl at the next index), k < l.
    pub fn pair(&self, k: usize, l: usize) -> usize {
        debug_assert!(k < l && l < self.n);
        let p = k * self.n - k * (k + 1) / 2 + (l - k - 1);
        self.n + 2 * p
    }

    pub fn from_matrix(&self, rho: &DMatrix<Complex64>) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; self.dim()];
        for k in 0..n {
            x[k] = rho[(k, k)].re;
            for l in (k + 1)..n {
                let p = self.pair(k, l);
                // average the two triangles so tiny asymmetries do not bias the result
                let z = (rho[(k, l)] + rho[(l, k)].conj()) * 0.5;
                x[p] = z.re;
                x[p + 1] = z.im;
            }
        }
        x
    }

    pub fn to_matrix(&self, x: &[f64]) -> DMatrix<Complex64> {
        let n = self.n;
        let mut rho = DMatrix::zeros(n, n);
        for k in 0..n {
            rho[(k, k)] = Complex64::new(x[k], 0.0);
            for l in (k + 1)..n {
                let p = self.pair(k, l);
                let z = Complex64::new(x[p], x[p + 1]);
                rho[(k, l)] = z;
                rho[(l, k)] = z.conj();
            }
        }
        rho
    }

    /// Trace of the Hermitian matrix with coordinates `x`.
    pub fn trace(&self, x: &[f64]) -> f64 {
        x[..self.n].iter().sum()
    }

    /// Real triplets of a Hermiticity-preserving superoperator given by its
    /// complex nonzeros on column-stacked vec(ρ).
    pub fn real_triplets(
        &self,
        nonzeros: impl Iterator<Item = (usize, usize, Complex64)>,
    ) -> Vec<(usize, usize, f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for (row, col, v) in nonzeros {
            let (i, j) = (row % n, row / n);
            if i > j {
                // lower-triangle outputs are conjugates of upper-triangle ones
                continue;
            }
            let (k, l) = (col % n, col / n);
            // output coordinate(s) for Y_ij
            let (out_re, out_im) = if i == j { (self.diag(i), None) } else {
                let p = self.pair(i, j);
                (p, Some(p + 1))
            };
            let mut push = |r: usize, c: usize, value: f64| {
                if value != 0.0 {
                    out.push((r, c, value));
                }
            };
            if k == l {
                push(out_re, self.diag(k), v.re);
                if let Some(im) = out_im {
                    push(im, self.diag(k), v.im);
                }
            } else {
                // ρ_kl = a + i b for k < l, a − i b for k > l
                let (p, sign) = if k < l { (self.pair(k, l), 1.0) } else { (self.pair(l, k), -1.0) };
                push(out_re, p, v.re);
                push(out_re, p + 1, -sign * v.im);
                if let Some(im) = out_im {
                    push(im, p, v.im);
                    push(im, p + 1, sign * v.re);
                }
            }
        }
        out
    }
}

/// Dense LU factorization with partial pivoting, row-major storage.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    norm1: f64,
}

impl LuFactor {
    /// Factors `a`; an exactly zero pivot is reported as singular.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU of a non-square matrix");
        let norm1 = (0..n).map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut lu = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                lu[r * n + c] = a[(r, c)];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 || !pivot_abs.is_finite() {
                return Err(EetError::Singular(format!("zero pivot in column {k}")));
            }
            if pivot_row != k {
                for c in 0..n {
                    lu.swap(k * n + c, pivot_row * n + c);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row_slice = &head[k * n + k + 1..k * n + n];
            for r in 0..(n - k - 1) {
                let row = &mut tail[r * n..r * n + n];
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for (x, &p) in row[k + 1..].iter_mut().zip(pivot_row_slice) {
                        *x -= factor * p;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A·x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            let row = &self.lu[r * n..r * n + r];
            let s: f64 = row.iter().zip(&x[..r]).map(|(a, b)| a * b).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n + r + 1..r * n + n];
            let s: f64 = row.iter().zip(&x[r + 1..]).map(|(a, b)| a * b).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        x
    }

    /// Solves Aᵀ·x = b.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        // Uᵀ y = b
        for c in 0..n {
            y[c] /= self.lu[c * n + c];
            let yc = y[c];
            for r in (c + 1)..n {
                y[r] -= self.lu[c * n + r] * yc;
            }
        }
        // Lᵀ z = y
        for c in (0..n).rev() {
            let zc = y[c];
            for r in 0..c {
                y[r] -= self.lu[c * n + r] * zc;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Estimate of the 1-norm condition number ‖A‖₁‖A⁻¹‖₁ (Hager's method
    /// with Higham's alternating-sign safeguard). It is a lower bound that is
    /// usually within a small factor of the true value.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut estimate = 0.0;
        let mut last_j = usize::MAX;
        for iter in 0..5 {
            let y = self.solve(&x);
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if !norm.is_finite() {
                return f64::INFINITY;
            }
            if iter > 0 && norm <= estimate {
                break;
            }
            estimate = norm;
            let xi: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if iter > 0 && (zmax <= ztx || j == last_j) {
                break;
            }
            last_j = j;
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        let alt: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * (1.0 + i as f64 / (n.max(2) - 1) as f64)
            })
            .collect();
        let y = self.solve(&alt);
        let alt_estimate = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        estimate.max(alt_estimate) * self.norm1
    }
}

/// Restarted GMRES with Jacobi (diagonal) right preconditioning.
#[derive(Debug, Clone, Copy)]
pub struct Gmres {
    pub restart: usize,
    pub max_iterations: usize,
    pub rtol: f64,
}

#[derive(Debug, Clone)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl Gmres {
    pub fn solve(&self, a: &CsrMatrix<f64>, b: &[f64]) -> Result<IterativeSolution> {
        let n = a.nrows();
        let m = self.restart.max(1);
        let diag = a.diagonal();
        let inv_diag: Vec<f64> = diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(IterativeSolution { x: vec![0.0; n], iterations: 0, residual: 0.0 });
        }
        let mut x = vec![0.0; n];
        let mut ax = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut iterations = 0;
        let mut residual = 1.0;
        while iterations < self.max_iterations {
            a.matvec(&x, &mut ax);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let beta = norm(&r);
            residual = beta / b_norm;
            if residual <= self.rtol {
                break;
            }
            let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
            let mut h = vec![vec![0.0; m]; m + 1];
            let mut cs = vec![0.0; m];
            let mut sn = vec![0.0; m];
            let mut g = vec![0.0; m + 1];
            g[0] = beta;
            let mut k_used = 0;
            for k in 0..m {
                let z: Vec<f64> = basis[k].iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
                a.matvec(&z, &mut w);
                for (i, v) in basis.iter().enumerate() {
                    let hik = dot(&w, v);
                    h[i][k] = hik;
                    for (wj, vj) in w.iter_mut().zip(v) {
                        *wj -= hik * vj;
                    }
                }
                let hnext = norm(&w);
                h[k + 1][k] = hnext;
                for i in 0..k {
                    let tmp = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = tmp;
                }
                let denom = h[k][k].hypot(h[k + 1][k]);
                if denom == 0.0 {
                    cs[k] = 1.0;
                    sn[k] = 0.0;
                } else {
                    cs[k] = h[k][k] / denom;
                    sn[k] = h[k + 1][k] / denom;
                }
                h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
                h[k + 1][k] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] *= cs[k];
                iterations += 1;
                k_used = k + 1;
                residual = g[k + 1].abs() / b_norm;
                if residual <= self.rtol || hnext == 0.0 || iterations >= self.max_iterations {
                    break;
                }
                basis.push(w.iter().map(|v| v / hnext).collect());
            }
            // back substitution for the Krylov coefficients
            let mut y = vec![0.0; k_used];
            for i in (0..k_used).rev() {
                let s: f64 = ((i + 1)..k_used).map(|j| h[i][j] * y[j]).sum();
                y[i] = (g[i] - s) / h[i][i];
            }
            for (j, yj) in y.iter().enumerate() {
                for ((xi, vi), di) in x.iter_mut().zip(&basis[j]).zip(&inv_diag) {
                    *xi += yj * vi * di;
                }
            }
        }
        a.matvec(&x, &mut ax);
        let true_residual = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / b_norm;
        if !(true_residual <= self.rtol * 10.0) {
            return Err(EetError::NoConvergence { residual: true_residual.max(residual), iterations });
        }
        Ok(IterativeSolution { x, iterations, residual: true_residual })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

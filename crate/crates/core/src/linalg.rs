//! Small dense matrices, CSR storage, preconditioned conjugate gradients and
//! an envelope (skyline) Cholesky factorization.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(i), x);
        }
    }

    /// `Aᵀ x`
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(x[i], self.row(i), &mut out);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul(&self, other: &DMat) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &DMat) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn sym_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// `max |a_ij - a_ji|`
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.rows).map(|i| x[i] * dot(self.row(i), x)).sum()
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.rows).map(|i| x[i] * dot(self.row(i), y)).sum()
    }

    /// Returns `s` when the matrix equals `s·I` to within `tol·max|A|`.
    pub fn as_scalar(&self, tol: f64) -> Option<f64> {
        if !self.is_square() || self.rows == 0 {
            return None;
        }
        let s = self[(0, 0)];
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let target = if i == j { s } else { 0.0 };
                if (self[(i, j)] - target).abs() > tol * scale {
                    return None;
                }
            }
        }
        Some(s)
    }

    /// Lower Cholesky factor, `None` unless symmetric positive definite.
    pub fn cholesky(&self) -> Option<DMat> {
        let n = self.rows;
        let mut l = DMat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Some(l)
    }

    /// Solves `L Lᵀ x = b` given the lower factor `self`.
    pub fn cholesky_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self[(i, k)] * y[k];
            }
            y[i] = s / self[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self[(k, i)] * y[k];
            }
            y[i] = s / self[(i, i)];
        }
        y
    }

    /// Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.rows;
        assert!(self.is_square() && b.len() == n);
        let mut a = self.clone();
        let mut x = b.to_vec();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
                .unwrap();
            if a[(pivot, col)].abs() <= 1e-300_f64.max(1e-15 * scale) {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                x.swap(pivot, col);
            }
            let d = a[(col, col)];
            for i in col + 1..n {
                let f = a[(i, col)] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[(i, j)] -= f * a[(col, j)];
                }
                x[i] -= f * x[col];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= a[(i, j)] * x[j];
            }
            x[i] = s / a[(i, i)];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<DMat> {
        let n = self.rows;
        let mut inv = DMat::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Some(inv)
    }

    /// Eigen-decomposition of the symmetric part by cyclic Jacobi rotations.
    /// Eigenvalues ascending; eigenvectors are the columns of the matrix.
    pub fn sym_eigen(&self) -> (Vec<f64>, DMat) {
        let n = self.rows;
        let mut a = self.sym_part();
        let mut v = DMat::identity(n);
        let scale = a.max_abs();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..i {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = DMat::from_fn(n, n, |r, c| v[(r, order[c])]);
        (values, vectors)
    }

    pub fn min_max_eigen(&self) -> (f64, f64) {
        let (vals, _) = self.sym_eigen();
        (vals[0], vals[vals.len() - 1])
    }
}

impl Index<(usize, usize)> for DMat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Relative asymmetry `max |a_ij - a_ji| / max |a_ij|`.
    pub fn relative_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                scale = scale.max(v.abs());
                if j < i {
                    worst = worst.max((v - self.get(j, i)).abs());
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn to_dense(&self) -> DMat {
        let mut m = DMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Removes the components of `x` along the orthonormal vectors `basis`.
pub fn project_out(basis: &[Vec<f64>], x: &mut [f64]) {
    for v in basis {
        let c = dot(v, x);
        axpy(-c, v, x);
    }
}

/// Jacobi-preconditioned conjugate gradients on `A x = b`, starting from `x`.
///
/// `nullspace` lists orthonormal vectors spanning the kernel of a singular but
/// consistent operator (periodic problems); iterates are kept orthogonal to it.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    nullspace: &[Vec<f64>],
) -> Result<CgOutcome> {
    let n = a.n();
    let diag = a.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut rhs = b.to_vec();
    project_out(nullspace, &mut rhs);
    project_out(nullspace, x);
    let b_norm = norm(&rhs);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    a.matvec_into(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    project_out(nullspace, &mut r);
    let mut zv: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    project_out(nullspace, &mut zv);
    let mut p = zv.clone();
    let mut rz = dot(&r, &zv);
    let mut ap = vec![0.0; n];
    // Lanczos coefficients for a condition estimate if we stagnate.
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for it in 0..max_iter {
        let res = norm(&r) / b_norm;
        if res <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: res,
            });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Ellipticity(alloc::format!(
                "operator not positive definite (pᵀAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            zv[i] = r[i] * inv_diag[i];
        }
        project_out(nullspace, &mut zv);
        let rz_new = dot(&r, &zv);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = zv[i] + beta * p[i];
        }
        if alphas.len() < 64 {
            alphas.push(alpha);
            betas.push(beta);
        }
    }
    let res = norm(&r) / b_norm;
    if res <= tol {
        return Ok(CgOutcome {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::IllConditioned {
        iterations: max_iter,
        residual: res,
        condition_estimate: lanczos_condition(&alphas, &betas),
    })
}

fn lanczos_condition(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    if k == 0 {
        return f64::INFINITY;
    }
    let mut t = DMat::zeros(k, k);
    for j in 0..k {
        let mut d = 1.0 / alphas[j];
        if j > 0 {
            d += betas[j - 1] / alphas[j - 1];
        }
        t[(j, j)] = d;
        if j + 1 < k {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let (lo, hi) = t.min_max_eigen();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Envelope Cholesky factor `A = L Lᵀ` of a sparse SPD matrix. Row `i` of `L`
/// is stored densely from its first structural nonzero to the diagonal.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Number of stored entries the factorization of `a` would need.
    pub fn envelope_size(a: &CsrMatrix) -> usize {
        (0..a.n())
            .map(|i| i + 1 - a.row(i).map(|(j, _)| j).min().unwrap_or(i).min(i))
            .sum()
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(i).map(|(j, _)| j).min().unwrap_or(i).min(i))
            .collect();
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i + 1 - first[i]);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[start[i] + j - first[i]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = start[j];
                let mut s = data[row_i + j - fi];
                for k in k0..j {
                    s -= data[row_i + k - fi] * data[row_j + k - fj];
                }
                data[row_i + j - fi] = s / data[row_j + j - fj];
            }
            let mut d = data[row_i + i - fi];
            for k in fi..i {
                let l = data[row_i + k - fi];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Ellipticity(alloc::format!(
                    "non-positive pivot {d:e} at row {i}"
                )));
            }
            data[row_i + i - fi] = d.sqrt();
        }
        Ok(Self { first, start, data })
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.start[i];
            let mut s = x[i];
            for k in fi..i {
                s -= self.data[row + k - fi] * x[k];
            }
            x[i] = s / self.data[row + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.start[i];
            let xi = x[i] / self.data[row + i - fi];
            x[i] = xi;
            for k in fi..i {
                x[k] -= self.data[row + k - fi] * xi;
            }
        }
    }
}

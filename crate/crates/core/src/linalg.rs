//! Dense row-major matrices, a one-sided Jacobi SVD and best rank-r truncation.
//!
//! Everything here is a pure function of its inputs. Products go through
//! `matrixmultiply`; the decomposition is self-contained.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iteration.
pub const SVD_MAX_SWEEPS: usize = 60;
/// Pairwise column cosine below which two columns count as orthogonal.
pub const SVD_TOLERANCE: f64 = 1e-12;

/// Dense `rows x cols` matrix of `f64`, stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Square matrix with `values` on the diagonal.
    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Wraps row-major `data`. Rejects length mismatches and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Entries drawn i.i.d. from `N(0, std^2)`.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Frobenius inner product `<self, other>`.
    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// New matrix made of the listed columns, in the listed order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |r, c| self[(r, idx[c])])
    }

    /// New matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Side-by-side concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::invalid("hstack: row counts differ"));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Top-to-bottom concatenation.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::invalid("vstack: column counts differ"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Whether an operand enters a product as-is or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `op(a) * op(b)` without materializing transposes.
pub fn gemm(a: &Matrix, op_a: Op, b: &Matrix, op_b: Op) -> Result<Matrix> {
    let (m, ka, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    if ka != kb {
        return Err(Error::invalid(format!(
            "matmul inner dimensions differ: {m}x{ka} times {kb}x{n}"
        )));
    }
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || ka == 0 {
        return Ok(out);
    }
    // SAFETY: the pointer/stride pairs describe exactly the buffers of `a`, `b`
    // and `out`, whose lengths match the dimensions checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Op::N, b, Op::N)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Thin SVD `M = U diag(sigma) V^T` with `p = min(rows, cols)` components.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x p`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `cols x p`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `U diag(sigma) V^T` restricted to the leading `r` components.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.sigma.len());
        let idx: Vec<usize> = (0..r).collect();
        let mut us = self.u.select_columns(&idx);
        for row in 0..us.rows() {
            for (c, s) in us.row_mut(row).iter_mut().zip(&self.sigma) {
                *c *= s;
            }
        }
        gemm(&us, Op::N, &self.v.select_columns(&idx), Op::T).expect("shapes agree by construction")
    }

    /// `sqrt(sum_{i > r} sigma_i^2)`, the Frobenius error of the best rank-`r` approximation.
    pub fn tail_norm(&self, r: usize) -> f64 {
        self.sigma.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt()
    }

    /// `sum_{i > r} sigma_i`, a looser bound on the same error.
    pub fn tail_sum(&self, r: usize) -> f64 {
        self.sigma.iter().skip(r).sum()
    }

    /// Number of singular values above `threshold`.
    pub fn numerical_rank(&self, threshold: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > threshold).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    if m.rows >= m.cols {
        let (u, sigma, v) = jacobi_tall(m)?;
        Ok(SvdResult { u, sigma, v })
    } else {
        let (v, sigma, u) = jacobi_tall(&m.transpose())?;
        let mut out = SvdResult { u, sigma, v };
        // The transpose route normalized V's signs; redo it for U.
        fix_signs(&mut out.u, &mut out.v);
        Ok(out)
    }
}

/// Jacobi on a matrix with `rows >= cols`. Returns `(U, sigma, V)`.
fn jacobi_tall(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (d, p) = m.shape();
    // Column-major working copies keep the rotations cache friendly.
    let mut u: Vec<Vec<f64>> = (0..p).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|c| (0..p).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = p < 2;
    let mut off = 0.0;
    for _ in 0..SVD_MAX_SWEEPS {
        off = 0.0_f64;
        for i in 0..p {
            for j in (i + 1)..p {
                let (alpha, beta, gamma) = {
                    let (ui, uj) = (&u[i], &u[j]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in ui.iter().zip(uj) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let cosine = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                off = off.max(cosine);
                if cosine <= SVD_TOLERANCE {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if off <= SVD_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical {
            what: "one-sided Jacobi SVD",
            residual: off,
        });
    }

    let mut sigma: Vec<f64> = u.iter().map(|col| norm2(col)).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(p);
    let mut v_cols = Vec::with_capacity(p);
    let mut sorted_sigma = Vec::with_capacity(p);
    for &k in &order {
        let s = sigma[k];
        if s > f64::MIN_POSITIVE * 1e3 {
            u_cols.push(Some(u[k].iter().map(|x| x / s).collect()));
            sorted_sigma.push(s);
        } else {
            u_cols.push(None);
            sorted_sigma.push(0.0);
        }
        v_cols.push(std::mem::take(&mut v[k]));
    }
    sigma = sorted_sigma;
    let u_cols = complete_basis(d, u_cols);

    let mut u_mat = Matrix::from_fn(d, p, |r, c| u_cols[c][r]);
    let mut v_mat = Matrix::from_fn(p, p, |r, c| v_cols[c][r]);
    fix_signs(&mut u_mat, &mut v_mat);
    Ok((u_mat, sigma, v_mat))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fills `None` slots (zero singular values) with unit vectors orthogonal to
/// everything already present.
fn complete_basis(d: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut out = Vec::with_capacity(cols.len());
    for slot in cols {
        match slot {
            Some(c) => out.push(c),
            None => {
                let mut best: Option<Vec<f64>> = None;
                let mut best_norm = 0.0;
                for e in 0..d {
                    let mut cand = vec![0.0; d];
                    cand[e] = 1.0;
                    for _ in 0..2 {
                        for q in &basis {
                            let proj: f64 = q.iter().zip(&cand).map(|(a, b)| a * b).sum();
                            for (x, qv) in cand.iter_mut().zip(q) {
                                *x -= proj * qv;
                            }
                        }
                    }
                    let n = norm2(&cand);
                    if n > best_norm {
                        best_norm = n;
                        best = Some(cand);
                    }
                }
                let mut v = best.expect("basis cannot exceed the ambient dimension");
                v.iter_mut().for_each(|x| *x /= best_norm);
                basis.push(v.clone());
                out.push(v);
            }
        }
    }
    out
}

/// Makes the first clearly nonzero entry of each left singular vector
/// non-negative, flipping the paired right vector with it.
fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for c in 0..u.cols() {
        let lead = (0..u.rows()).map(|r| u[(r, c)]).find(|x| x.abs() > 1e-12);
        if matches!(lead, Some(x) if x < 0.0) {
            for r in 0..u.rows() {
                u[(r, c)] = -u[(r, c)];
            }
            for r in 0..v.rows() {
                v[(r, c)] = -v[(r, c)];
            }
        }
    }
}

/// Best rank-`r` approximation in Frobenius norm together with its residual
/// `sqrt(sum_{i > r} sigma_i^2)`.
pub fn truncate_rank(m: &Matrix, r: usize) -> Result<(Matrix, f64)> {
    let p = m.rows.min(m.cols);
    if r == 0 || r > p {
        return Err(Error::invalid(format!(
            "truncation rank {r} outside 1..={p}"
        )));
    }
    let s = svd(m)?;
    Ok((s.reconstruct(r), s.tail_norm(r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn identity_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::gaussian(3, 5, 1.0, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn zero_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Matrix::gaussian(3, 4, 1.0, &mut rng);
        assert_eq!(matmul(&Matrix::zeros(2, 3), &m).unwrap(), Matrix::zeros(2, 4));
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let b = Matrix::gaussian(4, 3, 1.0, &mut rng);
        assert!(max_diff(&matmul(&a, &b).unwrap(), &naive_matmul(&a, &b)) <= 1e-12);
    }

    #[test]
    fn transposed_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix::gaussian(6, 4, 1.0, &mut rng);
        let b = Matrix::gaussian(6, 3, 1.0, &mut rng);
        let got = gemm(&a, Op::T, &b, Op::N).unwrap();
        assert!(max_diff(&got, &naive_matmul(&a.transpose(), &b)) <= 1e-12);
        let c = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let got = gemm(&a, Op::N, &c, Op::T).unwrap();
        assert!(max_diff(&got, &naive_matmul(&a, &c.transpose())) <= 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn svd_of_identity_and_diag() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        let s = svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        assert!(max_diff(&s.reconstruct(3), &Matrix::diag(&[1.0, 3.0, 2.0])) < 1e-15);
    }

    #[test]
    fn svd_zero_matrix_has_orthonormal_factors() {
        let s = svd(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        let utu = gemm(&s.u, Op::T, &s.u, Op::N).unwrap();
        assert!(max_diff(&utu, &Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn svd_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Matrix::gaussian(3, 7, 1.0, &mut rng);
        let s = svd(&m).unwrap();
        assert_eq!(s.u.shape(), (3, 3));
        assert_eq!(s.v.shape(), (7, 3));
        assert!(max_diff(&s.reconstruct(3), &m) < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = Matrix::gaussian(6, 4, 1.0, &mut rng);
        let s = svd(&m).unwrap();
        for c in 0..4 {
            let lead = s.u.column(c).into_iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn truncation_examples() {
        let (_, res) = truncate_rank(&Matrix::identity(3), 2).unwrap();
        assert!((res - 1.0).abs() < 1e-15);
        let (t, res) = truncate_rank(&Matrix::diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert!((res - 5f64.sqrt()).abs() < 1e-15);
        assert!(max_diff(&t, &Matrix::diag(&[3.0, 0.0, 0.0])) < 1e-15);
    }

    #[test]
    fn truncation_rank_out_of_range() {
        assert!(truncate_rank(&Matrix::identity(3), 0).is_err());
        assert!(truncate_rank(&Matrix::identity(3), 4).is_err());
    }
}

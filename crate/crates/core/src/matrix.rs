//! Small dense row-major matrices.
//!
//! Every matrix in the pipeline is at most a few entries per side (a 2×2
//! information matrix per coordinate in the default setup), and the
//! simulation evaluates them on every integration tick. Storage is inline up
//! to 16 entries so the hot loop never touches the allocator; larger shapes
//! spill to the heap transparently.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use smallvec::SmallVec;

use crate::error::{Error, Result};

type Storage = SmallVec<[f64; 16]>;

/// Condition-number ceiling above which inversions are reported as failures.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Storage,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: SmallVec::from_elem(0.0, rows * cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must be rows*cols");
        Matrix {
            rows,
            cols,
            data: SmallVec::from_slice(data),
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.row_mut(i).copy_from_slice(row);
        }
        m
    }

    pub fn column(data: &[f64]) -> Self {
        Self::from_row_slice(data.len(), 1, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.scale_mut(k);
        out
    }

    pub fn scale_mut(&mut self, k: f64) {
        for v in self.data.iter_mut() {
            *v *= k;
        }
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += k * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        for v in self.data.iter_mut() {
            *v = value;
        }
    }

    /// `self += k * a * b` without temporaries.
    pub fn add_product(&mut self, k: f64, a: &Matrix, b: &Matrix) {
        assert_eq!(a.cols, b.rows, "matmul shape mismatch");
        assert_eq!(self.shape(), (a.rows, b.cols), "add_product shape mismatch");
        let n = b.cols;
        for i in 0..a.rows {
            for l in 0..a.cols {
                let s = k * a.data[i * a.cols + l];
                if s == 0.0 {
                    continue;
                }
                let (row, brow) = (&mut self.data[i * n..(i + 1) * n], &b.data[l * n..(l + 1) * n]);
                for (o, v) in row.iter_mut().zip(brow) {
                    *o += s * v;
                }
            }
        }
    }

    /// `self * other^T` without materializing the transpose.
    pub fn mul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "mul_transpose shape mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// `self * m * self^T`, the congruence used for covariance propagation.
    pub fn congruence(&self, m: &Matrix) -> Matrix {
        (self * m).mul_transpose(self)
    }

    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (r2, c2) = other.shape();
        Matrix::from_fn(self.rows * r2, self.cols * c2, |i, j| {
            self[(i / r2, j / c2)] * other[(i % r2, j % c2)]
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced 1-norm (max column sum).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.rows).all(|i| {
            (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= rel_tol * scale)
        })
    }

    /// Replaces the matrix with `(M + M^T) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize needs a square matrix");
        for i in 0..self.rows {
            for j in 0..i {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Matrix> {
        self.cholesky_impl(false)
    }

    /// Lower factor `L` with `L L^T = self` for a symmetric positive
    /// semidefinite matrix. Zero pivots yield zero columns.
    pub fn psd_factor(&self) -> Result<Matrix> {
        self.cholesky_impl(true)
    }

    fn cholesky_impl(&self, semidefinite: bool) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::Dimensions(format!(
                "cholesky of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let tol = 1e-12 * self.max_abs().max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if semidefinite && d.abs() <= tol {
                // The rest of the column must vanish as well.
                for i in j + 1..n {
                    let mut s = self[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    if s.abs() > tol.sqrt() * self.max_abs().sqrt() + tol {
                        return Err(Error::NotPositiveSemidefinite { pivot: j, value: d });
                    }
                }
                continue;
            }
            if !(d > 0.0) {
                return Err(if semidefinite {
                    Error::NotPositiveSemidefinite { pivot: j, value: d }
                } else {
                    Error::NotPositiveDefinite { pivot: j, value: d }
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Inverse of a symmetric positive definite matrix together with its
    /// 1-norm condition estimate.
    pub fn spd_inverse_with_condition(&self) -> Result<(Matrix, f64)> {
        let n = self.rows;
        let l = self.cholesky()?;
        // Invert L (lower triangular), then A^{-1} = L^{-T} L^{-1}.
        let mut linv = Matrix::zeros(n, n);
        for j in 0..n {
            linv[(j, j)] = 1.0 / l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = s / l[(i, i)];
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += linv[(k, i)] * linv[(k, j)];
                }
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        let cond = self.norm_1() * inv.norm_1();
        Ok((inv, cond))
    }

    /// SPD inverse that rejects condition estimates above [`MAX_CONDITION`].
    pub fn spd_inverse(&self) -> Result<Matrix> {
        let (inv, cond) = self.spd_inverse_with_condition()?;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned { cond });
        }
        Ok(inv)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Linear (row-major) indexing, convenient for column vectors.
impl Index<usize> for Matrix {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Matrix {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, k: f64) -> Matrix {
        self.scale(k)
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Matrix> for Matrix {
    fn sub_assign(&mut self, rhs: &Matrix) {
        self.axpy(-1.0, rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_with_identity_repeats_blocks() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let k = a.kron(&Matrix::identity(2));
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(0, 2)], 1.0);
        assert_eq!(k[(1, 3)], 1.0);
        assert_eq!(k.as_slice().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let a = Matrix::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let inv = a.spd_inverse().unwrap();
        let eye = &a * &inv;
        assert!((&eye - &Matrix::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn psd_factor_handles_zero_and_rank_deficient() {
        let z = Matrix::zeros(2, 2);
        assert!(z.psd_factor().unwrap().is_zero());

        let v = Matrix::column(&[1.0, 2.0]);
        let rank_one = v.mul_transpose(&v);
        let l = rank_one.psd_factor().unwrap();
        assert!((&l.mul_transpose(&l) - &rank_one).max_abs() < 1e-12);

        let bad = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(bad.psd_factor().is_err());
    }

    #[test]
    fn ill_conditioned_inverse_is_rejected() {
        let a = Matrix::from_diagonal(&[1.0, 1e-13]);
        assert!(matches!(a.spd_inverse(), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut a = Matrix::from_rows(&[&[1.0, 2.0], &[4.0, 1.0]]);
        a.symmetrize();
        assert_eq!(a[(0, 1)], 3.0);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn large_matrices_spill_to_heap() {
        let a = Matrix::identity(6);
        let b = &a * &a;
        assert_eq!(b, a);
    }
}

//! Small dense linear algebra for information matrices (a handful of rows).

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative pivot below which a symmetric matrix is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + A')/2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in 0..i {
                let m = (self[(i, j)] + self[(j, i)]) / T::lit(2.0);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky factorization with diagonal pivoting, `P' A P = L L'`.
///
/// Pivots are chosen by the largest remaining diagonal relative to the
/// original diagonal, which makes the rank decision invariant to column scale.
#[derive(Debug, Clone)]
pub struct PivotedCholesky<T> {
    lower: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> PivotedCholesky<T> {
    /// Factors a symmetric positive definite matrix. Fails with
    /// [`Error::SingularDesign`] naming the first dependent column.
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "square matrix required");
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        let tol = T::lit(RANK_TOL);

        for k in 0..n {
            // pick the pivot with the largest relative remaining diagonal
            let mut best = k;
            let mut best_ratio = T::neg_infinity();
            for j in k..n {
                let s = scale[perm[j]];
                let ratio = if s > T::zero() { work[(j, j)] / s } else { T::neg_infinity() };
                if ratio > best_ratio {
                    best_ratio = ratio;
                    best = j;
                }
            }
            if !(best_ratio > tol) {
                return Err(Error::SingularDesign(format!(
                    "column {} is linearly dependent on the others (relative pivot {:.3e})",
                    perm[best],
                    best_ratio.as_f64()
                )));
            }
            if best != k {
                swap_sym(&mut work, k, best);
                perm.swap(k, best);
            }
            let d = work[(k, k)].sqrt();
            work[(k, k)] = d;
            for i in k + 1..n {
                work[(i, k)] = work[(i, k)] / d;
            }
            for j in k + 1..n {
                for i in j..n {
                    let v = work[(i, j)] - work[(i, k)] * work[(j, k)];
                    work[(i, j)] = v;
                    work[(j, i)] = v;
                }
            }
        }
        let mut lower = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                lower[(i, j)] = work[(i, j)];
            }
        }
        Ok(Self { lower, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        let l = &self.lower;
        // forward: L y = P' b
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        // back: L' z = y
        let mut z = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        let mut x = vec![T::zero(); n];
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.perm.len();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrize();
        inv
    }

    /// `ln det A`.
    pub fn log_det(&self) -> T {
        self.lower.diagonal().iter().map(|d| d.ln()).sum::<T>() * T::lit(2.0)
    }
}

fn swap_sym<T: Scalar>(m: &mut Matrix<T>, a: usize, b: usize) {
    let n = m.rows();
    for j in 0..n {
        let t = m[(a, j)];
        m[(a, j)] = m[(b, j)];
        m[(b, j)] = t;
    }
    for i in 0..n {
        let t = m[(i, a)];
        m[(i, a)] = m[(i, b)];
        m[(i, b)] = t;
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(PivotedCholesky::factor(a)?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![4.0, 2.0, 0.6],
            vec![2.0, 5.0, 1.0],
            vec![0.6, 1.0, 3.0],
        ])
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = spd();
        let inv = spd_inverse(&a).unwrap();
        for i in 0..3 {
            let col: Vec<f64> = (0..3).map(|k| inv[(k, i)]).collect();
            let prod = a.mul_vec(&col);
            for (j, v) in prod.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_det_matches_direct() {
        let a = spd();
        let det: f64 = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        let f = PivotedCholesky::factor(&a).unwrap();
        assert!((f.log_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn detects_dependent_column() {
        // third column = first + second
        let x = [[1.0, 0.0, 1.0], [1.0, 1.0, 2.0], [1.0, 2.0, 3.0], [1.0, 5.0, 6.0]];
        let mut a = Matrix::<f64>::zeros(3, 3);
        for r in &x {
            for i in 0..3 {
                for j in 0..3 {
                    a[(i, j)] += r[i] * r[j];
                }
            }
        }
        assert!(matches!(PivotedCholesky::factor(&a), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let x = PivotedCholesky::factor(&a).unwrap().solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }
}

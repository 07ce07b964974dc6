//! Dense row-major feature matrices and the small least-squares solves the
//! learners need.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `n × p` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let mut m = Matrix::zeros(n, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Dimension(format!(
                    "column {j} has {} entries, expected {n}",
                    c.len()
                )));
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    /// A matrix with `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Matrix::zeros(n, 0)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Horizontal concatenation; all parts must share the row count.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Dimension("hstack with unequal row counts".into()));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map_rows(&self, cols: usize, f: impl Fn(&[f64], &mut [f64])) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            let (src, dst) = (self.row(i), &mut out.data[i * cols..(i + 1) * cols]);
            f(src, dst);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weighted, optionally ridge-penalized least squares with an unpenalized
/// intercept: minimizes `Σ wᵢ (yᵢ − b₀ − xᵢ·b)² + λ‖b‖²`.
///
/// Solved on centered data so the intercept drops out of the penalized system.
/// Returns `[b₀, b…]`. With `λ = 0` a singular Gram matrix is an error unless
/// `pinv_fallback` is set, in which case the minimum-norm solution is used.
pub fn weighted_ridge(
    x: &Matrix,
    y: &[f64],
    w: Option<&[f64]>,
    lambda: f64,
    pinv_fallback: bool,
) -> Result<(Vec<f64>, bool)> {
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::LearnerFailed("least squares on zero rows".into()));
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(weight).sum();
    if wsum <= 0.0 {
        return Err(Error::LearnerFailed("zero total weight".into()));
    }
    let mut xbar = vec![0.0; p];
    let mut ybar = 0.0;
    for i in 0..n {
        let wi = weight(i);
        for (j, v) in x.row(i).iter().enumerate() {
            xbar[j] += wi * v;
        }
        ybar += wi * y[i];
    }
    xbar.iter_mut().for_each(|v| *v /= wsum);
    ybar /= wsum;
    if p == 0 {
        return Ok((vec![ybar], false));
    }

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut centered = vec![0.0; p];
    for i in 0..n {
        let wi = weight(i);
        if wi == 0.0 {
            continue;
        }
        for (j, v) in x.row(i).iter().enumerate() {
            centered[j] = v - xbar[j];
        }
        let yc = y[i] - ybar;
        for a in 0..p {
            let ca = wi * centered[a];
            rhs[a] += ca * yc;
            let row = &mut gram[a * p..a * p + p];
            for b in a..p {
                row[b] += ca * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
        gram[a * p + a] += lambda;
    }

    let g = DMatrix::from_row_slice(p, p, &gram);
    let r = DVector::from_column_slice(&rhs);
    let scale = (0..p).map(|a| gram[a * p + a].abs()).fold(0.0, f64::max);
    let mut used_pinv = false;
    let beta = match g.clone().cholesky() {
        Some(ch) if well_conditioned(&ch) => ch.solve(&r),
        _ => {
            if lambda == 0.0 && !pinv_fallback {
                return Err(Error::Singular(format!("{p} features, {n} rows")));
            }
            used_pinv = true;
            let svd = g.svd(true, true);
            let tol = scale * 1e-10;
            svd.solve(&r, tol)
                .map_err(|e| Error::Singular(e.to_string()))?
        }
    };
    let intercept = ybar - beta.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();
    let mut coef = Vec::with_capacity(p + 1);
    coef.push(intercept);
    coef.extend(beta.iter().copied());
    Ok((coef, used_pinv))
}

fn well_conditioned(ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = ch.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    // Squared pivot ratio approximates the condition number of the Gram matrix.
    min > 0.0 && (min / max).powi(2) > 1e-13
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hstack_and_select() {
        let a = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = Matrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(c.row(1), &[2.0, 5.0, 6.0]);
        assert_eq!(c.select_rows(&[1, 1]).row(0), &[2.0, 5.0, 6.0]);
        assert_eq!(Matrix::hstack(&[&a, &Matrix::empty(2)]).unwrap(), a);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let y = [1.0, 4.0, 7.0, 16.0];
        let (coef, pinv) = weighted_ridge(&x, &y, None, 0.0, false).unwrap();
        assert!(!pinv);
        assert!((coef[0] - 1.0).abs() < 1e-12 && (coef[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_singular_without_fallback() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(
            weighted_ridge(&x, &y, None, 0.0, false),
            Err(Error::Singular(_))
        ));
        let (coef, pinv) = weighted_ridge(&x, &y, None, 0.0, true).unwrap();
        assert!(pinv);
        let fit = coef[0] + coef[1] * 2.0 + coef[2] * 4.0;
        assert!((fit - 2.0).abs() < 1e-8);
    }
}

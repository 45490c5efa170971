//! Small dense-matrix helpers and a Householder QR least-squares solver.
//!
//! The design matrices in this crate are tall and very narrow (a few dozen
//! rows, 4-7 columns), so a plain row-major matrix with an in-place QR is
//! both simpler and faster than pulling in a linear-algebra dependency.

#![allow(clippy::needless_range_loop)]

/// Relative threshold on the R diagonal below which a column is treated as
/// rank-deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, val: f64) {
        self.data[row * self.cols + col] = val;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// `self * x` for a column vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch in mul_vec");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * x` for a vector `x` of length `rows`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "dimension mismatch in transpose_mul_vec");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            for (c, v) in row.iter().enumerate() {
                out[c] += v * x[r];
            }
        }
        out
    }
}

/// Outcome of a least-squares solve that found the matrix rank-deficient.
///
/// `deficient_columns` lists the columns whose R diagonal collapsed, which
/// callers map back to knot indices for error reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDeficiency {
    pub deficient_columns: Vec<usize>,
}

/// Minimizes `||a x - b||_2` via Householder QR without forming `A^T A`.
///
/// Returns the rank-deficiency pattern instead of a solution when any
/// diagonal of R is negligible relative to the largest one.
pub fn solve_least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, RankDeficiency> {
    assert_eq!(a.rows(), b.len(), "rhs length must match row count");
    let m = a.rows();
    let n = a.cols();
    assert!(m >= n, "least squares requires at least as many rows as columns");

    let mut r = a.clone();
    let mut qtb = b.to_vec();

    for k in 0..n {
        // Householder vector for column k, rows k..m.
        let mut norm = 0.0;
        for i in k..m {
            let v = r.get(i, k);
            norm += v * v;
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = r.get(k, k);
        let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
        let u0 = x0 + sign * norm;
        // v = [u0, r[k+1..m, k]]; beta = 2 / ||v||^2
        let mut vnorm2 = u0 * u0;
        for i in (k + 1)..m {
            let v = r.get(i, k);
            vnorm2 += v * v;
        }
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // Apply reflector to remaining columns of R.
        for j in k..n {
            let mut dot = u0 * r.get(k, j);
            for i in (k + 1)..m {
                dot += r.get(i, k) * r.get(i, j);
            }
            let scale = beta * dot;
            r.set(k, j, r.get(k, j) - scale * u0);
            for i in (k + 1)..m {
                let rik = r.get(i, k);
                if j == k {
                    // Column k below the diagonal is annihilated by construction;
                    // keep the Householder vector in place for later columns.
                    continue;
                }
                r.set(i, j, r.get(i, j) - scale * rik);
            }
        }
        // Apply reflector to the right-hand side.
        let mut dot = u0 * qtb[k];
        for i in (k + 1)..m {
            dot += r.get(i, k) * qtb[i];
        }
        let scale = beta * dot;
        qtb[k] -= scale * u0;
        for i in (k + 1)..m {
            qtb[i] -= scale * r.get(i, k);
        }
    }

    // Rank check on the R diagonal.
    let max_diag = (0..n).map(|k| r.get(k, k).abs()).fold(0.0_f64, f64::max);
    let threshold = max_diag * RANK_TOLERANCE;
    let deficient: Vec<usize> = (0..n)
        .filter(|&k| r.get(k, k).abs() <= threshold || max_diag == 0.0)
        .collect();
    if !deficient.is_empty() {
        return Err(RankDeficiency {
            deficient_columns: deficient,
        });
    }

    // Back substitution on the top n x n of R.
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = qtb[k];
        for j in (k + 1)..n {
            s -= r.get(k, j) * x[j];
        }
        x[k] = s / r.get(k, k);
    }
    Ok(x)
}

/// Ridge-regularized least squares via the augmented system
/// `[A; sqrt(lambda) I] x ~ [b; 0]`.
pub fn solve_least_squares_ridge(a: &Matrix, b: &[f64], lambda: f64) -> Vec<f64> {
    let m = a.rows();
    let n = a.cols();
    let mut aug = Matrix::zeros(m + n, n);
    for r in 0..m {
        for c in 0..n {
            aug.set(r, c, a.get(r, c));
        }
    }
    let sqrt_l = lambda.sqrt();
    for c in 0..n {
        aug.set(m + c, c, sqrt_l);
    }
    let mut rhs = b.to_vec();
    rhs.extend(std::iter::repeat_n(0.0, n));
    // The augmented matrix has full column rank for any lambda > 0.
    solve_least_squares(&aug, &rhs).expect("ridge-augmented system is full rank")
}

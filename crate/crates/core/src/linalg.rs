//! Dense linear algebra for the small `d x d` systems this crate solves.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry count as zero.
const RELATIVE_PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
    min_pivot: f64,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle is read.
    ///
    /// Fails with [`Error::SingularCovariance`] carrying the smallest pivot
    /// when any pivot is not safely positive.
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: a.ncols(),
            });
        }
        let scale = (0..d).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
        let mut l = Array2::<f64>::zeros((d, d));
        let mut min_pivot = f64::INFINITY;
        for j in 0..d {
            let mut pivot = a[[j, j]];
            for k in 0..j {
                pivot -= l[[j, k]] * l[[j, k]];
            }
            min_pivot = min_pivot.min(pivot);
            if !(pivot > RELATIVE_PIVOT_TOL * scale) || !pivot.is_finite() {
                return Err(Error::SingularCovariance { pivot: min_pivot });
            }
            let ljj = pivot.sqrt();
            l[[j, j]] = ljj;
            for i in j + 1..d {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { l, min_pivot })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Smallest pivot `a_jj - sum_k l_jk^2` met during factorization.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn factor_l(&self) -> &Array2<f64> {
        &self.l
    }

    /// Solves `A x = b` by forward then back substitution.
    pub fn solve(&self, b: ArrayView1<f64>) -> Result<Array1<f64>> {
        let d = self.dim();
        if b.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: b.len(),
            });
        }
        let l = &self.l;
        let mut z = b.to_owned();
        for i in 0..d {
            let mut s = z[i];
            for k in 0..i {
                s -= l[[i, k]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= l[[k, i]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        Ok(z)
    }
}

/// Spectral norm of a symmetric matrix, `max |lambda_i|`, via a symmetric
/// eigendecomposition.
pub fn symmetric_op_norm(a: ArrayView2<f64>) -> f64 {
    let d = a.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `(1/N) X^T X`, accumulated row by row and symmetrized.
pub fn gram_mean(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut g = Array2::<f64>::zeros((d, d));
    for row in x.rows() {
        for i in 0..d {
            let xi = row[i];
            for j in 0..=i {
                g[[i, j]] += xi * row[j];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = g[[i, j]] * inv;
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

//! Dense symmetric positive definite solves and rank checks.
//!
//! Every MM update in the crate reduces to one SPD system, so this is the
//! only factorization the fitters need. Explicit inverses are never formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{domain, Error, Result};

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix. Only the lower triangle of `m` is read.
    pub fn factor(m: ArrayView2<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return domain(format!("expected a square matrix, got {}x{}", n, m.ncols()));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = m[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = m[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let l = &self.lower;
        let n = l.nrows();
        let mut z = b.to_owned();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[[i, k]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        z
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }
}

/// Solve `M v = b` for symmetric positive definite `M`.
pub fn solve_spd(m: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if b.len() != m.nrows() {
        return domain(format!("rhs length {} does not match matrix order {}", b.len(), m.nrows()));
    }
    Ok(Cholesky::factor(m)?.solve(b))
}

/// `XᵀX`.
pub fn gram(x: ArrayView2<f64>) -> Array2<f64> {
    x.t().dot(&x)
}

/// Number of linearly independent columns, judged by a Cholesky sweep of the
/// Gram matrix that drops any column whose remaining pivot falls below
/// `rel_tol` times its own squared norm.
pub fn column_rank(x: ArrayView2<f64>, rel_tol: f64) -> usize {
    dependent_columns(gram(x.view()).view(), rel_tol).iter().filter(|d| !**d).count()
}

/// Index of the first column that is (numerically) in the span of the
/// preceding ones, if any.
pub fn first_dependent_column(x: ArrayView2<f64>, rel_tol: f64) -> Option<usize> {
    dependent_columns(gram(x.view()).view(), rel_tol).iter().position(|d| *d)
}

fn dependent_columns(g: ArrayView2<f64>, rel_tol: f64) -> Vec<bool> {
    let p = g.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    let mut dropped = vec![false; p];
    for j in 0..p {
        let scale = g[[j, j]];
        let mut d = scale;
        for k in 0..j {
            if !dropped[k] {
                d -= l[[j, k]] * l[[j, k]];
            }
        }
        if !(scale > 0.0) || d <= rel_tol * scale {
            dropped[j] = true;
            continue;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..p {
            let mut s = g[[i, j]];
            for k in 0..j {
                if !dropped[k] {
                    s -= l[[i, k]] * l[[j, k]];
                }
            }
            l[[i, j]] = s / djj;
        }
    }
    dropped
}

/// Ordinary least squares via the normal equations.
pub fn ols(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    let g = gram(x.view());
    let rhs = x.t().dot(&y);
    solve_spd(g.view(), rhs.view())
}

//! Small dense linear-algebra helpers for the r×r and c×c systems the
//! solvers need. Sizes here are tiny, so plain loops are fine.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix is not positive definite (pivot {j} = {d:e})"
            )));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(a)?;
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {n}",
            b.nrows()
        )));
    }
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        let scale: f64 = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// 2-norm condition number of a (tall) matrix via the eigenvalues of `AᵀA`.
pub fn condition_number(a: ArrayView2<f64>) -> f64 {
    let gram = a.t().dot(&a);
    let ev = symmetric_eigenvalues(gram.view());
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

/// Modified Gram-Schmidt on the columns, in place. Columns that collapse
/// numerically are replaced by zero.
pub fn orthonormalize_columns(a: &mut Array2<f64>) {
    let k = a.ncols();
    for j in 0..k {
        for i in 0..j {
            let proj = a.column(i).dot(&a.column(j));
            let ci = a.column(i).to_owned();
            a.column_mut(j).scaled_add(-proj, &ci);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm > 1e-12 {
            a.column_mut(j).mapv_inplace(|v| v / norm);
        } else {
            a.column_mut(j).fill(0.0);
        }
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(gram: ArrayView2<f64>, start: ArrayView1<f64>, iters: usize) -> f64 {
    let mut v = start.to_owned();
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        v.fill(1.0);
    }
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = gram.dot(&v);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / wn;
    }
    // Rayleigh quotient at the final iterate.
    lambda.max(v.dot(&gram.dot(&v)))
}

pub fn frobenius_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Mean and (population) standard deviation of a column-wise reduction.
pub fn column_moments(a: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = a.nrows() as f64;
    let mean = a.sum_axis(Axis(0)) / n;
    let mut var = Array1::<f64>::zeros(a.ncols());
    for row in a.rows() {
        for (j, v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var.mapv_inplace(|v| (v / n).sqrt());
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solve_recovers_solution() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let x = array![[1.0, -2.0], [0.5, 3.0], [-1.0, 0.25]];
        let b = a.dot(&x);
        let got = cholesky_solve(a.view(), b.view()).unwrap();
        for (g, e) in got.iter().zip(x.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = symmetric_eigenvalues(a.view());
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_top_eigenvalue() {
        let a = array![[5.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let l = power_iteration(a.view(), array![1.0, 1.0, 1.0].view(), 200);
        assert!((l - 5.0).abs() < 1e-9);
    }

    #[test]
    fn gram_schmidt_orthonormal() {
        let mut a = array![[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        orthonormalize_columns(&mut a);
        let g = a.t().dot(&a);
        assert!((g[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((g[[1, 1]] - 1.0).abs() < 1e-12);
        assert!(g[[0, 1]].abs() < 1e-12);
    }
}

//! Eigen-solvers backed by `nalgebra`.

use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;

const MAX_SWEEPS: usize = 100_000;

/// Largest eigenvalue modulus of a square matrix, via a real Schur form.
pub fn spectral_radius(a: &Matrix, tol: f64) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("spectral_radius of {:?}", a.shape())));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("spectral_radius tolerance must be > 0, got {tol}")));
    }
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let schur = nalgebra::Schur::try_new(a.to_nalgebra(), tol.min(1e-13), MAX_SWEEPS)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`.
    pub vectors: Matrix,
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("symmetric_eigen of {:?}", a.shape())));
    }
    let n = a.rows();
    let eig = nalgebra::SymmetricEigen::try_new(a.to_nalgebra(), 1e-15, MAX_SWEEPS)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> Result<f64> {
    Ok(symmetric_eigen(a)?.values.last().copied().unwrap_or(0.0))
}

/// Cholesky factor `L` (lower, row-major) of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::Numeric(format!("matrix not positive definite at pivot {j}")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `L y = b` (forward substitution only).
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_radius() {
        assert!((spectral_radius(&Matrix::identity(4), 1e-12).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_radius() {
        let a = Matrix::from_rows(&[vec![0.3, 0.0], vec![0.0, -0.9]]);
        assert!((spectral_radius(&a, 1e-12).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_complex_pair() {
        // Eigenvalues ±2i.
        let a = Matrix::from_rows(&[vec![0.0, -2.0], vec![2.0, 0.0]]);
        assert!((spectral_radius(&a, 1e-12).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_square_rejected() {
        assert!(spectral_radius(&Matrix::zeros(2, 3), 1e-9).is_err());
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0, 0.4], vec![2.0, 3.0, 0.5], vec![0.4, 0.5, 2.0]]);
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[1.0, 2.0, 3.0]);
        let ax: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[(i, j)] * x[j]).sum()).collect();
        for (u, v) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = symmetric_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
    }
}

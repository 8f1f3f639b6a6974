//! Covariance and symmetric eigendecomposition on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-mean and population covariance (divided by N) of an `[N, D]` matrix.
pub fn mean_and_covariance(x: &Tensor) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = (x.rows(), x.row_len());
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |r, c| x.data()[r * d + c] - mean[c]);
    let mut cov = centered.tr_mul(&centered);
    cov /= n as f64;
    // symmetrise away rounding differences between the two triangles
    let cov = (&cov + cov.transpose()) * 0.5;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    Ok((mean, cov))
}

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are the columns.
pub fn sorted_eigen(cov: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(&[m.nrows(), m.ncols()], |i| m[(i / m.ncols(), i % m.ncols())])
}

pub fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = (t.rows(), t.row_len());
    DMatrix::from_row_slice(r, c, t.data())
}

/// Blocked product for the large dense transforms (ZCA, PCA).
pub fn matmul_blocked(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim("matmul_blocked", a.shape(), b.shape()));
    }
    Ok(to_tensor(&(to_matrix(a) * to_matrix(b))))
}

//! Small dense linear-algebra helpers on top of LAPACK.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Eigh, FactorizeC, SolveC, UPLO, QR};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in non-increasing
/// order; column `j` of the returned matrix is the eigenvector of the j-th
/// largest eigenvalue.
pub fn eigh_descending(m: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, vecs) = m.to_owned().eigh(UPLO::Lower)?;
    let k = vals.len();
    let vals_desc = Array1::from_iter((0..k).map(|i| vals[k - 1 - i]));
    let mut vecs_desc = Array2::zeros((vecs.nrows(), k));
    for i in 0..k {
        vecs_desc.column_mut(i).assign(&vecs.column(k - 1 - i));
    }
    Ok((vals_desc, vecs_desc))
}

/// Solve the SPD system `M x = b` for several right-hand sides with one
/// Cholesky factorization.
pub struct SpdSolver {
    factor: ndarray_linalg::CholeskyFactorized<ndarray::OwnedRepr<f64>>,
}

impl SpdSolver {
    pub fn new(m: &Array2<f64>) -> Result<Self> {
        let factor = m.factorizec(UPLO::Lower).map_err(|e| {
            Error::Numerical(format!("Cholesky factorization failed: {e}"))
        })?;
        Ok(Self { factor })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.factor.solvec(b)?)
    }
}

/// Orthonormalize the columns of a (possibly non-orthonormal) basis via thin QR.
pub fn orthonormalize(b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (q, _r) = b.to_owned().qr()?;
    Ok(q)
}

/// Frobenius norm of the difference of two matrices.
pub fn fro_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// `B B^T` for a thin matrix.
pub fn projector(b: ArrayView2<f64>) -> Array2<f64> {
    b.dot(&b.t())
}

/// Reciprocal condition number of a symmetric PSD matrix from its spectrum.
pub fn rcond_sym(m: ArrayView2<f64>) -> Result<f64> {
    let (vals, _) = eigh_descending(m)?;
    let max = vals[0].abs();
    let min = vals[vals.len() - 1].abs();
    if max == 0.0 {
        return Ok(0.0);
    }
    Ok(min / max)
}

/// Mean of a slice (0 for empty input).
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Lower median of a slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    s[(s.len() - 1) / 2]
}

/// Sum the rows of `m` restricted to the given columns.
pub fn row_sums_over(m: &Array2<f64>, cols: &[usize]) -> Array1<f64> {
    let mut out = Array1::zeros(m.nrows());
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        out[i] = cols.iter().map(|&j| row[j]).sum();
    }
    out
}

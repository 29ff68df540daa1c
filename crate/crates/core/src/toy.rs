//! Small dense test targets with known moments.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::{dense_operator, FactoredPrecision, GaussianTarget};
use crate::rng::RngStream;

/// A target together with its exact mean and covariance.
#[derive(Clone)]
pub struct ToyProblem {
    pub target: GaussianTarget,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl ToyProblem {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        self.target
            .dense_mirror()
            .expect("toy problems always carry a dense mirror")
            .precision()
    }

    pub fn mean_vec(&self) -> Vec<f64> {
        self.mean.as_slice().to_vec()
    }

    /// Eigenvalue ratio of the precision matrix.
    pub fn condition_number(&self) -> f64 {
        let ev = self.precision().clone().symmetric_eigenvalues();
        ev.max() / ev.min()
    }
}

/// `R_ij = sigma2 * rho^|i-j|`.
pub fn ar1_covariance(n: usize, sigma2: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| sigma2 * libm::pow(rho, i.abs_diff(j) as f64))
}

fn uniform_mean(n: usize, stream: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| 10.0 * stream.uniform())
}

/// Builds the target from a dense precision: `F = L^t` with `Q = L L^t`.
pub fn from_dense_precision(q: DMatrix<f64>, mean: DVector<f64>) -> Result<ToyProblem> {
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::config("toy precision is not positive definite"))?;
    let covariance = chol.inverse();
    let factor = dense_operator(chol.l().transpose())?.with_cached_gram();
    let precision = FactoredPrecision::from_operator(factor);
    let target = GaussianTarget::from_mean(precision, mean.as_slice())?.with_dense_mirror(q, mean.clone())?;
    Ok(ToyProblem {
        target,
        mean,
        covariance,
    })
}

/// Gaussian with AR(1) covariance `sigma2 * rho^|i-j|` and mean entries
/// drawn from `U[0, 10]`.
pub fn ar1_problem(n: usize, sigma2: f64, rho: f64, stream: &mut RngStream) -> Result<ToyProblem> {
    if n == 0 {
        return Err(Error::config("toy dimension must be positive"));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::config(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let mean = uniform_mean(n, stream);
    let r = ar1_covariance(n, sigma2, rho);
    let q = r
        .cholesky()
        .ok_or_else(|| Error::config("AR(1) covariance is not positive definite"))?
        .inverse();
    let q = (&q + q.transpose()) * 0.5;
    from_dense_precision(q, mean)
}

/// Precision with eigenvalues log-spaced on `[scale, scale * condition]` in a
/// random orthonormal basis; mean entries from `U[0, 10]`.
pub fn spectral_problem(n: usize, condition: f64, scale: f64, stream: &mut RngStream) -> Result<ToyProblem> {
    if n < 2 {
        return Err(Error::config("spectral problem needs N >= 2"));
    }
    if !(condition >= 1.0 && condition.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!(
            "spectral problem needs condition >= 1 and scale > 0, got ({condition}, {scale})"
        )));
    }
    let g = DMatrix::from_row_slice(n, n, &stream.standard_normal_vector(n * n)?);
    let u = g.qr().q();
    let lambdas = DVector::from_fn(n, |i, _| {
        scale * libm::pow(condition, i as f64 / (n - 1) as f64)
    });
    let q = &u * DMatrix::from_diagonal(&lambdas) * u.transpose();
    let q = (&q + q.transpose()) * 0.5;
    let mean = uniform_mean(n, stream);
    from_dense_precision(q, mean)
}

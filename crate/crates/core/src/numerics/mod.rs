//! Dense linear algebra, counter-based randomness and small statistics helpers.

mod matrix;
mod rng;
mod stats;
mod svd;

use thiserror::Error;

pub use matrix::{all_finite, axpy, dot, max_abs_diff, norm, norm_sq, sub, LinearOperator, Matrix};
pub use rng::{philox4x32_10, RngStream};
pub use stats::{mean_and_stderr, spearman};
pub use svd::{
    null_space, orthonormal_range, pseudo_solve, range_projector, svd, thin_qr, SvdTriple, ThinQr, RANK_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix dimensions must be positive")]
    EmptyDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("Jacobi SVD did not converge within {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },
    #[error("rank deficient: singular value #{index} is {value:e}")]
    RankDeficient { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("function returned a non-finite value when perturbing coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },
}

/// `m × n` matrix with i.i.d. `N(0, variance)` entries, filled row-major.
pub fn gaussian_matrix(m: usize, n: usize, variance: f64, rng: &mut RngStream) -> Result<Matrix, NumericsError> {
    if m == 0 || n == 0 {
        return Err(NumericsError::EmptyDimension);
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(NumericsError::InvalidArgument("variance must be positive"));
    }
    let sd = variance.sqrt();
    Ok(Matrix::from_fn(m, n, |_, _| sd * rng.normal()))
}

/// Default central-difference step for unit-scaled inputs.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian; column `j` is `(f(x + h eⱼ) − f(x − h eⱼ)) / 2h`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], h: f64) -> Result<Matrix, NumericsError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument("step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut jac: Option<Matrix> = None;
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        if !all_finite(&plus) || !all_finite(&minus) {
            return Err(NumericsError::NonFiniteEvaluation { coordinate: j });
        }
        let jac = jac.get_or_insert_with(|| Matrix::zeros(plus.len(), x.len()));
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            jac[(i, j)] = (p - m) / (2.0 * h);
        }
    }
    jac.ok_or(NumericsError::EmptyDimension)
}

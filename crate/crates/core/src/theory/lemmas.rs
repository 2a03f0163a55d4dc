use crate::numerics::{gaussian_matrix, mean_and_stderr, norm_sq, range_projector, Matrix, NumericsError, RngStream};

use super::{expected_error_closed_form, LinearGenerator, TheoryError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrobeniusCheck {
    /// Sample mean of `‖M z‖²`, `z ~ N(0, I)`.
    pub empirical: f64,
    /// `‖M‖_F²`.
    pub exact: f64,
    pub z_score: f64,
}

pub fn lemma_frobenius_check(m: &Matrix, samples: usize, rng: &mut RngStream) -> Result<FrobeniusCheck, TheoryError> {
    if samples < 2 {
        return Err(TheoryError::Invalid("at least two samples are required"));
    }
    let draws: Vec<f64> = (0..samples)
        .map(|_| norm_sq(&m.mul_vec(&rng.normal_vec(m.cols()))))
        .collect();
    let (empirical, stderr) = mean_and_stderr(&draws);
    let exact = m.frobenius_norm_sq();
    let diff = empirical - exact;
    let z_score = if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FrobeniusCheck {
        empirical,
        exact,
        z_score,
    })
}

/// `‖Uᵀ 𝒫_M U − 𝒫_{Uᵀ M}‖_F` for orthogonal `U` and full-column-rank `M`.
pub fn projector_commutativity_check(m: &Matrix, u: &Matrix) -> Result<f64, TheoryError> {
    if u.rows() != u.cols() || u.cols() != m.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: m.rows(),
            found: u.rows(),
        }
        .into());
    }
    let ut = u.transpose();
    let lhs = ut.matmul(&range_projector(m)?).matmul(u);
    let rhs = range_projector(&ut.matmul(m))?;
    Ok(lhs.sub(&rhs).frobenius_norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EckartYoung {
    /// `Σ_{i>m} σᵢ²`, the best rank-`m` approximation error.
    pub truncation_error: f64,
    pub min_error: f64,
    /// Draws whose closed-form error fell below `truncation_error − 1e-9`.
    pub violations: usize,
    pub draws: usize,
}

/// Compares the closed-form error of random Gaussian `A` (`m × n`) to the
/// rank-`m` truncation error of `G`.
pub fn eckart_young_check(
    g: &LinearGenerator,
    m: usize,
    draws: usize,
    rng: &mut RngStream,
) -> Result<EckartYoung, TheoryError> {
    let n = g.dim();
    if m == 0 || m > n {
        return Err(TheoryError::MeasurementCount { m, n });
    }
    let truncation_error: f64 = g.sigma()[m..].iter().map(|s| s * s).sum();
    let mut min_error = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..draws {
        let a = gaussian_matrix(m, n, 1.0, rng)?;
        let e = expected_error_closed_form(g, &a)?;
        min_error = min_error.min(e);
        if e < truncation_error - 1e-9 {
            violations += 1;
        }
    }
    Ok(EckartYoung {
        truncation_error,
        min_error,
        violations,
        draws,
    })
}

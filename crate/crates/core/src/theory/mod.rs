//! Linear invertible generators: closed-form recovery error, Monte Carlo
//! estimates over Gaussian measurement matrices, and the supporting
//! linear-algebra identities.

mod bounds;
mod lemmas;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{gaussian_matrix, thin_qr, Matrix, NumericsError, RngStream, SvdTriple, RANK_TOL};

pub use bounds::{
    bound_report, bound_reports_csv, expected_error_closed_form, mle_linear, monte_carlo_error, relative_error,
    theorem1_bounds, BoundReport, McEstimate, BOUND_CSV_HEADER,
};
pub use lemmas::{
    eckart_young_check, lemma_frobenius_check, projector_commutativity_check, EckartYoung, FrobeniusCheck,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
    #[error("measurement count m={m} outside the admissible range for n={n}")]
    MeasurementCount { m: usize, n: usize },
    #[error("A·G is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },
    #[error("{skipped} of {trials} draws were rank deficient")]
    TooManySkipped { skipped: usize, trials: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Preset singular-value decay profiles, `σᵢ` for `i = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaProfile {
    Flat,
    Inverse,
    InverseSquare,
}

impl SigmaProfile {
    pub const ALL: [SigmaProfile; 3] = [SigmaProfile::Flat, SigmaProfile::Inverse, SigmaProfile::InverseSquare];

    pub fn values(&self, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|i| {
                let i = i as f64;
                match self {
                    SigmaProfile::Flat => 1.0,
                    SigmaProfile::Inverse => 1.0 / i,
                    SigmaProfile::InverseSquare => 1.0 / (i * i),
                }
            })
            .collect()
    }
}

impl fmt::Display for SigmaProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaProfile::Flat => "flat",
            SigmaProfile::Inverse => "1/i",
            SigmaProfile::InverseSquare => "1/i^2",
        })
    }
}

impl FromStr for SigmaProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(SigmaProfile::Flat),
            "1/i" | "inverse" => Ok(SigmaProfile::Inverse),
            "1/i^2" | "inverse-square" => Ok(SigmaProfile::InverseSquare),
            _ => Err(format!("unknown sigma profile '{s}' (flat, 1/i, 1/i^2)")),
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut RngStream) -> Result<Matrix, NumericsError> {
    let a = gaussian_matrix(n, n, 1.0, rng)?;
    let qr = thin_qr(&a)?;
    let signs: Vec<f64> = qr.r_diag.iter().map(|r| if *r < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(qr.q.scale_cols(&signs))
}

/// An invertible `G = U Σ Vᵀ` with square orthogonal factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    svd: SvdTriple,
    matrix: Matrix,
}

impl LinearGenerator {
    pub fn from_svd(u: Matrix, sigma: Vec<f64>, v: Matrix) -> Result<Self, TheoryError> {
        let n = sigma.len();
        if n == 0 {
            return Err(NumericsError::EmptyDimension.into());
        }
        if u.rows() != n || u.cols() != n || v.rows() != n || v.cols() != n {
            return Err(TheoryError::Invalid("U and V must be n × n"));
        }
        if !sigma.windows(2).all(|w| w[0] >= w[1]) || !(sigma[n - 1] > RANK_TOL) {
            return Err(TheoryError::Invalid("singular values must be positive and descending"));
        }
        for q in [&u, &v] {
            if q.transpose().matmul(q).sub(&Matrix::identity(n)).max_abs() > 1e-10 {
                return Err(TheoryError::Invalid("U and V must be orthogonal"));
            }
        }
        let matrix = u.scale_cols(&sigma).matmul(&v.transpose());
        Ok(Self {
            svd: SvdTriple { u, sigma, v },
            matrix,
        })
    }

    /// `G = Σ`.
    pub fn diagonal(sigma: Vec<f64>) -> Result<Self, TheoryError> {
        let n = sigma.len();
        Self::from_svd(Matrix::identity(n), sigma, Matrix::identity(n))
    }

    /// `G = U Σ Vᵀ` with independent Haar `U`, `V`.
    pub fn random(sigma: Vec<f64>, rng: &mut RngStream) -> Result<Self, TheoryError> {
        let n = sigma.len();
        let u = random_orthogonal(n, rng)?;
        let v = random_orthogonal(n, rng)?;
        Self::from_svd(u, sigma, v)
    }

    pub fn dim(&self) -> usize {
        self.svd.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.svd.sigma
    }

    pub fn svd(&self) -> &SvdTriple {
        &self.svd
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

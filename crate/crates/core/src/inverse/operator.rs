use crate::numerics::{gaussian_matrix, LinearOperator, Matrix, NumericsError, RngStream};

use super::InverseError;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity {
        n: usize,
    },
    /// Dense `m × n` matrix with i.i.d. `N(0, 1/m)` entries.
    Gaussian(Matrix),
    /// Keeps the listed coordinates and zeroes the rest; output length is `n`.
    Mask {
        n: usize,
        observed: Vec<usize>,
    },
}

/// A linear forward model `y = A x + η` with `√E‖η‖² = noise_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    pub kind: OperatorKind,
    pub noise_level: f64,
}

impl MeasurementOperator {
    pub fn identity(n: usize, noise_level: f64) -> Result<Self, InverseError> {
        if n == 0 {
            return Err(NumericsError::EmptyDimension.into());
        }
        Self::checked(OperatorKind::Identity { n }, noise_level)
    }

    pub fn gaussian(m: usize, n: usize, noise_level: f64, rng: &mut RngStream) -> Result<Self, InverseError> {
        let a = gaussian_matrix(m, n, 1.0 / m as f64, rng)?;
        Self::checked(OperatorKind::Gaussian(a), noise_level)
    }

    /// From a binary mask; nonzero entries other than 1 are rejected.
    pub fn mask(mask: &[f64], noise_level: f64) -> Result<Self, InverseError> {
        if mask.is_empty() {
            return Err(NumericsError::EmptyDimension.into());
        }
        if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(InverseError::Invalid("mask entries must be 0 or 1"));
        }
        let observed = (0..mask.len()).filter(|&i| mask[i] == 1.0).collect();
        Self::checked(
            OperatorKind::Mask {
                n: mask.len(),
                observed,
            },
            noise_level,
        )
    }

    fn checked(kind: OperatorKind, noise_level: f64) -> Result<Self, InverseError> {
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(InverseError::Invalid("noise_level must be non-negative"));
        }
        Ok(Self { kind, noise_level })
    }

    /// Number of coordinates that carry information (and noise).
    pub fn measurement_count(&self) -> usize {
        match &self.kind {
            OperatorKind::Identity { n } => *n,
            OperatorKind::Gaussian(a) => a.rows(),
            OperatorKind::Mask { observed, .. } => observed.len(),
        }
    }

    /// Dense realization of `A`.
    pub fn to_matrix(&self) -> Matrix {
        match &self.kind {
            OperatorKind::Identity { n } => Matrix::identity(*n),
            OperatorKind::Gaussian(a) => a.clone(),
            OperatorKind::Mask { n, observed } => {
                let mut d = vec![0.0; *n];
                observed.iter().for_each(|&i| d[i] = 1.0);
                Matrix::from_diag(&d)
            }
        }
    }
}

impl LinearOperator for MeasurementOperator {
    fn input_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Identity { n } | OperatorKind::Mask { n, .. } => *n,
            OperatorKind::Gaussian(a) => a.cols(),
        }
    }

    fn output_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Identity { n } | OperatorKind::Mask { n, .. } => *n,
            OperatorKind::Gaussian(a) => a.rows(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Identity { .. } => x.to_vec(),
            OperatorKind::Gaussian(a) => a.mul_vec(x),
            OperatorKind::Mask { n, observed } => {
                let mut y = vec![0.0; *n];
                observed.iter().for_each(|&i| y[i] = x[i]);
                y
            }
        }
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Gaussian(a) => a.tr_mul_vec(y),
            _ => self.apply(y),
        }
    }
}

/// Per-coordinate standard deviation `σ` over `m` measurements, as a total noise level.
pub fn noise_level_from_sigma(sigma: f64, m: usize) -> f64 {
    sigma * (m as f64).sqrt()
}

/// `y = A x0 + η`, `η` i.i.d. normal with variance `noise_level²/m` on the
/// observed coordinates.
pub fn make_measurements(x0: &[f64], op: &MeasurementOperator, rng: &mut RngStream) -> Result<Vec<f64>, InverseError> {
    if x0.len() != op.input_dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: op.input_dim(),
            found: x0.len(),
        }
        .into());
    }
    let mut y = op.apply(x0);
    if op.noise_level > 0.0 {
        let sd = op.noise_level / (op.measurement_count().max(1) as f64).sqrt();
        match &op.kind {
            OperatorKind::Mask { observed, .. } => observed.iter().for_each(|&i| y[i] += sd * rng.normal()),
            _ => y.iter_mut().for_each(|v| *v += sd * rng.normal()),
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, norm_sq};

    #[test]
    fn noiseless_identity_is_exact() {
        let op = MeasurementOperator::identity(4, 0.0).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(make_measurements(&x, &op, &mut RngStream::new(0, 0)).unwrap(), x);
    }

    #[test]
    fn noise_energy_matches_level() {
        let op = MeasurementOperator::identity(100, 0.1).unwrap();
        let x = vec![0.0; 100];
        let mut rng = RngStream::new(1, 0);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| norm_sq(&make_measurements(&x, &op, &mut rng).unwrap()))
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 0.01).abs() < 0.03 * 0.01, "{mean}");
    }

    #[test]
    fn mask_zeroes_unobserved() {
        let op = MeasurementOperator::mask(&[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
        let y = make_measurements(&[1.0, 2.0, 3.0, 4.0], &op, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!((y[1], y[3]), (0.0, 0.0));
        assert!(MeasurementOperator::mask(&[1.0, 0.5], 0.0).is_err());
    }

    #[test]
    fn gaussian_variance_and_adjoint() {
        let mut rng = RngStream::new(3, 0);
        let op = MeasurementOperator::gaussian(50, 40, 0.0, &mut rng).unwrap();
        let a = op.to_matrix();
        let var = a.frobenius_norm_sq() / (50.0 * 40.0);
        assert!((var - 1.0 / 50.0).abs() < 0.1 / 50.0);
        let x = rng.normal_vec(40);
        let y = rng.normal_vec(50);
        assert!((dot(&op.apply(&x), &y) - dot(&x, &op.apply_transpose(&y))).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_noise() {
        assert!(MeasurementOperator::identity(3, -1.0).is_err());
    }
}

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::numerics::{
    gaussian_matrix, mean_and_stderr, orthonormal_range, svd, Matrix, NumericsError, RngStream, RANK_TOL,
};

use super::{LinearGenerator, TheoryError};

pub const BOUND_CSV_HEADER: &str = "n,m,sigma_profile,trials,lower,mc_mean,mc_stderr,upper,relative_error";

/// Largest tolerated fraction of rank-deficient draws.
const MAX_SKIP_FRACTION: f64 = 0.01;

fn product(g: &LinearGenerator, a: &Matrix) -> Result<Matrix, TheoryError> {
    if a.cols() != g.dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: g.dim(),
            found: a.cols(),
        }
        .into());
    }
    if a.rows() == 0 || a.rows() > g.dim() {
        return Err(TheoryError::MeasurementCount {
            m: a.rows(),
            n: g.dim(),
        });
    }
    Ok(a.matmul(g.matrix()))
}

/// Orthonormal basis of `range(Gᵀ Aᵀ)`.
fn latent_range(g: &LinearGenerator, a: &Matrix) -> Result<Matrix, TheoryError> {
    let b = product(g, a)?;
    orthonormal_range(&b.transpose()).map_err(|e| match e {
        NumericsError::RankDeficient { value, .. } => TheoryError::RankDeficient { smallest: value },
        other => other.into(),
    })
}

/// Maximum-likelihood recovery for the linear model: the orthogonal
/// projection of `z0` onto `range(GᵀAᵀ)`, and its image `G ẑ`.
pub fn mle_linear(g: &LinearGenerator, a: &Matrix, z0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), TheoryError> {
    if z0.len() != g.dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: g.dim(),
            found: z0.len(),
        }
        .into());
    }
    let smallest = svd(&product(g, a)?)?.smallest();
    if !(smallest > RANK_TOL) {
        return Err(TheoryError::RankDeficient { smallest });
    }
    let q = latent_range(g, a)?;
    let z_hat = q.mul_vec(&q.tr_mul_vec(z0));
    let x_hat = g.matrix().mul_vec(&z_hat);
    Ok((z_hat, x_hat))
}

/// `E_{z0} ‖x̂ − x0‖² = ‖G(𝒫 − I)‖_F²` with `𝒫` the projector onto `range(GᵀAᵀ)`.
pub fn expected_error_closed_form(g: &LinearGenerator, a: &Matrix) -> Result<f64, TheoryError> {
    let q = latent_range(g, a)?;
    let gq = g.matrix().matmul(&q);
    Ok(gq.matmul(&q.transpose()).sub(g.matrix()).frobenius_norm_sq())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Draws that entered the average.
    pub trials: usize,
    pub skipped: usize,
}

/// Average of the closed-form error over `trials` draws of `A` with
/// i.i.d. `N(0, 1)` entries. Draw `t` uses `rng.derive(t)`.
pub fn monte_carlo_error(
    g: &LinearGenerator,
    m: usize,
    trials: usize,
    rng: &RngStream,
) -> Result<McEstimate, TheoryError> {
    let n = g.dim();
    if m == 0 || m >= n {
        return Err(TheoryError::MeasurementCount { m, n });
    }
    if trials < 2 {
        return Err(TheoryError::Invalid("at least two trials are required"));
    }
    let draws = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let a = gaussian_matrix(m, n, 1.0, &mut rng.derive(t))?;
            match expected_error_closed_form(g, &a) {
                Ok(e) => Ok(Some(e)),
                Err(TheoryError::RankDeficient { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let kept: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = trials - kept.len();
    if skipped as f64 > MAX_SKIP_FRACTION * trials as f64 || kept.len() < 2 {
        return Err(TheoryError::TooManySkipped { skipped, trials });
    }
    let (mean, stderr) = mean_and_stderr(&kept);
    Ok(McEstimate {
        mean,
        stderr,
        trials: kept.len(),
        skipped,
    })
}

/// `(Σ_{i>m} σᵢ², m·Σ_{i>m−2} σᵢ²)` with 1-based indices; requires `4 ≤ m < n`.
pub fn theorem1_bounds(sigma: &[f64], m: usize) -> Result<(f64, f64), TheoryError> {
    let n = sigma.len();
    if m < 4 || m >= n {
        return Err(TheoryError::MeasurementCount { m, n });
    }
    if !sigma.windows(2).all(|w| w[0] >= w[1]) || !(sigma[n - 1] > 0.0) {
        return Err(TheoryError::Invalid("singular values must be positive and descending"));
    }
    let tail = |from: usize| sigma[from..].iter().map(|s| s * s).sum::<f64>();
    Ok((tail(m), m as f64 * tail(m - 2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub m: usize,
    pub sigma_profile: String,
    pub trials: usize,
    pub lower: f64,
    pub upper: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    /// Mean of the closed-form error over the same draws. The inner
    /// expectation is exact, so this coincides with `mc_mean`.
    pub closed_form_mean: f64,
    /// `Σ σᵢ²`, the expected energy `E‖x0‖²`.
    pub energy: f64,
}

impl BoundReport {
    /// Containment with a `k`-standard-error allowance on both sides.
    pub fn contained(&self, k: f64) -> bool {
        self.mc_mean >= self.lower - k * self.mc_stderr && self.mc_mean <= self.upper + k * self.mc_stderr
    }

    pub fn slack(&self) -> f64 {
        self.upper / self.mc_mean
    }
}

pub fn bound_report(
    g: &LinearGenerator,
    profile: &str,
    m: usize,
    trials: usize,
    rng: &RngStream,
) -> Result<BoundReport, TheoryError> {
    let (lower, upper) = theorem1_bounds(g.sigma(), m)?;
    let mc = monte_carlo_error(g, m, trials, rng)?;
    Ok(BoundReport {
        n: g.dim(),
        m,
        sigma_profile: profile.to_string(),
        trials: mc.trials,
        lower,
        upper,
        mc_mean: mc.mean,
        mc_stderr: mc.stderr,
        closed_form_mean: mc.mean,
        energy: g.sigma().iter().map(|s| s * s).sum(),
    })
}

/// Expected squared error relative to `Σ σₖ²`.
pub fn relative_error(report: &BoundReport, sigma: &[f64]) -> f64 {
    report.mc_mean / sigma.iter().map(|s| s * s).sum::<f64>()
}

pub fn bound_reports_csv(reports: &[BoundReport]) -> String {
    let mut s = String::from(BOUND_CSV_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            r.sigma_profile,
            r.trials,
            r.lower,
            r.mc_mean,
            r.mc_stderr,
            r.upper,
            r.mc_mean / r.energy
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, pseudo_solve};
    use crate::theory::SigmaProfile;

    #[test]
    fn coordinate_projection_example() {
        let g = LinearGenerator::diagonal(vec![1.0, 1.0]).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (z, x) = mle_linear(&g, &a, &[3.0, 4.0]).unwrap();
        assert!(max_abs_diff(&z, &[3.0, 0.0]) < 1e-15);
        let err: f64 = x.iter().zip([3.0, 4.0]).map(|(u, v)| (u - v) * (u - v)).sum();
        assert!((err - 16.0).abs() < 1e-12);
        assert!((expected_error_closed_form(&g, &a).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn full_measurements_recover_exactly() {
        let mut rng = RngStream::new(41, 0);
        let g = LinearGenerator::random(SigmaProfile::Inverse.values(6), &mut rng).unwrap();
        let a = gaussian_matrix(6, 6, 1.0, &mut rng).unwrap();
        let z0 = rng.normal_vec(6);
        let x0 = g.matrix().mul_vec(&z0);
        let (_, x) = mle_linear(&g, &a, &z0).unwrap();
        assert!(max_abs_diff(&x, &x0) < 1e-9);
        assert!(expected_error_closed_form(&g, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mle_is_minimum_norm_solution() {
        let mut rng = RngStream::new(42, 0);
        for _ in 0..10 {
            let g = LinearGenerator::random(SigmaProfile::Inverse.values(7), &mut rng).unwrap();
            let a = gaussian_matrix(3, 7, 1.0, &mut rng).unwrap();
            let z0 = rng.normal_vec(7);
            let b = a.matmul(g.matrix());
            let want = pseudo_solve(&b, &b.mul_vec(&z0)).unwrap();
            let (z, _) = mle_linear(&g, &a, &z0).unwrap();
            assert!(max_abs_diff(&z, &want) < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let g = LinearGenerator::diagonal(vec![1.0, 1.0, 1.0]).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            mle_linear(&g, &a, &[1.0; 3]),
            Err(TheoryError::RankDeficient { .. })
        ));
        assert!(matches!(
            expected_error_closed_form(&g, &a),
            Err(TheoryError::RankDeficient { .. })
        ));
    }

    #[test]
    fn closed_form_matches_sampled_latents() {
        let mut rng = RngStream::new(43, 0);
        let g = LinearGenerator::random(SigmaProfile::Inverse.values(5), &mut rng).unwrap();
        let a = gaussian_matrix(2, 5, 1.0, &mut rng).unwrap();
        let exact = expected_error_closed_form(&g, &a).unwrap();
        let errs: Vec<f64> = (0..100_000)
            .map(|_| {
                let z0 = rng.normal_vec(5);
                let x0 = g.matrix().mul_vec(&z0);
                let (_, x) = mle_linear_unchecked(&g, &a, &z0);
                x.iter().zip(&x0).map(|(u, v)| (u - v) * (u - v)).sum()
            })
            .collect();
        let (mean, se) = mean_and_stderr(&errs);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} {exact} {se}");
    }

    fn mle_linear_unchecked(g: &LinearGenerator, a: &Matrix, z0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = latent_range(g, a).unwrap();
        let z = q.mul_vec(&q.tr_mul_vec(z0));
        let x = g.matrix().mul_vec(&z);
        (z, x)
    }

    #[test]
    fn bounds_formula() {
        assert_eq!(theorem1_bounds(&[1.0; 20], 4).unwrap(), (16.0, 72.0));
        let s = [4.0, 3.0, 2.0, 1.5, 1.0, 0.5];
        let (lo, hi) = theorem1_bounds(&s, 5).unwrap();
        assert_eq!(lo, 0.25);
        // tail from i = m − 1 covers three coordinates when m = n − 1
        assert_eq!(hi, 5.0 * (2.25 + 1.0 + 0.25));
        assert!(matches!(
            theorem1_bounds(&[1.0; 20], 3),
            Err(TheoryError::MeasurementCount { .. })
        ));
    }

    #[test]
    fn monte_carlo_is_deterministic_and_above_lower_bound() {
        let g = LinearGenerator::diagonal(vec![1.0; 6]).unwrap();
        let rng = RngStream::new(44, 0);
        let a = monte_carlo_error(&g, 5, 200, &rng).unwrap();
        let b = monte_carlo_error(&g, 5, 200, &rng).unwrap();
        assert_eq!(a, b);
        assert!(a.mean >= 1.0 - 3.0 * a.stderr);
        assert!(monte_carlo_error(&g, 6, 10, &rng).is_err());
        assert!(monte_carlo_error(&g, 2, 1, &rng).is_err());
    }

    #[test]
    fn relative_error_and_csv() {
        let r = BoundReport {
            n: 2,
            m: 1,
            sigma_profile: "flat".into(),
            trials: 3,
            lower: 1.0,
            upper: 2.0,
            mc_mean: 2.0,
            mc_stderr: 0.5,
            closed_form_mean: 2.0,
            energy: 2.0,
        };
        assert_eq!(relative_error(&r, &[1.0, 1.0]), 1.0);
        assert_eq!(
            bound_reports_csv(&[r]),
            format!("{BOUND_CSV_HEADER}\n2,1,flat,3,1,2,0.5,2,1\n")
        );
    }
}

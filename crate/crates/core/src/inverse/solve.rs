use std::time::{Duration, Instant};

use crate::flow::{FlowError, FlowStack};
use crate::numerics::{LinearOperator, RngStream};

use super::lbfgs::{minimize, LbfgsOptions, SolveStatus};
use super::metrics::{psnr, ssim};
use super::{InverseError, MeasurementOperator};

const INIT_STREAM: u64 = 0x696e_6974;

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    Zero,
    Gaussian {
        std: f64,
    },
    /// Start from `z₀ = G⁻¹(image)`.
    FromImage(Vec<f64>),
}

/// Minimize `‖A G(z) − y‖² + γ‖z‖²` over the latent `z`.
#[derive(Debug, Clone)]
pub struct InverseProblemSpec {
    pub operator: MeasurementOperator,
    pub y: Vec<f64>,
    pub gamma: f64,
    pub init: InitStrategy,
    pub max_iters: usize,
    /// Gradient-norm stopping threshold.
    pub tolerance: f64,
    pub seed: u64,
    /// Ground truth for PSNR/SSIM, when known.
    pub reference: Option<Vec<f64>>,
    /// Image layout for SSIM; `(1, n)` when absent.
    pub image_shape: Option<(usize, usize)>,
}

impl InverseProblemSpec {
    pub fn new(operator: MeasurementOperator, y: Vec<f64>, gamma: f64) -> Self {
        Self {
            operator,
            y,
            gamma,
            init: InitStrategy::Zero,
            max_iters: 500,
            tolerance: 1e-8,
            seed: 0,
            reference: None,
            image_shape: None,
        }
    }

    pub fn with_reference(mut self, x0: Vec<f64>) -> Self {
        self.reference = Some(x0);
        self
    }

    pub fn validate(&self) -> Result<(), InverseError> {
        if self.y.len() != self.operator.output_dim() {
            return Err(InverseError::Invalid("measurement length differs from operator output"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(InverseError::Invalid("gamma must be non-negative"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(InverseError::Invalid("tolerance must be non-negative"));
        }
        let n = self.operator.input_dim();
        if let InitStrategy::FromImage(x) = &self.init {
            if x.len() != n {
                return Err(InverseError::Invalid("initial image has the wrong dimension"));
            }
        }
        if let InitStrategy::Gaussian { std } = self.init {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(InverseError::Invalid("initial std must be non-negative"));
            }
        }
        if let Some(r) = &self.reference {
            if r.len() != n {
                return Err(InverseError::Invalid("reference has the wrong dimension"));
            }
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != n {
                return Err(InverseError::Invalid("image shape does not match the signal length"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// Exactly `G(z_hat)`.
    pub x_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iterations: usize,
    pub wall_time: Duration,
    pub seed: u64,
    pub status: SolveStatus,
}

fn initial_latent(flow: &FlowStack, spec: &InverseProblemSpec) -> Result<Vec<f64>, InverseError> {
    let n = flow.dim();
    Ok(match &spec.init {
        InitStrategy::Zero => vec![0.0; n],
        InitStrategy::Gaussian { std } => {
            let mut rng = RngStream::new(spec.seed, INIT_STREAM);
            rng.normal_vec(n).into_iter().map(|v| std * v).collect()
        }
        InitStrategy::FromImage(x) => flow.inverse(x)?.output,
    })
}

pub fn solve(flow: &FlowStack, spec: &InverseProblemSpec) -> Result<RecoveryReport, InverseError> {
    let start = Instant::now();
    spec.validate()?;
    if flow.dim() != spec.operator.input_dim() {
        return Err(InverseError::Flow(FlowError::Dimension {
            expected: flow.dim(),
            found: spec.operator.input_dim(),
        }));
    }
    let z0 = initial_latent(flow, spec)?;
    let first = flow.grad_data_fit(&z0, &spec.operator, &spec.y, spec.gamma);
    if let Err(FlowError::NonFiniteObjective | FlowError::NonFinite { .. } | FlowError::NonFiniteGradient { .. }) =
        first
    {
        return Err(InverseError::NonFiniteObjective { trace: Vec::new() });
    }
    first?;

    let opts = LbfgsOptions {
        max_iters: spec.max_iters,
        tolerance: spec.tolerance,
        ..LbfgsOptions::default()
    };
    let eval = |z: &[f64]| -> Result<(f64, Vec<f64>), FlowError> {
        match flow.grad_data_fit(z, &spec.operator, &spec.y, spec.gamma) {
            Ok(fit) => Ok((fit.objective, fit.gradient)),
            // a trial point that blows up is rejected by the line search
            Err(FlowError::NonFiniteObjective | FlowError::NonFinite { .. } | FlowError::NonFiniteGradient { .. }) => {
                Ok((f64::INFINITY, Vec::new()))
            }
            Err(e) => Err(e),
        }
    };
    let result = minimize(eval, &z0, &opts)?;
    if !result.value.is_finite() {
        return Err(InverseError::NonFiniteObjective { trace: result.trace });
    }
    let x_hat = flow.forward(&result.x)?.output;
    let (psnr_db, ssim_val) = match &spec.reference {
        Some(r) => {
            let shape = spec.image_shape.unwrap_or((1, r.len()));
            (Some(psnr(&x_hat, r)?), Some(ssim(&x_hat, r, shape)?))
        }
        None => (None, None),
    };
    Ok(RecoveryReport {
        x_hat,
        z_hat: result.x,
        objective_trace: result.trace,
        psnr: psnr_db,
        ssim: ssim_val,
        iterations: result.iterations,
        wall_time: start.elapsed(),
        seed: spec.seed,
        status: result.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::numerics::{max_abs_diff, norm, pseudo_solve};

    fn identity_flow(n: usize) -> FlowStack {
        FlowStack::new(&FlowConfig::new(n, 2), &mut RngStream::new(0, 0))
    }

    #[test]
    fn denoising_identity_recovers_y() {
        let g = identity_flow(4);
        let y = vec![0.2, 0.4, 0.6, 0.8];
        let spec = InverseProblemSpec::new(MeasurementOperator::identity(4, 0.0).unwrap(), y.clone(), 0.0)
            .with_reference(y.clone());
        let r = solve(&g, &spec).unwrap();
        assert!(max_abs_diff(&r.x_hat, &y) < 1e-8);
        assert!(r.psnr.unwrap() > 99.0);
        assert_eq!(r.status, SolveStatus::Converged);
    }

    #[test]
    fn minimum_norm_from_zero() {
        let g = identity_flow(16);
        let mut rng = RngStream::new(9, 0);
        let op = MeasurementOperator::gaussian(8, 16, 0.0, &mut rng).unwrap();
        let x0 = rng.normal_vec(16);
        let y = op.apply(&x0);
        let r = solve(&g, &InverseProblemSpec::new(op.clone(), y.clone(), 0.0)).unwrap();
        let want = pseudo_solve(&op.to_matrix(), &y).unwrap();
        assert!(max_abs_diff(&r.z_hat, &want) < 1e-5 * norm(&want));
        let residual: Vec<f64> = op.apply(&r.x_hat).iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(norm(&residual) < 1e-6 * norm(&y));
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn full_mask_equals_denoising() {
        let mut rng = RngStream::new(10, 0);
        let g = FlowStack::random(&FlowConfig::new(4, 2), 0.2, &mut rng);
        let x0 = rng.normal_vec(4);
        let id = MeasurementOperator::identity(4, 0.0).unwrap();
        let mask = MeasurementOperator::mask(&[1.0; 4], 0.0).unwrap();
        let run = |op: MeasurementOperator| {
            let y = super::super::make_measurements(&x0, &op, &mut RngStream::new(3, 0)).unwrap();
            solve(&g, &InverseProblemSpec::new(op, y, 0.1).with_reference(x0.clone())).unwrap()
        };
        let (a, b) = (run(id), run(mask));
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.z_hat, b.z_hat);
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(
            (a.psnr, a.ssim, a.iterations, a.status),
            (b.psnr, b.ssim, b.iterations, b.status)
        );
    }

    #[test]
    fn from_image_starts_at_inverse() {
        let mut rng = RngStream::new(11, 0);
        let g = FlowStack::random(&FlowConfig::new(4, 2), 0.2, &mut rng);
        let x0 = rng.normal_vec(4);
        let mut spec = InverseProblemSpec::new(MeasurementOperator::identity(4, 0.0).unwrap(), x0.clone(), 0.0);
        spec.init = InitStrategy::FromImage(x0.clone());
        let r = solve(&g, &spec).unwrap();
        assert!(r.iterations <= 1);
        assert!(max_abs_diff(&r.x_hat, &x0) < 1e-8);
    }

    #[test]
    fn rejects_bad_spec() {
        let g = identity_flow(3);
        let op = MeasurementOperator::identity(3, 0.0).unwrap();
        assert!(solve(&g, &InverseProblemSpec::new(op.clone(), vec![0.0; 2], 0.0)).is_err());
        assert!(solve(&g, &InverseProblemSpec::new(op, vec![0.0; 3], -1.0)).is_err());
    }
}

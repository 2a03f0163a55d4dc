//! Linear inverse problems with a flow prior: measurement models, the
//! latent-space solver, quality metrics and a sparse-coding baseline.

mod lasso;
mod lbfgs;
mod metrics;
mod operator;
mod perturb;
mod signal_io;
mod solve;
mod sweep;

use thiserror::Error;

use crate::flow::FlowError;
use crate::numerics::NumericsError;

pub use lasso::{
    dct_matrix, dct_synthesis, lasso_cd, lasso_dct, lasso_objective, soft_threshold, LassoFit, DEFAULT_LAMBDA,
};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, SolveStatus};
pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use operator::{make_measurements, noise_level_from_sigma, MeasurementOperator, OperatorKind};
pub use perturb::{perturbation_csv, perturbation_sensitivity, PerturbationRow, MIN_RANDOM_DIRECTIONS};
pub use signal_io::{decode_signal, encode_signal, read_signal, write_signal, SIGNAL_MAGIC};
pub use solve::{solve, InitStrategy, InverseProblemSpec, RecoveryReport};
pub use sweep::{
    gamma_sweep, measurement_sweep, CellOutcome, ParamSummary, SweepRow, SweepSettings, SweepTable, SWEEP_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("invalid problem: {0}")]
    Invalid(&'static str),
    #[error("objective became non-finite after {} accepted steps", trace.len().saturating_sub(1))]
    NonFiniteObjective { trace: Vec<f64> },
    #[error("bad signal file: {0}")]
    Signal(&'static str),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

//! Invertible generators built from Glow-style bijective layers.

pub mod checkpoint;
mod layers;
mod mlp;
mod stack;

use thiserror::Error;

pub use checkpoint::{load, save, CheckpointError};
pub use layers::{
    stride_permutation, ActNorm, Coupling, Layer, LuMixing, Mixing, DEFAULT_ACTNORM_EPSILON, SCALE_BOUND,
};
pub use stack::{DataFit, FlowConfig, FlowPass, FlowStack, MixingKind, DEFAULT_ACTIVATION_CLIP, MAX_JACOBIAN_DIM};

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{layer} layer does not match flow dimension {dim}")]
    LayerDimension { layer: &'static str, dim: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient at layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite objective")]
    NonFiniteObjective,
    #[error("dimension {dim} too large for a dense Jacobian")]
    TooLarge { dim: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

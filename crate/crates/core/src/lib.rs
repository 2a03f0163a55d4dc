//! Invertible normalizing-flow priors for linear inverse problems.

pub mod flow;
pub mod inverse;
pub mod numerics;
pub mod theory;
pub mod training;

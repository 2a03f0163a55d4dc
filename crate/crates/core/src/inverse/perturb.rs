use std::fmt::Write as _;

use crate::flow::FlowStack;
use crate::numerics::{mean_and_stderr, norm, sub, RngStream};

use super::InverseError;

/// Random directions drawn per step size.
pub const MIN_RANDOM_DIRECTIONS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub alpha: f64,
    /// `‖G(z_a + α d) − G(z_a)‖` along `d ∝ z_b − z_a`.
    pub natural: f64,
    pub random_mean: f64,
    /// Sample standard deviation over the random directions.
    pub random_std: f64,
}

pub fn perturbation_csv(rows: &[PerturbationRow]) -> String {
    let mut s = String::from("alpha,natural,random_mean,random_std\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.alpha, r.natural, r.random_mean, r.random_std);
    }
    s
}

/// Image-space change under unit latent steps from `z_a`, along the direction
/// towards `z_b` and along `directions` random unit directions.
pub fn perturbation_sensitivity(
    flow: &FlowStack,
    z_a: &[f64],
    z_b: &[f64],
    alphas: &[f64],
    directions: usize,
    rng: &mut RngStream,
) -> Result<Vec<PerturbationRow>, InverseError> {
    let n = flow.dim();
    if z_a.len() != n || z_b.len() != n {
        return Err(InverseError::Invalid("latent points must match the flow dimension"));
    }
    let diff = sub(z_b, z_a);
    let len = norm(&diff);
    if len == 0.0 {
        return Err(InverseError::Invalid("z_a and z_b must differ"));
    }
    let natural: Vec<f64> = diff.iter().map(|v| v / len).collect();
    let randoms: Vec<Vec<f64>> = (0..directions.max(MIN_RANDOM_DIRECTIONS))
        .map(|_| rng.unit_vector(n))
        .collect();
    let base = flow.forward(z_a)?.output;
    let change = |d: &[f64], alpha: f64| -> Result<f64, InverseError> {
        let z: Vec<f64> = z_a.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        Ok(norm(&sub(&flow.forward(&z)?.output, &base)))
    };
    alphas
        .iter()
        .map(|&alpha| {
            let nat = change(&natural, alpha)?;
            let rand = randoms
                .iter()
                .map(|d| change(d, alpha))
                .collect::<Result<Vec<_>, _>>()?;
            let (mean, stderr) = mean_and_stderr(&rand);
            Ok(PerturbationRow {
                alpha,
                natural: nat,
                random_mean: mean,
                random_std: stderr * (rand.len() as f64).sqrt(),
            })
        })
        .collect()
}

use std::f64::consts::PI;

use crate::numerics::{Matrix, NumericsError};

/// Default ℓ₁ weight.
pub const DEFAULT_LAMBDA: f64 = 0.01;

const STOP_UPDATE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub z: Vec<f64>,
    /// Synthesized signal; equals `z` for [`lasso_cd`].
    pub x: Vec<f64>,
    pub cycles: usize,
    /// Objective before the first cycle and after each full cycle.
    pub objective_trace: Vec<f64>,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `‖B z − y‖² + λ‖z‖₁`.
pub fn lasso_objective(b: &Matrix, y: &[f64], lambda: f64, z: &[f64]) -> f64 {
    let r = b.mul_vec(z);
    r.iter().zip(y).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() + lambda * z.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `min ‖B z − y‖² + λ‖z‖₁` from `z = 0`.
/// Stops when a full cycle moves no coordinate by more than 1e-10.
pub fn lasso_cd(b: &Matrix, y: &[f64], lambda: f64, max_cycles: usize) -> Result<LassoFit, NumericsError> {
    if y.len() != b.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: b.rows(),
            found: y.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(NumericsError::InvalidArgument("lambda must be non-negative"));
    }
    let n = b.cols();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| b.column(j)).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut z = vec![0.0; n];
    let mut r = y.to_vec();
    let mut trace = vec![lasso_objective(b, y, lambda, &z)];
    let mut cycles = 0;
    while cycles < max_cycles {
        let mut biggest: f64 = 0.0;
        for j in 0..n {
            if sq[j] == 0.0 {
                continue;
            }
            let rho = cols[j].iter().zip(&r).map(|(a, c)| a * c).sum::<f64>() + sq[j] * z[j];
            let new = soft_threshold(rho, lambda / 2.0) / sq[j];
            let delta = new - z[j];
            if delta != 0.0 {
                r.iter_mut().zip(&cols[j]).for_each(|(ri, c)| *ri -= delta * c);
                z[j] = new;
            }
            biggest = biggest.max(delta.abs());
        }
        cycles += 1;
        trace.push(lasso_objective(b, y, lambda, &z));
        if biggest < STOP_UPDATE {
            break;
        }
    }
    Ok(LassoFit {
        x: z.clone(),
        z,
        cycles,
        objective_trace: trace,
    })
}

/// Orthonormal DCT-II analysis matrix of size `k`.
pub fn dct_matrix(k: usize) -> Matrix {
    Matrix::from_fn(k, k, |f, i| {
        let c = if f == 0 {
            (1.0 / k as f64).sqrt()
        } else {
            (2.0 / k as f64).sqrt()
        };
        c * (PI * (2 * i + 1) as f64 * f as f64 / (2 * k) as f64).cos()
    })
}

/// Orthonormal 2D DCT-II synthesis `Φ` for an `h × w` row-major grid, so
/// that `x = Φ z` maps coefficients to pixels.
pub fn dct_synthesis(h: usize, w: usize) -> Matrix {
    let (dh, dw) = (dct_matrix(h), dct_matrix(w));
    Matrix::from_fn(h * w, h * w, |p, q| dh[(q / w, p / w)] * dw[(q % w, p % w)])
}

/// Lasso in the DCT basis: solves for coefficients with design `AΦ` and
/// returns `x = Φ z`.
pub fn lasso_dct(
    a: &Matrix,
    y: &[f64],
    lambda: f64,
    max_cycles: usize,
    shape: (usize, usize),
) -> Result<LassoFit, NumericsError> {
    if shape.0 * shape.1 != a.cols() {
        return Err(NumericsError::DimensionMismatch {
            expected: a.cols(),
            found: shape.0 * shape.1,
        });
    }
    let phi = dct_synthesis(shape.0, shape.1);
    let mut fit = lasso_cd(&a.matmul(&phi), y, lambda, max_cycles)?;
    fit.x = phi.mul_vec(&fit.z);
    Ok(fit)
}

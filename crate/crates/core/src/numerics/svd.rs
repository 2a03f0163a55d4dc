//! One-sided Jacobi SVD, Householder QR and the solvers built on them.

use super::matrix::{axpy, dot, norm, Matrix};
use super::NumericsError;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// Singular values at or below this threshold count as rank loss.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD `M = U diag(sigma) Vᵀ` with `k = min(rows, cols)` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    /// `rows × k`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> Matrix {
        self.u.scale_cols(&self.sigma).matmul(&self.v.transpose())
    }

    pub fn smallest(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd(m: &Matrix) -> Result<SvdTriple, NumericsError> {
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(SvdTriple {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    svd_tall(m)
}

fn svd_tall(a: &Matrix) -> Result<SvdTriple, NumericsError> {
    let (rows, n) = (a.rows(), a.cols());
    // column-major working copies
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // columns that have collapsed to rounding noise carry no direction
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumericsError::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(usize, f64)> = w.iter().map(|c| norm(c)).enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let sigma_max = order.first().map_or(0.0, |o| o.1);
    let tiny = sigma_max * f64::EPSILON * rows as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &(j, s)) in order.iter().enumerate() {
        if s > tiny && s > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            deficient.push(slot);
        }
    }
    complete_basis(&mut u_cols, &deficient, rows);

    let u = Matrix::from_fn(rows, n, |i, k| u_cols[k][i]);
    let vm = Matrix::from_fn(n, n, |i, k| v[order[k].0][i]);
    let sigma = order.iter().map(|o| o.1).collect();
    Ok(SvdTriple { u, sigma, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Fills the `slots` columns with unit vectors orthogonal to every other column.
fn complete_basis(cols: &mut [Vec<f64>], slots: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in slots {
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || c.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let proj = dot(c, &e);
                    axpy(-proj, c, &mut e);
                }
            }
            let len = norm(&e);
            if len > 1e-8 {
                cols[slot] = e.iter().map(|x| x / len).collect();
                break;
            }
        }
    }
}

/// Minimum-norm solution `Bᵀ(BBᵀ)⁻¹y` of the underdetermined system `Bz = y`.
pub fn pseudo_solve(b: &Matrix, y: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if y.len() != b.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: b.rows(),
            found: y.len(),
        });
    }
    if b.rows() > b.cols() {
        return Err(NumericsError::RankDeficient {
            index: b.cols(),
            value: 0.0,
        });
    }
    let d = svd(b)?;
    if let Some((index, &value)) = d.sigma.iter().enumerate().find(|(_, &s)| s <= RANK_TOL) {
        return Err(NumericsError::RankDeficient { index, value });
    }
    let uty = d.u.tr_mul_vec(y);
    let scaled: Vec<f64> = uty.iter().zip(&d.sigma).map(|(c, s)| c / s).collect();
    Ok(d.v.mul_vec(&scaled))
}

/// Orthonormal basis of the null space of `b`, as columns.
pub fn null_space(b: &Matrix, tol: f64) -> Result<Matrix, NumericsError> {
    let (m, n) = (b.rows(), b.cols());
    let square = if m < n {
        let mut padded = Matrix::zeros(n, n);
        padded.as_mut_slice()[..m * n].copy_from_slice(b.as_slice());
        padded
    } else {
        b.clone()
    };
    let d = svd(&square)?;
    let cutoff = tol * d.sigma.first().copied().unwrap_or(0.0).max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&k| d.sigma[k] <= cutoff).collect();
    if keep.is_empty() {
        return Ok(Matrix::zeros(n, 0));
    }
    Ok(Matrix::from_fn(n, keep.len(), |i, k| d.v[(i, keep[k])]))
}

/// Thin Householder QR of a tall matrix.
#[derive(Debug, Clone)]
pub struct ThinQr {
    /// `rows × cols`, orthonormal columns.
    pub q: Matrix,
    pub r_diag: Vec<f64>,
}

pub fn thin_qr(a: &Matrix) -> Result<ThinQr, NumericsError> {
    let (m, k) = (a.rows(), a.cols());
    if m < k {
        return Err(NumericsError::RankDeficient { index: m, value: 0.0 });
    }
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r_diag = Vec::with_capacity(k);
    for j in 0..k {
        let x = &cols[j][j..];
        let alpha = norm(x);
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x.to_vec();
        v[0] += sign * alpha;
        let vnorm = norm(&v);
        r_diag.push(-sign * alpha);
        if vnorm > 0.0 {
            v.iter_mut().for_each(|e| *e /= vnorm);
            for col in cols.iter_mut().skip(j) {
                let tail = &mut col[j..];
                let f = 2.0 * dot(&v, tail);
                axpy(-f, &v, tail);
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1} applied to the first k unit vectors.
    let mut q = Matrix::zeros(m, k);
    for c in 0..k {
        let mut e = vec![0.0; m];
        e[c] = 1.0;
        for (j, v) in reflectors.iter().enumerate().rev() {
            let tail = &mut e[j..];
            let f = 2.0 * dot(v, tail);
            axpy(-f, v, tail);
        }
        q.set_column(c, &e);
    }
    Ok(ThinQr { q, r_diag })
}

/// Orthonormal basis of the column range of a full-column-rank matrix.
pub fn orthonormal_range(b: &Matrix) -> Result<Matrix, NumericsError> {
    let qr = thin_qr(b)?;
    if let Some((index, value)) = qr
        .r_diag
        .iter()
        .map(|r| r.abs())
        .enumerate()
        .find(|(_, r)| *r <= RANK_TOL)
    {
        return Err(NumericsError::RankDeficient { index, value });
    }
    Ok(qr.q)
}

/// Orthogonal projector onto the column range of `b` (full column rank).
pub fn range_projector(b: &Matrix) -> Result<Matrix, NumericsError> {
    let q = orthonormal_range(b)?;
    Ok(q.matmul(&q.transpose()))
}

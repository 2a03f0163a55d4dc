//! Bijective layers: activation normalization, affine coupling and channel mixing.
//!
//! Each layer maps `z ↦ x` (the generative direction) and reports the forward
//! log-determinant `log|det ∂x/∂z|`. Both directions have reverse-mode
//! derivatives so the stack can be differentiated through `G` (for recovery)
//! and through `G⁻¹` (for likelihood training).

use super::mlp::Mlp;
use crate::numerics::RngStream;

/// Raw coupling scales are clamped to `[-SCALE_BOUND, SCALE_BOUND]` before `exp`.
pub const SCALE_BOUND: f64 = 5.0;

/// Default magnitude floor on actnorm scales.
pub const DEFAULT_ACTNORM_EPSILON: f64 = 0.0005;

pub(crate) trait Bijector {
    fn forward(&self, z: &[f64]) -> (Vec<f64>, f64);
    /// Returns the preimage and the forward log-determinant evaluated there.
    fn inverse(&self, x: &[f64]) -> (Vec<f64>, f64);
    /// Pulls `(x̄, ld̄)` back to `z̄`, accumulating parameter gradients.
    fn forward_vjp(&self, z: &[f64], x_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64>;
    /// Pulls `(z̄, ld̄)` of the inverse map back to `x̄`.
    fn inverse_vjp(&self, x: &[f64], z_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64>;
    fn jvp(&self, z: &[f64], dz: &[f64]) -> Vec<f64>;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
}

// ---------------------------------------------------------------------------

/// Per-coordinate affine normalization `x = s_eff ⊙ z + b`, where
/// `s_eff = sign(s)·max(|s|, ε)` and `sign(0) = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub epsilon: f64,
}

impl ActNorm {
    pub fn identity(n: usize) -> Self {
        Self {
            scale: vec![1.0; n],
            bias: vec![0.0; n],
            epsilon: DEFAULT_ACTNORM_EPSILON,
        }
    }

    pub fn new(scale: Vec<f64>, bias: Vec<f64>, epsilon: f64) -> Self {
        assert_eq!(scale.len(), bias.len());
        Self { scale, bias, epsilon }
    }

    fn effective(&self, i: usize) -> f64 {
        let s = self.scale[i];
        if s.abs() >= self.epsilon {
            s
        } else if s < 0.0 {
            -self.epsilon
        } else {
            self.epsilon
        }
    }

    /// d s_eff / d s
    fn effective_slope(&self, i: usize) -> f64 {
        if self.scale[i].abs() >= self.epsilon {
            1.0
        } else {
            0.0
        }
    }

    fn log_det(&self) -> f64 {
        (0..self.scale.len()).map(|i| self.effective(i).abs().ln()).sum()
    }
}

impl Bijector for ActNorm {
    fn forward(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let x = (0..z.len()).map(|i| self.effective(i) * z[i] + self.bias[i]).collect();
        (x, self.log_det())
    }

    fn inverse(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let z = (0..x.len())
            .map(|i| (x[i] - self.bias[i]) / self.effective(i))
            .collect();
        (z, self.log_det())
    }

    fn forward_vjp(&self, z: &[f64], x_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        let n = z.len();
        if let Some(g) = grad {
            let (gs, gb) = g.split_at_mut(n);
            for i in 0..n {
                let se = self.effective(i);
                gs[i] += (x_bar[i] * z[i] + ld_bar / se) * self.effective_slope(i);
                gb[i] += x_bar[i];
            }
        }
        (0..n).map(|i| x_bar[i] * self.effective(i)).collect()
    }

    fn inverse_vjp(&self, x: &[f64], z_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        let n = x.len();
        if let Some(g) = grad {
            let (gs, gb) = g.split_at_mut(n);
            for i in 0..n {
                let se = self.effective(i);
                let z = (x[i] - self.bias[i]) / se;
                gs[i] += (-z_bar[i] * z / se + ld_bar / se) * self.effective_slope(i);
                gb[i] -= z_bar[i] / se;
            }
        }
        (0..n).map(|i| z_bar[i] / self.effective(i)).collect()
    }

    fn jvp(&self, _z: &[f64], dz: &[f64]) -> Vec<f64> {
        (0..dz.len()).map(|i| self.effective(i) * dz[i]).collect()
    }

    fn param_count(&self) -> usize {
        2 * self.scale.len()
    }

    fn params(&self) -> Vec<f64> {
        self.scale.iter().chain(&self.bias).copied().collect()
    }

    fn set_params(&mut self, p: &[f64]) {
        let n = self.scale.len();
        self.scale.copy_from_slice(&p[..n]);
        self.bias.copy_from_slice(&p[n..2 * n]);
    }
}

// ---------------------------------------------------------------------------

/// Affine coupling: the passive half conditions a scale and shift applied to
/// the active half, `x_a = z_a ⊙ exp(clamp(s)) + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub(crate) dim: usize,
    /// When set, the second half is passive and the first half is transformed.
    pub(crate) flip: bool,
    pub(crate) net: Mlp,
}

struct CouplingEval {
    s: Vec<f64>,
    s_live: Vec<bool>,
    t: Vec<f64>,
}

impl Coupling {
    /// Identity-initialized coupling with conditioner width `hidden`.
    pub fn identity(dim: usize, flip: bool, hidden: usize, rng: &mut RngStream) -> Self {
        assert!(dim >= 2, "coupling needs at least two coordinates");
        let (p, a) = Self::split_sizes(dim, flip);
        Self {
            dim,
            flip,
            net: Mlp::new_zero_output(p, hidden, 2 * a, rng),
        }
    }

    pub fn flip(&self) -> bool {
        self.flip
    }

    pub fn hidden(&self) -> usize {
        self.net.hidden
    }

    fn split_sizes(dim: usize, flip: bool) -> (usize, usize) {
        let first = dim / 2;
        if flip {
            (dim - first, first)
        } else {
            (first, dim - first)
        }
    }

    /// (passive range, active range)
    fn ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let first = self.dim / 2;
        if self.flip {
            (first..self.dim, 0..first)
        } else {
            (0..first, first..self.dim)
        }
    }

    fn evaluate(&self, passive: &[f64]) -> (super::mlp::MlpCache, CouplingEval) {
        let cache = self.net.forward(passive);
        let a = cache.out.len() / 2;
        let raw = &cache.out[..a];
        let s = raw.iter().map(|v| v.clamp(-SCALE_BOUND, SCALE_BOUND)).collect();
        let s_live = raw.iter().map(|v| v.abs() < SCALE_BOUND).collect();
        let t = cache.out[a..].to_vec();
        (cache, CouplingEval { s, s_live, t })
    }

    /// Backprop `(s̄, t̄)` through the clamp and the conditioner into the passive half.
    fn conditioner_back(
        &self,
        passive: &[f64],
        cache: &super::mlp::MlpCache,
        eval: &CouplingEval,
        s_bar: &[f64],
        t_bar: &[f64],
        grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let out_bar: Vec<f64> = s_bar
            .iter()
            .zip(&eval.s_live)
            .map(|(g, &live)| if live { *g } else { 0.0 })
            .chain(t_bar.iter().copied())
            .collect();
        self.net.backward(passive, cache, &out_bar, grad)
    }
}

impl Bijector for Coupling {
    fn forward(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let (pr, ar) = self.ranges();
        let (_, e) = self.evaluate(&z[pr]);
        let mut x = z.to_vec();
        for (k, i) in ar.enumerate() {
            x[i] = z[i] * e.s[k].exp() + e.t[k];
        }
        (x, e.s.iter().sum())
    }

    fn inverse(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (pr, ar) = self.ranges();
        let (_, e) = self.evaluate(&x[pr]);
        let mut z = x.to_vec();
        for (k, i) in ar.enumerate() {
            z[i] = (x[i] - e.t[k]) * (-e.s[k]).exp();
        }
        (z, e.s.iter().sum())
    }

    fn forward_vjp(&self, z: &[f64], x_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        let (pr, ar) = self.ranges();
        let passive = &z[pr.clone()];
        let (cache, e) = self.evaluate(passive);
        let mut z_bar = x_bar.to_vec();
        let mut s_bar = Vec::with_capacity(ar.len());
        let mut t_bar = Vec::with_capacity(ar.len());
        for (k, i) in ar.enumerate() {
            let es = e.s[k].exp();
            z_bar[i] = x_bar[i] * es;
            s_bar.push(x_bar[i] * z[i] * es + ld_bar);
            t_bar.push(x_bar[i]);
        }
        let p_bar = self.conditioner_back(passive, &cache, &e, &s_bar, &t_bar, grad);
        for (k, i) in pr.enumerate() {
            z_bar[i] += p_bar[k];
        }
        z_bar
    }

    fn inverse_vjp(&self, x: &[f64], z_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        let (pr, ar) = self.ranges();
        let passive = &x[pr.clone()];
        let (cache, e) = self.evaluate(passive);
        let mut x_bar = z_bar.to_vec();
        let mut s_bar = Vec::with_capacity(ar.len());
        let mut t_bar = Vec::with_capacity(ar.len());
        for (k, i) in ar.enumerate() {
            let inv = (-e.s[k]).exp();
            let z = (x[i] - e.t[k]) * inv;
            x_bar[i] = z_bar[i] * inv;
            t_bar.push(-z_bar[i] * inv);
            s_bar.push(-z_bar[i] * z + ld_bar);
        }
        let p_bar = self.conditioner_back(passive, &cache, &e, &s_bar, &t_bar, grad);
        for (k, i) in pr.enumerate() {
            x_bar[i] += p_bar[k];
        }
        x_bar
    }

    fn jvp(&self, z: &[f64], dz: &[f64]) -> Vec<f64> {
        let (pr, ar) = self.ranges();
        let (cache, e) = self.evaluate(&z[pr.clone()]);
        let d_out = self.net.jvp(&cache, &dz[pr]);
        let a = e.s.len();
        let mut dx = dz.to_vec();
        for (k, i) in ar.enumerate() {
            let es = e.s[k].exp();
            let ds = if e.s_live[k] { d_out[k] } else { 0.0 };
            dx[i] = dz[i] * es + z[i] * es * ds + d_out[a + k];
        }
        dx
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.net.set_params(p)
    }
}

// ---------------------------------------------------------------------------

/// Invertible linear channel mixing.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixing {
    /// `x[i] = z[perm[i]]`.
    Permutation(Vec<usize>),
    /// `x = P L U z` with unit-lower `L` and upper `U`.
    Lu(LuMixing),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuMixing {
    pub(crate) perm: Vec<usize>,
    /// `n × n` row-major; only the strict lower part is used.
    pub(crate) lower: Vec<f64>,
    /// `n × n` row-major; only the upper part (with diagonal) is used.
    pub(crate) upper: Vec<f64>,
}

/// Fixed permutation for flow step `step`: even steps gather even indices
/// then odd ones, odd steps reverse the order.
pub fn stride_permutation(n: usize, step: usize) -> Vec<usize> {
    if step.is_multiple_of(2) {
        (0..n).step_by(2).chain((1..n).step_by(2)).collect()
    } else {
        (0..n).rev().collect()
    }
}

pub(crate) fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

fn permute(perm: &[usize], v: &[f64]) -> Vec<f64> {
    perm.iter().map(|&j| v[j]).collect()
}

fn unpermute(perm: &[usize], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (i, &j) in perm.iter().enumerate() {
        out[j] = v[i];
    }
    out
}

impl LuMixing {
    pub fn identity(perm: Vec<usize>) -> Self {
        let n = perm.len();
        let mut upper = vec![0.0; n * n];
        for i in 0..n {
            upper[i * n + i] = 1.0;
        }
        Self {
            perm,
            lower: vec![0.0; n * n],
            upper,
        }
    }

    fn n(&self) -> usize {
        self.perm.len()
    }

    fn l_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| v[i] + (0..i).map(|j| self.lower[i * n + j] * v[j]).sum::<f64>())
            .collect()
    }

    fn u_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| (i..n).map(|j| self.upper[i * n + j] * v[j]).sum())
            .collect()
    }

    fn lt_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|j| v[j] + (j + 1..n).map(|i| self.lower[i * n + j] * v[i]).sum::<f64>())
            .collect()
    }

    fn ut_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|j| (0..=j).map(|i| self.upper[i * n + j] * v[i]).sum())
            .collect()
    }

    fn l_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut x = b.to_vec();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lower[i * n + j] * x[j];
            }
        }
        x
    }

    fn u_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.upper[i * n + j] * x[j];
            }
            x[i] /= self.upper[i * n + i];
        }
        x
    }

    fn lt_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut x = b.to_vec();
        for j in (0..n).rev() {
            for i in j + 1..n {
                x[j] -= self.lower[i * n + j] * x[i];
            }
        }
        x
    }

    fn ut_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut x = b.to_vec();
        for j in 0..n {
            for i in 0..j {
                x[j] -= self.upper[i * n + j] * x[i];
            }
            x[j] /= self.upper[j * n + j];
        }
        x
    }

    fn log_det(&self) -> f64 {
        let n = self.n();
        (0..n).map(|i| self.upper[i * n + i].abs().ln()).sum()
    }

    fn lower_params(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (0..i).map(move |j| self.lower[i * n + j]))
    }

    fn upper_params(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i..n).map(move |j| self.upper[i * n + j]))
    }

    /// Adds `dL` (strict lower) and `dU` (upper) outer-product terms to `grad`.
    fn accumulate(
        &self,
        grad: &mut [f64],
        l_left: &[f64],
        l_right: &[f64],
        u_left: &[f64],
        u_right: &[f64],
        sign: f64,
        ld_bar: f64,
    ) {
        let n = self.n();
        let mut k = 0;
        for i in 0..n {
            for j in 0..i {
                grad[k] += sign * l_left[i] * l_right[j];
                k += 1;
            }
        }
        for i in 0..n {
            for j in i..n {
                grad[k] += sign * u_left[i] * u_right[j];
                if i == j {
                    grad[k] += ld_bar / self.upper[i * n + i];
                }
                k += 1;
            }
        }
    }
}

impl Bijector for Mixing {
    fn forward(&self, z: &[f64]) -> (Vec<f64>, f64) {
        match self {
            Mixing::Permutation(p) => (permute(p, z), 0.0),
            Mixing::Lu(lu) => (permute(&lu.perm, &lu.l_mul(&lu.u_mul(z))), lu.log_det()),
        }
    }

    fn inverse(&self, x: &[f64]) -> (Vec<f64>, f64) {
        match self {
            Mixing::Permutation(p) => (unpermute(p, x), 0.0),
            Mixing::Lu(lu) => (lu.u_solve(&lu.l_solve(&unpermute(&lu.perm, x))), lu.log_det()),
        }
    }

    fn forward_vjp(&self, z: &[f64], x_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        match self {
            Mixing::Permutation(p) => unpermute(p, x_bar),
            Mixing::Lu(lu) => {
                let u1 = lu.u_mul(z);
                let u2_bar = unpermute(&lu.perm, x_bar);
                let u1_bar = lu.lt_mul(&u2_bar);
                if let Some(g) = grad {
                    lu.accumulate(g, &u2_bar, &u1, &u1_bar, z, 1.0, ld_bar);
                }
                lu.ut_mul(&u1_bar)
            }
        }
    }

    fn inverse_vjp(&self, x: &[f64], z_bar: &[f64], ld_bar: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        match self {
            Mixing::Permutation(p) => permute(p, z_bar),
            Mixing::Lu(lu) => {
                let u2 = unpermute(&lu.perm, x);
                let u1 = lu.l_solve(&u2);
                let z = lu.u_solve(&u1);
                let u1_bar = lu.ut_solve(z_bar);
                let u2_bar = lu.lt_solve(&u1_bar);
                if let Some(g) = grad {
                    lu.accumulate(g, &u2_bar, &u1, &u1_bar, &z, -1.0, ld_bar);
                }
                permute(&lu.perm, &u2_bar)
            }
        }
    }

    fn jvp(&self, _z: &[f64], dz: &[f64]) -> Vec<f64> {
        self.forward(dz).0
    }

    fn param_count(&self) -> usize {
        match self {
            Mixing::Permutation(_) => 0,
            Mixing::Lu(lu) => lu.n() * lu.n(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Mixing::Permutation(_) => Vec::new(),
            Mixing::Lu(lu) => lu.lower_params().chain(lu.upper_params()).collect(),
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        if let Mixing::Lu(lu) = self {
            let n = lu.n();
            let mut k = 0;
            for i in 0..n {
                for j in 0..i {
                    lu.lower[i * n + j] = p[k];
                    k += 1;
                }
            }
            for i in 0..n {
                for j in i..n {
                    lu.upper[i * n + j] = p[k];
                    k += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

/// One layer of a [`FlowStack`](super::FlowStack).
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    ActNorm(ActNorm),
    Coupling(Coupling),
    Mixing(Mixing),
}

impl Layer {
    pub(crate) fn as_bijector(&self) -> &dyn Bijector {
        match self {
            Layer::ActNorm(l) => l,
            Layer::Coupling(l) => l,
            Layer::Mixing(l) => l,
        }
    }

    pub(crate) fn as_bijector_mut(&mut self) -> &mut dyn Bijector {
        match self {
            Layer::ActNorm(l) => l,
            Layer::Coupling(l) => l,
            Layer::Mixing(l) => l,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::Coupling(_) => "coupling",
            Layer::Mixing(Mixing::Permutation(_)) => "permutation",
            Layer::Mixing(Mixing::Lu(_)) => "lu-mixing",
        }
    }

    /// Perturbs every trainable parameter, keeping the layer comfortably invertible.
    pub fn randomize(&mut self, scale: f64, rng: &mut RngStream) {
        match self {
            Layer::ActNorm(a) => {
                for s in a.scale.iter_mut() {
                    *s = (scale * rng.normal()).exp();
                }
                for b in a.bias.iter_mut() {
                    *b = scale * rng.normal();
                }
            }
            Layer::Coupling(c) => {
                let p: Vec<f64> = c.net.params();
                let w = c.net.w1.len() + c.net.b1.len() + c.net.w2.len() + c.net.b2.len();
                let out_scale = scale / (c.net.hidden as f64).sqrt();
                let q: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        if k < w {
                            v + 0.5 * scale * rng.normal()
                        } else {
                            out_scale * rng.normal()
                        }
                    })
                    .collect();
                c.net.set_params(&q);
            }
            Layer::Mixing(Mixing::Lu(lu)) => {
                let n = lu.n();
                for i in 0..n {
                    for j in 0..n {
                        if j < i {
                            lu.lower[i * n + j] = scale * rng.normal();
                        } else if j > i {
                            lu.upper[i * n + j] = scale * rng.normal();
                        } else {
                            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                            lu.upper[i * n + i] = sign * (scale * rng.normal()).exp();
                        }
                    }
                }
            }
            Layer::Mixing(Mixing::Permutation(_)) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_jacobian, max_abs_diff, FD_STEP};

    fn sample_layers(n: usize) -> Vec<Layer> {
        let mut rng = RngStream::new(99, 0);
        let mut layers = vec![
            Layer::ActNorm(ActNorm::identity(n)),
            Layer::Coupling(Coupling::identity(n, false, 4 * n, &mut rng)),
            Layer::Coupling(Coupling::identity(n, true, 4 * n, &mut rng)),
            Layer::Mixing(Mixing::Permutation(stride_permutation(n, 0))),
            Layer::Mixing(Mixing::Lu(LuMixing::identity(stride_permutation(n, 1)))),
        ];
        for l in layers.iter_mut() {
            l.randomize(0.4, &mut rng);
        }
        layers
    }

    #[test]
    fn actnorm_inverse_example() {
        let a = ActNorm::new(vec![2.0, 2.0], vec![1.0, 1.0], DEFAULT_ACTNORM_EPSILON);
        let (z, ld) = a.inverse(&[3.0, 3.0]);
        assert_eq!(z, vec![1.0, 1.0]);
        assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn actnorm_floor_applies_to_tiny_scales() {
        let a = ActNorm::new(vec![0.0, -1e-6, 3.0], vec![0.0; 3], 0.0005);
        let (x, ld) = a.forward(&[1.0, 1.0, 1.0]);
        assert_eq!(x, vec![0.0005, -0.0005, 3.0]);
        assert!((ld - (2.0 * 0.0005f64.ln() + 3f64.ln())).abs() < 1e-12);
        let (z, _) = a.inverse(&x);
        assert!(max_abs_diff(&z, &[1.0, 1.0, 1.0]) < 1e-12);
    }

    #[test]
    fn permutation_forward() {
        let m = Mixing::Permutation(vec![2, 0, 1]);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).0, vec![3.0, 1.0, 2.0]);
        assert_eq!(m.inverse(&[3.0, 1.0, 2.0]).0, vec![1.0, 2.0, 3.0]);
        assert!(is_permutation(&stride_permutation(7, 0)));
        assert!(is_permutation(&stride_permutation(7, 1)));
    }

    #[test]
    fn each_layer_round_trips() {
        for n in [2, 3, 6] {
            for layer in sample_layers(n) {
                let b = layer.as_bijector();
                let z: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.7).collect();
                let (x, ld_f) = b.forward(&z);
                let (back, ld_i) = b.inverse(&x);
                assert!(max_abs_diff(&back, &z) < 1e-12, "{}", layer.kind_name());
                assert!((ld_f - ld_i).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jvp_and_log_det_match_finite_differences() {
        let n = 5;
        for layer in sample_layers(n) {
            let b = layer.as_bijector();
            let z: Vec<f64> = (0..n).map(|i| 0.2 * i as f64 - 0.4).collect();
            let jac = finite_diff_jacobian(|v| b.forward(v).0, &z, FD_STEP).unwrap();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = b.jvp(&z, &e);
                assert!(max_abs_diff(&col, &jac.column(j)) < 1e-8, "{}", layer.kind_name());
            }
            let (ld_num, _) = jac.log_abs_det();
            assert!((b.forward(&z).1 - ld_num).abs() < 1e-7, "{}", layer.kind_name());
        }
    }

    /// Scalar test functional L = w·x + c·ld through either direction.
    fn check_vjps(layer: &Layer, n: usize) {
        let z: Vec<f64> = (0..n).map(|i| 0.25 * i as f64 - 0.5).collect();
        let w: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
        let c = 0.7;
        let p0 = layer.as_bijector().params();
        let np = p0.len();

        let loss_fwd = |l: &Layer, v: &[f64]| {
            let (x, ld) = l.as_bijector().forward(v);
            crate::numerics::dot(&w, &x) + c * ld
        };
        let loss_inv = |l: &Layer, v: &[f64]| {
            let (x, ld) = l.as_bijector().inverse(v);
            crate::numerics::dot(&w, &x) + c * ld
        };

        for (dir, loss) in [(0, &loss_fwd as &dyn Fn(&Layer, &[f64]) -> f64), (1, &loss_inv)] {
            let mut g = vec![0.0; np];
            let in_bar = if dir == 0 {
                layer.as_bijector().forward_vjp(&z, &w, c, Some(&mut g))
            } else {
                layer.as_bijector().inverse_vjp(&z, &w, c, Some(&mut g))
            };
            let num_in = finite_diff_jacobian(|v| vec![loss(layer, v)], &z, FD_STEP).unwrap();
            assert!(
                max_abs_diff(&in_bar, num_in.row(0)) < 1e-7,
                "{} dir {dir}",
                layer.kind_name()
            );
            let num_p = finite_diff_jacobian(
                |p| {
                    let mut probe = layer.clone();
                    probe.as_bijector_mut().set_params(p);
                    vec![loss(&probe, &z)]
                },
                &p0,
                FD_STEP,
            );
            if np > 0 {
                let num_p = num_p.unwrap();
                assert!(max_abs_diff(&g, num_p.row(0)) < 1e-7, "{} dir {dir}", layer.kind_name());
            }
        }
    }

    #[test]
    fn vjps_match_finite_differences() {
        let n = 4;
        for layer in sample_layers(n) {
            check_vjps(&layer, n);
        }
    }
}

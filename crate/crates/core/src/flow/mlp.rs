//! Two-hidden-layer tanh network used as the coupling conditioner.

use crate::numerics::{dot, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) input: usize,
    pub(crate) hidden: usize,
    pub(crate) output: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) w3: Vec<f64>,
    pub(crate) b3: Vec<f64>,
}

pub(crate) struct MlpCache {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + dot(&w[i * cols..(i + 1) * cols], x))
        .collect()
}

/// `wᵀ g`, accumulating `g xᵀ` into `w_grad` when given.
fn affine_back(w: &[f64], x: &[f64], g: &[f64], grads: Option<(&mut [f64], &mut [f64])>) -> Vec<f64> {
    let cols = x.len();
    let mut x_bar = vec![0.0; cols];
    for (i, &gi) in g.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (xb, wij) in x_bar.iter_mut().zip(row) {
            *xb += gi * wij;
        }
    }
    if let Some((w_grad, b_grad)) = grads {
        for (i, &gi) in g.iter().enumerate() {
            b_grad[i] += gi;
            for (wg, xj) in w_grad[i * cols..(i + 1) * cols].iter_mut().zip(x) {
                *wg += gi * xj;
            }
        }
    }
    x_bar
}

impl Mlp {
    /// Zero output layer, so the network emits exactly zero.
    pub fn new_zero_output(input: usize, hidden: usize, output: usize, rng: &mut RngStream) -> Self {
        let s1 = (1.0 / input as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        Self {
            input,
            hidden,
            output,
            w1: (0..hidden * input).map(|_| s1 * rng.normal()).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden * hidden).map(|_| s2 * rng.normal()).collect(),
            b2: vec![0.0; hidden],
            w3: vec![0.0; output * hidden],
            b3: vec![0.0; output],
        }
    }

    pub fn param_count(&self) -> usize {
        Self::count_for(self.input, self.hidden, self.output)
    }

    pub fn count_for(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + hidden * hidden + hidden + output * hidden + output
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut off = 0;
        for v in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            let len = v.len();
            v.copy_from_slice(&p[off..off + len]);
            off += len;
        }
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, p: &[f64]) -> Self {
        let mut m = Self {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; output * hidden],
            b3: vec![0.0; output],
        };
        m.set_params(p);
        m
    }

    pub(crate) fn forward(&self, x: &[f64]) -> MlpCache {
        let h1: Vec<f64> = affine(&self.w1, &self.b1, x).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = affine(&self.w2, &self.b2, &h1).into_iter().map(f64::tanh).collect();
        let out = affine(&self.w3, &self.b3, &h2);
        MlpCache { h1, h2, out }
    }

    /// Vector–Jacobian product; accumulates parameter gradients into `grad`.
    pub(crate) fn backward(&self, x: &[f64], cache: &MlpCache, out_bar: &[f64], grad: Option<&mut [f64]>) -> Vec<f64> {
        let (n1, n2, n3) = (self.w1.len(), self.w2.len(), self.w3.len());
        let h = self.hidden;
        let mut slices = grad.map(|g| {
            let (gw1, rest) = g.split_at_mut(n1);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, rest) = rest.split_at_mut(n2);
            let (gb2, rest) = rest.split_at_mut(h);
            let (gw3, gb3) = rest.split_at_mut(n3);
            (gw1, gb1, gw2, gb2, gw3, gb3)
        });
        let h2_bar = affine_back(
            &self.w3,
            &cache.h2,
            out_bar,
            slices.as_mut().map(|s| (&mut *s.4, &mut *s.5)),
        );
        let a2_bar: Vec<f64> = h2_bar.iter().zip(&cache.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let h1_bar = affine_back(
            &self.w2,
            &cache.h1,
            &a2_bar,
            slices.as_mut().map(|s| (&mut *s.2, &mut *s.3)),
        );
        let a1_bar: Vec<f64> = h1_bar.iter().zip(&cache.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        affine_back(&self.w1, x, &a1_bar, slices.as_mut().map(|s| (&mut *s.0, &mut *s.1)))
    }

    /// Jacobian–vector product at the cached point.
    pub(crate) fn jvp(&self, cache: &MlpCache, dx: &[f64]) -> Vec<f64> {
        let zeros_h = vec![0.0; self.hidden];
        let d1: Vec<f64> = affine(&self.w1, &zeros_h, dx)
            .iter()
            .zip(&cache.h1)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        let d2: Vec<f64> = affine(&self.w2, &zeros_h, &d1)
            .iter()
            .zip(&cache.h2)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        affine(&self.w3, &vec![0.0; self.output], &d2)
    }
}

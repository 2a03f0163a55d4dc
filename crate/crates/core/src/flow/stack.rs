use super::layers::{stride_permutation, ActNorm, Coupling, Layer, LuMixing, Mixing, DEFAULT_ACTNORM_EPSILON};
use super::FlowError;
use crate::numerics::{all_finite, norm_sq, svd, LinearOperator, Matrix, RngStream};

/// Default symmetric bound on intermediate activations.
pub const DEFAULT_ACTIVATION_CLIP: f64 = 40.0;

/// Largest dimension for which a dense Jacobian is assembled.
pub const MAX_JACOBIAN_DIM: usize = 512;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingKind {
    Permutation,
    Lu,
}

/// Shape of a Glow-style single-scale stack.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub dim: usize,
    /// Number of (actnorm, mixing, coupling) steps.
    pub steps: usize,
    pub mixing: MixingKind,
    /// Conditioner width; `None` means `4 · dim`.
    pub hidden: Option<usize>,
    pub epsilon: f64,
    pub activation_clip: f64,
}

impl FlowConfig {
    pub fn new(dim: usize, steps: usize) -> Self {
        Self {
            dim,
            steps,
            mixing: MixingKind::Permutation,
            hidden: None,
            epsilon: DEFAULT_ACTNORM_EPSILON,
            activation_clip: DEFAULT_ACTIVATION_CLIP,
        }
    }

    pub fn with_mixing(mut self, mixing: MixingKind) -> Self {
        self.mixing = mixing;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = Some(hidden);
        self
    }
}

/// Result of pushing a vector through the stack in either direction.
#[derive(Debug, Clone)]
pub struct FlowPass {
    pub output: Vec<f64>,
    /// Forward log-determinant `log|det ∂G/∂z|` at the latent end of the pass.
    pub log_det: f64,
    pub clip_events: usize,
}

/// Objective value and latent gradient of `‖A G(z) − y‖² + γ‖z‖²`.
#[derive(Debug, Clone)]
pub struct DataFit {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub x: Vec<f64>,
    pub clip_events: usize,
}

/// Intermediate values of a pass; `inputs[l]` is what layer `l` consumed and
/// `clipped[l]` marks coordinates of its output that hit the clip.
struct Trace {
    inputs: Vec<Vec<f64>>,
    clipped: Vec<Vec<bool>>,
    output: Vec<f64>,
    log_det: f64,
    clip_events: usize,
}

/// An invertible generator `G: ℝⁿ → ℝⁿ` built from bijective layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    dim: usize,
    layers: Vec<Layer>,
    pub activation_clip: f64,
}

impl FlowStack {
    pub fn from_layers(dim: usize, layers: Vec<Layer>) -> Result<Self, FlowError> {
        if dim == 0 {
            return Err(FlowError::Dimension { expected: 1, found: 0 });
        }
        for layer in &layers {
            let ok = match layer {
                Layer::ActNorm(a) => a.scale.len() == dim && a.bias.len() == dim,
                Layer::Coupling(c) => c.dim == dim,
                Layer::Mixing(Mixing::Permutation(p)) => p.len() == dim,
                Layer::Mixing(Mixing::Lu(lu)) => lu.perm.len() == dim,
            };
            if !ok {
                return Err(FlowError::LayerDimension {
                    layer: layer.kind_name(),
                    dim,
                });
            }
        }
        Ok(Self {
            dim,
            layers,
            activation_clip: DEFAULT_ACTIVATION_CLIP,
        })
    }

    /// The identity map (no layers).
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            layers: Vec::new(),
            activation_clip: DEFAULT_ACTIVATION_CLIP,
        }
    }

    /// Identity-initialized stack: couplings emit zero scale and shift, actnorms
    /// are unit, and a trailing fixed permutation undoes the accumulated channel
    /// ordering, so the whole stack is exactly the identity. Conditioner hidden
    /// weights are drawn from `rng` so training can start.
    pub fn new(cfg: &FlowConfig, rng: &mut RngStream) -> Self {
        assert!(cfg.dim >= 2, "flows need dimension ≥ 2");
        let n = cfg.dim;
        let hidden = cfg.hidden.unwrap_or(4 * n);
        let mut layers = Vec::with_capacity(3 * cfg.steps);
        for step in 0..cfg.steps {
            let mut an = ActNorm::identity(n);
            an.epsilon = cfg.epsilon;
            layers.push(Layer::ActNorm(an));
            let perm = stride_permutation(n, step);
            layers.push(Layer::Mixing(match cfg.mixing {
                MixingKind::Permutation => Mixing::Permutation(perm),
                MixingKind::Lu => Mixing::Lu(LuMixing::identity(perm)),
            }));
            layers.push(Layer::Coupling(Coupling::identity(n, step % 2 == 1, hidden, rng)));
        }
        // undo the accumulated fixed ordering so the untrained stack is exactly the identity
        let mut total: Vec<usize> = (0..n).collect();
        for step in 0..cfg.steps {
            let p = stride_permutation(n, step);
            total = p.iter().map(|&i| total[i]).collect();
        }
        if total.iter().enumerate().any(|(i, &t)| i != t) {
            let mut undo = vec![0; n];
            for (i, &t) in total.iter().enumerate() {
                undo[t] = i;
            }
            layers.push(Layer::Mixing(Mixing::Permutation(undo)));
        }
        Self {
            dim: n,
            layers,
            activation_clip: cfg.activation_clip,
        }
    }

    /// A stack with every parameter perturbed; used for tests and toy priors.
    pub fn random(cfg: &FlowConfig, scale: f64, rng: &mut RngStream) -> Self {
        let mut s = Self::new(cfg, rng);
        for l in s.layers.iter_mut() {
            l.randomize(scale, rng);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_len(&self, v: &[f64]) -> Result<(), FlowError> {
        if v.len() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        if !all_finite(v) {
            return Err(FlowError::NonFiniteInput);
        }
        Ok(())
    }

    fn clip(&self, v: &mut [f64], layer: usize) -> Result<(Vec<bool>, usize), FlowError> {
        let c = self.activation_clip;
        let mut mask = vec![false; v.len()];
        let mut events = 0;
        for (x, m) in v.iter_mut().zip(mask.iter_mut()) {
            if x.is_nan() {
                return Err(FlowError::NonFinite { layer });
            }
            if x.abs() > c {
                *x = x.clamp(-c, c);
                *m = true;
                events += 1;
            }
        }
        if !all_finite(v) {
            return Err(FlowError::NonFinite { layer });
        }
        Ok((mask, events))
    }

    fn trace_forward(&self, z: &[f64]) -> Result<Trace, FlowError> {
        self.check_len(z)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut clipped = Vec::with_capacity(self.layers.len());
        let mut h = z.to_vec();
        let mut log_det = 0.0;
        let mut clip_events = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (mut next, ld) = layer.as_bijector().forward(&h);
            if !ld.is_finite() {
                return Err(FlowError::NonFinite { layer: l });
            }
            log_det += ld;
            let (mask, events) = self.clip(&mut next, l)?;
            clip_events += events;
            inputs.push(std::mem::replace(&mut h, next));
            clipped.push(mask);
        }
        Ok(Trace {
            inputs,
            clipped,
            output: h,
            log_det,
            clip_events,
        })
    }

    /// Inverse pass; `inputs[l]` holds the value layer `l` inverted.
    fn trace_inverse(&self, x: &[f64]) -> Result<Trace, FlowError> {
        self.check_len(x)?;
        let k = self.layers.len();
        let mut inputs = vec![Vec::new(); k];
        let mut clipped = vec![Vec::new(); k];
        let mut h = x.to_vec();
        let mut log_det = 0.0;
        let mut clip_events = 0;
        for l in (0..k).rev() {
            let (mut prev, ld) = self.layers[l].as_bijector().inverse(&h);
            if !ld.is_finite() {
                return Err(FlowError::NonFinite { layer: l });
            }
            log_det += ld;
            let (mask, events) = self.clip(&mut prev, l)?;
            clip_events += events;
            inputs[l] = std::mem::replace(&mut h, prev);
            clipped[l] = mask;
        }
        Ok(Trace {
            inputs,
            clipped,
            output: h,
            log_det,
            clip_events,
        })
    }

    /// `x = G(z)`, clipping every intermediate activation.
    pub fn forward(&self, z: &[f64]) -> Result<FlowPass, FlowError> {
        let t = self.trace_forward(z)?;
        Ok(FlowPass {
            output: t.output,
            log_det: t.log_det,
            clip_events: t.clip_events,
        })
    }

    /// `z = G⁻¹(x)`; layer inverses applied in reverse order. `log_det` is
    /// that of the forward Jacobian at the returned `z`.
    pub fn inverse(&self, x: &[f64]) -> Result<FlowPass, FlowError> {
        let t = self.trace_inverse(x)?;
        Ok(FlowPass {
            output: t.output,
            log_det: t.log_det,
            clip_events: t.clip_events,
        })
    }

    pub fn log_det(&self, z: &[f64]) -> Result<f64, FlowError> {
        Ok(self.trace_forward(z)?.log_det)
    }

    /// Change-of-variables density with a standard-normal latent.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64, FlowError> {
        let t = self.trace_inverse(x)?;
        Ok(-0.5 * self.dim as f64 * LOG_2PI - 0.5 * norm_sq(&t.output) - t.log_det)
    }

    /// `‖A G(z) − y‖² + γ‖z‖²` and its exact gradient in `z`.
    pub fn grad_data_fit<A: LinearOperator + ?Sized>(
        &self,
        z: &[f64],
        op: &A,
        y: &[f64],
        gamma: f64,
    ) -> Result<DataFit, FlowError> {
        if op.input_dim() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                found: op.input_dim(),
            });
        }
        if y.len() != op.output_dim() {
            return Err(FlowError::Dimension {
                expected: op.output_dim(),
                found: y.len(),
            });
        }
        let t = self.trace_forward(z)?;
        let residual: Vec<f64> = op.apply(&t.output).iter().zip(y).map(|(a, b)| a - b).collect();
        let objective = norm_sq(&residual) + gamma * norm_sq(z);
        let mut bar: Vec<f64> = op.apply_transpose(&residual).iter().map(|v| 2.0 * v).collect();
        for l in (0..self.layers.len()).rev() {
            for (b, &c) in bar.iter_mut().zip(&t.clipped[l]) {
                if c {
                    *b = 0.0;
                }
            }
            bar = self.layers[l].as_bijector().forward_vjp(&t.inputs[l], &bar, 0.0, None);
            if !all_finite(&bar) {
                return Err(FlowError::NonFiniteGradient { layer: l });
            }
        }
        for (b, zi) in bar.iter_mut().zip(z) {
            *b += 2.0 * gamma * zi;
        }
        if !objective.is_finite() {
            return Err(FlowError::NonFiniteObjective);
        }
        Ok(DataFit {
            objective,
            gradient: bar,
            x: t.output,
            clip_events: t.clip_events,
        })
    }

    /// Dense `∂G/∂z`, assembled column by column from directional derivatives.
    pub fn jacobian(&self, z: &[f64]) -> Result<Matrix, FlowError> {
        if self.dim > MAX_JACOBIAN_DIM {
            return Err(FlowError::TooLarge { dim: self.dim });
        }
        let t = self.trace_forward(z)?;
        let n = self.dim;
        let mut jac = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = vec![0.0; n];
            d[j] = 1.0;
            for (l, layer) in self.layers.iter().enumerate() {
                d = layer.as_bijector().jvp(&t.inputs[l], &d);
                for (v, &c) in d.iter_mut().zip(&t.clipped[l]) {
                    if c {
                        *v = 0.0;
                    }
                }
            }
            jac.set_column(j, &d);
        }
        Ok(jac)
    }

    /// Descending singular values of `∂G/∂z`.
    pub fn jacobian_singular_values(&self, z: &[f64]) -> Result<Vec<f64>, FlowError> {
        let jac = self.jacobian(z)?;
        Ok(svd(&jac)?.sigma)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.as_bijector().param_count()).sum()
    }

    /// Trainable parameters of every layer, concatenated in layer order.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.as_bijector().params()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let b = l.as_bijector_mut();
            let k = b.param_count();
            b.set_params(&p[off..off + k]);
            off += k;
        }
    }

    /// Per-sample negative log-likelihood; its parameter gradient is added to `grad`.
    pub fn nll_with_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<(f64, usize), FlowError> {
        assert_eq!(grad.len(), self.param_count());
        let t = self.trace_inverse(x)?;
        let nll = 0.5 * self.dim as f64 * LOG_2PI + 0.5 * norm_sq(&t.output) + t.log_det;
        if !nll.is_finite() {
            return Err(FlowError::NonFiniteObjective);
        }
        let mut bar = t.output.clone();
        let mut off = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let b = layer.as_bijector();
            let k = b.param_count();
            for (v, &c) in bar.iter_mut().zip(&t.clipped[l]) {
                if c {
                    *v = 0.0;
                }
            }
            bar = b.inverse_vjp(&t.inputs[l], &bar, 1.0, Some(&mut grad[off..off + k]));
            if !all_finite(&bar) {
                return Err(FlowError::NonFiniteGradient { layer: l });
            }
            off += k;
        }
        Ok((nll, t.clip_events))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_jacobian, max_abs_diff, FD_STEP};

    fn cfg(n: usize, mixing: MixingKind) -> FlowConfig {
        FlowConfig::new(n, 3).with_mixing(mixing)
    }

    #[test]
    fn identity_stack_is_identity() {
        let g = FlowStack::new(&cfg(4, MixingKind::Lu), &mut RngStream::new(1, 0));
        let z = [0.3, -1.2, 2.0, 0.1];
        let pass = g.forward(&z).unwrap();
        assert_eq!(pass.output, z.to_vec());
        assert_eq!(pass.log_det, 0.0);
        assert_eq!(g.inverse(&z).unwrap().output, z.to_vec());
        assert_eq!(g.jacobian_singular_values(&z).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn log_prob_of_identity() {
        let g = FlowStack::empty(2);
        assert!((g.log_prob(&[0.0, 0.0]).unwrap() + 1.837_877).abs() < 1e-6);
        assert!((g.log_prob(&[1.0, 0.0]).unwrap() + 2.337_877).abs() < 1e-6);
    }

    #[test]
    fn actnorm_log_det_example() {
        let g = FlowStack::from_layers(
            2,
            vec![Layer::ActNorm(ActNorm::new(vec![2.0, 2.0], vec![0.0, 0.0], 0.0005))],
        )
        .unwrap();
        assert!((g.log_det(&[0.4, -0.1]).unwrap() - 1.386_294).abs() < 1e-6);
        let g = FlowStack::from_layers(
            2,
            vec![Layer::ActNorm(ActNorm::new(vec![3.0, 1.0], vec![0.5, 0.0], 0.0005))],
        )
        .unwrap();
        assert_eq!(g.jacobian_singular_values(&[1.0, 1.0]).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn rejects_wrong_length() {
        let g = FlowStack::empty(3);
        assert!(matches!(
            g.forward(&[1.0]),
            Err(FlowError::Dimension { expected: 3, found: 1 })
        ));
        assert!(FlowStack::from_layers(3, vec![Layer::Mixing(Mixing::Permutation(vec![0, 1]))]).is_err());
    }

    #[test]
    fn clipping_counts_events_and_is_transparent_otherwise() {
        let mut g = FlowStack::from_layers(
            2,
            vec![Layer::ActNorm(ActNorm::new(vec![100.0, 1.0], vec![0.0, 0.0], 0.0005))],
        )
        .unwrap();
        let pass = g.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(pass.output, vec![40.0, 1.0]);
        assert_eq!(pass.clip_events, 1);
        g.activation_clip = f64::INFINITY;
        assert_eq!(g.forward(&[1.0, 1.0]).unwrap().output, vec![100.0, 1.0]);

        let r = FlowStack::random(&cfg(4, MixingKind::Permutation), 0.3, &mut RngStream::new(4, 4));
        let mut unclipped = r.clone();
        unclipped.activation_clip = f64::INFINITY;
        let z = [0.5, -0.5, 1.0, 0.2];
        let a = r.forward(&z).unwrap();
        assert_eq!(a.clip_events, 0);
        assert_eq!(a.output, unclipped.forward(&z).unwrap().output);
    }

    #[test]
    fn nan_reports_layer() {
        let g = FlowStack::from_layers(
            2,
            vec![
                Layer::Mixing(Mixing::Permutation(vec![1, 0])),
                Layer::ActNorm(ActNorm::new(vec![1.0, 1.0], vec![f64::NAN, 0.0], 0.0005)),
            ],
        )
        .unwrap();
        assert!(matches!(g.forward(&[1.0, 1.0]), Err(FlowError::NonFinite { layer: 1 })));
    }

    #[test]
    fn data_fit_gradient_simple_cases() {
        let g = FlowStack::new(&cfg(3, MixingKind::Permutation), &mut RngStream::new(2, 0));
        let z = [0.4, -0.3, 1.5];
        let fit = g.grad_data_fit(&z, &Matrix::identity(3), &z, 0.3).unwrap();
        assert!(max_abs_diff(&fit.gradient, &[0.24, -0.18, 0.9]) < 1e-15);

        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, -1.0, 3.0]]).unwrap();
        let y = [0.5, 1.0];
        let fit = g.grad_data_fit(&z, &a, &y, 0.0).unwrap();
        let r: Vec<f64> = a.mul_vec(&z).iter().zip(&y).map(|(u, v)| u - v).collect();
        let expect: Vec<f64> = a.tr_mul_vec(&r).iter().map(|v| 2.0 * v).collect();
        assert!(max_abs_diff(&fit.gradient, &expect) < 1e-14);
    }

    #[test]
    fn random_stack_gradient_matches_finite_differences() {
        for mixing in [MixingKind::Permutation, MixingKind::Lu] {
            let mut rng = RngStream::new(8, 1);
            let g = FlowStack::random(&cfg(5, mixing), 0.3, &mut rng);
            let a = Matrix::from_fn(3, 5, |_, _| rng.normal());
            let y = rng.normal_vec(3);
            let z = rng.normal_vec(5);
            let fit = g.grad_data_fit(&z, &a, &y, 0.05).unwrap();
            let fd = finite_diff_jacobian(
                |v| vec![g.grad_data_fit(v, &a, &y, 0.05).unwrap().objective],
                &z,
                FD_STEP,
            )
            .unwrap();
            let scale = fd.max_abs().max(1e-8);
            assert!(max_abs_diff(&fit.gradient, fd.row(0)) / scale < 1e-6);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(3, 3);
        let g = FlowStack::random(&cfg(3, MixingKind::Lu), 0.3, &mut rng);
        let x = rng.normal_vec(3);
        let mut grad = vec![0.0; g.param_count()];
        let (nll, _) = g.nll_with_grad(&x, &mut grad).unwrap();
        assert!((nll + g.log_prob(&x).unwrap()).abs() < 1e-12);
        let p0 = g.params();
        let fd = finite_diff_jacobian(
            |p| {
                let mut h = g.clone();
                h.set_params(p);
                vec![-h.log_prob(&x).unwrap()]
            },
            &p0,
            FD_STEP,
        )
        .unwrap();
        assert!(max_abs_diff(&grad, fd.row(0)) < 1e-6);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = RngStream::new(6, 0);
        let g = FlowStack::random(&cfg(6, MixingKind::Lu), 0.3, &mut rng);
        let z = rng.normal_vec(6);
        let jac = g.jacobian(&z).unwrap();
        let fd = finite_diff_jacobian(|v| g.forward(v).unwrap().output, &z, FD_STEP).unwrap();
        assert!(jac.sub(&fd).max_abs() < 1e-7);
        let sv = g.jacobian_singular_values(&z).unwrap();
        let sum_log: f64 = sv.iter().map(|s| s.ln()).sum();
        assert!((sum_log - g.log_det(&z).unwrap()).abs() < 1e-9);
    }
}

//! Maximum-likelihood training of flow stacks on small datasets.

mod density;
mod toy;

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::flow::{FlowError, FlowStack};
use crate::numerics::{norm, RngStream};

pub use density::{density_grid, DensityGrid, GridBounds};
pub use toy::{make_toy_2d, Dataset, ToyKind, TOY_RADIUS};

const BATCH_STREAM: u64 = 0x0074_7261_696e;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Interval (in steps) of the full-training-set divergence check.
    pub check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            warmup_steps: 500,
            batch_size: 256,
            steps: 20_000,
            seed: 0,
            check_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive"));
        }
        if self.check_every == 0 {
            return Err(TrainError::Config("check_every must be positive"));
        }
        if self.steps > 0 && (self.warmup_steps == 0 || self.warmup_steps > self.steps) {
            return Err(TrainError::Config("warmup_steps must lie in 1..=steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    /// Mean minibatch negative log-likelihood, nats per sample.
    pub nll: f64,
    pub grad_norm: f64,
    pub clip_events: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
    pub initial_train_nll: f64,
    pub initial_heldout_nll: f64,
    pub final_heldout_nll: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,nll,grad_norm,clip_events\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{}", e.step, e.nll, e.grad_norm, e.clip_events);
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("flow dimension {flow} does not match data dimension {data}")]
    Dimension { flow: usize, data: usize },
    #[error("dataset too small to split")]
    TooSmall,
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize, last_good: Box<FlowStack> },
    #[error("training NLL {nll} at step {step} exceeded the initial {initial} by more than 10%")]
    Diverged {
        step: usize,
        nll: f64,
        initial: f64,
        last_good: Box<FlowStack>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Mean negative log-likelihood over `samples`.
pub fn mean_nll(flow: &FlowStack, samples: &[Vec<f64>]) -> Result<f64, FlowError> {
    let vals = samples
        .par_iter()
        .map(|x| flow.log_prob(x).map(|lp| -lp))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(vals.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean NLL and its parameter gradient over a batch. Per-sample gradients are
/// reduced in batch order, so the result does not depend on the thread count.
fn batch_gradient(flow: &FlowStack, batch: &[&Vec<f64>]) -> Result<(f64, Vec<f64>, usize), FlowError> {
    let k = flow.param_count();
    let per_sample = batch
        .par_iter()
        .map(|x| {
            let mut g = vec![0.0; k];
            flow.nll_with_grad(x, &mut g).map(|(nll, clips)| (nll, g, clips))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut grad = vec![0.0; k];
    let mut nll = 0.0;
    let mut clips = 0;
    for (l, g, c) in per_sample {
        nll += l;
        clips += c;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((nll * inv, grad, clips))
}

pub fn train(flow: &mut FlowStack, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    train_with(flow, data, cfg, |_, _| {})
}

/// Adam on minibatch mean NLL with linear warmup. `on_step` sees the
/// parameters after every update (used for periodic checkpoints).
pub fn train_with(
    flow: &mut FlowStack,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &FlowStack),
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if flow.dim() != data.dim {
        return Err(TrainError::Dimension {
            flow: flow.dim(),
            data: data.dim,
        });
    }
    if data.len() < 2 {
        return Err(TrainError::TooSmall);
    }
    let (train_set, held_out) = data.split();
    let initial_train = mean_nll(flow, train_set)?;
    let initial_held = mean_nll(flow, held_out)?;
    let mut log = TrainLog {
        entries: Vec::with_capacity(cfg.steps),
        initial_train_nll: initial_train,
        initial_heldout_nll: initial_held,
        final_heldout_nll: initial_held,
    };
    if cfg.steps == 0 {
        return Ok(log);
    }

    let tripwire = initial_train + 0.1 * initial_train.abs();
    let mut rng = RngStream::new(cfg.seed, BATCH_STREAM);
    let mut adam = Adam::new(flow.param_count());
    let mut params = flow.params();
    let mut last_good = flow.clone();

    for step in 0..cfg.steps {
        let batch: Vec<&Vec<f64>> = (0..cfg.batch_size)
            .map(|_| &train_set[rng.below(train_set.len())])
            .collect();
        let (nll, grad, clip_events) = match batch_gradient(flow, &batch) {
            Ok(v) if v.0.is_finite() && v.1.iter().all(|g| g.is_finite()) => v,
            _ => {
                *flow = last_good.clone();
                return Err(TrainError::NonFinite {
                    step,
                    last_good: Box::new(last_good),
                });
            }
        };
        let grad_norm = norm(&grad);
        let lr = cfg.learning_rate * ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0);
        adam.step(&mut params, &grad, lr);
        flow.set_params(&params);
        log.entries.push(TrainLogEntry {
            step,
            nll,
            grad_norm,
            clip_events,
        });

        if (step + 1) % cfg.check_every == 0 || step + 1 == cfg.steps {
            let full = mean_nll(flow, train_set);
            match full {
                Ok(v) if v.is_finite() && v <= tripwire => last_good = flow.clone(),
                Ok(v) if v.is_finite() => {
                    *flow = last_good.clone();
                    return Err(TrainError::Diverged {
                        step,
                        nll: v,
                        initial: initial_train,
                        last_good: Box::new(last_good),
                    });
                }
                _ => {
                    *flow = last_good.clone();
                    return Err(TrainError::NonFinite {
                        step,
                        last_good: Box::new(last_good),
                    });
                }
            }
        }
        on_step(step, flow);
    }
    log.final_heldout_nll = mean_nll(flow, held_out)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam.step(&mut p, &[0.0; 3], 1e-2);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn zero_steps_leave_parameters_bitwise() {
        let mut rng = RngStream::new(4, 0);
        let mut g = FlowStack::random(&FlowConfig::new(2, 2), 0.2, &mut rng);
        let before = g.clone();
        let data = make_toy_2d(ToyKind::Ring, 40, 0.1, &mut rng).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let log = train(&mut g, &data, &cfg).unwrap();
        assert!(log.entries.is_empty());
        assert_eq!(g, before);
    }

    #[test]
    fn standard_normal_data_stays_near_optimum() {
        let mut rng = RngStream::new(5, 0);
        let samples: Vec<Vec<f64>> = (0..2000).map(|_| rng.normal_vec(2)).collect();
        let data = Dataset::new("normal", samples).unwrap();
        let mut g = FlowStack::new(&FlowConfig::new(2, 2), &mut rng);
        let cfg = TrainConfig {
            steps: 200,
            warmup_steps: 50,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let log = train(&mut g, &data, &cfg).unwrap();
        let optimum = 1.0 + (2.0 * std::f64::consts::PI).ln();
        let (train_set, _) = data.split();
        let nll = mean_nll(&g, train_set).unwrap();
        assert!((nll - optimum).abs() < 0.05, "{nll} vs {optimum}");
        assert_eq!(log.entries.len(), 200);
    }

    #[test]
    fn rejects_bad_config_and_dimension() {
        let mut rng = RngStream::new(6, 0);
        let data = make_toy_2d(ToyKind::Ring, 20, 0.1, &mut rng).unwrap();
        let mut g = FlowStack::new(&FlowConfig::new(3, 1), &mut rng);
        assert!(matches!(
            train(&mut g, &data, &TrainConfig::default()),
            Err(TrainError::Dimension { .. })
        ));
        let bad = TrainConfig {
            warmup_steps: 10,
            steps: 5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_header() {
        let log = TrainLog {
            entries: vec![TrainLogEntry {
                step: 0,
                nll: 1.5,
                grad_norm: 0.25,
                clip_events: 0,
            }],
            ..Default::default()
        };
        assert_eq!(log.to_csv(), "step,nll,grad_norm,clip_events\n0,1.5,0.25,0\n");
    }
}

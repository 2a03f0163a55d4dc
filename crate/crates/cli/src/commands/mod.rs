mod analysis;
mod recover;
mod theory;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use flowprior_core::flow::{load, FlowConfig, FlowStack};
use flowprior_core::inverse::{read_signal, InitStrategy};
use flowprior_core::numerics::RngStream;
use flowprior_core::training::{make_toy_2d, ToyKind};

use crate::config::{Config, ConfigError, KeyKind};

pub use analysis::{jacobian, perturb};
pub use recover::{cs, denoise, inpaint, lasso};
pub use theory::theory;
pub use train::train;

// Stream ids for the independent random draws of each command.
const DATA_STREAM: u64 = 1;
const MODEL_SAMPLE_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;
const THEORY_STREAM: u64 = 4;
const POINT_STREAM: u64 = 5;
const PERTURB_STREAM: u64 = 6;
const LASSO_STREAM: u64 = 7;
const INIT_STREAM: u64 = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    /// Reads the config against `schema` plus the shared `seed` key.
    fn load(&self, schema: &[(&'static str, KeyKind)]) -> Result<(Config, u64), CliError> {
        let mut full = schema.to_vec();
        full.push(("seed", KeyKind::Value));
        let cfg = match &self.config {
            Some(p) => Config::load(p, &full)?,
            None => Config::default(),
        };
        let seed = match self.seed {
            Some(s) => s,
            None => cfg.get_or("seed", 0u64)?,
        };
        Ok((cfg, seed))
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let fail = |e: std::io::Error| ConfigError::new(format!("cannot write to '{}': {e}", self.out.display()));
        std::fs::create_dir_all(&self.out).map_err(fail)?;
        std::fs::write(self.out.join(name), contents).map_err(fail)?;
        Ok(())
    }
}

const MODEL_KEYS: &[(&str, KeyKind)] = &[("model", KeyKind::Path), ("n", KeyKind::Value)];

const SAMPLE_KEYS: &[(&str, KeyKind)] = &[
    ("samples", KeyKind::Value),
    ("dataset", KeyKind::Value),
    ("dataset_noise", KeyKind::Value),
    ("samples_file", KeyKind::Path),
];

const SOLVER_KEYS: &[(&str, KeyKind)] = &[
    ("init", KeyKind::Value),
    ("max_iters", KeyKind::Value),
    ("tolerance", KeyKind::Value),
    ("image_shape", KeyKind::Value),
];

fn schema(parts: &[&[(&'static str, KeyKind)]]) -> Vec<(&'static str, KeyKind)> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// The checkpoint named by `model`, or an identity stack of dimension `n`.
fn model(cfg: &Config) -> Result<FlowStack, CliError> {
    match cfg.path("model") {
        Some(p) => {
            let g = load(&p).map_err(|e| cfg.error("model", e.to_string()))?;
            if let Some(n) = cfg.get::<usize>("n")? {
                if n != g.dim() {
                    return Err(cfg.error("n", format!("model has dimension {}", g.dim())).into());
                }
            }
            Ok(g)
        }
        None => {
            let n: usize = cfg.get_or("n", 2)?;
            if n == 0 {
                return Err(cfg.error("n", "must be positive").into());
            }
            Ok(FlowStack::new(&FlowConfig::new(n, 1), &mut RngStream::new(0, 0)))
        }
    }
}

/// Ground-truth signals: a signal file (concatenated vectors of length `n`),
/// a toy dataset, or draws `G(z)` with `z ~ N(0, I)`.
fn samples(cfg: &Config, flow: &FlowStack, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    let n = flow.dim();
    let count: usize = cfg.get_or("samples", 20)?;
    if count == 0 {
        return Err(cfg.error("samples", "must be positive").into());
    }
    if let Some(p) = cfg.path("samples_file") {
        let flat = read_signal(&p).map_err(|e| cfg.error("samples_file", e.to_string()))?;
        if flat.is_empty() || flat.len() % n != 0 {
            return Err(cfg
                .error(
                    "samples_file",
                    format!("length {} is not a multiple of n = {n}", flat.len()),
                )
                .into());
        }
        return Ok(flat.chunks(n).take(count).map(<[f64]>::to_vec).collect());
    }
    if let Some(kind) = cfg.get::<ToyKind>("dataset")? {
        if n != 2 {
            return Err(cfg.error("dataset", "toy datasets are two-dimensional").into());
        }
        let noise: f64 = cfg.get_or("dataset_noise", 0.2)?;
        let data = make_toy_2d(kind, count.max(2), noise, &mut RngStream::new(seed, DATA_STREAM))
            .map_err(|e| cfg.error("dataset", e))?;
        return Ok(data.samples.into_iter().take(count).collect());
    }
    let mut rng = RngStream::new(seed, MODEL_SAMPLE_STREAM);
    (0..count)
        .map(|_| flow.forward(&rng.normal_vec(n)).map(|p| p.output).map_err(numerical))
        .collect()
}

/// `zero`, `gaussian:STD` or `image:PATH`.
fn init_strategy(cfg: &Config, n: usize) -> Result<InitStrategy, CliError> {
    let Some(raw) = cfg.raw("init") else {
        return Ok(InitStrategy::Zero);
    };
    if raw == "zero" {
        return Ok(InitStrategy::Zero);
    }
    if let Some(std) = raw.strip_prefix("gaussian:") {
        let std: f64 = std
            .trim()
            .parse()
            .map_err(|_| cfg.error("init", "gaussian:STD needs a number"))?;
        if !(std >= 0.0) {
            return Err(cfg.error("init", "std must be non-negative").into());
        }
        return Ok(InitStrategy::Gaussian { std });
    }
    if let Some(path) = raw.strip_prefix("image:") {
        let x = read_signal(path.trim()).map_err(|e| cfg.error("init", e.to_string()))?;
        if x.len() != n {
            return Err(cfg
                .error("init", format!("image has length {}, expected {n}", x.len()))
                .into());
        }
        return Ok(InitStrategy::FromImage(x));
    }
    Err(cfg.error("init", "expected zero, gaussian:STD or image:PATH").into())
}

/// `HxW`, defaulting to `1xn`.
fn image_shape(cfg: &Config, n: usize) -> Result<Option<(usize, usize)>, CliError> {
    let Some(raw) = cfg.raw("image_shape") else {
        return Ok(None);
    };
    let parsed = raw
        .split_once('x')
        .and_then(|(h, w)| Some((h.trim().parse::<usize>().ok()?, w.trim().parse::<usize>().ok()?)));
    match parsed {
        Some((h, w)) if h * w == n && h > 0 => Ok(Some((h, w))),
        _ => Err(cfg.error("image_shape", format!("expected HxW with H·W = {n}")).into()),
    }
}

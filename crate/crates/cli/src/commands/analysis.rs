use std::fmt::Write as _;

use flowprior_core::inverse::{perturbation_csv, perturbation_sensitivity, MIN_RANDOM_DIRECTIONS};
use flowprior_core::numerics::RngStream;

use super::{model, numerical, schema, CliError, Context, MODEL_KEYS, PERTURB_STREAM, POINT_STREAM};
use crate::config::{Config, KeyKind};

pub fn jacobian(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[MODEL_KEYS, &[("count", KeyKind::Value)]]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let count: usize = cfg.get_or("count", 10)?;
    let mut rng = RngStream::new(seed, POINT_STREAM);
    let mut csv = String::from("point,index,sigma,log_sigma,sum_log_sigma,log_det\n");
    for p in 0..count {
        let z = rng.normal_vec(flow.dim());
        let sigma = flow.jacobian_singular_values(&z).map_err(numerical)?;
        let log_det = flow.log_det(&z).map_err(numerical)?;
        let sum: f64 = sigma.iter().map(|s| s.ln()).sum();
        for (i, s) in sigma.iter().enumerate() {
            let _ = writeln!(csv, "{p},{i},{s},{},{sum},{log_det}", s.ln());
        }
    }
    ctx.write("jacobian.csv", csv)
}

fn point(cfg: &Config, key: &str, n: usize) -> Result<Option<Vec<f64>>, CliError> {
    match cfg.list::<f64>(key)? {
        Some(v) if v.len() != n => Err(cfg.error(key, format!("expected {n} values, found {}", v.len())).into()),
        other => Ok(other),
    }
}

pub fn perturb(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[
        MODEL_KEYS,
        &[
            ("x_a", KeyKind::Value),
            ("x_b", KeyKind::Value),
            ("alpha", KeyKind::Value),
            ("directions", KeyKind::Value),
        ],
    ]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let n = flow.dim();
    let mut rng = RngStream::new(seed, PERTURB_STREAM);
    // data points default to two model samples
    let mut endpoint = |key: &str| -> Result<Vec<f64>, CliError> {
        let z = rng.normal_vec(n);
        match point(&cfg, key, n)? {
            Some(x) => Ok(flow.inverse(&x).map_err(numerical)?.output),
            None => Ok(z),
        }
    };
    let z_a = endpoint("x_a")?;
    let z_b = endpoint("x_b")?;
    let alphas = cfg
        .list::<f64>("alpha")?
        .unwrap_or_else(|| (0..=8).map(|k| 0.25 * k as f64).collect());
    let directions: usize = cfg.get_or("directions", MIN_RANDOM_DIRECTIONS)?;
    if directions < MIN_RANDOM_DIRECTIONS {
        return Err(cfg
            .error(
                "directions",
                format!("at least {MIN_RANDOM_DIRECTIONS} directions are required"),
            )
            .into());
    }
    let rows = perturbation_sensitivity(&flow, &z_a, &z_b, &alphas, directions, &mut rng).map_err(|e| {
        if z_a == z_b {
            cfg.error("x_b", "must differ from x_a").into()
        } else {
            numerical(e)
        }
    })?;
    ctx.write("perturb.csv", perturbation_csv(&rows))
}

use rayon::prelude::*;

use flowprior_core::inverse::{
    gamma_sweep, lasso_dct, make_measurements, measurement_sweep, noise_level_from_sigma, psnr, read_signal, ssim,
    MeasurementOperator, SweepSettings, SweepTable, DEFAULT_LAMBDA, SWEEP_CSV_HEADER,
};
use flowprior_core::numerics::RngStream;

use super::{
    image_shape, init_strategy, model, numerical, samples, schema, CliError, Context, LASSO_STREAM, MASK_STREAM,
    MODEL_KEYS, SAMPLE_KEYS, SOLVER_KEYS,
};
use crate::config::{Config, KeyKind};

const DEFAULT_GAMMAS: [f64; 6] = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0];

fn settings(cfg: &Config, seed: u64, n: usize) -> Result<SweepSettings, CliError> {
    let d = SweepSettings::default();
    Ok(SweepSettings {
        seed,
        init: init_strategy(cfg, n)?,
        max_iters: cfg.get_or("max_iters", d.max_iters)?,
        tolerance: cfg.get_or("tolerance", d.tolerance)?,
        image_shape: image_shape(cfg, n)?,
    })
}

/// Total noise level from either `noise_level` or per-coordinate `sigma`.
fn noise_level(cfg: &Config, m: usize, default_sigma: f64) -> Result<f64, CliError> {
    let level = match (cfg.get::<f64>("noise_level")?, cfg.get::<f64>("sigma")?) {
        (Some(_), Some(_)) => return Err(cfg.error("sigma", "give either sigma or noise_level, not both").into()),
        (Some(l), None) => l,
        (None, s) => noise_level_from_sigma(s.unwrap_or(default_sigma), m),
    };
    if !(level >= 0.0 && level.is_finite()) {
        return Err(cfg
            .error(
                if cfg.has("sigma") { "sigma" } else { "noise_level" },
                "must be non-negative",
            )
            .into());
    }
    Ok(level)
}

fn gammas(cfg: &Config) -> Result<Vec<f64>, CliError> {
    let g = cfg.list::<f64>("gamma")?.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
    if g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(cfg.error("gamma", "values must be non-negative").into());
    }
    Ok(g)
}

fn finish(ctx: &Context, name: &str, table: SweepTable) -> Result<(), CliError> {
    ctx.write(name, table.to_csv())?;
    if table.all_failed() {
        let first = table
            .rows
            .iter()
            .find_map(|r| r.outcome.as_ref().err())
            .cloned()
            .unwrap_or_default();
        return Err(CliError::Numerical(format!("every cell failed; first error: {first}")));
    }
    Ok(())
}

const NOISE_KEYS: &[(&str, KeyKind)] = &[("noise_level", KeyKind::Value), ("sigma", KeyKind::Value)];

pub fn denoise(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[
        MODEL_KEYS,
        SAMPLE_KEYS,
        SOLVER_KEYS,
        NOISE_KEYS,
        &[("gamma", KeyKind::Value)],
    ]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let n = flow.dim();
    let op = MeasurementOperator::identity(n, noise_level(&cfg, n, 0.1)?).map_err(numerical)?;
    let xs = samples(&cfg, &flow, seed)?;
    let table = gamma_sweep(&flow, &op, &xs, &gammas(&cfg)?, &settings(&cfg, seed, n)?).map_err(numerical)?;
    finish(ctx, "denoise.csv", table)
}

fn m_grid(cfg: &Config, n: usize) -> Result<Vec<usize>, CliError> {
    let ms = cfg.list::<usize>("m")?.unwrap_or_else(|| vec![n]);
    if ms.iter().any(|&m| m == 0 || m > n) {
        return Err(cfg.error("m", format!("values must lie in 1..={n}")).into());
    }
    Ok(ms)
}

pub fn cs(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[
        MODEL_KEYS,
        SAMPLE_KEYS,
        SOLVER_KEYS,
        &[("noise_level", KeyKind::Value), ("m", KeyKind::Value)],
    ]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let n = flow.dim();
    let ms = m_grid(&cfg, n)?;
    let level: f64 = cfg.get_or("noise_level", 0.0)?;
    if !(level >= 0.0) {
        return Err(cfg.error("noise_level", "must be non-negative").into());
    }
    let xs = samples(&cfg, &flow, seed)?;
    let table = measurement_sweep(&flow, &xs, &ms, level, &settings(&cfg, seed, n)?).map_err(numerical)?;
    finish(ctx, "cs.csv", table)
}

pub fn inpaint(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[
        MODEL_KEYS,
        SAMPLE_KEYS,
        SOLVER_KEYS,
        NOISE_KEYS,
        &[
            ("gamma", KeyKind::Value),
            ("mask_file", KeyKind::Path),
            ("mask_fraction", KeyKind::Value),
        ],
    ]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let n = flow.dim();
    let mask = match cfg.path("mask_file") {
        Some(p) => {
            if cfg.has("mask_fraction") {
                return Err(cfg
                    .error("mask_fraction", "give either mask_file or mask_fraction, not both")
                    .into());
            }
            read_signal(&p).map_err(|e| cfg.error("mask_file", e.to_string()))?
        }
        None => {
            let keep: f64 = cfg.get_or("mask_fraction", 0.5)?;
            if !(0.0..=1.0).contains(&keep) {
                return Err(cfg.error("mask_fraction", "must lie in [0, 1]").into());
            }
            let mut rng = RngStream::new(seed, MASK_STREAM);
            (0..n).map(|_| if rng.uniform() < keep { 1.0 } else { 0.0 }).collect()
        }
    };
    if mask.len() != n {
        return Err(cfg
            .error("mask_file", format!("mask has length {}, expected {n}", mask.len()))
            .into());
    }
    let observed = mask.iter().filter(|&&v| v == 1.0).count().max(1);
    let op = MeasurementOperator::mask(&mask, noise_level(&cfg, observed, 0.0)?)
        .map_err(|e| cfg.error("mask_file", e.to_string()))?;
    let xs = samples(&cfg, &flow, seed)?;
    let table = gamma_sweep(&flow, &op, &xs, &gammas(&cfg)?, &settings(&cfg, seed, n)?).map_err(numerical)?;
    finish(ctx, "inpaint.csv", table)
}

pub fn lasso(ctx: &Context) -> Result<(), CliError> {
    let keys = schema(&[
        MODEL_KEYS,
        SAMPLE_KEYS,
        &[
            ("m", KeyKind::Value),
            ("noise_level", KeyKind::Value),
            ("lambda", KeyKind::Value),
            ("iters", KeyKind::Value),
            ("image_shape", KeyKind::Value),
        ],
    ]);
    let (cfg, seed) = ctx.load(&keys)?;
    let flow = model(&cfg)?;
    let n = flow.dim();
    let ms = m_grid(&cfg, n)?;
    let level: f64 = cfg.get_or("noise_level", 0.0)?;
    let lambda: f64 = cfg.get_or("lambda", DEFAULT_LAMBDA)?;
    if !(lambda >= 0.0) {
        return Err(cfg.error("lambda", "must be non-negative").into());
    }
    let iters: usize = cfg.get_or("iters", 1000)?;
    let shape = image_shape(&cfg, n)?.unwrap_or((1, n));
    let xs = samples(&cfg, &flow, seed)?;

    let cells: Vec<(usize, usize)> = ms.iter().flat_map(|&m| (0..xs.len()).map(move |i| (m, i))).collect();
    let base = RngStream::new(seed, LASSO_STREAM);
    let rows: Vec<String> = cells
        .par_iter()
        .map(|&(m, i)| {
            let cell = base.derive((m as u64) << 32 | i as u64).stream_id;
            let outcome = (|| {
                let rng = RngStream::new(cell, 0);
                let op = MeasurementOperator::gaussian(m, n, level, &mut rng.derive(1))?;
                let y = make_measurements(&xs[i], &op, &mut rng.derive(2))?;
                let fit = lasso_dct(&op.to_matrix(), &y, lambda, iters, shape)?;
                let status = if fit.cycles < iters { "converged" } else { "max_iters" };
                Ok::<_, flowprior_core::inverse::InverseError>((
                    psnr(&fit.x, &xs[i])?,
                    ssim(&fit.x, &xs[i], shape)?,
                    fit.cycles,
                    status,
                ))
            })();
            match outcome {
                Ok((p, s, it, st)) => format!("{m},{i},{cell},{p},{s},{it},{st}\n"),
                Err(_) => format!("{m},{i},{cell},,,,error\n"),
            }
        })
        .collect();
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    rows.iter().for_each(|r| csv.push_str(r));
    ctx.write("lasso.csv", &csv)?;
    if rows.iter().all(|r| r.ends_with(",error\n")) {
        return Err(CliError::Numerical("every lasso cell failed".into()));
    }
    Ok(())
}

use flowprior_core::flow::checkpoint::to_bytes;
use flowprior_core::flow::{load, save, FlowConfig, FlowStack, MixingKind};
use flowprior_core::numerics::RngStream;
use flowprior_core::training::{density_grid, make_toy_2d, train_with, GridBounds, ToyKind, TrainConfig, TrainError};

use super::{numerical, CliError, Context, DATA_STREAM, INIT_STREAM};
use crate::config::KeyKind;

const KEYS: &[(&str, KeyKind)] = &[
    ("dataset", KeyKind::Value),
    ("count", KeyKind::Value),
    ("dataset_noise", KeyKind::Value),
    ("flow_steps", KeyKind::Value),
    ("hidden", KeyKind::Value),
    ("mixing", KeyKind::Value),
    ("learning_rate", KeyKind::Value),
    ("warmup_steps", KeyKind::Value),
    ("batch_size", KeyKind::Value),
    ("steps", KeyKind::Value),
    ("check_every", KeyKind::Value),
    ("checkpoint_every", KeyKind::Value),
    ("init_model", KeyKind::Path),
    ("density_resolution", KeyKind::Value),
    ("density_bounds", KeyKind::Value),
];

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let (cfg, seed) = ctx.load(KEYS)?;
    let kind: ToyKind = cfg.get_or("dataset", ToyKind::GaussianMixture(2))?;
    let count: usize = cfg.get_or("count", 5000)?;
    let noise: f64 = cfg.get_or("dataset_noise", 0.2)?;
    let data =
        make_toy_2d(kind, count, noise, &mut RngStream::new(seed, DATA_STREAM)).map_err(|e| cfg.error("count", e))?;

    let mut flow = match cfg.path("init_model") {
        Some(p) => {
            let g = load(&p).map_err(|e| cfg.error("init_model", e.to_string()))?;
            if g.dim() != data.dim {
                return Err(cfg
                    .error(
                        "init_model",
                        format!("model dimension {} differs from data dimension {}", g.dim(), data.dim),
                    )
                    .into());
            }
            g
        }
        None => {
            let mut fc = FlowConfig::new(data.dim, cfg.get_or("flow_steps", 8)?);
            fc = fc.with_mixing(match cfg.raw("mixing").unwrap_or("permutation") {
                "permutation" => MixingKind::Permutation,
                "lu" => MixingKind::Lu,
                other => {
                    return Err(cfg
                        .error("mixing", format!("expected permutation or lu, found '{other}'"))
                        .into())
                }
            });
            if let Some(h) = cfg.get::<usize>("hidden")? {
                fc = fc.with_hidden(h);
            }
            FlowStack::new(&fc, &mut RngStream::new(seed, INIT_STREAM))
        }
    };

    let defaults = TrainConfig::default();
    let steps: usize = cfg.get_or("steps", defaults.steps)?;
    let tc = TrainConfig {
        learning_rate: cfg.get_or("learning_rate", defaults.learning_rate)?,
        warmup_steps: cfg.get_or("warmup_steps", defaults.warmup_steps.min(steps.max(1)))?,
        batch_size: cfg.get_or("batch_size", defaults.batch_size)?,
        steps,
        seed,
        check_every: cfg.get_or("check_every", defaults.check_every)?,
    };
    tc.validate()
        .map_err(|e| crate::config::ConfigError::new(e.to_string()))?;
    let checkpoint_every: usize = cfg.get_or("checkpoint_every", 0)?;

    let mut write_error = None;
    let result = train_with(&mut flow, &data, &tc, |step, g| {
        if checkpoint_every > 0 && (step + 1) % checkpoint_every == 0 && write_error.is_none() {
            let path = ctx.out.join(format!("model_step{}.ckpt", step + 1));
            if let Err(e) = std::fs::create_dir_all(&ctx.out)
                .map_err(|e| e.to_string())
                .and_then(|_| save(g, &path).map_err(|e| e.to_string()))
            {
                write_error = Some(e);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(crate::config::ConfigError::new(format!("cannot write checkpoint: {e}")).into());
    }
    let log = match result {
        Ok(log) => log,
        Err(e) => {
            if let TrainError::Diverged { last_good, .. } | TrainError::NonFinite { last_good, .. } = &e {
                ctx.write("model_last_good.ckpt", to_bytes(last_good).map_err(numerical)?)?;
            }
            return Err(numerical(e));
        }
    };
    ctx.write("model.ckpt", to_bytes(&flow).map_err(numerical)?)?;
    ctx.write("train_log.csv", log.to_csv())?;
    ctx.write(
        "train_summary.csv",
        format!(
            "initial_train_nll,initial_heldout_nll,final_heldout_nll\n{},{},{}\n",
            log.initial_train_nll, log.initial_heldout_nll, log.final_heldout_nll
        ),
    )?;

    let resolution: usize = cfg.get_or("density_resolution", 0)?;
    if resolution > 0 {
        if flow.dim() != 2 {
            return Err(cfg
                .error("density_resolution", "density grids need a two-dimensional model")
                .into());
        }
        let half: f64 = cfg.get_or("density_bounds", 5.0)?;
        let grid = density_grid(&flow, GridBounds::square(half), resolution).map_err(numerical)?;
        ctx.write("density.csv", grid.to_csv())?;
    }
    Ok(())
}

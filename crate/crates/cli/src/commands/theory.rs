use flowprior_core::numerics::RngStream;
use flowprior_core::theory::{bound_report, bound_reports_csv, LinearGenerator, SigmaProfile};

use super::{numerical, CliError, Context, THEORY_STREAM};
use crate::config::KeyKind;

const KEYS: &[(&str, KeyKind)] = &[
    ("n", KeyKind::Value),
    ("profiles", KeyKind::Value),
    ("m", KeyKind::Value),
    ("trials", KeyKind::Value),
    ("generator", KeyKind::Value),
];

pub fn theory(ctx: &Context) -> Result<(), CliError> {
    let (cfg, seed) = ctx.load(KEYS)?;
    let n: usize = cfg.get_or("n", 20)?;
    if n < 5 {
        return Err(cfg.error("n", "the bounds need n ≥ 5").into());
    }
    let profiles = cfg
        .list::<SigmaProfile>("profiles")?
        .unwrap_or_else(|| SigmaProfile::ALL.to_vec());
    let ms = cfg.list::<usize>("m")?.unwrap_or_else(|| (4..n).collect());
    if let Some(&bad) = ms.iter().find(|&&m| m < 4 || m >= n) {
        return Err(cfg.error("m", format!("m = {bad} is outside 4..{n}")).into());
    }
    let trials: usize = cfg.get_or("trials", 10_000)?;
    if trials < 2 {
        return Err(cfg.error("trials", "at least two trials are required").into());
    }
    let random = match cfg.raw("generator").unwrap_or("random") {
        "random" => true,
        "diagonal" => false,
        other => {
            return Err(cfg
                .error("generator", format!("expected random or diagonal, found '{other}'"))
                .into())
        }
    };

    let base = RngStream::new(seed, THEORY_STREAM);
    let mut reports = Vec::with_capacity(profiles.len() * ms.len());
    for (p, profile) in profiles.iter().enumerate() {
        let sigma = profile.values(n);
        let g = if random {
            LinearGenerator::random(sigma, &mut base.derive(p as u64))
        } else {
            LinearGenerator::diagonal(sigma)
        }
        .map_err(numerical)?;
        for &m in &ms {
            let stream = base.derive(p as u64).derive(m as u64);
            reports.push(bound_report(&g, &profile.to_string(), m, trials, &stream).map_err(numerical)?);
        }
    }
    ctx.write("theory.csv", bound_reports_csv(&reports))
}

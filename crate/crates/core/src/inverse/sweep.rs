use std::fmt::Write as _;

use rayon::prelude::*;

use crate::flow::FlowStack;
use crate::numerics::{mean_and_stderr, RngStream};

use super::solve::{solve, InitStrategy, InverseProblemSpec};
use super::{make_measurements, InverseError, MeasurementOperator, SolveStatus};

const CELL_STREAM: u64 = 0x0073_7765_6570;
const OPERATOR_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;

pub const SWEEP_CSV_HEADER: &str = "m_or_gamma,sample_id,seed,psnr_db,ssim,iters,status";

/// Solver settings shared by every cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub seed: u64,
    pub init: InitStrategy,
    pub max_iters: usize,
    pub tolerance: f64,
    pub image_shape: Option<(usize, usize)>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            init: InitStrategy::Zero,
            max_iters: 500,
            tolerance: 1e-8,
            image_shape: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub psnr: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// γ for a γ-sweep, m for a measurement sweep.
    pub param: f64,
    pub sample_id: usize,
    /// Seeds every random draw of the cell.
    pub seed: u64,
    pub outcome: Result<CellOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub param: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            match &r.outcome {
                Ok(c) => {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        r.param, r.sample_id, r.seed, c.psnr, c.ssim, c.iterations, c.status
                    );
                }
                Err(_) => {
                    let _ = writeln!(s, "{},{},{},,,,error", r.param, r.sample_id, r.seed);
                }
            }
        }
        s
    }

    /// Per-parameter means over successful cells, in first-seen order.
    pub fn summary(&self) -> Vec<ParamSummary> {
        let mut params: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !params.contains(&r.param) {
                params.push(r.param);
            }
        }
        params
            .into_iter()
            .map(|p| {
                let cells: Vec<&SweepRow> = self.rows.iter().filter(|r| r.param == p).collect();
                let ok: Vec<&CellOutcome> = cells.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let psnr: Vec<f64> = ok.iter().map(|c| c.psnr).collect();
                let ssim: Vec<f64> = ok.iter().map(|c| c.ssim).collect();
                ParamSummary {
                    param: p,
                    mean_psnr: mean_and_stderr(&psnr).0,
                    mean_ssim: mean_and_stderr(&ssim).0,
                    succeeded: ok.len(),
                    failed: cells.len() - ok.len(),
                }
            })
            .collect()
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.is_err())
    }
}

fn cell_seed(base: u64, tag: u64) -> u64 {
    RngStream::new(base, CELL_STREAM).derive(tag).stream_id
}

fn run_cell(
    flow: &FlowStack,
    operator: MeasurementOperator,
    x0: &[f64],
    gamma: f64,
    seed: u64,
    settings: &SweepSettings,
) -> Result<CellOutcome, InverseError> {
    let y = make_measurements(x0, &operator, &mut RngStream::new(seed, 0).derive(NOISE_TAG))?;
    let spec = InverseProblemSpec {
        operator,
        y,
        gamma,
        init: settings.init.clone(),
        max_iters: settings.max_iters,
        tolerance: settings.tolerance,
        seed,
        reference: Some(x0.to_vec()),
        image_shape: settings.image_shape,
    };
    let r = solve(flow, &spec)?;
    Ok(CellOutcome {
        psnr: r.psnr.unwrap_or(f64::NAN),
        ssim: r.ssim.unwrap_or(f64::NAN),
        iterations: r.iterations,
        status: r.status,
    })
}

/// One solve per `(γ, sample)`. Each sample keeps the same measurement noise
/// across γ, so the rows differ only by the penalty.
pub fn gamma_sweep(
    flow: &FlowStack,
    operator: &MeasurementOperator,
    samples: &[Vec<f64>],
    gammas: &[f64],
    settings: &SweepSettings,
) -> Result<SweepTable, InverseError> {
    if gammas.is_empty() || samples.is_empty() {
        return Err(InverseError::Invalid("sweep needs at least one gamma and one sample"));
    }
    if gammas.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(InverseError::Invalid("gamma values must be non-negative"));
    }
    let cells: Vec<(f64, usize)> = gammas
        .iter()
        .flat_map(|&g| (0..samples.len()).map(move |i| (g, i)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(gamma, i)| {
            let seed = cell_seed(settings.seed, i as u64);
            let outcome =
                run_cell(flow, operator.clone(), &samples[i], gamma, seed, settings).map_err(|e| e.to_string());
            SweepRow {
                param: gamma,
                sample_id: i,
                seed,
                outcome,
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

/// Compressed sensing over a grid of measurement counts, with an
/// independent `N(0, 1/m)` operator per cell.
pub fn measurement_sweep(
    flow: &FlowStack,
    samples: &[Vec<f64>],
    ms: &[usize],
    noise_level: f64,
    settings: &SweepSettings,
) -> Result<SweepTable, InverseError> {
    let n = flow.dim();
    if ms.is_empty() || samples.is_empty() {
        return Err(InverseError::Invalid("sweep needs at least one m value and one sample"));
    }
    if ms.iter().any(|&m| m == 0 || m > n) {
        return Err(InverseError::Invalid("m values must lie in 1..=n"));
    }
    let cells: Vec<(usize, usize)> = ms
        .iter()
        .flat_map(|&m| (0..samples.len()).map(move |i| (m, i)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(m, i)| {
            let seed = cell_seed(settings.seed, (m as u64) << 32 | i as u64);
            let outcome =
                MeasurementOperator::gaussian(m, n, noise_level, &mut RngStream::new(seed, 0).derive(OPERATOR_TAG))
                    .and_then(|op| run_cell(flow, op, &samples[i], 0.0, seed, settings))
                    .map_err(|e| e.to_string());
            SweepRow {
                param: m as f64,
                sample_id: i,
                seed,
                outcome,
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;

    fn identity(n: usize) -> FlowStack {
        FlowStack::new(&FlowConfig::new(n, 1), &mut RngStream::new(0, 0))
    }

    #[test]
    fn noiseless_identity_psnr_non_increasing_in_gamma() {
        let g = identity(4);
        let mut rng = RngStream::new(30, 0);
        let samples: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(4)).collect();
        let op = MeasurementOperator::identity(4, 0.0).unwrap();
        let t = gamma_sweep(&g, &op, &samples, &[0.0, 0.01, 0.1, 1.0], &SweepSettings::default()).unwrap();
        let s = t.summary();
        assert!(s.windows(2).all(|w| w[1].mean_psnr <= w[0].mean_psnr));
        let single = gamma_sweep(&g, &op, &samples[..1], &[0.5], &SweepSettings::default()).unwrap();
        assert_eq!(single.rows.len(), 1);
    }

    #[test]
    fn full_measurement_reaches_cap_and_empty_grid_errors() {
        let g = identity(6);
        let mut rng = RngStream::new(31, 0);
        let samples: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(6)).collect();
        let settings = SweepSettings {
            tolerance: 1e-12,
            ..SweepSettings::default()
        };
        let t = measurement_sweep(&g, &samples, &[6], 0.0, &settings).unwrap();
        assert!(t.summary()[0].mean_psnr > 99.0, "{:?}", t.summary());
        assert!(measurement_sweep(&g, &samples, &[], 0.0, &settings).is_err());
        assert!(measurement_sweep(&g, &samples, &[7], 0.0, &settings).is_err());
    }

    #[test]
    fn csv_marks_failures() {
        let t = SweepTable {
            rows: vec![SweepRow {
                param: 0.5,
                sample_id: 2,
                seed: 9,
                outcome: Err("boom".into()),
            }],
        };
        assert_eq!(t.to_csv(), format!("{SWEEP_CSV_HEADER}\n0.5,2,9,,,,error\n"));
        assert!(t.all_failed());
    }
}

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::flow::{FlowError, FlowStack};

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }
}

/// Log densities sampled at cell centers. Row `i` has second coordinate
/// `ys[i]`, column `j` first coordinate `xs[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `log p_G(x)` over x-space.
    pub x_grid: Vec<Vec<f64>>,
    /// `log p_G(G(z))` over z-space.
    pub z_grid: Vec<Vec<f64>>,
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        let dx = if self.xs.len() > 1 {
            self.xs[1] - self.xs[0]
        } else {
            0.0
        };
        let dy = if self.ys.len() > 1 {
            self.ys[1] - self.ys[0]
        } else {
            0.0
        };
        dx * dy
    }

    /// Midpoint-rule integral of `exp(x_grid)`.
    pub fn integral(&self) -> f64 {
        let sum: f64 = self.x_grid.iter().flatten().map(|v| v.exp()).sum();
        sum * self.cell_area()
    }

    /// Strict local maxima of the x-grid over the 8-neighbourhood, highest first.
    pub fn local_maxima(&self) -> Vec<([f64; 2], f64)> {
        let rows = self.ys.len();
        let cols = self.xs.len();
        let mut out = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let v = self.x_grid[i][j];
                let mut is_max = true;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if a >= 0
                            && b >= 0
                            && (a as usize) < rows
                            && (b as usize) < cols
                            && self.x_grid[a as usize][b as usize] >= v
                        {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    out.push(([self.xs[j], self.ys[i]], v));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,v,log_p_x,log_p_gz\n");
        for (i, &v) in self.ys.iter().enumerate() {
            for (j, &u) in self.xs.iter().enumerate() {
                let _ = writeln!(s, "{u},{v},{},{}", self.x_grid[i][j], self.z_grid[i][j]);
            }
        }
        s
    }
}

fn centers(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let h = (hi - lo) / k as f64;
    (0..k).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

pub fn density_grid(flow: &FlowStack, bounds: GridBounds, resolution: usize) -> Result<DensityGrid, FlowError> {
    if flow.dim() != 2 {
        return Err(FlowError::Dimension {
            expected: 2,
            found: flow.dim(),
        });
    }
    let xs = centers(bounds.x_min, bounds.x_max, resolution);
    let ys = centers(bounds.y_min, bounds.y_max, resolution);
    let row = |v: f64| -> Result<(Vec<f64>, Vec<f64>), FlowError> {
        let mut px = Vec::with_capacity(xs.len());
        let mut pz = Vec::with_capacity(xs.len());
        for &u in &xs {
            px.push(flow.log_prob(&[u, v])?);
            let x = flow.forward(&[u, v])?.output;
            pz.push(flow.log_prob(&x)?);
        }
        Ok((px, pz))
    };
    let rows = ys.par_iter().map(|&v| row(v)).collect::<Result<Vec<_>, _>>()?;
    let (x_grid, z_grid) = rows.into_iter().unzip();
    Ok(DensityGrid { xs, ys, x_grid, z_grid })
}

//! Grid scan of the non-coherent cost and cell-averaging CFAR dip detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::ncp::{model_dimension, projection_energy};
use super::{PreparedEchoes, SensingModel};
use crate::geometry::Position2D;
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::scenario::Region;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig<T> {
    /// Node spacing, meters.
    pub spacing: T,
    /// Scanned rectangle; the scenario region when absent.
    #[serde(default)]
    pub region: Option<Region<T>>,
}

impl<T: Scalar> Default for GridConfig<T> {
    fn default() -> Self {
        Self {
            spacing: lit(5.0),
            region: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfarConfig {
    pub guard_cells: usize,
    pub training_cells: usize,
    /// Nominal per-cell false-alarm probability.
    pub false_alarm_probability: f64,
    /// Keep at most this many detections (strongest first).
    #[serde(default)]
    pub max_detections: Option<usize>,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            guard_cells: 2,
            training_cells: 8,
            false_alarm_probability: 1e-3,
            max_detections: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub position: Position2D<T>,
    /// Non-coherent cost at the node.
    pub cost: T,
    /// Explained energy over the training-cell average.
    pub statistic: T,
    /// Threshold the statistic had to exceed.
    pub threshold: T,
}

/// Non-coherent cost raster with its CFAR outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMap<T> {
    pub origin: Position2D<T>,
    pub spacing: T,
    pub nx: usize,
    pub ny: usize,
    /// Row-major cost values, index `iy * nx + ix`.
    pub values: Vec<T>,
    /// Total echo energy; `energy - value` is the explained energy.
    pub energy: T,
    pub detections: Vec<Detection<T>>,
    /// Cells whose statistic exceeded the threshold (before peak picking).
    pub exceedances: usize,
}

impl<T: Scalar> CostMap<T> {
    pub fn node(&self, ix: usize, iy: usize) -> Position2D<T> {
        self.origin
            .offset(from_usize::<T>(ix) * self.spacing, from_usize::<T>(iy) * self.spacing)
    }

    pub fn value(&self, ix: usize, iy: usize) -> T {
        self.values[iy * self.nx + ix]
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }
}

/// CA-CFAR scale `c`: declare a cell when `P_cut > c · mean(P_train)`.
///
/// Under noise only the explained energy of a cell is `σ²·Gamma(k)` with `k`
/// the model dimension, so for independent training cells
/// `P_cut / (P_cut + Σ P_train)` is `Beta(k, n k)`.
pub fn cfar_threshold_factor(dimension: usize, training: usize, pfa: f64) -> f64 {
    let a = dimension as f64;
    let b = (dimension * training) as f64;
    // Survival function of Beta(a, b) at w.
    let sf = |w: f64| beta_reg(b, a, 1.0 - w);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sf(mid) > pfa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    training as f64 * w / (1.0 - w)
}

/// Evaluates the non-coherent cost on the grid and runs CA-CFAR on the
/// explained-energy map (cost dips become peaks).
pub fn scan_and_detect<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    region: &Region<T>,
    grid: &GridConfig<T>,
    cfar: &CfarConfig,
) -> CostMap<T> {
    let area = grid.region.unwrap_or(*region);
    let nx = (area.width() / grid.spacing).floor().to_usize().unwrap_or(0) + 1;
    let ny = (area.height() / grid.spacing).floor().to_usize().unwrap_or(0) + 1;
    let origin = Position2D::new(area.x_min, area.y_min);
    let explained: Vec<T> = (0..ny)
        .into_par_iter()
        .flat_map_iter(|iy| {
            (0..nx)
                .map(|ix| {
                    let p = origin.offset(from_usize::<T>(ix) * grid.spacing, from_usize::<T>(iy) * grid.spacing);
                    projection_energy(model, echoes, &p)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let values: Vec<T> = explained.iter().map(|&p| (echoes.energy - p).max(T::zero())).collect();
    let (detections, exceedances) = detect(
        &explained,
        &values,
        nx,
        ny,
        origin,
        grid.spacing,
        model_dimension(model),
        cfar,
    );
    CostMap {
        origin,
        spacing: grid.spacing,
        nx,
        ny,
        values,
        energy: echoes.energy,
        detections,
        exceedances,
    }
}

/// Summed-area table with a zero border: `sat[(y+1)*(nx+1) + x+1] = Σ_{≤y, ≤x}`.
fn summed_area(values: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let w = nx + 1;
    let mut sat = vec![0.0; w * (ny + 1)];
    for y in 0..ny {
        let mut row = 0.0;
        for x in 0..nx {
            row += values[y * nx + x];
            sat[(y + 1) * w + x + 1] = sat[y * w + x + 1] + row;
        }
    }
    sat
}

/// Sum over the clipped window `[x0, x1] × [y0, y1]` and its cell count.
fn window_sum(sat: &[f64], nx: usize, ny: usize, cx: usize, cy: usize, half: usize) -> (f64, usize) {
    let w = nx + 1;
    let x0 = cx.saturating_sub(half);
    let y0 = cy.saturating_sub(half);
    let x1 = (cx + half).min(nx - 1) + 1;
    let y1 = (cy + half).min(ny - 1) + 1;
    let s = sat[y1 * w + x1] - sat[y0 * w + x1] - sat[y1 * w + x0] + sat[y0 * w + x0];
    (s, (x1 - x0) * (y1 - y0))
}

/// CFAR decision on an explained-energy map; returns the peak detections
/// (strongest first) and the number of exceeding cells.
#[allow(clippy::too_many_arguments)]
pub(crate) fn detect<T: Scalar>(
    explained: &[T],
    costs: &[T],
    nx: usize,
    ny: usize,
    origin: Position2D<T>,
    spacing: T,
    dimension: usize,
    cfar: &CfarConfig,
) -> (Vec<Detection<T>>, usize) {
    let vals: Vec<f64> = explained.iter().map(|&v| to_f64(v)).collect();
    let sat = summed_area(&vals, nx, ny);
    let outer = cfar.guard_cells + cfar.training_cells;
    let mut factors = std::collections::HashMap::new();
    let mut exceeding = vec![false; nx * ny];
    let mut stats = vec![0.0; nx * ny];
    let mut thresholds = vec![0.0; nx * ny];
    let mut exceedances = 0;
    for cy in 0..ny {
        for cx in 0..nx {
            let (so, no) = window_sum(&sat, nx, ny, cx, cy, outer);
            let (sg, ng) = window_sum(&sat, nx, ny, cx, cy, cfar.guard_cells);
            let n = no - ng;
            if n == 0 {
                continue;
            }
            let mean = (so - sg) / n as f64;
            let factor = *factors
                .entry(n)
                .or_insert_with(|| cfar_threshold_factor(dimension, n, cfar.false_alarm_probability));
            let idx = cy * nx + cx;
            let stat = if mean > 0.0 { vals[idx] / mean } else if vals[idx] > 0.0 { f64::INFINITY } else { 0.0 };
            stats[idx] = stat;
            thresholds[idx] = factor;
            if stat > factor {
                exceeding[idx] = true;
                exceedances += 1;
            }
        }
    }
    let g = cfar.guard_cells.max(1);
    let mut peaks: Vec<usize> = (0..nx * ny)
        .filter(|&idx| exceeding[idx] && is_local_max(&vals, nx, ny, idx, g))
        .collect();
    peaks.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    if let Some(cap) = cfar.max_detections {
        peaks.truncate(cap);
    }
    let detections = peaks
        .into_iter()
        .map(|idx| Detection {
            position: origin.offset(from_usize::<T>(idx % nx) * spacing, from_usize::<T>(idx / nx) * spacing),
            cost: costs[idx],
            statistic: lit(stats[idx]),
            threshold: lit(thresholds[idx]),
        })
        .collect();
    (detections, exceedances)
}

/// Strict maximum over the `(2g+1)²` neighbourhood, ties resolved in favour
/// of the lowest index.
fn is_local_max(vals: &[f64], nx: usize, ny: usize, idx: usize, g: usize) -> bool {
    let (cx, cy) = (idx % nx, idx / nx);
    let v = vals[idx];
    for y in cy.saturating_sub(g)..=(cy + g).min(ny - 1) {
        for x in cx.saturating_sub(g)..=(cx + g).min(nx - 1) {
            let j = y * nx + x;
            if j == idx {
                continue;
            }
            if vals[j] > v || (vals[j] == v && j < idx) {
                return false;
            }
        }
    }
    true
}

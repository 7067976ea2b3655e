use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::learner::{epsilon_for, LearnedSet};
use crate::mpc::MpcController;

use super::{all_feasible, run_seed, ControllerKind, RunOptions, Scenario, SimError};

/// Rectangular grid over two state coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: [usize; 2],
    /// State coordinates spanned by the grid.
    #[serde(default = "default_axes")]
    pub axes: [usize; 2],
    /// Values of the remaining coordinates (zero when absent).
    #[serde(default)]
    pub base: Option<Vec<f64>>,
}

fn default_axes() -> [usize; 2] {
    [0, 1]
}

impl GridSpec {
    pub fn new(lo: [f64; 2], hi: [f64; 2], resolution: [usize; 2]) -> Self {
        Self { lo, hi, resolution, axes: [0, 1], base: None }
    }

    fn coords(&self, d: usize) -> Vec<f64> {
        let n = self.resolution[d];
        if n == 1 {
            return vec![0.5 * (self.lo[d] + self.hi[d])];
        }
        (0..n).map(|i| self.lo[d] + (self.hi[d] - self.lo[d]) * i as f64 / (n - 1) as f64).collect()
    }

    /// State with grid coordinates `(x, y)` on the two grid axes.
    pub fn point(&self, n_x: usize, x: f64, y: f64) -> DVector<f64> {
        let mut p = match &self.base {
            Some(b) => DVector::from_vec(b.clone()),
            None => DVector::zeros(n_x),
        };
        p[self.axes[0]] = x;
        p[self.axes[1]] = y;
        p
    }

    fn validate(&self, n_x: usize) -> Result<(), SimError> {
        if self.resolution.contains(&0) {
            return Err(SimError::Config("grid resolution must be positive".into()));
        }
        if self.axes[0] == self.axes[1] || self.axes.iter().any(|&a| a >= n_x) {
            return Err(SimError::Config(format!("grid axes {:?} invalid for {n_x} states", self.axes)));
        }
        if let Some(b) = &self.base {
            if b.len() != n_x {
                return Err(SimError::Config(format!("grid base point has {} entries, expected {n_x}", b.len())));
            }
        }
        if self.lo[0] > self.hi[0] || self.lo[1] > self.hi[1] {
            return Err(SimError::Config("grid bounds are inverted".into()));
        }
        Ok(())
    }
}

/// Feasibility flags on a grid, row-major in `y` then `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub source: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl RegionGrid {
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.feasible[j * self.xs.len() + i]
    }

    pub fn count(&self) -> usize {
        self.feasible.iter().filter(|&&f| f).count()
    }

    /// Grid points feasible here but not in `other`.
    pub fn not_in(&self, other: &RegionGrid) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (j, &y) in self.ys.iter().enumerate() {
            for (i, &x) in self.xs.iter().enumerate() {
                if self.at(i, j) && !other.at(i, j) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// `(x, y)` of feasible points that have an infeasible 4-neighbour.
    pub fn boundary(&self) -> Vec<(f64, f64)> {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if !self.at(i, j) {
                    continue;
                }
                let edge = i == 0 || j == 0 || i + 1 == nx || j + 1 == ny;
                let nb = edge || !self.at(i - 1, j) || !self.at(i + 1, j) || !self.at(i, j - 1) || !self.at(i, j + 1);
                if nb {
                    out.push((self.xs[i], self.ys[j]));
                }
            }
        }
        out
    }

    /// CSV with columns `x, y, source, feasible`.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        write_grids_csv(std::slice::from_ref(self), path)
    }
}

/// Several grids in one CSV.
pub fn write_grids_csv(grids: &[RegionGrid], path: &Path) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "source", "feasible"])?;
    for g in grids {
        for (j, y) in g.ys.iter().enumerate() {
            for (i, x) in g.xs.iter().enumerate() {
                w.write_record([format!("{x:?}"), format!("{y:?}"), g.source.clone(), g.at(i, j).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Feasibility of the `k = 0` problem at every grid point, in parallel.
pub fn feasible_region_scan(ctl: &MpcController, learned: &LearnedSet, grid: &GridSpec, source: &str) -> Result<RegionGrid, SimError> {
    let n_x = ctl.plant().n_x();
    grid.validate(n_x)?;
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    let points: Vec<DVector<f64>> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).map(|(x, y)| grid.point(n_x, x, y)).collect();
    let feasible = points.par_iter().map(|p| ctl.is_feasible_at(p, learned)).collect::<Result<Vec<bool>, _>>()?;
    Ok(RegionGrid { source: source.to_string(), xs, ys, feasible })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub controller: String,
    pub x0: Vec<f64>,
    pub runs: usize,
    pub steps: usize,
    pub feasible_runs: usize,
    pub rate: f64,
    /// `|I0|`.
    pub n_offline: usize,
    pub delta: f64,
    /// Violation level certified by `|I0|` offline samples.
    pub epsilon: f64,
    /// Per run: first infeasible step, if any.
    pub first_infeasible: Vec<Option<usize>>,
}

/// `runs` independent closed loops from `x0`, each with its own offline
/// sample set and disturbance stream.
pub fn monte_carlo_feasibility(
    scenario: &Scenario,
    kind: ControllerKind,
    x0: &DVector<f64>,
    runs: usize,
    seed: u64,
    opts: &RunOptions,
    delta: f64,
) -> Result<MonteCarloReport, SimError> {
    if runs == 0 {
        return Err(SimError::Config("Monte Carlo needs at least one run".into()));
    }
    let epsilon = epsilon_for(scenario.n_offline.max(1), delta, scenario.n_x(), scenario.w.num_facets())?;
    let outcomes = (0..runs)
        .into_par_iter()
        .map(|r| {
            let t = scenario.run(kind, x0, run_seed(seed, r), opts)?;
            Ok(if all_feasible(&t) { None } else { Some(t.meta.terminated_at.or(t.meta.first_infeasible).unwrap_or(0)) })
        })
        .collect::<Result<Vec<Option<usize>>, SimError>>()?;
    let feasible_runs = outcomes.iter().filter(|o| o.is_none()).count();
    Ok(MonteCarloReport {
        controller: kind.label().to_string(),
        x0: x0.iter().copied().collect(),
        runs,
        steps: opts.steps,
        feasible_runs,
        rate: feasible_runs as f64 / runs as f64,
        n_offline: scenario.n_offline,
        delta,
        epsilon,
        first_infeasible: outcomes,
    })
}

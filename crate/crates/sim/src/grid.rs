//! Success-rate grids.
//!
//! A grid is a set of cells; each cell is sampled over evenly spaced angles.
//! For the goal task a cell is the ball's initial position and the angle its
//! initial direction of travel (the robot starts at the origin facing `+x`).
//! For the dock task a cell is the robot's initial position and the angle its
//! initial heading.

use std::f64::consts::TAU;
use std::io;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rsm_core::{ParameterMap, TransitionFn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{check_compatible, outcome, Scenario, SimError, Task};
use crate::geom::{v2, V2};
use crate::world::WorldState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub task: Task,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Samples per cell, at angles `2πk / angles`.
    pub angles: usize,
    /// Initial ball speed (goal task).
    #[serde(default)]
    pub speed: f64,
    /// Half-width of the uniform jitter applied to each sample's position.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
    pub time_limit: f64,
}

impl GridSpec {
    /// Ball positions around a robot at the origin.
    pub fn attacker() -> Self {
        GridSpec {
            task: Task::Goal,
            xs: vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
            ys: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            angles: 12,
            speed: 0.8,
            jitter: 0.0,
            seed: 0,
            time_limit: Task::Goal.time_limit(),
        }
    }

    /// Robot start positions behind the line-up point.
    pub fn docker() -> Self {
        GridSpec {
            task: Task::Dock,
            xs: vec![-3.0, -2.5, -2.0, -1.5],
            ys: vec![-1.5, -0.75, 0.0, 0.75, 1.5],
            angles: 12,
            speed: 0.0,
            jitter: 0.0,
            seed: 0,
            time_limit: Task::Dock.time_limit(),
        }
    }

    /// Cell centres in row-major order (`y` outer). Goal-task cells on the
    /// robot's start position are skipped.
    pub fn cells(&self) -> Vec<V2> {
        let mut out = Vec::new();
        for &y in &self.ys {
            for &x in &self.xs {
                if self.task == Task::Goal && v2(x, y).norm() < 0.3 {
                    continue;
                }
                out.push(v2(x, y));
            }
        }
        out
    }

    /// Scenario for sample `k` of cell `c` (index `ci`). Deterministic in
    /// the seed and the indices alone.
    pub fn scenario(&self, ci: usize, c: V2, k: usize) -> Scenario {
        let a = TAU * k as f64 / self.angles as f64;
        let mut pos = c;
        if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ ((ci as u64) << 32 | k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            pos += v2(
                rng.random_range(-self.jitter..=self.jitter),
                rng.random_range(-self.jitter..=self.jitter),
            );
        }
        let world = match self.task {
            Task::Goal => WorldState {
                ball: pos,
                ball_vel: V2::polar(self.speed, a),
                ..Default::default()
            },
            Task::Dock => WorldState {
                robot: pos,
                heading: crate::geom::wrap(a),
                ..Default::default()
            },
        };
        Scenario {
            task: self.task,
            world,
            time_limit: self.time_limit,
        }
    }

    pub fn scenarios(&self) -> Vec<(usize, Scenario)> {
        self.cells()
            .into_iter()
            .enumerate()
            .flat_map(|(ci, c)| (0..self.angles).map(move |k| (ci, self.scenario(ci, c, k))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: f64,
    pub y: f64,
    pub success_rate: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Heatmap {
    pub cells: Vec<Cell>,
}

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("heatmap csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("heatmaps have different cells (at row {0})")]
    Mismatch(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Heatmap {
    /// Success rate over all samples.
    pub fn aggregate(&self) -> f64 {
        let n: usize = self.cells.iter().map(|c| c.samples).sum();
        if n == 0 {
            return 0.0;
        }
        let ok: f64 = self.cells.iter().map(|c| c.success_rate * c.samples as f64).sum();
        ok / n as f64
    }

    /// `x,y,success_rate,samples` with a header row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(c).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn from_csv(r: impl io::Read) -> Result<Self, HeatmapError> {
        let mut rd = csv::Reader::from_reader(r);
        let cells = rd.deserialize().collect::<Result<Vec<Cell>, _>>()?;
        Ok(Heatmap { cells })
    }

    /// Per-cell `other − self`; `samples` is the smaller of the two.
    pub fn diff(&self, other: &Heatmap) -> Result<Heatmap, HeatmapError> {
        if self.cells.len() != other.cells.len() {
            return Err(HeatmapError::Mismatch(self.cells.len().min(other.cells.len())));
        }
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .enumerate()
            .map(|(i, (a, b))| {
                if a.x != b.x || a.y != b.y {
                    return Err(HeatmapError::Mismatch(i));
                }
                Ok(Cell {
                    x: a.x,
                    y: a.y,
                    success_rate: b.success_rate - a.success_rate,
                    samples: a.samples.min(b.samples),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Heatmap { cells })
    }
}

/// Runs every scenario of `spec` (in parallel) and tallies per-cell success.
pub fn evaluate_grid(t: &TransitionFn, p: &ParameterMap, spec: &GridSpec) -> Result<Heatmap, SimError> {
    check_compatible(spec.task, t)?;
    let cells = spec.cells();
    let runs = spec.scenarios();
    let results: Vec<(usize, bool)> = runs
        .par_iter()
        .map(|(ci, s)| outcome(t, p, s).map(|o| (*ci, o.success())))
        .collect::<Result<_, _>>()?;
    let mut ok = vec![0usize; cells.len()];
    let mut n = vec![0usize; cells.len()];
    for (ci, s) in results {
        n[ci] += 1;
        ok[ci] += s as usize;
    }
    Ok(Heatmap {
        cells: cells
            .iter()
            .enumerate()
            .map(|(i, c)| Cell {
                x: c.x,
                y: c.y,
                success_rate: if n[i] == 0 { 0.0 } else { ok[i] as f64 / n[i] as f64 },
                samples: n[i],
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let h = Heatmap {
            cells: vec![
                Cell { x: -1.0, y: 0.5, success_rate: 0.25, samples: 12 },
                Cell { x: 2.0, y: 0.0, success_rate: 1.0 / 3.0, samples: 3 },
            ],
        };
        let s = h.to_csv();
        assert!(s.starts_with("x,y,success_rate,samples\n"));
        assert_eq!(Heatmap::from_csv(s.as_bytes()).unwrap(), h);
        assert!((h.aggregate() - 4.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn diff_requires_matching_cells() {
        let a = Heatmap {
            cells: vec![Cell { x: 0.0, y: 0.0, success_rate: 0.25, samples: 4 }],
        };
        let b = Heatmap {
            cells: vec![Cell { x: 0.0, y: 0.0, success_rate: 0.75, samples: 4 }],
        };
        assert_eq!(a.diff(&b).unwrap().cells[0].success_rate, 0.5);
        let c = Heatmap {
            cells: vec![Cell { x: 1.0, y: 0.0, success_rate: 0.75, samples: 4 }],
        };
        assert!(matches!(a.diff(&c), Err(HeatmapError::Mismatch(0))));
    }

    #[test]
    fn jitter_is_seeded() {
        let mut g = GridSpec::attacker();
        g.jitter = 0.1;
        let a = g.scenarios();
        assert_eq!(a, g.scenarios());
        g.seed = 1;
        assert_ne!(a, g.scenarios());
    }
}

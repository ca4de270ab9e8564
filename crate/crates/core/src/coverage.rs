//! Monte-Carlo coverage (empirical CCDF of PEB/OEB over random UE poses) and
//! grid sweeps over UE position or orientation.
//!
//! Every trial and grid cell draws its randomness from a counter-derived seed,
//! so results are identical for any thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{evaluate_pose, BoundResult, CrbError};
use crate::geometry::{EulerAngles, Pose};
use crate::scenario::Scenario;
use crate::seeding::{derive_seed, rng_for, Stream};

/// Uniform ranges for each pose coordinate. Positions in meters, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseDistribution {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    pub z_m: [f64; 2],
    pub alpha_deg: [f64; 2],
    pub beta_deg: [f64; 2],
    pub gamma_deg: [f64; 2],
}

impl Default for PoseDistribution {
    fn default() -> Self {
        Self {
            x_m: [-10.0, 10.0],
            y_m: [-10.0, 10.0],
            z_m: [0.0, 5.0],
            alpha_deg: [0.0, 360.0],
            beta_deg: [0.0, 360.0],
            gamma_deg: [0.0, 360.0],
        }
    }
}

impl PoseDistribution {
    /// A distribution concentrated on one pose.
    pub fn fixed(position: [f64; 3], angles: EulerAngles) -> Self {
        Self {
            x_m: [position[0]; 2],
            y_m: [position[1]; 2],
            z_m: [position[2]; 2],
            alpha_deg: [angles.alpha; 2],
            beta_deg: [angles.beta; 2],
            gamma_deg: [angles.gamma; 2],
        }
    }

    fn axes(&self) -> [(&'static str, [f64; 2]); 6] {
        [
            ("x_m", self.x_m),
            ("y_m", self.y_m),
            ("z_m", self.z_m),
            ("alpha_deg", self.alpha_deg),
            ("beta_deg", self.beta_deg),
            ("gamma_deg", self.gamma_deg),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, [lo, hi]) in self.axes() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(format!("{name} bounds must be finite"));
            }
            if lo > hi {
                return Err(format!("{name} has min {lo} > max {hi}"));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws a pose with independent uniform coordinates.
pub fn sample_pose(dist: &PoseDistribution, rng: &mut impl Rng) -> Pose {
    let position = [uniform(rng, dist.x_m), uniform(rng, dist.y_m), uniform(rng, dist.z_m)];
    let angles = EulerAngles::new(
        uniform(rng, dist.alpha_deg),
        uniform(rng, dist.beta_deg),
        uniform(rng, dist.gamma_deg),
    );
    Pose::from_euler(position, angles)
}

/// Pose of trial `trial` under run seed `seed`.
pub fn trial_pose(dist: &PoseDistribution, seed: u64, trial: u64) -> Pose {
    sample_pose(dist, &mut rng_for(seed, Stream::Pose, &[trial]))
}

/// Beamformer seed of trial `trial`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    derive_seed(seed, Stream::Trial, &[trial])
}

/// Beamformer seed of grid cell `index` (also used for single-pose evaluation).
pub fn cell_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, Stream::Cell, &[index])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Peb,
    Oeb,
}

impl Metric {
    /// Bound in meters (PEB) or degrees (OEB); `+∞` when not localizable.
    pub fn value(self, result: &BoundResult) -> f64 {
        let v = match self {
            Metric::Peb => result.peb_m,
            Metric::Oeb => result.oeb_deg,
        };
        v.unwrap_or(f64::INFINITY)
    }

    pub fn default_thresholds(self) -> Vec<f64> {
        match self {
            Metric::Peb => log_spaced(1e-3, 1e3, 60),
            Metric::Oeb => log_spaced(1e-3, 1e2, 60),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "peb" => Ok(Metric::Peb),
            "oeb" => Ok(Metric::Oeb),
            other => Err(format!("unknown metric `{other}` (expected peb or oeb)")),
        }
    }
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Empirical exceedance `1 − C(ξ)` on a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcdfCurve {
    pub thresholds: Vec<f64>,
    pub exceedance: Vec<f64>,
    pub trials: usize,
    /// Share of trials that were not localizable.
    pub outage_fraction: f64,
}

impl CcdfCurve {
    /// Builds the curve from per-trial bounds (`+∞` marks non-localizable trials).
    pub fn from_bounds(bounds: &[f64], thresholds: &[f64]) -> Self {
        let mut sorted: Vec<f64> = bounds.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut grid: Vec<f64> = thresholds.to_vec();
        grid.sort_by(f64::total_cmp);
        let exceedance = grid
            .iter()
            .map(|&xi| {
                let covered = sorted.partition_point(|&b| b <= xi);
                (n - covered) as f64 / n as f64
            })
            .collect();
        let outage = sorted.iter().filter(|b| !b.is_finite()).count();
        Self {
            thresholds: grid,
            exceedance,
            trials: n,
            outage_fraction: outage as f64 / n.max(1) as f64,
        }
    }

    /// Coverage `C(ξ)` at grid threshold `xi`, or `None` off the grid.
    pub fn coverage_at(&self, xi: f64) -> Option<f64> {
        let n = self.trials as f64;
        self.thresholds
            .iter()
            .position(|&t| t == xi)
            .map(|i| (self.trials - (self.exceedance[i] * n).round() as usize) as f64 / n)
    }
}

/// Empirical `q`-quantile (0 < q ≤ 1) of bounds, counting `+∞` entries.
pub fn quantile(bounds: &[f64], q: f64) -> f64 {
    let mut sorted = bounds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Evaluates `trials` random poses in parallel; results are in trial order.
pub fn run_trials(
    scenario: &Scenario,
    dist: &PoseDistribution,
    trials: usize,
    seed: u64,
) -> Result<Vec<BoundResult>, CrbError> {
    (0..trials as u64)
        .into_par_iter()
        .map(|i| evaluate_pose(scenario, &trial_pose(dist, seed, i), trial_seed(seed, i)))
        .collect()
}

pub fn coverage_ccdf(
    scenario: &Scenario,
    dist: &PoseDistribution,
    trials: usize,
    metric: Metric,
    thresholds: &[f64],
    seed: u64,
) -> Result<CcdfCurve, CrbError> {
    let results = run_trials(scenario, dist, trials, seed)?;
    let bounds: Vec<f64> = results.iter().map(|r| metric.value(r)).collect();
    Ok(CcdfCurve::from_bounds(&bounds, thresholds))
}

/// Inclusive arithmetic grid `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, String> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err("grid bounds must be finite".into());
        }
        if min > max {
            return Err(format!("grid min {min} exceeds max {max}"));
        }
        if !(step > 0.0) {
            return Err(format!("grid step must be positive, got {step}"));
        }
        Ok(Self { min, max, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

impl std::str::FromStr for GridAxis {
    type Err = String;
    /// `"min,max,step"`
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad grid value `{p}`: {e}"))
            })
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [min, max, step] => GridAxis::new(*min, *max, *step),
            _ => Err(format!("grid must be \"min,max,step\", got `{s}`")),
        }
    }
}

/// Bounds on a 2-D grid. Cells are row-major: the second axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldGrid {
    pub axis_names: [&'static str; 2],
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub cells: Vec<BoundResult>,
}

impl FieldGrid {
    pub fn get(&self, i: usize, j: usize) -> &BoundResult {
        &self.cells[i * self.second.len() + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, &BoundResult)> {
        let n = self.second.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, r)| (self.first[k / n], self.second[k % n], r))
    }
}

fn sweep(
    scenario: &Scenario,
    first: Vec<f64>,
    second: Vec<f64>,
    axis_names: [&'static str; 2],
    seed: u64,
    pose_at: impl Fn(f64, f64) -> Pose + Sync,
) -> Result<FieldGrid, CrbError> {
    let n = second.len();
    let cells = (0..first.len() * n)
        .into_par_iter()
        .map(|k| {
            evaluate_pose(
                scenario,
                &pose_at(first[k / n], second[k % n]),
                cell_seed(seed, k as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FieldGrid {
        axis_names,
        first,
        second,
        cells,
    })
}

/// PEB/OEB over a horizontal position grid at height `z` with fixed orientation.
/// Rows follow `y`, columns follow `x`.
pub fn position_field(
    scenario: &Scenario,
    orientation: EulerAngles,
    z: f64,
    x_axis: &GridAxis,
    y_axis: &GridAxis,
    seed: u64,
) -> Result<FieldGrid, CrbError> {
    sweep(
        scenario,
        y_axis.values(),
        x_axis.values(),
        ["y_m", "x_m"],
        seed,
        |y, x| Pose::from_euler([x, y, z], orientation),
    )
}

/// PEB/OEB over a (β, γ) grid at a fixed position and α.
/// Rows follow β, columns follow γ.
pub fn orientation_field(
    scenario: &Scenario,
    position: [f64; 3],
    beta_axis: &GridAxis,
    gamma_axis: &GridAxis,
    alpha: f64,
    seed: u64,
) -> Result<FieldGrid, CrbError> {
    sweep(
        scenario,
        beta_axis.values(),
        gamma_axis.values(),
        ["beta_deg", "gamma_deg"],
        seed,
        |b, g| Pose::from_euler(position, EulerAngles::new(alpha, b, g)),
    )
}

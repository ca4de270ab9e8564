//! Self-checks run against a scenario: analytic Jacobian versus central
//! differences of the forward model, constraint-basis orthonormality and
//! null-space membership, and PSD-ness of the assembled information matrices.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::Serialize;

use crate::coverage::{trial_pose, trial_seed};
use crate::crb::{
    constraint_basis, constraint_jacobian, path_jacobian, pose_information, StateJacobian, STATE_DIM, TANGENT_DIM,
};
use crate::geometry::{forward_model, visible_paths, Pose, Rotation, SPEED_OF_LIGHT};
use crate::scenario::Scenario;

pub const JACOBIAN_TOLERANCE: f64 = 1e-6;
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-12;
pub const NULL_SPACE_TOLERANCE: f64 = 1e-10;
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Paths steeper than this (radians) are skipped by the Jacobian check.
const MAX_CHECKED_ELEVATION: f64 = 85.0 * PI / 180.0;

/// Deliberate corruption used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Scales the first column of every sampled `R_U` off the manifold.
    CorruptRotation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Change in `atan2(w_y, w_x)` when `w` moves to `w + dw`, computed from `dw`
/// so small changes keep full relative precision.
fn azimuth_change(w: &Vector3<f64>, dw: &Vector3<f64>) -> f64 {
    (w.x * dw.y - w.y * dw.x).atan2(w.x * (w.x + dw.x) + w.y * (w.y + dw.y))
}

/// Change in `asin(z / r)` when `z → z + dz` and `r → r + dr`.
fn elevation_change(z: f64, dz: f64, r: f64, dr: f64) -> f64 {
    let (s0, s1) = (z / r, (z + dz) / (r + dr));
    let ds = (dz * r - z * dr) / (r * (r + dr));
    let (c0, c1) = ((1.0 - s0 * s0).max(0.0).sqrt(), (1.0 - s1 * s1).max(0.0).sqrt());
    // sin(asin s1 − asin s0) = s1·c0 − s0·c1, rewritten in terms of ds
    (ds * (c0 + s0 * (s0 + s1) / (c0 + c1))).atan2(c0 * c1 + s0 * s1)
}

/// Fourth-order central-difference `∂η/∂r` of the forward model, with `R_U`
/// entries perturbed independently (off the manifold).
///
/// Each stencil point is formed as the change `η(r + δ) − η(r)` computed from
/// the perturbation of the direction vectors rather than by subtracting
/// angles, which would lose about `ε·|η| / h` to cancellation.
pub fn finite_difference_jacobian(
    bs: &Pose,
    ue_position: &Vector3<f64>,
    ue_rotation: &Matrix3<f64>,
    sa_offset: &Vector3<f64>,
    sa_rotation: &Matrix3<f64>,
) -> StateJacobian {
    let r_b = bs.rotation.matrix();
    let v = ue_position + ue_rotation * sa_offset - bs.position;
    let range = v.norm();
    let at_bs = r_b.transpose() * v;
    // direction from the subarray towards the BS, in subarray coordinates
    let at_sa = -(sa_rotation.transpose() * (ue_rotation.transpose() * v));

    let change = |col: usize, t: f64| -> [f64; 5] {
        let mut dr = Matrix3::zeros();
        let dv = match col {
            0..=2 => {
                let mut e = Vector3::zeros();
                e[col] = t;
                e
            }
            3 => return [0.0, 0.0, 0.0, 0.0, t],
            _ => {
                // column-major: state entry 4 + 3j + i is R[(i, j)]
                let k = col - 4;
                dr[(k % 3, k / 3)] = t;
                dr * sa_offset
            }
        };
        let d_range = dv.dot(&(2.0 * v + dv)) / (range + (v + dv).norm());
        let d_bs = r_b.transpose() * dv;
        let d_sa = -(sa_rotation.transpose() * (ue_rotation.transpose() * dv + dr.transpose() * (v + dv)));
        [
            azimuth_change(&at_bs, &d_bs),
            elevation_change(at_bs.z, d_bs.z, range, d_range),
            azimuth_change(&at_sa, &d_sa),
            elevation_change(at_sa.z, d_sa.z, range, d_range),
            d_range / SPEED_OF_LIGHT,
        ]
    };
    let mut jac = StateJacobian::zeros();
    for col in 0..STATE_DIM {
        let h = match col {
            0..=2 => 1e-3,
            3 => 1e-10,
            _ => 1e-4,
        };
        let (p2, p1, m1, m2) = (
            change(col, 2.0 * h),
            change(col, h),
            change(col, -h),
            change(col, -2.0 * h),
        );
        for row in 0..5 {
            jac[(row, col)] = (8.0 * (p1[row] - m1[row]) - (p2[row] - m2[row])) / (12.0 * h);
        }
    }
    jac
}

/// Largest entrywise error, relative to `max(|reference entry|, 1e-6 · ‖reference row‖∞)`.
pub fn relative_jacobian_error(analytic: &StateJacobian, reference: &StateJacobian) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..5 {
        let row_scale = reference.row(r).amax();
        for c in 0..STATE_DIM {
            let denom = reference[(r, c)].abs().max(1e-6 * row_scale);
            let err = (analytic[(r, c)] - reference[(r, c)]).abs();
            if denom > 0.0 {
                worst = worst.max(err / denom);
            } else if err > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    worst
}

fn sampled_poses(scenario: &Scenario, trials: usize, seed: u64, fault: Fault) -> Vec<(Pose, Matrix3<f64>)> {
    (0..trials as u64)
        .map(|i| {
            let pose = trial_pose(&scenario.distribution, seed, i);
            let mut r = *pose.rotation.matrix();
            if fault == Fault::CorruptRotation {
                r.set_column(0, &(r.column(0) * 1.05));
            }
            (pose, r)
        })
        .collect()
}

pub fn check_jacobian(scenario: &Scenario, trials: usize, seed: u64, fault: Fault) -> CheckResult {
    let mut worst = 0.0f64;
    let mut samples = 0;
    let bs_poses = scenario.bs_poses();
    for (pose, r_u) in sampled_poses(scenario, trials, seed, fault) {
        let vis = visible_paths(&bs_poses, &pose, &scenario.subarrays);
        for &(m, n) in &vis.pairs {
            let bs = &bs_poses[m];
            let sa = &scenario.subarrays[n];
            let Ok(eta) = forward_model(
                &bs.position,
                bs.rotation.matrix(),
                &pose.position,
                &r_u,
                &sa.offset,
                sa.rotation.matrix(),
                0.0,
            ) else {
                continue;
            };
            if eta.theta_el.abs() > MAX_CHECKED_ELEVATION || eta.phi_el.abs() > MAX_CHECKED_ELEVATION {
                continue;
            }
            let Ok(analytic) = path_jacobian(bs, &pose.position, &r_u, &sa.offset, sa.rotation.matrix()) else {
                continue;
            };
            let fd = finite_difference_jacobian(bs, &pose.position, &r_u, &sa.offset, sa.rotation.matrix());
            worst = worst.max(relative_jacobian_error(&analytic, &fd));
            samples += 1;
        }
    }
    CheckResult {
        name: "jacobian_finite_difference",
        passed: samples > 0 && worst < JACOBIAN_TOLERANCE,
        max_residual: worst,
        tolerance: JACOBIAN_TOLERANCE,
        samples,
        detail: format!("{samples} paths compared against finite differences"),
    }
}

pub fn check_constraint_basis(scenario: &Scenario, trials: usize, seed: u64, fault: Fault) -> Vec<CheckResult> {
    let mut ortho = 0.0f64;
    let mut null = 0.0f64;
    let mut rejected = 0;
    let poses = sampled_poses(scenario, trials, seed, fault);
    for (_, r) in &poses {
        match constraint_basis(&Rotation::from_matrix_unchecked(*r)) {
            Ok(m) => {
                ortho = ortho.max((m.transpose() * m - SMatrix::<f64, TANGENT_DIM, TANGENT_DIM>::identity()).amax());
                null = null.max((constraint_jacobian(r) * m).amax());
            }
            Err(_) => rejected += 1,
        }
    }
    let detail = if rejected > 0 {
        format!("{rejected} rotations rejected as off-manifold")
    } else {
        String::new()
    };
    vec![
        CheckResult {
            name: "constraint_basis_orthonormal",
            passed: rejected == 0 && ortho < ORTHONORMALITY_TOLERANCE,
            max_residual: if rejected > 0 { f64::INFINITY } else { ortho },
            tolerance: ORTHONORMALITY_TOLERANCE,
            samples: poses.len(),
            detail: detail.clone(),
        },
        CheckResult {
            name: "constraint_basis_null_space",
            passed: rejected == 0 && null < NULL_SPACE_TOLERANCE,
            max_residual: if rejected > 0 { f64::INFINITY } else { null },
            tolerance: NULL_SPACE_TOLERANCE,
            samples: poses.len(),
            detail,
        },
    ]
}

pub fn check_information_psd(scenario: &Scenario, trials: usize, seed: u64, fault: Fault) -> CheckResult {
    let mut worst = 0.0f64;
    let mut samples = 0;
    let mut failures = 0;
    for (i, (pose, r)) in sampled_poses(scenario, trials, seed, fault).into_iter().enumerate() {
        let pose = Pose::new(pose.position, Rotation::from_matrix_unchecked(r));
        match pose_information(scenario, &pose, trial_seed(seed, i as u64)) {
            Ok(info) => {
                for fim in [info.fim_eta.as_ref(), info.fim_state.as_ref()].into_iter().flatten() {
                    worst = worst.max((-fim.min_eigen_ratio()).max(fim.asymmetry()));
                    samples += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    CheckResult {
        name: "information_psd",
        passed: failures == 0 && worst <= PSD_TOLERANCE,
        max_residual: if failures > 0 { f64::INFINITY } else { worst },
        tolerance: PSD_TOLERANCE,
        samples,
        detail: if failures > 0 {
            format!("{failures} poses failed to evaluate")
        } else {
            String::new()
        },
    }
}

/// Runs every check on `trials` poses drawn from the scenario's distribution.
pub fn validate_scenario(scenario: &Scenario, trials: usize, seed: u64, fault: Fault) -> ValidationReport {
    let mut checks = vec![check_jacobian(scenario, trials, seed, fault)];
    checks.extend(check_constraint_basis(scenario, trials, seed, fault));
    checks.push(check_information_psd(scenario, trials, seed, fault));
    ValidationReport { checks }
}

//! Rigid-body pose algebra, panel layouts, path visibility and the geometric
//! forward model that maps a BS/subarray pair to its channel parameters.
//!
//! Conventions used throughout the crate:
//!
//! - A rotation matrix maps local coordinates to global ones, so a global
//!   vector `a` has local coordinates `Rᵀ a`.
//! - Every panel (BS or UE subarray) has its boresight along local +X and its
//!   elements in the local Y–Z plane.
//! - Euler angles are in degrees and compose as `R = Rz(γ) · Ry(β) · Rx(α)`.
//! - Angles are radians internally; degrees only appear at external interfaces.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Minimum separation between a BS and a subarray center.
pub const MIN_SEPARATION_M: f64 = 1e-9;

/// Orthonormality residual above which a matrix is rejected as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e}, det {det:.6})")]
    NotARotation { residual: f64, det: f64 },
    #[error("subarray center coincides with the base station ({distance:.3e} m apart)")]
    CoincidentPoints { distance: f64 },
}

/// Euler angles in degrees, applied as `Rz(gamma) · Ry(beta) · Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

impl From<[f64; 3]> for EulerAngles {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let reduced = deg.rem_euclid(360.0);
    if reduced == 0.0 {
        (0.0, 1.0)
    } else if reduced == 90.0 {
        (1.0, 0.0)
    } else if reduced == 180.0 {
        (0.0, -1.0)
    } else if reduced == 270.0 {
        (-1.0, 0.0)
    } else {
        reduced.to_radians().sin_cos()
    }
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix after checking `RᵀR = I` and `det R = 1`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let residual = orthonormality_residual(&m);
        let det = m.determinant();
        if residual > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotARotation { residual, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix without validation. Callers must guarantee membership in SO(3).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn about_x(deg: f64) -> Self {
        let (s, c) = sin_cos_deg(deg);
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(deg: f64) -> Self {
        let (s, c) = sin_cos_deg(deg);
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(deg: f64) -> Self {
        let (s, c) = sin_cos_deg(deg);
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn from_euler(angles: EulerAngles) -> Self {
        Self::about_z(angles.gamma) * Self::about_y(angles.beta) * Self::about_x(angles.alpha)
    }

    /// Inverse of [`Rotation::from_euler`]. At gimbal lock (|β| = 90°) the
    /// returned solution has `alpha = 0` and the residual roll folded into gamma.
    pub fn to_euler(&self) -> EulerAngles {
        let m = &self.0;
        let sin_beta = (-m[(2, 0)]).clamp(-1.0, 1.0);
        let cos_beta = m[(2, 1)].hypot(m[(2, 2)]);
        if cos_beta > 1e-9 {
            EulerAngles {
                alpha: m[(2, 1)].atan2(m[(2, 2)]).to_degrees(),
                beta: sin_beta.atan2(cos_beta).to_degrees(),
                gamma: m[(1, 0)].atan2(m[(0, 0)]).to_degrees(),
            }
        } else {
            // With α = 0 the upper-left block reduces to a pure Rz(γ) in columns 1 and 2.
            let beta = if sin_beta > 0.0 { 90.0 } else { -90.0 };
            EulerAngles {
                alpha: 0.0,
                beta,
                gamma: (-m[(0, 1)]).atan2(m[(1, 1)]).to_degrees(),
            }
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Boresight direction (local +X) expressed in the parent frame.
    pub fn boresight(&self) -> Vector3<f64> {
        self.0.column(0).into_owned()
    }

    /// Maximum entrywise deviation of `RᵀR` from the identity.
    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.0)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Position (meters) plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation) -> Self {
        Self { position, rotation }
    }

    pub fn from_euler(position: [f64; 3], angles: EulerAngles) -> Self {
        Self::new(Vector3::from(position), Rotation::from_euler(angles))
    }

    /// Coordinates of a global point in this pose's local frame.
    pub fn to_local(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix().transpose() * (point - self.position)
    }
}

/// Uniform rectangular panel. Elements sit on a centered grid in the local
/// Y–Z plane: columns run along Y, rows along Z, pitch `spacing · λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarArraySpec {
    pub rows: usize,
    pub cols: usize,
    /// Element pitch in wavelengths.
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl PlanarArraySpec {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            spacing_wavelengths: 0.5,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element positions in the panel's local frame, meters. Row-major over (row, col).
    pub fn element_offsets(&self, wavelength: f64) -> Vec<Vector3<f64>> {
        let pitch = self.spacing_wavelengths * wavelength;
        let row_center = (self.rows as f64 - 1.0) / 2.0;
        let col_center = (self.cols as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(Vector3::new(
                    0.0,
                    (c as f64 - col_center) * pitch,
                    (r as f64 - row_center) * pitch,
                ));
            }
        }
        out
    }
}

/// A UE subarray: placement `d_n` and orientation `R_n` in the UE frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubarraySpec {
    pub offset: Vector3<f64>,
    pub rotation: Rotation,
    pub panel: PlanarArraySpec,
}

/// Global pose of a subarray: `p_n = p_U + R_U d_n`, `R = R_U R_n`.
pub fn subarray_global_pose(ue: &Pose, sa: &SubarraySpec) -> Pose {
    Pose {
        position: ue.position + ue.rotation.matrix() * sa.offset,
        rotation: ue.rotation * sa.rotation,
    }
}

/// Channel parameters of one BS–subarray path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathParams {
    /// AOD azimuth, radians in (−π, π].
    pub theta_az: f64,
    /// AOD elevation, radians in [−π/2, π/2].
    pub theta_el: f64,
    /// AOA azimuth, radians in (−π, π].
    pub phi_az: f64,
    /// AOA elevation, radians in [−π/2, π/2].
    pub phi_el: f64,
    /// Delay including clock bias, seconds.
    pub tau: f64,
}

impl PathParams {
    pub fn to_array(&self) -> [f64; 5] {
        [self.theta_az, self.theta_el, self.phi_az, self.phi_el, self.tau]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            theta_az: a[0],
            theta_el: a[1],
            phi_az: a[2],
            phi_el: a[3],
            tau: a[4],
        }
    }
}

/// Ordered set of visible `(bs, subarray)` index pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VisibilityIndex {
    pub pairs: Vec<(usize, usize)>,
}

impl VisibilityIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of distinct base stations with at least one visible path.
    pub fn distinct_base_stations(&self) -> usize {
        let mut bs: Vec<usize> = self.pairs.iter().map(|&(m, _)| m).collect();
        bs.dedup();
        bs.len()
    }

    /// Visibility restricted to the first `count` base stations.
    pub fn restrict_to_base_stations(&self, count: usize) -> Self {
        Self {
            pairs: self.pairs.iter().copied().filter(|&(m, _)| m < count).collect(),
        }
    }
}

impl fmt::Display for VisibilityIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs.iter().map(|(m, n)| format!("({m},{n})")).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Semi-sphere visibility test: a path exists iff the BS lies strictly in
/// front of the subarray and the subarray lies strictly in front of the BS.
pub fn visible_paths(bs_list: &[Pose], ue: &Pose, sas: &[SubarraySpec]) -> VisibilityIndex {
    let mut pairs = Vec::new();
    for (m, bs) in bs_list.iter().enumerate() {
        for (n, sa) in sas.iter().enumerate() {
            if is_visible(bs, &subarray_global_pose(ue, sa)) {
                pairs.push((m, n));
            }
        }
    }
    VisibilityIndex { pairs }
}

fn is_visible(bs: &Pose, sa: &Pose) -> bool {
    let sa_facing = sa.to_local(&bs.position).x;
    let bs_facing = bs.to_local(&sa.position).x;
    sa_facing > 0.0 && bs_facing > 0.0
}

/// Forward model on raw matrices. `ue_rotation` is taken as a free 3×3 matrix
/// so the model can be differentiated entrywise.
pub fn forward_model(
    bs_position: &Vector3<f64>,
    bs_rotation: &Matrix3<f64>,
    ue_position: &Vector3<f64>,
    ue_rotation: &Matrix3<f64>,
    sa_offset: &Vector3<f64>,
    sa_rotation: &Matrix3<f64>,
    rho: f64,
) -> Result<PathParams, GeometryError> {
    let v = ue_position + ue_rotation * sa_offset - bs_position;
    let range = v.norm();
    if range < MIN_SEPARATION_M {
        return Err(GeometryError::CoincidentPoints { distance: range });
    }
    let at_bs = bs_rotation.transpose() * v;
    let at_sa = sa_rotation.transpose() * (ue_rotation.transpose() * v);
    Ok(PathParams {
        theta_az: wrap_azimuth(at_bs.y.atan2(at_bs.x)),
        theta_el: clamped_asin(at_bs.z / range),
        phi_az: wrap_azimuth((-at_sa.y).atan2(-at_sa.x)),
        phi_el: clamped_asin(-at_sa.z / range),
        tau: range / SPEED_OF_LIGHT + rho,
    })
}

/// Channel parameters of the path from `bs` to subarray `sa` of a UE at `ue`.
pub fn path_params(bs: &Pose, ue: &Pose, sa: &SubarraySpec, rho: f64) -> Result<PathParams, GeometryError> {
    forward_model(
        &bs.position,
        bs.rotation.matrix(),
        &ue.position,
        ue.rotation.matrix(),
        &sa.offset,
        sa.rotation.matrix(),
        rho,
    )
}

fn wrap_azimuth(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

fn clamped_asin(x: f64) -> f64 {
    debug_assert!(x.abs() <= 1.0 + 1e-12, "asin argument {x} out of range");
    x.clamp(-1.0, 1.0).asin()
}

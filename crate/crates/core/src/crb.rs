//! Fisher information assembly and the constrained Cramér–Rao bound on the
//! UE state `r = [p_U (3), rho (1), vec(R_U) (9)]`.
//!
//! `vec(·)` stacks columns throughout, so state entries 4..13 are the columns
//! `c1, c2, c3` of `R_U` in order.

use std::fmt;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::channel::{
    mean_signal_with_gradient, noise_variance, path_gain, BeamformerSet, ChannelError, PathSignal, C64,
};
use crate::geometry::{
    forward_model, visible_paths, GeometryError, PathParams, Pose, Rotation, VisibilityIndex, SPEED_OF_LIGHT,
};
use crate::scenario::{GainModel, Scenario};

/// Dimension of the UE state vector.
pub const STATE_DIM: usize = 13;
/// Dimension of the tangent space of the constrained state.
pub const TANGENT_DIM: usize = 7;
/// Channel parameters per path.
pub const PATH_DIM: usize = 5;

/// Equilibrated condition number above which `Mᵀ I M` is treated as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e12;

/// Guard on |sin(elevation)| for the Jacobian's `s1`/`s2` factors.
pub const ELEVATION_GUARD: f64 = 1.0 - 1e-12;

pub type StateJacobian = SMatrix<f64, PATH_DIM, STATE_DIM>;
pub type ConstraintBasis = SMatrix<f64, STATE_DIM, TANGENT_DIM>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CrbError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("no visible paths")]
    EmptyVisibility,
    #[error("elevation too close to ±90° (|sin| = {sin:.15})")]
    DegenerateElevation { sin: f64 },
    #[error("information matrix is singular (equilibrated condition number {condition:.3e})")]
    SingularInformation { condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherSpace {
    Channel,
    State,
    ConstrainedState,
}

/// A symmetric positive semidefinite matrix tagged with its parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    pub space: FisherSpace,
}

impl FisherMatrix {
    pub fn new(matrix: DMatrix<f64>, space: FisherSpace) -> Self {
        Self { matrix, space }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest `|A − Aᵀ|` entry relative to the largest `|A|` entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (&self.matrix - self.matrix.transpose()).amax() / scale
    }

    /// `min λ / max |λ|` of the symmetrized matrix; non-negative for PSD input.
    pub fn min_eigen_ratio(&self) -> f64 {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym).eigenvalues;
        let max = eig.amax();
        if max == 0.0 {
            return 0.0;
        }
        eig.min() / max
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.asymmetry() <= 1e-10 && self.min_eigen_ratio() >= -tol
    }
}

/// Whether the complex path gain is known or estimated alongside the geometry.
fn gain_nuisance_fim(samples: &[(C64, [C64; 5])], gain: C64, scale: f64) -> SMatrix<f64, 7, 7> {
    let mut j = SMatrix::<f64, 7, 7>::zeros();
    for (mu, grad) in samples {
        let mut row = [C64::new(0.0, 0.0); 7];
        row[..5].copy_from_slice(grad);
        row[5] = mu / gain;
        row[6] = mu / gain * C64::new(0.0, 1.0);
        accumulate_outer(&mut j, &row);
    }
    j * scale
}

fn accumulate_outer<const N: usize>(acc: &mut SMatrix<f64, N, N>, row: &[C64; N]) {
    for a in 0..N {
        for b in a..N {
            let v = (row[a].conj() * row[b]).re;
            acc[(a, b)] += v;
            if a != b {
                acc[(b, a)] += v;
            }
        }
    }
}

/// `(2/σ²) Σ_g Σ_k Re{(∂μ/∂η)ᴴ (∂μ/∂η)}` for a single path.
///
/// With [`GainModel::Nuisance`] the (Re, Im) of the gain are estimated too and
/// the returned 5×5 block is the Schur complement over the gain block.
pub fn fim_channel_path(path: &PathSignal<'_>, gain_model: GainModel) -> FisherMatrix {
    let signal = mean_signal_with_gradient(path);
    let scale = 2.0 / noise_variance(path.signal);
    let block = match gain_model {
        GainModel::Known => {
            let mut j = SMatrix::<f64, 5, 5>::zeros();
            for row in &signal.gradient {
                accumulate_outer(&mut j, row);
            }
            j * scale
        }
        GainModel::Nuisance => {
            let samples: Vec<(C64, [C64; 5])> = signal
                .values
                .iter()
                .copied()
                .zip(signal.gradient.iter().copied())
                .collect();
            let full = gain_nuisance_fim(&samples, path.gain, scale);
            let a = full.fixed_view::<5, 5>(0, 0);
            let b = full.fixed_view::<5, 2>(0, 5);
            let c = full.fixed_view::<2, 2>(5, 5);
            match c.try_inverse() {
                Some(c_inv) => a - b * c_inv * b.transpose(),
                None => SMatrix::<f64, 5, 5>::zeros(),
            }
        }
    };
    FisherMatrix::new(
        DMatrix::from_iterator(5, 5, block.iter().copied()),
        FisherSpace::Channel,
    )
}

/// Block-diagonal stacking of per-path FIMs in visibility order.
pub fn fim_channel_block(blocks: &[FisherMatrix]) -> Result<FisherMatrix, CrbError> {
    if blocks.is_empty() {
        return Err(CrbError::EmptyVisibility);
    }
    let n = blocks.iter().map(FisherMatrix::dim).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let d = b.dim();
        out.view_mut((at, at), (d, d)).copy_from(&b.matrix);
        at += d;
    }
    Ok(FisherMatrix::new(out, FisherSpace::Channel))
}

/// Column-major vectorization of a 3×3 matrix.
fn vec3x3(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    out.copy_from_slice(m.as_slice());
    out
}

/// Gradient of `atan2(y, x)` given the gradients of `y` and `x`.
fn atan2_gradient<T>(x: f64, y: f64, dx: T, dy: T) -> T
where
    T: std::ops::Mul<f64, Output = T> + std::ops::Sub<Output = T>,
{
    let r2 = x * x + y * y;
    dy * (x / r2) - dx * (y / r2)
}

fn inverse_sqrt_one_minus(sin: f64) -> Result<f64, CrbError> {
    if sin.abs() >= ELEVATION_GUARD {
        return Err(CrbError::DegenerateElevation { sin });
    }
    Ok(1.0 / (1.0 - sin * sin).sqrt())
}

/// Analytic `∂η/∂r` for one path, with `ue_rotation` treated as nine free entries.
///
/// Rows: θ_az, θ_el, φ_az, φ_el, τ. Columns: p_U, ρ, vec(R_U).
pub fn path_jacobian(
    bs: &Pose,
    ue_position: &Vector3<f64>,
    ue_rotation: &Matrix3<f64>,
    sa_offset: &Vector3<f64>,
    sa_rotation: &Matrix3<f64>,
) -> Result<StateJacobian, CrbError> {
    let r_b = bs.rotation.matrix();
    let d = sa_offset;
    let rel = ue_position - bs.position;
    let v = rel + ue_rotation * d;
    let range = v.norm();
    if range < crate::geometry::MIN_SEPARATION_M {
        return Err(GeometryError::CoincidentPoints { distance: range }.into());
    }
    let range3 = range * range * range;
    // ∂‖v‖/∂R_U = (v/‖v‖) dᵀ
    let d_range_d_rot = v * d.transpose() / range;

    // AOD: b = R_Bᵀ v, so ∂b_i/∂p_U = R_B u_i and ∂b_i/∂R_U = (R_B u_i) dᵀ.
    let b = r_b.transpose() * v;
    let bs_axes = [
        r_b.column(0).into_owned(),
        r_b.column(1).into_owned(),
        r_b.column(2).into_owned(),
    ];
    let theta_az_p = atan2_gradient(b.x, b.y, bs_axes[0], bs_axes[1]);
    let theta_az_r = theta_az_p * d.transpose();
    let s1 = inverse_sqrt_one_minus(b.z / range)?;
    let theta_el_p = (bs_axes[2] / range - v * (b.z / range3)) * s1;
    let theta_el_r = (bs_axes[2] * d.transpose() / range - d_range_d_rot * (b.z / (range * range))) * s1;

    // AOA: a = R_nᵀ R_Uᵀ v. With w_i = R_n u_i,
    //   a_i = (p_U − p_B)ᵀ R_U w_i + w_iᵀ R_Uᵀ R_U d
    //   ∂a_i/∂p_U = R_U w_i
    //   ∂a_i/∂R_U = (p_U − p_B) w_iᵀ + R_U (w_i dᵀ + d w_iᵀ)
    let a = sa_rotation.transpose() * (ue_rotation.transpose() * v);
    let mut sa_p = [Vector3::zeros(); 3];
    let mut sa_r = [Matrix3::zeros(); 3];
    for i in 0..3 {
        let w = sa_rotation.column(i).into_owned();
        sa_p[i] = ue_rotation * w;
        sa_r[i] = rel * w.transpose() + ue_rotation * (w * d.transpose() + d * w.transpose());
    }
    // atan2(−a2, −a1) has the same gradient as atan2(a2, a1).
    let phi_az_p = atan2_gradient(a.x, a.y, sa_p[0], sa_p[1]);
    let phi_az_r = atan2_gradient(a.x, a.y, sa_r[0], sa_r[1]);
    let s2 = inverse_sqrt_one_minus(a.z / range)?;
    let phi_el_p = -(sa_p[2] / range - v * (a.z / range3)) * s2;
    let phi_el_r = -(sa_r[2] / range - d_range_d_rot * (a.z / (range * range))) * s2;

    let tau_p = v / (range * SPEED_OF_LIGHT);
    let tau_r = d_range_d_rot / SPEED_OF_LIGHT;

    let mut t = StateJacobian::zeros();
    let rows: [(Vector3<f64>, Matrix3<f64>); 5] = [
        (theta_az_p, theta_az_r),
        (theta_el_p, theta_el_r),
        (phi_az_p, phi_az_r),
        (phi_el_p, phi_el_r),
        (tau_p, tau_r),
    ];
    for (i, (dp, dr)) in rows.iter().enumerate() {
        for c in 0..3 {
            t[(i, c)] = dp[c];
        }
        for (c, x) in vec3x3(dr).iter().enumerate() {
            t[(i, 4 + c)] = *x;
        }
    }
    t[(4, 3)] = 1.0;
    Ok(t)
}

/// Stacked Jacobian `T` (5D × 13) over the visible paths.
pub fn jacobian_t(scenario: &Scenario, ue: &Pose, visibility: &VisibilityIndex) -> Result<DMatrix<f64>, CrbError> {
    let mut t = DMatrix::zeros(PATH_DIM * visibility.len(), STATE_DIM);
    for (row, &(m, n)) in visibility.pairs.iter().enumerate() {
        let sa = &scenario.subarrays[n];
        let block = path_jacobian(
            &scenario.base_stations[m].pose,
            &ue.position,
            ue.rotation.matrix(),
            &sa.offset,
            sa.rotation.matrix(),
        )?;
        t.view_mut((row * PATH_DIM, 0), (PATH_DIM, STATE_DIM)).copy_from(&block);
    }
    Ok(t)
}

/// `I(r) = Tᵀ I(η) T`.
pub fn fim_state(fim_eta: &FisherMatrix, t: &DMatrix<f64>) -> Result<FisherMatrix, CrbError> {
    if fim_eta.dim() != t.nrows() {
        return Err(CrbError::Dimension(format!(
            "FIM is {0}×{0} but T has {1} rows",
            fim_eta.dim(),
            t.nrows()
        )));
    }
    let m = t.transpose() * &fim_eta.matrix * t;
    let sym = (&m + m.transpose()) * 0.5;
    Ok(FisherMatrix::new(sym, FisherSpace::State))
}

/// Orthonormal null-space basis of the orthonormality constraints at `R_U`.
pub fn constraint_basis(r_u: &Rotation) -> Result<ConstraintBasis, CrbError> {
    let residual = r_u.residual();
    let det = r_u.matrix().determinant();
    if residual > crate::geometry::ROTATION_TOLERANCE || (det - 1.0).abs() > crate::geometry::ROTATION_TOLERANCE {
        return Err(GeometryError::NotARotation { residual, det }.into());
    }
    Ok(constraint_basis_unchecked(r_u.matrix()))
}

fn constraint_basis_unchecked(r: &Matrix3<f64>) -> ConstraintBasis {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = [
        r.column(0).into_owned(),
        r.column(1).into_owned(),
        r.column(2).into_owned(),
    ];
    let mut m = ConstraintBasis::zeros();
    for i in 0..4 {
        m[(i, i)] = 1.0;
    }
    // Blocks of rows for c1, c2, c3; columns 5..7 of the tangent basis.
    let pattern: [[(f64, Option<usize>); 3]; 3] = [
        [(-1.0, Some(2)), (0.0, None), (1.0, Some(1))],
        [(0.0, None), (-1.0, Some(2)), (-1.0, Some(0))],
        [(1.0, Some(0)), (1.0, Some(1)), (0.0, None)],
    ];
    for (block, cols) in pattern.iter().enumerate() {
        for (col, &(sign, which)) in cols.iter().enumerate() {
            if let Some(k) = which {
                for e in 0..3 {
                    m[(4 + 3 * block + e, 4 + col)] = sign * h * c[k][e];
                }
            }
        }
    }
    m
}

/// Jacobian (6 × 13) of the upper-triangular entries of `RᵀR − I`, ordered
/// (1,1), (1,2), (1,3), (2,2), (2,3), (3,3).
pub fn constraint_jacobian(r: &Matrix3<f64>) -> SMatrix<f64, 6, STATE_DIM> {
    let mut j = SMatrix::<f64, 6, STATE_DIM>::zeros();
    let mut row = 0;
    for a in 0..3 {
        for b in a..3 {
            // h = c_aᵀ c_b − δ_ab
            for e in 0..3 {
                j[(row, 4 + 3 * a + e)] += r[(e, b)];
                j[(row, 4 + 3 * b + e)] += r[(e, a)];
            }
            row += 1;
        }
    }
    j
}

/// Tangent-space information `Mᵀ I(r) M`.
fn projected_information(fim_r: &FisherMatrix, m: &ConstraintBasis) -> SMatrix<f64, TANGENT_DIM, TANGENT_DIM> {
    let fim = SMatrix::<f64, STATE_DIM, STATE_DIM>::from_iterator(fim_r.matrix.iter().copied());
    let p = m.transpose() * fim * m;
    (p + p.transpose()) * 0.5
}

/// Eigendecomposition of the diagonally equilibrated tangent information.
struct Equilibrated {
    scale: SVector<f64, TANGENT_DIM>,
    eigen: SymmetricEigen<f64, nalgebra::Const<TANGENT_DIM>>,
    condition: f64,
}

fn equilibrate(p: &SMatrix<f64, TANGENT_DIM, TANGENT_DIM>) -> Equilibrated {
    let mut scale = SVector::<f64, TANGENT_DIM>::zeros();
    for i in 0..TANGENT_DIM {
        let d = p[(i, i)];
        scale[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    let scaled = SMatrix::<f64, TANGENT_DIM, TANGENT_DIM>::from_fn(|i, j| p[(i, j)] * scale[i] * scale[j]);
    let eigen = SymmetricEigen::new(scaled);
    let max = eigen.eigenvalues.max();
    let min = eigen.eigenvalues.min();
    let condition = if scale.iter().any(|&s| s == 0.0) || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    };
    Equilibrated {
        scale,
        eigen,
        condition,
    }
}

/// Equilibrated condition number of `Mᵀ I(r) M`.
///
/// Diagonal scaling removes the unit disparity between meters, seconds and
/// rotation entries, so the number reflects genuine rank deficiency.
pub fn information_condition(fim_r: &FisherMatrix, m: &ConstraintBasis) -> f64 {
    equilibrate(&projected_information(fim_r, m)).condition
}

/// `M (Mᵀ I(r) M)⁻¹ Mᵀ`.
pub fn constrained_crb(fim_r: &FisherMatrix, m: &ConstraintBasis) -> Result<FisherMatrix, CrbError> {
    if fim_r.dim() != STATE_DIM {
        return Err(CrbError::Dimension(format!(
            "state FIM must be {STATE_DIM}×{STATE_DIM}, got {}",
            fim_r.dim()
        )));
    }
    let eq = equilibrate(&projected_information(fim_r, m));
    if !(eq.condition <= SINGULARITY_THRESHOLD) {
        return Err(CrbError::SingularInformation {
            condition: eq.condition,
        });
    }
    // P = S⁻¹ B S⁻¹ with B = Q Λ Qᵀ, so P⁻¹ = S Q Λ⁻¹ Qᵀ S.
    let q = &eq.eigen.eigenvectors;
    let inv_lambda = SMatrix::<f64, TANGENT_DIM, TANGENT_DIM>::from_diagonal(&eq.eigen.eigenvalues.map(|l| 1.0 / l));
    let s = SMatrix::<f64, TANGENT_DIM, TANGENT_DIM>::from_diagonal(&eq.scale);
    let p_inv = s * q * inv_lambda * q.transpose() * s;
    let crb = m * p_inv * m.transpose();
    let crb = (crb + crb.transpose()) * 0.5;
    Ok(FisherMatrix::new(
        DMatrix::from_iterator(STATE_DIM, STATE_DIM, crb.iter().copied()),
        FisherSpace::ConstrainedState,
    ))
}

/// `(PEB, OEB_raw)` from the position and rotation blocks of the constrained CRB.
pub fn peb_oeb(ccrb: &FisherMatrix) -> (f64, f64) {
    let c = &ccrb.matrix;
    let pos: f64 = (0..3).map(|i| c[(i, i)]).sum();
    let rot: f64 = (4..STATE_DIM).map(|i| c[(i, i)]).sum();
    (pos.max(0.0).sqrt(), rot.max(0.0).sqrt())
}

/// Small-angle map from `‖δR‖_F` to the rotation angle in degrees.
pub fn oeb_to_degrees(oeb_raw: f64) -> f64 {
    oeb_raw.to_degrees() / std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Localizable,
    CommOnly,
    NoLos,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Localizable => "localizable",
            Classification::CommOnly => "comm_only",
            Classification::NoLos => "no_los",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// No visible path: `no_los`. A single serving BS or singular tangent
/// information: `comm_only`. Otherwise `localizable`.
pub fn classify_localizability(
    visibility: &VisibilityIndex,
    fim_r: Option<&FisherMatrix>,
    m: &ConstraintBasis,
) -> Classification {
    if visibility.is_empty() {
        return Classification::NoLos;
    }
    if visibility.distinct_base_stations() < 2 {
        return Classification::CommOnly;
    }
    match fim_r {
        Some(fim) if information_condition(fim, m) <= SINGULARITY_THRESHOLD => Classification::Localizable,
        _ => Classification::CommOnly,
    }
}

/// Per-path diagnostics reported with a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub bs: usize,
    pub subarray: usize,
    pub eta: PathParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundResult {
    pub peb_m: Option<f64>,
    pub oeb_raw: Option<f64>,
    pub oeb_deg: Option<f64>,
    pub classification: Classification,
    #[serde(rename = "D")]
    pub num_paths: usize,
    pub condition_number: Option<f64>,
    pub paths: Vec<PathReport>,
}

impl BoundResult {
    pub fn is_localizable(&self) -> bool {
        self.classification == Classification::Localizable
    }
}

/// Intermediate products of one pose evaluation.
#[derive(Debug, Clone)]
pub struct PoseInformation {
    pub visibility: VisibilityIndex,
    pub etas: Vec<PathParams>,
    pub fim_eta: Option<FisherMatrix>,
    pub jacobian: Option<DMatrix<f64>>,
    pub fim_state: Option<FisherMatrix>,
    pub basis: ConstraintBasis,
}

/// Runs the geometry → channel → state-FIM chain for one UE pose.
///
/// Beamformers for path `(m, n)` are drawn from `beamformer_seed`, keyed by
/// the BS and subarray indices.
pub fn pose_information(scenario: &Scenario, ue: &Pose, beamformer_seed: u64) -> Result<PoseInformation, CrbError> {
    let bs_poses: Vec<Pose> = scenario.base_stations.iter().map(|b| b.pose).collect();
    let visibility = visible_paths(&bs_poses, ue, &scenario.subarrays);
    let basis = constraint_basis(&ue.rotation)?;
    let signal = &scenario.signal;
    let mut etas = Vec::with_capacity(visibility.len());
    let mut blocks = Vec::with_capacity(visibility.len());
    for &(m, n) in &visibility.pairs {
        let bs = &scenario.base_stations[m];
        let sa = &scenario.subarrays[n];
        let eta = forward_model(
            &bs.pose.position,
            bs.pose.rotation.matrix(),
            &ue.position,
            ue.rotation.matrix(),
            &sa.offset,
            sa.rotation.matrix(),
            scenario.clock_bias_s,
        )?;
        let distance = (ue.position + ue.rotation.matrix() * sa.offset - bs.pose.position).norm();
        let beamformers = BeamformerSet::draw(
            beamformer_seed,
            m,
            n,
            signal.num_transmissions,
            scenario.subarray_offsets[n].len(),
            scenario.bs_offsets[m].len(),
        );
        let path = PathSignal {
            eta,
            gain: path_gain(distance, signal.carrier_hz)?,
            signal,
            ue_offsets: &scenario.subarray_offsets[n],
            bs_offsets: &scenario.bs_offsets[m],
            beamformers: &beamformers,
        };
        blocks.push(fim_channel_path(&path, scenario.gain_model));
        etas.push(eta);
    }
    if visibility.is_empty() {
        return Ok(PoseInformation {
            visibility,
            etas,
            fim_eta: None,
            jacobian: None,
            fim_state: None,
            basis,
        });
    }
    let fim_eta = fim_channel_block(&blocks)?;
    let t = jacobian_t(scenario, ue, &visibility)?;
    let fim_r = fim_state(&fim_eta, &t)?;
    Ok(PoseInformation {
        visibility,
        etas,
        fim_eta: Some(fim_eta),
        jacobian: Some(t),
        fim_state: Some(fim_r),
        basis,
    })
}

/// PEB/OEB and localizability of a single UE pose.
pub fn evaluate_pose(scenario: &Scenario, ue: &Pose, beamformer_seed: u64) -> Result<BoundResult, CrbError> {
    let info = pose_information(scenario, ue, beamformer_seed)?;
    Ok(bound_from_information(&info))
}

pub fn bound_from_information(info: &PoseInformation) -> BoundResult {
    let paths = info
        .visibility
        .pairs
        .iter()
        .zip(&info.etas)
        .map(|(&(bs, subarray), eta)| PathReport {
            bs,
            subarray,
            eta: *eta,
        })
        .collect();
    let classification = classify_localizability(&info.visibility, info.fim_state.as_ref(), &info.basis);
    let condition_number = info.fim_state.as_ref().map(|f| information_condition(f, &info.basis));
    let mut result = BoundResult {
        peb_m: None,
        oeb_raw: None,
        oeb_deg: None,
        classification,
        num_paths: info.visibility.len(),
        condition_number,
        paths,
    };
    if classification == Classification::Localizable {
        if let Some(Ok(ccrb)) = info.fim_state.as_ref().map(|f| constrained_crb(f, &info.basis)) {
            let (peb, oeb) = peb_oeb(&ccrb);
            result.peb_m = Some(peb);
            result.oeb_raw = Some(oeb);
            result.oeb_deg = Some(oeb_to_degrees(oeb));
        } else {
            result.classification = Classification::CommOnly;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        Rotation::from_euler(EulerAngles::new(
            rng.random_range(-180.0..180.0),
            rng.random_range(-180.0..180.0),
            rng.random_range(-180.0..180.0),
        ))
    }

    #[test]
    fn identity_basis_pattern() {
        let m = constraint_basis(&Rotation::identity()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(
            m.fixed_view::<4, 4>(0, 0).into_owned(),
            SMatrix::<f64, 4, 4>::identity()
        );
        // column 5: [−e3; 0; e1]/√2
        assert_eq!(m[(6, 4)], -h);
        assert_eq!(m[(10, 4)], h);
        // column 6: [0; −e3; e2]/√2
        assert_eq!(m[(9, 5)], -h);
        assert_eq!(m[(11, 5)], h);
        // column 7: [e2; −e1; 0]/√2
        assert_eq!(m[(5, 6)], h);
        assert_eq!(m[(7, 6)], -h);
        assert!((m.transpose() * m - SMatrix::<f64, 7, 7>::identity()).amax() < 1e-15);
    }

    #[test]
    fn basis_is_orthonormal_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let m = constraint_basis(&r).unwrap();
            assert!((m.transpose() * m - SMatrix::<f64, 7, 7>::identity()).amax() < 1e-12);
            assert!((constraint_jacobian(r.matrix()) * m).amax() < 1e-10);
        }
    }

    #[test]
    fn basis_rejects_off_manifold() {
        let mut bad = *Rotation::identity().matrix();
        bad[(0, 0)] = 1.01;
        assert!(constraint_basis(&Rotation::from_matrix_unchecked(bad)).is_err());
    }

    #[test]
    fn identity_information_gives_tangent_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_rotation(&mut rng);
        let m = constraint_basis(&r).unwrap();
        let fim = FisherMatrix::new(DMatrix::identity(13, 13), FisherSpace::State);
        let crb = constrained_crb(&fim, &m).unwrap();
        let proj = m * m.transpose();
        for i in 0..13 {
            for j in 0..13 {
                assert!((crb.matrix[(i, j)] - proj[(i, j)]).abs() < 1e-12);
            }
        }
        let (peb, _) = peb_oeb(&crb);
        assert!((peb - 3f64.sqrt()).abs() < 1e-12);
        // Tangent projector of the rotation block has trace 3.
        let (_, oeb) = peb_oeb(&crb);
        assert!((oeb - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn singular_information_is_reported() {
        let m = constraint_basis(&Rotation::identity()).unwrap();
        let mut f = DMatrix::identity(13, 13);
        f[(0, 0)] = 0.0;
        let fim = FisherMatrix::new(f, FisherSpace::State);
        assert!(matches!(
            constrained_crb(&fim, &m),
            Err(CrbError::SingularInformation { .. })
        ));
    }

    #[test]
    fn block_diagonal_assembly() {
        let a = FisherMatrix::new(DMatrix::from_fn(5, 5, |i, j| (i + j) as f64), FisherSpace::Channel);
        let b = FisherMatrix::new(
            DMatrix::from_fn(5, 5, |i, j| (i * j) as f64 + 1.0),
            FisherSpace::Channel,
        );
        assert_eq!(fim_channel_block(std::slice::from_ref(&a)).unwrap(), a);
        let ab = fim_channel_block(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.dim(), 10);
        assert_eq!(ab.matrix.view((0, 0), (5, 5)), a.matrix);
        assert_eq!(ab.matrix.view((5, 5), (5, 5)), b.matrix);
        assert_eq!(ab.matrix.view((0, 5), (5, 5)).amax(), 0.0);
        assert_eq!(ab.matrix.view((5, 0), (5, 5)).amax(), 0.0);
        assert!(matches!(fim_channel_block(&[]), Err(CrbError::EmptyVisibility)));
    }

    #[test]
    fn identity_channel_fim_gives_gram_matrix() {
        let t = DMatrix::from_fn(10, 13, |i, j| ((i * 13 + j) as f64).sin());
        let fim = FisherMatrix::new(DMatrix::identity(10, 10), FisherSpace::Channel);
        let out = fim_state(&fim, &t).unwrap();
        assert!((out.matrix - t.transpose() * &t).amax() < 1e-12);
        assert!(fim_state(&fim, &DMatrix::zeros(5, 13)).is_err());
    }

    #[test]
    fn centered_subarray_makes_aod_orientation_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bs = Pose::from_euler([-10.5, -10.5, 5.0], EulerAngles::new(0.0, 90.0, 45.0));
        for _ in 0..50 {
            let r_u = random_rotation(&mut rng);
            let r_n = random_rotation(&mut rng);
            let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0);
            let t = path_jacobian(&bs, &p, r_u.matrix(), &Vector3::zeros(), r_n.matrix()).unwrap();
            for c in 4..13 {
                assert_eq!(t[(0, c)], 0.0);
                assert_eq!(t[(1, c)], 0.0);
                assert_eq!(t[(4, c)], 0.0);
            }
            assert_eq!(t[(4, 3)], 1.0);
            for r in 0..4 {
                assert_eq!(t[(r, 3)], 0.0);
            }
        }
    }

    #[test]
    fn degenerate_elevation_rejected() {
        // BS boresight along −Z, UE straight below: BS-local direction is +X,
        // but put the UE directly along the BS local Z axis instead.
        let bs = Pose::from_euler([0.0, 0.0, 5.0], EulerAngles::default());
        let p = Vector3::new(0.0, 0.0, 0.0);
        let r = Rotation::identity();
        let err = path_jacobian(&bs, &p, r.matrix(), &Vector3::zeros(), r.matrix()).unwrap_err();
        assert!(matches!(err, CrbError::DegenerateElevation { .. }));
    }

    #[test]
    fn classification_rules() {
        let m = constraint_basis(&Rotation::identity()).unwrap();
        let fim = FisherMatrix::new(DMatrix::identity(13, 13), FisherSpace::State);
        let none = VisibilityIndex::default();
        assert_eq!(classify_localizability(&none, None, &m), Classification::NoLos);
        let one_bs = VisibilityIndex {
            pairs: vec![(0, 0), (0, 1), (0, 2)],
        };
        assert_eq!(
            classify_localizability(&one_bs, Some(&fim), &m),
            Classification::CommOnly
        );
        let two_bs = VisibilityIndex {
            pairs: vec![(0, 0), (1, 0)],
        };
        assert_eq!(
            classify_localizability(&two_bs, Some(&fim), &m),
            Classification::Localizable
        );
        let singular = FisherMatrix::new(DMatrix::zeros(13, 13), FisherSpace::State);
        assert_eq!(
            classify_localizability(&two_bs, Some(&singular), &m),
            Classification::CommOnly
        );
    }

    #[test]
    fn oeb_degree_conversion() {
        assert!((oeb_to_degrees(std::f64::consts::SQRT_2 * 0.01) - 0.01f64.to_degrees()).abs() < 1e-12);
    }
}

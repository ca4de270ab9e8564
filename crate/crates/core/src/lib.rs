//! Position and orientation error bounds for a terminal carrying several
//! planar subarrays in an arbitrary 3-D arrangement, served by far-field
//! downlink signals from base stations with known poses.
//!
//! The pipeline for one UE pose:
//!
//! 1. [`geometry`]: which BS–subarray paths are visible, and their AOD, AOA and delay.
//! 2. [`channel`]: the mean received OFDM signal of each path and its gradient.
//! 3. [`crb`]: per-path Fisher information, the chain rule to the UE state,
//!    and the constrained bound on the rotation manifold.
//! 4. [`coverage`]: the same evaluation repeated over random poses or grids.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod coverage;
pub mod crb;
pub mod geometry;
pub mod scenario;
pub mod seeding;
pub mod validation;

pub use channel::{BeamformerSet, SignalConfig};
pub use coverage::{CcdfCurve, FieldGrid, GridAxis, Metric, PoseDistribution};
pub use crb::{evaluate_pose, BoundResult, Classification, CrbError, FisherMatrix};
pub use geometry::{EulerAngles, PathParams, PlanarArraySpec, Pose, Rotation, SubarraySpec, VisibilityIndex};
pub use scenario::{parse_config, preset, ConfigError, Scenario, ScenarioConfig};

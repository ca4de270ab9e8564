//! Scenario files, the built-in presets, and the validated runtime [`Scenario`].
//!
//! Scenario files are TOML with four sections: `[[bs]]`, `[ue]`, `[signal]`
//! and `[sim]`. Units are carried in key names (`position_m`,
//! `orientation_deg`, `power_dbm`, `carrier_hz`, ...). A file may instead
//! name a preset (`preset = "cuboidal-2bs"`) and override individual sections.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelError, SignalConfig};
use crate::coverage::PoseDistribution;
use crate::geometry::{EulerAngles, PlanarArraySpec, Pose, Rotation, SubarraySpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("unknown preset `{0}` (expected planar|cuboidal followed by -2bs, -3bs or -4bs)")]
    UnknownPreset(String),
    #[error("unknown UE layout `{0}` (expected planar or cuboidal)")]
    UnknownLayout(String),
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// Free-space gain treated as known.
    #[default]
    Known,
    /// Complex gain estimated jointly; geometry information is its Schur complement.
    Nuisance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsConfig {
    pub position_m: [f64; 3],
    pub orientation_deg: [f64; 3],
    #[serde(default = "bs_panel")]
    pub panel: PlanarArraySpec,
}

fn bs_panel() -> PlanarArraySpec {
    PlanarArraySpec::new(8, 8)
}

fn ue_panel() -> PlanarArraySpec {
    PlanarArraySpec::new(4, 4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubarrayConfig {
    pub offset_m: [f64; 3],
    pub orientation_deg: [f64; 3],
    #[serde(default = "ue_panel")]
    pub panel: PlanarArraySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeConfig {
    /// Pose used by single-pose evaluation when no pose is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_deg: Option<[f64; 3]>,
    pub subarrays: Vec<SubarrayConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub clock_bias_s: f64,
    pub gain_model: GainModel,
    pub distribution: PoseDistribution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clock_bias_s: 0.0,
            gain_model: GainModel::Known,
            distribution: PoseDistribution::default(),
        }
    }
}

/// Fully expanded scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub signal: SignalConfig,
    pub sim: SimConfig,
    pub bs: Vec<BsConfig>,
    pub ue: UeConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    bs: Option<Vec<BsConfig>>,
    ue: Option<RawUe>,
    signal: Option<SignalConfig>,
    sim: Option<SimConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUe {
    layout: Option<String>,
    position_m: Option<[f64; 3]>,
    orientation_deg: Option<[f64; 3]>,
    subarrays: Option<Vec<SubarrayConfig>>,
}

/// UE array layouts used by the presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Six coplanar 4×4 panels tiled as an unfolded cube, all facing UE +X.
    Planar,
    /// Six 4×4 panels on the faces of a 0.1 m cube, facing outward.
    Cuboidal,
}

impl Layout {
    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        match name {
            "planar" => Ok(Layout::Planar),
            "cuboidal" => Ok(Layout::Cuboidal),
            other => Err(ConfigError::UnknownLayout(other.to_string())),
        }
    }

    pub fn subarrays(self) -> Vec<SubarrayConfig> {
        const CUBE_EDGE_M: f64 = 0.1;
        match self {
            Layout::Cuboidal => {
                let half = CUBE_EDGE_M / 2.0;
                [
                    ([half, 0.0, 0.0], [0.0, 0.0, 0.0]),
                    ([-half, 0.0, 0.0], [0.0, 0.0, 180.0]),
                    ([0.0, half, 0.0], [0.0, 0.0, 90.0]),
                    ([0.0, -half, 0.0], [0.0, 0.0, -90.0]),
                    ([0.0, 0.0, half], [0.0, -90.0, 0.0]),
                    ([0.0, 0.0, -half], [0.0, 90.0, 0.0]),
                ]
                .into_iter()
                .map(|(offset_m, orientation_deg)| SubarrayConfig {
                    offset_m,
                    orientation_deg,
                    panel: ue_panel(),
                })
                .collect()
            }
            Layout::Planar => {
                // Cube net in (y, z) tile units: a vertical strip of four with one
                // tile on each side of the second, re-centered on its centroid.
                let tiles: [(f64, f64); 6] = [
                    (0.0, 1.0),
                    (0.0, 0.0),
                    (0.0, -1.0),
                    (0.0, -2.0),
                    (-1.0, 0.0),
                    (1.0, 0.0),
                ];
                let cy = tiles.iter().map(|t| t.0).sum::<f64>() / 6.0;
                let cz = tiles.iter().map(|t| t.1).sum::<f64>() / 6.0;
                tiles
                    .iter()
                    .map(|&(y, z)| SubarrayConfig {
                        offset_m: [0.0, (y - cy) * CUBE_EDGE_M, (z - cz) * CUBE_EDGE_M],
                        orientation_deg: [0.0, 0.0, 0.0],
                        panel: ue_panel(),
                    })
                    .collect()
            }
        }
    }
}

/// Base stations of the simulation setup; presets take the first 2, 3 or 4.
pub fn reference_base_stations() -> Vec<BsConfig> {
    [
        ([-10.5, -10.5, 5.0], [0.0, 90.0, 45.0]),
        ([10.5, 10.5, 5.0], [0.0, 90.0, -135.0]),
        ([-10.5, 10.5, 5.0], [0.0, 90.0, -45.0]),
        ([10.5, -10.5, 5.0], [0.0, 90.0, 135.0]),
    ]
    .into_iter()
    .map(|(position_m, orientation_deg)| BsConfig {
        position_m,
        orientation_deg,
        panel: bs_panel(),
    })
    .collect()
}

pub const PRESET_NAMES: [&str; 6] = [
    "planar-2bs",
    "planar-3bs",
    "planar-4bs",
    "cuboidal-2bs",
    "cuboidal-3bs",
    "cuboidal-4bs",
];

/// One of `{planar, cuboidal}-{2,3,4}bs`.
pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let unknown = || ConfigError::UnknownPreset(name.to_string());
    let (layout, count) = name.split_once('-').ok_or_else(unknown)?;
    let layout = Layout::parse(layout).map_err(|_| unknown())?;
    let count: usize = match count {
        "2bs" => 2,
        "3bs" => 3,
        "4bs" => 4,
        _ => return Err(unknown()),
    };
    let mut bs = reference_base_stations();
    bs.truncate(count);
    Ok(ScenarioConfig {
        signal: SignalConfig::default(),
        sim: SimConfig::default(),
        bs,
        ue: UeConfig {
            position_m: None,
            orientation_deg: None,
            subarrays: layout.subarrays(),
        },
    })
}

/// Parses and validates a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
        path: String::new(),
        message: e.to_string(),
    })?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string().trim().to_string(),
    })?;

    let base = raw.preset.as_deref().map(preset).transpose()?;
    let bs = match (raw.bs, &base) {
        (Some(bs), _) => bs,
        (None, Some(b)) => b.bs.clone(),
        (None, None) => return Err(invalid("bs", "missing section (or name a preset)")),
    };
    let ue = match (raw.ue, &base) {
        (Some(raw_ue), base) => {
            let subarrays = match (raw_ue.layout, raw_ue.subarrays) {
                (Some(_), Some(_)) => return Err(invalid("ue", "give either `layout` or `subarrays`, not both")),
                (Some(layout), None) => Layout::parse(&layout)?.subarrays(),
                (None, Some(sas)) => sas,
                (None, None) => match base {
                    Some(b) => b.ue.subarrays.clone(),
                    None => return Err(invalid("ue", "missing `layout` or `subarrays`")),
                },
            };
            UeConfig {
                position_m: raw_ue.position_m,
                orientation_deg: raw_ue.orientation_deg,
                subarrays,
            }
        }
        (None, Some(b)) => b.ue.clone(),
        (None, None) => return Err(invalid("ue", "missing section (or name a preset)")),
    };
    let config = ScenarioConfig {
        signal: raw.signal.or(base.as_ref().map(|b| b.signal)).unwrap_or_default(),
        sim: raw.sim.or(base.map(|b| b.sim)).unwrap_or_default(),
        bs,
        ue,
    };
    config.validate()?;
    Ok(config)
}

fn check_finite(path: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(path, "values must be finite"))
    }
}

fn check_panel(path: &str, panel: &PlanarArraySpec) -> Result<(), ConfigError> {
    if panel.rows == 0 || panel.cols == 0 {
        return Err(invalid(path, "panel needs at least one row and one column"));
    }
    if !(panel.spacing_wavelengths > 0.0 && panel.spacing_wavelengths.is_finite()) {
        return Err(invalid(format!("{path}.spacing_wavelengths"), "must be positive"));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bs.is_empty() {
            return Err(invalid("bs", "at least one base station is required"));
        }
        if self.ue.subarrays.is_empty() {
            return Err(invalid("ue.subarrays", "at least one subarray is required"));
        }
        for (i, b) in self.bs.iter().enumerate() {
            check_finite(&format!("bs[{i}].position_m"), &b.position_m)?;
            check_finite(&format!("bs[{i}].orientation_deg"), &b.orientation_deg)?;
            check_panel(&format!("bs[{i}].panel"), &b.panel)?;
        }
        for (i, s) in self.ue.subarrays.iter().enumerate() {
            check_finite(&format!("ue.subarrays[{i}].offset_m"), &s.offset_m)?;
            check_finite(&format!("ue.subarrays[{i}].orientation_deg"), &s.orientation_deg)?;
            check_panel(&format!("ue.subarrays[{i}].panel"), &s.panel)?;
        }
        if let Some(p) = &self.ue.position_m {
            check_finite("ue.position_m", p)?;
        }
        if let Some(o) = &self.ue.orientation_deg {
            check_finite("ue.orientation_deg", o)?;
        }
        self.signal.validate().map_err(|e| match e {
            ChannelError::InvalidConfig { field, reason } => invalid(format!("signal.{field}"), reason),
            other => invalid("signal", other.to_string()),
        })?;
        if !self.sim.clock_bias_s.is_finite() {
            return Err(invalid("sim.clock_bias_s", "must be finite"));
        }
        self.sim
            .distribution
            .validate()
            .map_err(|reason| invalid("sim.distribution", reason))?;
        Ok(())
    }

    /// Canonical TOML text; parses back to an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    /// Short SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let signal = self.signal;
        let wavelength = signal.wavelength();
        let base_stations: Vec<BaseStation> = self
            .bs
            .iter()
            .map(|b| BaseStation {
                pose: Pose::from_euler(b.position_m, EulerAngles::from(b.orientation_deg)),
                panel: b.panel,
            })
            .collect();
        let subarrays: Vec<SubarraySpec> = self
            .ue
            .subarrays
            .iter()
            .map(|s| SubarraySpec {
                offset: Vector3::from(s.offset_m),
                rotation: Rotation::from_euler(EulerAngles::from(s.orientation_deg)),
                panel: s.panel,
            })
            .collect();
        let ue_pose = match (self.ue.position_m, self.ue.orientation_deg) {
            (None, None) => None,
            (p, o) => Some(Pose::from_euler(
                p.unwrap_or_default(),
                EulerAngles::from(o.unwrap_or_default()),
            )),
        };
        Ok(Scenario {
            bs_offsets: base_stations
                .iter()
                .map(|b| b.panel.element_offsets(wavelength))
                .collect(),
            subarray_offsets: subarrays.iter().map(|s| s.panel.element_offsets(wavelength)).collect(),
            base_stations,
            subarrays,
            signal,
            clock_bias_s: self.sim.clock_bias_s,
            gain_model: self.sim.gain_model,
            seed: self.sim.seed,
            distribution: self.sim.distribution,
            ue_pose,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub pose: Pose,
    pub panel: PlanarArraySpec,
}

/// Validated scenario with precomputed element layouts. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub base_stations: Vec<BaseStation>,
    pub subarrays: Vec<SubarraySpec>,
    pub signal: SignalConfig,
    pub clock_bias_s: f64,
    pub gain_model: GainModel,
    pub seed: u64,
    pub distribution: PoseDistribution,
    pub ue_pose: Option<Pose>,
    /// Element offsets per BS panel, meters, panel-local.
    pub bs_offsets: Vec<Vec<Vector3<f64>>>,
    /// Element offsets per subarray panel, meters, panel-local.
    pub subarray_offsets: Vec<Vec<Vector3<f64>>>,
}

impl Scenario {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        preset(name)?.build()
    }

    /// The same scenario served by its first `count` base stations only.
    pub fn with_base_stations(&self, count: usize) -> Self {
        let mut s = self.clone();
        s.base_stations.truncate(count);
        s.bs_offsets.truncate(count);
        s
    }

    /// Rigidly moves every base station by `x ↦ q x + t`. Subarrays are UE-relative.
    pub fn transformed(&self, q: &Rotation, t: &Vector3<f64>) -> Self {
        let mut s = self.clone();
        for b in &mut s.base_stations {
            b.pose = Pose::new(q.matrix() * b.pose.position + t, *q * b.pose.rotation);
        }
        s
    }

    pub fn bs_poses(&self) -> Vec<Pose> {
        self.base_stations.iter().map(|b| b.pose).collect()
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[bs]]
position_m = [0.0, 0.0, 5.0]
orientation_deg = [0.0, 90.0, 0.0]

[ue]
[[ue.subarrays]]
offset_m = [0.0, 0.0, 0.0]
orientation_deg = [0.0, -90.0, 0.0]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.signal, SignalConfig::default());
        assert_eq!(cfg.bs[0].panel, PlanarArraySpec::new(8, 8));
        assert_eq!(cfg.ue.subarrays[0].panel, PlanarArraySpec::new(4, 4));
        let s = cfg.build().unwrap();
        for r in s
            .subarrays
            .iter()
            .map(|sa| sa.rotation)
            .chain(s.base_stations.iter().map(|b| b.pose.rotation))
        {
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let text = MINIMAL.replace(
            "orientation_deg = [0.0, -90.0, 0.0]",
            "orientation_deg = [0.0, -90.0, 0.0]\nbogus = 1",
        );
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ue.subarrays"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn wrong_type_reports_key_path() {
        let text = MINIMAL.replace("position_m = [0.0, 0.0, 5.0]", "position_m = \"up\"");
        let msg = parse_config(&text).unwrap_err().to_string();
        assert!(msg.contains("bs[0].position_m"), "{msg}");
    }

    #[test]
    fn validation_names_violated_invariant() {
        let text = MINIMAL.replace("[ue]", "[signal]\nnum_subcarriers = 0\n\n[ue]");
        let err = parse_config(&text).unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref path, .. } if path == "signal.num_subcarriers"),
            "{err}"
        );
        assert!(err.to_string().contains("num_subcarriers"));
        assert!(matches!(
            parse_config("[ue]\nlayout = \"planar\"\n"),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn preset_reference_expands() {
        let cfg = parse_config("preset = \"cuboidal-2bs\"\n").unwrap();
        assert_eq!(cfg, preset("cuboidal-2bs").unwrap());
        let overridden = parse_config("preset = \"planar-3bs\"\n[sim]\nseed = 42\n").unwrap();
        assert_eq!(overridden.sim.seed, 42);
        assert_eq!(overridden.bs.len(), 3);
        assert!(matches!(
            parse_config("preset = \"hexagonal-2bs\"\n"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn preset_constants() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.signal.power_dbm, 0.0);
            assert_eq!(cfg.signal.carrier_hz, 140e9);
            assert_eq!(cfg.signal.bandwidth_hz, 1000e6);
            assert_eq!(cfg.signal.num_transmissions, 50);
            assert_eq!(cfg.signal.num_subcarriers, 10);
            assert_eq!(cfg.signal.noise_psd_dbm_hz, -173.855);
            assert_eq!(cfg.signal.noise_figure_db, 10.0);
            assert!(cfg.bs.iter().all(|b| b.panel == PlanarArraySpec::new(8, 8)));
            assert_eq!(cfg.ue.subarrays.len(), 6);
        }
        let four = preset("planar-4bs").unwrap();
        assert_eq!(four.bs[2].position_m, [-10.5, 10.5, 5.0]);
        assert_eq!(four.bs[2].orientation_deg, [0.0, 90.0, -45.0]);
        assert_eq!(four.bs[3].position_m, [10.5, -10.5, 5.0]);
        assert_eq!(four.bs[3].orientation_deg, [0.0, 90.0, 135.0]);
    }

    #[test]
    fn cuboidal_normals_are_axis_aligned() {
        let s = Scenario::preset("cuboidal-2bs").unwrap();
        let mut normals: Vec<[i32; 3]> = Vec::new();
        for sa in &s.subarrays {
            let n = sa.rotation.boresight();
            let axis = n.map(|x| x as i32);
            assert_eq!(axis.map(|x| x as f64), n, "normal not exactly axis-aligned: {n:?}");
            assert_eq!(sa.offset, n * 0.05);
            normals.push([axis.x, axis.y, axis.z]);
        }
        normals.sort();
        normals.dedup();
        assert_eq!(normals.len(), 6);
    }

    #[test]
    fn planar_panels_share_a_plane() {
        let s = Scenario::preset("planar-2bs").unwrap();
        let centroid: Vector3<f64> = s.subarrays.iter().map(|sa| sa.offset).sum::<Vector3<f64>>() / 6.0;
        assert!(centroid.amax() < 1e-15);
        for sa in &s.subarrays {
            assert_eq!(*sa.rotation.matrix(), *Rotation::identity().matrix());
            assert_eq!(sa.offset.x, 0.0);
        }
        // Neighbouring tiles are one cube edge apart.
        let d = (s.subarrays[0].offset - s.subarrays[1].offset).norm();
        assert!((d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn serialization_round_trip() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let again = parse_config(&cfg.to_toml()).unwrap();
            assert_eq!(again, cfg);
            assert_eq!(again.hash(), cfg.hash());
        }
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}

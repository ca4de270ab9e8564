//! Far-field OFDM mean signal of a single LOS path and its analytic gradient
//! with respect to the five channel parameters.
//!
//! For transmission `g` and subcarrier `k` the noise-free received sample is
//!
//! ```text
//! mu[g][k] = sqrt(P) · w_U[g]ᵀ · H(k, eta) · w_B[g] · x[g][k]
//! H(k, eta) = gain · exp(-j 2π f_k tau) · a_U(phi_az, phi_el) · a_B(theta_az, theta_el)ᵀ
//! ```
//!
//! with all-ones pilots and `f_k` the baseband offset of subcarrier `k`.

use std::f64::consts::PI;

use nalgebra::{Complex, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{PathParams, PlanarArraySpec, MIN_SEPARATION_M, SPEED_OF_LIGHT};
use crate::seeding::{rng_for, Stream};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("path length {distance:.3e} m is too short for a far-field gain")]
    CoincidentPoints { distance: f64 },
    #[error("invalid signal configuration: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
}

/// Transmission and receiver parameters shared by every path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub power_dbm: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub num_transmissions: usize,
    pub num_subcarriers: usize,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            power_dbm: 0.0,
            carrier_hz: 140e9,
            bandwidth_hz: 1e9,
            num_transmissions: 50,
            num_subcarriers: 10,
            noise_psd_dbm_hz: -173.855,
            noise_figure_db: 10.0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |field, reason| Err(ChannelError::InvalidConfig { field, reason });
        if self.num_subcarriers < 1 {
            return bad("num_subcarriers", "must be at least 1");
        }
        if self.num_transmissions < 1 {
            return bad("num_transmissions", "must be at least 1");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth_hz", "must be positive");
        }
        if !(self.carrier_hz > self.bandwidth_hz) {
            return bad("carrier_hz", "must exceed bandwidth_hz");
        }
        for (field, v) in [
            ("power_dbm", self.power_dbm),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("noise_figure_db", self.noise_figure_db),
        ] {
            if !v.is_finite() {
                return bad(field, "must be finite");
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn power_watts(&self) -> f64 {
        dbm_to_watts(self.power_dbm)
    }

    /// Baseband subcarrier offsets `f_k = (k − (K+1)/2) · W / K`, k = 1..K.
    pub fn subcarrier_offsets(&self) -> Vec<f64> {
        let k_total = self.num_subcarriers as f64;
        let spacing = self.bandwidth_hz / k_total;
        (1..=self.num_subcarriers)
            .map(|k| (k as f64 - (k_total + 1.0) / 2.0) * spacing)
            .collect()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Post-combining noise variance in watts: `N_0 · W · N_f`.
pub fn noise_variance(cfg: &SignalConfig) -> f64 {
    dbm_to_watts(cfg.noise_psd_dbm_hz) * cfg.bandwidth_hz * 10f64.powf(cfg.noise_figure_db / 10.0)
}

/// Unit direction for azimuth/elevation in a panel's local frame.
pub fn direction(az: f64, el: f64) -> Vector3<f64> {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

fn direction_d_az(az: f64, el: f64) -> Vector3<f64> {
    let (sa, ca) = az.sin_cos();
    let ce = el.cos();
    Vector3::new(-ce * sa, ce * ca, 0.0)
}

fn direction_d_el(az: f64, el: f64) -> Vector3<f64> {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Vector3::new(-se * ca, -se * sa, ce)
}

/// `[a]_i = exp(j · 2π/λ · offset_iᵀ u(az, el))`.
pub fn steering_vector(panel: &PlanarArraySpec, az: f64, el: f64, wavelength: f64) -> DVector<C64> {
    steering_from_offsets(&panel.element_offsets(wavelength), az, el, wavelength).value
}

/// A steering vector with its azimuth and elevation derivatives.
#[derive(Debug, Clone)]
pub struct Steering {
    pub value: DVector<C64>,
    pub d_az: DVector<C64>,
    pub d_el: DVector<C64>,
}

pub fn steering_from_offsets(offsets: &[Vector3<f64>], az: f64, el: f64, wavelength: f64) -> Steering {
    let wavenumber = 2.0 * PI / wavelength;
    let u = direction(az, el);
    let u_az = direction_d_az(az, el);
    let u_el = direction_d_el(az, el);
    let n = offsets.len();
    let mut value = DVector::zeros(n);
    let mut d_az = DVector::zeros(n);
    let mut d_el = DVector::zeros(n);
    for (i, o) in offsets.iter().enumerate() {
        let a = C64::from_polar(1.0, wavenumber * o.dot(&u));
        value[i] = a;
        d_az[i] = a * C64::new(0.0, wavenumber * o.dot(&u_az));
        d_el[i] = a * C64::new(0.0, wavenumber * o.dot(&u_el));
    }
    Steering { value, d_az, d_el }
}

/// Free-space amplitude `λ / (4π d)` with zero phase.
pub fn path_gain(distance: f64, carrier_hz: f64) -> Result<C64, ChannelError> {
    if !(distance >= MIN_SEPARATION_M) {
        return Err(ChannelError::CoincidentPoints { distance });
    }
    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    Ok(C64::new(wavelength / (4.0 * PI * distance), 0.0))
}

/// Combiner/precoder pair of one transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub combiner: DVector<C64>,
    pub precoder: DVector<C64>,
}

/// Random constant-amplitude beamformers of one path, one pair per transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub seed: u64,
    pub transmissions: Vec<Beamformer>,
}

impl BeamformerSet {
    /// Draws phases uniformly in [0, 2π). Transmission `g` of path `(bs, sa)`
    /// uses its own counter-derived stream, so the draw does not depend on
    /// which other paths are visible.
    pub fn draw(seed: u64, bs: usize, sa: usize, transmissions: usize, ue_elements: usize, bs_elements: usize) -> Self {
        let transmissions = (0..transmissions)
            .map(|g| {
                let mut rng = rng_for(seed, Stream::Beamformer, &[bs as u64, sa as u64, g as u64]);
                Beamformer {
                    combiner: random_phase_vector(&mut rng, ue_elements),
                    precoder: random_phase_vector(&mut rng, bs_elements),
                }
            })
            .collect();
        Self { seed, transmissions }
    }

    /// All-equal-phase beamformers, mostly for tests.
    pub fn uniform(transmissions: usize, ue_elements: usize, bs_elements: usize) -> Self {
        let flat = |n: usize| DVector::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
        Self {
            seed: 0,
            transmissions: vec![
                Beamformer {
                    combiner: flat(ue_elements),
                    precoder: flat(bs_elements)
                };
                transmissions
            ],
        }
    }
}

fn random_phase_vector(rng: &mut impl Rng, n: usize) -> DVector<C64> {
    let amp = 1.0 / (n as f64).sqrt();
    DVector::from_iterator(n, (0..n).map(|_| C64::from_polar(amp, rng.random::<f64>() * 2.0 * PI)))
}

/// Everything needed to evaluate the mean signal of one path.
#[derive(Debug, Clone, Copy)]
pub struct PathSignal<'a> {
    pub eta: PathParams,
    pub gain: C64,
    pub signal: &'a SignalConfig,
    pub ue_offsets: &'a [Vector3<f64>],
    pub bs_offsets: &'a [Vector3<f64>],
    pub beamformers: &'a BeamformerSet,
}

/// Mean samples (g-major, `K` per transmission) and their gradients.
#[derive(Debug, Clone)]
pub struct MeanSignal {
    pub values: Vec<C64>,
    /// ∂μ/∂(θ_az, θ_el, φ_az, φ_el, τ) per sample.
    pub gradient: Vec<[C64; 5]>,
}

impl PathSignal<'_> {
    fn evaluate(&self, with_gradient: bool) -> MeanSignal {
        let wavelength = self.signal.wavelength();
        let ue = steering_from_offsets(self.ue_offsets, self.eta.phi_az, self.eta.phi_el, wavelength);
        let bs = steering_from_offsets(self.bs_offsets, self.eta.theta_az, self.eta.theta_el, wavelength);
        let offsets = self.signal.subcarrier_offsets();
        let amplitude = self.signal.power_watts().sqrt() * self.gain;
        // pilot x[g][k] = 1
        let phases: Vec<C64> = offsets
            .iter()
            .map(|f| amplitude * C64::from_polar(1.0, -2.0 * PI * f * self.eta.tau))
            .collect();

        let samples = self.beamformers.transmissions.len() * offsets.len();
        let mut values = Vec::with_capacity(samples);
        let mut gradient = Vec::with_capacity(if with_gradient { samples } else { 0 });
        for bf in &self.beamformers.transmissions {
            let cu = bf.combiner.dot(&ue.value);
            let cb = bs.value.dot(&bf.precoder);
            let (cu_az, cu_el, cb_az, cb_el) = if with_gradient {
                (
                    bf.combiner.dot(&ue.d_az),
                    bf.combiner.dot(&ue.d_el),
                    bs.d_az.dot(&bf.precoder),
                    bs.d_el.dot(&bf.precoder),
                )
            } else {
                Default::default()
            };
            for (base, f) in phases.iter().zip(&offsets) {
                let mu = base * cu * cb;
                values.push(mu);
                if with_gradient {
                    gradient.push([
                        base * cu * cb_az,
                        base * cu * cb_el,
                        base * cu_az * cb,
                        base * cu_el * cb,
                        mu * C64::new(0.0, -2.0 * PI * f),
                    ]);
                }
            }
        }
        MeanSignal { values, gradient }
    }
}

pub fn mean_signal(path: &PathSignal<'_>) -> Vec<C64> {
    path.evaluate(false).values
}

/// Mean samples together with their analytic gradient rows.
pub fn mean_signal_with_gradient(path: &PathSignal<'_>) -> MeanSignal {
    path.evaluate(true)
}

pub fn d_mu_d_eta(path: &PathSignal<'_>) -> Vec<[C64; 5]> {
    path.evaluate(true).gradient
}

//! Synthetic gait trials with a closed-form kinematics to torque rule.
//!
//! Each joint angle is a two-harmonic periodic signal
//!
//! ```text
//! theta_j(t) = o_j + s * sum_h a_jh * sin(2*pi*h*t/T + phi_jh),  h = 1, 2
//! ```
//!
//! with `s` scaled by walking condition. Reference moments follow
//! `tau_j(t) = sum_k c_jk * theta_k(t - delta) + d_jk * omega_k(t - delta)`,
//! plus optional seeded Gaussian noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Condition, Joint, JointChannels, Trial};
use crate::signal::WORKING_RATE_HZ;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("t = {t} s lies outside the trial span [0, {end}] s")]
    OutOfRange { t: f64, end: f64 },
}

/// Two-harmonic angle trajectory of one joint, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonics {
    pub offset_rad: f64,
    pub amplitude_rad: [f64; 2],
    pub phase_rad: [f64; 2],
}

/// `tau_j = sum_k c[j][k] * theta_k(t - delay) + d[j][k] * omega_k(t - delay)`
/// in Nm/kg, joints in [`Joint::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueMap {
    pub c: [[f64; 4]; 4],
    pub d: [[f64; 4]; 4],
    pub delay_s: f64,
}

impl TorqueMap {
    pub fn zero() -> Self {
        Self {
            c: [[0.0; 4]; 4],
            d: [[0.0; 4]; 4],
            delay_s: 0.0,
        }
    }

    pub fn identity_on_angles() -> Self {
        let mut m = Self::zero();
        for j in 0..4 {
            m.c[j][j] = 1.0;
        }
        m
    }

    pub fn with_delay(mut self, delay_s: f64) -> Self {
        self.delay_s = delay_s;
        self
    }
}

impl Default for TorqueMap {
    /// Restoring springs with light damping and a hip-to-knee coupling.
    /// Under a spring-like rule, lagging the torque behind the motion moves
    /// power towards positive values.
    fn default() -> Self {
        let mut m = Self::zero();
        for joint in Joint::ALL {
            let j = joint.index();
            if joint.is_hip() {
                m.c[j][j] = -0.6;
                m.d[j][j] = 0.04;
            } else {
                m.c[j][j] = -0.5;
                m.d[j][j] = 0.03;
            }
        }
        m.c[Joint::KneeL.index()][Joint::HipL.index()] = 0.2;
        m.c[Joint::KneeR.index()][Joint::HipR.index()] = 0.2;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub subject_id: String,
    pub condition: Condition,
    pub stride_s: f64,
    pub n_strides: usize,
    pub sample_rate_hz: f64,
    pub harmonics: [Harmonics; 4],
    pub torque_map: TorqueMap,
    pub noise_sd: f64,
    pub seed: u64,
    pub body_mass_kg: f64,
}

fn default_harmonics() -> [Harmonics; 4] {
    let hip = Harmonics {
        offset_rad: 0.1,
        amplitude_rad: [0.45, 0.08],
        phase_rad: [0.0, 0.5],
    };
    let knee = Harmonics {
        offset_rad: 0.45,
        amplitude_rad: [0.3, 0.15],
        phase_rad: [-1.2, 0.8],
    };
    // right side runs half a stride behind the left
    let half = |h: Harmonics| Harmonics {
        phase_rad: [h.phase_rad[0] + PI, h.phase_rad[1]],
        ..h
    };
    [hip, half(hip), knee, half(knee)]
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subject_id: "SYN01".into(),
            condition: Condition::LevelGround { speed_mps: 1.2 },
            stride_s: 1.2,
            n_strides: 10,
            sample_rate_hz: WORKING_RATE_HZ,
            harmonics: default_harmonics(),
            torque_map: TorqueMap::default(),
            noise_sd: 0.0,
            seed: 0,
            body_mass_kg: 70.0,
        }
    }
}

/// Amplitude multiplier for a walking condition: faster walking and steeper
/// inclines widen the joint excursions.
pub fn amplitude_scale(condition: &Condition) -> f64 {
    match *condition {
        Condition::LevelGround { speed_mps } => 0.5 + speed_mps / 2.4,
        Condition::Ramp { grade_deg } => (1.0 + grade_deg / 40.0).max(0.25),
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.condition.validate().is_err() {
            return bad(format!("condition {:?}", self.condition));
        }
        if !(self.stride_s.is_finite() && self.stride_s > 0.0) {
            return bad(format!("stride_s must be > 0, got {}", self.stride_s));
        }
        if self.n_strides == 0 {
            return bad("n_strides must be > 0".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!(
                "sample_rate_hz must be > 0, got {}",
                self.sample_rate_hz
            ));
        }
        let finite = self.harmonics.iter().all(|h| {
            h.offset_rad.is_finite()
                && h.amplitude_rad
                    .iter()
                    .chain(&h.phase_rad)
                    .all(|v| v.is_finite())
        });
        if !finite {
            return bad("harmonic parameters must be finite".into());
        }
        let m = &self.torque_map;
        if !m.c.iter().chain(&m.d).flatten().all(|v| v.is_finite()) {
            return bad("torque map coefficients must be finite".into());
        }
        if !(m.delay_s.is_finite() && m.delay_s >= 0.0) {
            return bad(format!("torque map delay must be >= 0, got {}", m.delay_s));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(self.body_mass_kg.is_finite() && self.body_mass_kg > 0.0) {
            return bad(format!(
                "body_mass_kg must be > 0, got {}",
                self.body_mass_kg
            ));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.n_strides as f64 * self.stride_s * self.sample_rate_hz).round() as usize
    }

    pub fn end_s(&self) -> f64 {
        (self.sample_count().saturating_sub(1)) as f64 / self.sample_rate_hz
    }

    /// Joint angles at time `t`, defined for all real `t`.
    pub fn angles_at(&self, t: f64) -> [f64; 4] {
        let s = amplitude_scale(&self.condition);
        let w = 2.0 * PI / self.stride_s;
        self.harmonics.map(|h| {
            let mut v = 0.0;
            for k in 0..2 {
                let order = (k + 1) as f64;
                v += h.amplitude_rad[k] * (order * w * t + h.phase_rad[k]).sin();
            }
            h.offset_rad + s * v
        })
    }

    /// Analytic time derivative of [`Self::angles_at`].
    pub fn velocities_at(&self, t: f64) -> [f64; 4] {
        let s = amplitude_scale(&self.condition);
        let w = 2.0 * PI / self.stride_s;
        self.harmonics.map(|h| {
            let mut v = 0.0;
            for k in 0..2 {
                let order = (k + 1) as f64;
                v += h.amplitude_rad[k] * order * w * (order * w * t + h.phase_rad[k]).cos();
            }
            s * v
        })
    }

    fn torque_unchecked(&self, t: f64) -> [f64; 4] {
        let m = &self.torque_map;
        let td = t - m.delay_s;
        let theta = self.angles_at(td);
        let omega = self.velocities_at(td);
        std::array::from_fn(|j| {
            let mut tau = 0.0;
            for k in 0..4 {
                tau += m.c[j][k] * theta[k] + m.d[j][k] * omega[k];
            }
            tau
        })
    }
}

/// Noise-free reference moments (Nm/kg) at time `t`.
pub fn oracle_torque(spec: &SynthSpec, t: f64) -> Result<[f64; 4], SynthError> {
    spec.validate()?;
    let end = spec.end_s();
    // half a sample of slack absorbs i/rate rounding at the edges
    let slack = 0.5 / spec.sample_rate_hz;
    if !(t >= -slack && t <= end + slack) {
        return Err(SynthError::OutOfRange { t, end });
    }
    Ok(spec.torque_unchecked(t))
}

/// Build the trial described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Trial, SynthError> {
    spec.validate()?;
    let n = spec.sample_count();
    let time_s: Vec<f64> = (0..n).map(|i| i as f64 / spec.sample_rate_hz).collect();
    let mut angles: JointChannels = Default::default();
    let mut velocities: JointChannels = Default::default();
    let mut moments: JointChannels = Default::default();
    for &t in &time_s {
        let (a, v, m) = (
            spec.angles_at(t),
            spec.velocities_at(t),
            spec.torque_unchecked(t),
        );
        for j in 0..4 {
            angles[j].push(a[j]);
            velocities[j].push(v[j]);
            moments[j].push(m[j]);
        }
    }
    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal =
            Normal::new(0.0, spec.noise_sd).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        for channel in moments.iter_mut() {
            for v in channel.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(Trial {
        subject_id: spec.subject_id.clone(),
        condition: spec.condition,
        sample_rate_hz: spec.sample_rate_hz,
        time_s,
        angles_rad: angles,
        velocities_rad_s: Some(velocities),
        gt_moments_nm_per_kg: Some(moments),
        body_mass_kg: Some(spec.body_mass_kg),
    })
}

/// Specs for a small multi-condition dataset sharing one subject and seed.
pub fn condition_grid(base: &SynthSpec, conditions: &[Condition]) -> Vec<SynthSpec> {
    conditions
        .iter()
        .enumerate()
        .map(|(i, c)| SynthSpec {
            condition: *c,
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}

/// A base spec replicated over several walking conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub base: SynthSpec,
    pub conditions: Vec<Condition>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            base: SynthSpec::default(),
            conditions: vec![
                Condition::LevelGround { speed_mps: 0.8 },
                Condition::LevelGround { speed_mps: 1.2 },
                Condition::LevelGround { speed_mps: 1.6 },
                Condition::Ramp { grade_deg: 5.0 },
                Condition::Ramp { grade_deg: -5.0 },
            ],
        }
    }
}

impl DatasetSpec {
    pub fn specs(&self) -> Vec<SynthSpec> {
        condition_grid(&self.base, &self.conditions)
    }
}

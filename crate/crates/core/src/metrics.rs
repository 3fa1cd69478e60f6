//! Evaluation battery: amplitude rescaling, normalized cross-correlation and
//! the mean / mean-positive / mean-negative joint power decomposition.
//!
//! Power metrics over a series `p` of `n` samples:
//!
//! ```text
//! MPP = (1/n) * sum(p_i for p_i > 0)
//! MNP = (1/n) * sum(p_i for p_i < 0)
//! MP  = MPP + MNP
//! ```
//!
//! Both partial sums share the total count `n`, so `MP` is the plain mean and
//! exact zeros count towards `n` but neither sum.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{GaitCycleSet, CYCLE_POINTS};
use crate::ingest::{Condition, Environment, Joint};
use crate::signal::{SignalError, UniformSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction amplitude is below 1e-9; cannot rescale")]
    DegeneratePrediction,
    #[error("input has (near) zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),
    #[error("trim of {trim} leaves nothing of {len} samples")]
    TrimExceedsLength { trim: usize, len: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("lag window of {max_lag} exceeds cycle of {period} points")]
    InvalidLag { max_lag: usize, period: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Hip or knee, pooling left and right sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointGroup {
    Hip,
    Knee,
}

impl JointGroup {
    pub const ALL: [JointGroup; 2] = [JointGroup::Hip, JointGroup::Knee];

    pub fn of(joint: Joint) -> Self {
        if joint.is_hip() {
            JointGroup::Hip
        } else {
            JointGroup::Knee
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            JointGroup::Hip => "hip",
            JointGroup::Knee => "knee",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Torque,
    Power,
}

impl Quantity {
    pub const ALL: [Quantity; 2] = [Quantity::Torque, Quantity::Power];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Torque => "torque",
            Quantity::Power => "power",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channel name used in cycle sets, e.g. `hip_l_torque`.
pub fn channel_name(joint: Joint, quantity: Quantity) -> String {
    format!("{joint}_{quantity}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub values: Vec<f64>,
    pub gain: f64,
}

/// Scale `pred` by `max|gt| / max|pred|`. Pure gain, so zeros and signs stay put.
pub fn rescale_to_gt(pred: &[f64], gt: &[f64]) -> Result<Rescaled, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let pred_peak = peak(pred);
    if pred_peak <= 1e-9 {
        return Err(MetricsError::DegeneratePrediction);
    }
    let gain = peak(gt) / pred_peak;
    Ok(Rescaled {
        values: pred.iter().map(|p| gain * p).collect(),
        gain,
    })
}

/// Zero-lag normalized (Pearson-form) correlation, clamped to [-1, 1].
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa / n <= 1e-12 || sbb / n <= 1e-12 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaggedCorrelation {
    pub r: f64,
    /// Positive when `a` trails `b`.
    pub lag_pct: i32,
}

/// Sweep circular lags of up to `max_lag` points over one cycle profile and
/// report the best correlation. The closing 100% point duplicates 0% and is
/// left out of the cycle. Ties go to the smaller |lag|.
pub fn lagged_cross_correlation(
    a: &[f64],
    b: &[f64],
    max_lag: usize,
) -> Result<LaggedCorrelation, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let period = if a.len() == CYCLE_POINTS {
        CYCLE_POINTS - 1
    } else {
        a.len()
    };
    if max_lag >= period {
        return Err(MetricsError::InvalidLag { max_lag, period });
    }
    let a = &a[..period];
    let mut best = LaggedCorrelation {
        r: cross_correlation(a, &b[..period])?,
        lag_pct: 0,
    };
    let mut shifted = vec![0.0; period];
    for mag in 1..=max_lag as i32 {
        for lag in [mag, -mag] {
            for (k, s) in shifted.iter_mut().enumerate() {
                *s = b[(k as i32 - lag).rem_euclid(period as i32) as usize];
            }
            let r = cross_correlation(a, &shifted)?;
            if r > best.r {
                best = LaggedCorrelation { r, lag_pct: lag };
            }
        }
    }
    Ok(best)
}

/// `p_i = torque_i * velocity_i` for `i >= trim`.
pub fn power_series(
    torque: &UniformSeries,
    velocity: &UniformSeries,
    trim: usize,
) -> Result<UniformSeries, MetricsError> {
    if torque.len() != velocity.len() {
        return Err(MetricsError::LengthMismatch(torque.len(), velocity.len()));
    }
    if (torque.rate_hz() - velocity.rate_hz()).abs() > 1e-9 * torque.rate_hz() {
        return Err(MetricsError::RateMismatch(
            torque.rate_hz(),
            velocity.rate_hz(),
        ));
    }
    if trim >= torque.len() {
        return Err(MetricsError::TrimExceedsLength {
            trim,
            len: torque.len(),
        });
    }
    let values = torque.values()[trim..]
        .iter()
        .zip(&velocity.values()[trim..])
        .map(|(t, w)| t * w)
        .collect();
    Ok(UniformSeries::new(
        torque.rate_hz(),
        torque.time_at(trim),
        values,
    )?)
}

/// Power decomposition of one series, W/kg when torque is mass-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub mp_w_per_kg: f64,
    pub mpp_w_per_kg: f64,
    pub mnp_w_per_kg: f64,
    pub n: usize,
    pub n_p: usize,
    pub n_n: usize,
}

pub fn power_summary(p: &[f64]) -> Result<PowerSummary, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let (mut pos, mut neg, mut n_p, mut n_n) = (0.0, 0.0, 0, 0);
    for &v in p {
        if v > 0.0 {
            pos += v;
            n_p += 1;
        } else if v < 0.0 {
            neg += v;
            n_n += 1;
        }
    }
    let n = p.len();
    let mpp = pos / n as f64;
    let mnp = neg / n as f64;
    Ok(PowerSummary {
        mp_w_per_kg: mpp + mnp,
        mpp_w_per_kg: mpp,
        mnp_w_per_kg: mnp,
        n,
        n_p,
        n_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and population SD.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, sd }
    }
}

/// Per-cycle power summaries averaged across cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclePowerStats {
    pub mp: MeanSd,
    pub mpp: MeanSd,
    pub mnp: MeanSd,
    pub cycles: usize,
}

impl CyclePowerStats {
    pub fn from_segments(segments: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let summaries = segments
            .iter()
            .map(|s| power_summary(s))
            .collect::<Result<Vec<_>, _>>()?;
        if summaries.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        let pick =
            |f: fn(&PowerSummary) -> f64| MeanSd::of(&summaries.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            mp: pick(|s| s.mp_w_per_kg),
            mpp: pick(|s| s.mpp_w_per_kg),
            mnp: pick(|s| s.mnp_w_per_kg),
            cycles: summaries.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBasis {
    /// Correlate the ensemble-mean profiles.
    #[default]
    MeanProfile,
    /// Correlate cycle by cycle and average the coefficients.
    PerCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub basis: CorrelationBasis,
    /// `Some(k)` sweeps circular lags of up to `k`% of the cycle.
    pub max_lag_pct: Option<usize>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            basis: CorrelationBasis::MeanProfile,
            max_lag_pct: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub joint: Joint,
    pub quantity: Quantity,
    pub r: f64,
    pub lag_pct: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationReport {
    pub fn get(&self, joint: Joint, quantity: Quantity) -> Option<&CorrelationEntry> {
        self.entries
            .iter()
            .find(|e| e.joint == joint && e.quantity == quantity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointPower {
    pub joint: Joint,
    pub stats: CyclePowerStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionEvaluation {
    pub correlations: CorrelationReport,
    pub pred_power: Vec<JointPower>,
    pub gt_power: Vec<JointPower>,
}

fn correlate(a: &[f64], b: &[f64], cfg: &CorrelationConfig) -> Result<(f64, i32), MetricsError> {
    match cfg.max_lag_pct {
        Some(max_lag) => {
            let l = lagged_cross_correlation(a, b, max_lag)?;
            Ok((l.r, l.lag_pct))
        }
        None => Ok((cross_correlation(a, b)?, 0)),
    }
}

/// Correlations and per-cycle power statistics for one condition. Both sets
/// must carry `<joint>_torque` and `<joint>_power` channels for every joint.
pub fn evaluate_condition(
    pred: &GaitCycleSet,
    gt: &GaitCycleSet,
    cfg: &CorrelationConfig,
) -> Result<ConditionEvaluation, MetricsError> {
    let mut entries = Vec::new();
    let mut pred_power = Vec::new();
    let mut gt_power = Vec::new();
    for joint in Joint::ALL {
        for quantity in Quantity::ALL {
            let name = channel_name(joint, quantity);
            let missing =
                |side: &str| MetricsError::ChannelMismatch(format!("{side} lacks `{name}`"));
            let p = pred.channel(&name).ok_or_else(|| missing("prediction"))?;
            let g = gt.channel(&name).ok_or_else(|| missing("ground truth"))?;
            if p.profiles.len() != g.profiles.len() {
                return Err(MetricsError::ChannelMismatch(format!(
                    "`{name}` has {} predicted vs {} reference cycles",
                    p.profiles.len(),
                    g.profiles.len()
                )));
            }
            let (r, lag_pct) = match cfg.basis {
                CorrelationBasis::MeanProfile => {
                    let scaled = rescale_to_gt(&p.mean_profile, &g.mean_profile)?;
                    correlate(&scaled.values, &g.mean_profile, cfg)?
                }
                CorrelationBasis::PerCycle => {
                    let per = p
                        .profiles
                        .iter()
                        .zip(&g.profiles)
                        .map(|(a, b)| correlate(a, b, cfg))
                        .collect::<Result<Vec<_>, _>>()?;
                    let n = per.len() as f64;
                    let r = per.iter().map(|x| x.0).sum::<f64>() / n;
                    let lag = (per.iter().map(|x| f64::from(x.1)).sum::<f64>() / n).round() as i32;
                    (r, lag)
                }
            };
            entries.push(CorrelationEntry {
                joint,
                quantity,
                r,
                lag_pct,
            });
            if quantity == Quantity::Power {
                pred_power.push(JointPower {
                    joint,
                    stats: CyclePowerStats::from_segments(&p.segments)?,
                });
                gt_power.push(JointPower {
                    joint,
                    stats: CyclePowerStats::from_segments(&g.segments)?,
                });
            }
        }
    }
    Ok(ConditionEvaluation {
        correlations: CorrelationReport { entries },
        pred_power,
        gt_power,
    })
}

/// Mean of per-condition values within each environment.
pub fn environment_means(values: &[(Condition, f64)]) -> BTreeMap<Environment, f64> {
    let mut acc: BTreeMap<Environment, (f64, usize)> = BTreeMap::new();
    for (c, v) in values {
        let e = acc.entry(c.environment()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(env, (sum, n))| (env, sum / n as f64))
        .collect()
}

/// Round to two decimals, half away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::CycleSpan;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn series(v: Vec<f64>) -> UniformSeries {
        UniformSeries::new(100.0, 0.0, v).unwrap()
    }

    #[test]
    fn rescale_cases() {
        let gt = vec![0.0, 1.2, -0.6, 0.3];
        let r = rescale_to_gt(&gt, &gt).unwrap();
        assert_eq!(r.gain, 1.0);
        assert_eq!(r.values, gt);

        let half: Vec<f64> = gt.iter().map(|v| 0.5 * v).collect();
        assert_eq!(rescale_to_gt(&half, &gt).unwrap().values, gt);

        let pred = vec![0.0, 0.8, -0.2, 0.1];
        let r = rescale_to_gt(&pred, &gt).unwrap();
        assert!((r.gain - 1.5).abs() < 1e-15);

        assert_eq!(
            rescale_to_gt(&[0.0; 4], &gt),
            Err(MetricsError::DegeneratePrediction)
        );
    }

    #[test]
    fn correlation_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((cross_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cross_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        // means 2.5 and 2.75; deviations a: -1.5 -.5 .5 1.5, b: -1.75 -.75 .25 2.25
        // sab = 2.625 + .375 + .125 + 3.375 = 6.5; saa = 5; sbb = 8.75
        let expected = 6.5 / (5.0f64 * 8.75).sqrt();
        let r = cross_correlation(&a, &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.9827).abs() < 1e-4);
        assert_eq!(
            cross_correlation(&a, &[1.0; 4]),
            Err(MetricsError::ZeroVariance)
        );
    }

    #[test]
    fn lag_sweep_finds_constructed_shift() {
        let gt: Vec<f64> = (0..CYCLE_POINTS)
            .map(|k| {
                (2.0 * PI * k as f64 / 100.0).sin() + 0.4 * (4.0 * PI * k as f64 / 100.0).cos()
            })
            .collect();
        let pred: Vec<f64> = (0..CYCLE_POINTS).map(|k| gt[(k + 100 - 5) % 100]).collect();
        let zero = cross_correlation(&pred, &gt).unwrap();
        assert!(zero < 1.0);
        let l = lagged_cross_correlation(&pred, &gt, 20).unwrap();
        assert_eq!(l.lag_pct, 5);
        assert!((l.r - 1.0).abs() < 1e-12);
        assert!(matches!(
            lagged_cross_correlation(&pred, &gt, 100),
            Err(MetricsError::InvalidLag { .. })
        ));
    }

    #[test]
    fn power_series_cases() {
        let tau = series(vec![1.0, -2.0, 3.0]);
        assert_eq!(
            power_series(&tau, &series(vec![0.0; 3]), 0)
                .unwrap()
                .values(),
            &[0.0; 3]
        );
        assert_eq!(
            power_series(&tau, &series(vec![1.0; 3]), 0)
                .unwrap()
                .values(),
            &[1.0, -2.0, 3.0]
        );
        let p = power_series(&tau, &series(vec![1.0; 3]), 1).unwrap();
        assert_eq!(p.values(), &[-2.0, 3.0]);
        assert_eq!(p.start_s(), 0.01);
        assert_eq!(
            power_series(&tau, &series(vec![1.0; 2]), 0),
            Err(MetricsError::LengthMismatch(3, 2))
        );
        assert!(power_series(&tau, &series(vec![1.0; 3]), 3).is_err());
    }

    #[test]
    fn power_of_sin_and_cos_is_half_double_angle() {
        let n = 100;
        let t: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        let tau = series(t.iter().map(|x| x.sin()).collect());
        let w = series(t.iter().map(|x| x.cos()).collect());
        let p = power_series(&tau, &w, 0).unwrap();
        for (v, x) in p.values().iter().zip(&t) {
            assert!((v - 0.5 * (2.0 * x).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn power_summary_hand_case() {
        let s = power_summary(&[1.0, -2.0, 3.0]).unwrap();
        assert!((s.mpp_w_per_kg - 4.0 / 3.0).abs() < 1e-15);
        assert!((s.mnp_w_per_kg + 2.0 / 3.0).abs() < 1e-15);
        assert!((s.mp_w_per_kg - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((s.n, s.n_p, s.n_n), (3, 2, 1));

        let s = power_summary(&[0.5, 1.5, 0.0, 2.0]).unwrap();
        assert_eq!(s.mnp_w_per_kg, 0.0);
        assert_eq!(s.mp_w_per_kg, s.mpp_w_per_kg);
        assert_eq!(s.mp_w_per_kg, 1.0);
        assert_eq!((s.n, s.n_p, s.n_n), (4, 3, 0));

        assert_eq!(power_summary(&[]), Err(MetricsError::EmptySeries));
    }

    #[test]
    fn power_summary_of_sinusoid_matches_integral() {
        // p = sin(2x)/2 over one period: mean positive part = 1/(2*pi).
        let p: Vec<f64> = (0..100)
            .map(|i| 0.5 * (2.0 * PI * i as f64 / 100.0).sin())
            .collect();
        let s = power_summary(&p).unwrap();
        let target = 1.0 / (2.0 * PI);
        assert!((s.mpp_w_per_kg - target).abs() < 0.002);
        assert!((s.mnp_w_per_kg + target).abs() < 0.002);
        assert!(s.mp_w_per_kg.abs() < 0.002);
    }

    #[test]
    fn environment_means_reproduce_published_rounding() {
        let level = [0.6, 1.2, 1.8, 2.0, 2.5].map(|v| Condition::LevelGround { speed_mps: v });
        let hip = [0.78, 0.92, 0.94, 0.92, 0.91];
        let rows: Vec<(Condition, f64)> = level.into_iter().zip(hip).collect();
        let m = environment_means(&rows);
        assert!((m[&Environment::LevelGround] - 0.894).abs() < 1e-12);
        assert_eq!(round2(m[&Environment::LevelGround]), 0.89);

        let ramps = vec![
            (Condition::Ramp { grade_deg: 5.0 }, 0.71),
            (Condition::Ramp { grade_deg: 10.0 }, 0.66),
            (Condition::Ramp { grade_deg: -5.0 }, 0.76),
            (Condition::Ramp { grade_deg: -10.0 }, 0.71),
        ];
        let m = environment_means(&ramps);
        assert_eq!(round2(m[&Environment::Incline]), 0.69);
        assert_eq!(round2(m[&Environment::Decline]), 0.74);
    }

    fn cycle_set(
        torque: &[Vec<f64>; 4],
        power: &[Vec<f64>; 4],
        spans: &[CycleSpan],
    ) -> GaitCycleSet {
        let mut chans = Vec::new();
        for j in Joint::ALL {
            chans.push((
                channel_name(j, Quantity::Torque),
                torque[j.index()].as_slice(),
            ));
            chans.push((
                channel_name(j, Quantity::Power),
                power[j.index()].as_slice(),
            ));
        }
        GaitCycleSet::build(spans, &chans, 100.0).unwrap()
    }

    #[test]
    fn evaluate_identical_sets() {
        let n = 500;
        let spans: Vec<CycleSpan> = (0..4)
            .map(|k| CycleSpan {
                start: 10 + 110 * k,
                end: 120 + 110 * k,
            })
            .collect();
        let torque: [Vec<f64>; 4] = std::array::from_fn(|j| {
            (0..n)
                .map(|i| (i as f64 * 0.057 + j as f64).sin())
                .collect()
        });
        let power: [Vec<f64>; 4] = std::array::from_fn(|j| {
            (0..n)
                .map(|i| (i as f64 * 0.11 + j as f64).cos() * 0.3 + 0.05)
                .collect()
        });
        let set = cycle_set(&torque, &power, &spans);
        let ev = evaluate_condition(&set, &set, &CorrelationConfig::default()).unwrap();
        assert!(ev
            .correlations
            .entries
            .iter()
            .all(|e| (e.r - 1.0).abs() < 1e-12));
        assert_eq!(ev.correlations.entries.len(), 8);
        assert_eq!(ev.pred_power, ev.gt_power);
        assert_eq!(ev.pred_power[0].stats.cycles, 4);

        let per_cycle = CorrelationConfig {
            basis: CorrelationBasis::PerCycle,
            max_lag_pct: Some(10),
        };
        let ev = evaluate_condition(&set, &set, &per_cycle).unwrap();
        assert!(ev
            .correlations
            .entries
            .iter()
            .all(|e| (e.r - 1.0).abs() < 1e-12 && e.lag_pct == 0));
    }

    #[test]
    fn evaluate_reports_missing_channels() {
        let spans = [CycleSpan { start: 0, end: 50 }];
        let x: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let a = GaitCycleSet::build(&spans, &[("hip_l_torque".into(), &x)], 100.0).unwrap();
        assert!(matches!(
            evaluate_condition(&a, &a, &CorrelationConfig::default()),
            Err(MetricsError::ChannelMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn mp_identity(p in prop::collection::vec(-100.0f64..100.0, 1..500)) {
            let s = power_summary(&p).unwrap();
            prop_assert!(s.mpp_w_per_kg >= 0.0 && s.mnp_w_per_kg <= 0.0);
            prop_assert_eq!(s.mp_w_per_kg, s.mpp_w_per_kg + s.mnp_w_per_kg);
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            prop_assert!((s.mp_w_per_kg - mean).abs() <= 1e-12 * (1.0 + mean.abs()) * p.len() as f64);
            prop_assert!(s.n_p + s.n_n <= s.n);
        }

        #[test]
        fn correlation_affine_invariance(
            a in prop::collection::vec(-10.0f64..10.0, 20),
            b in prop::collection::vec(-10.0f64..10.0, 20),
            scale in 0.1f64..10.0,
            shift in -10.0f64..10.0,
        ) {
            let r = cross_correlation(&a, &b);
            prop_assume!(r.is_ok());
            let r = r.unwrap();
            let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            prop_assert!((cross_correlation(&a2, &b).unwrap() - r).abs() < 1e-9);
            let neg: Vec<f64> = b.iter().map(|v| -v).collect();
            prop_assert!((cross_correlation(&a, &neg).unwrap() + r).abs() < 1e-12);
        }

        #[test]
        fn rescale_preserves_signs(pred in prop::collection::vec(-5.0f64..5.0, 10), gt in prop::collection::vec(-5.0f64..5.0, 10)) {
            prop_assume!(pred.iter().any(|v| v.abs() > 1e-6) && gt.iter().any(|v| v.abs() > 1e-6));
            let r = rescale_to_gt(&pred, &gt).unwrap();
            for (a, b) in pred.iter().zip(&r.values) {
                prop_assert_eq!(a.signum(), b.signum());
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }

        #[test]
        fn delayed_power_equals_power_of_preshifted(v in prop::collection::vec(-3.0f64..3.0, 30..60), k in 0usize..10) {
            let n = v.len();
            let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
            let tau = series(v.clone());
            let shifted = crate::signal::delay_shift(&tau, k as f64 / 100.0).unwrap();
            let p = power_series(&shifted.series, &series(w.clone()), shifted.trim).unwrap();
            let direct: Vec<f64> = (k..n).map(|i| v[i - k] * w[i]).collect();
            prop_assert_eq!(p.values(), direct.as_slice());
        }
    }
}

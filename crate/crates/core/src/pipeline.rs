//! End-to-end path from a trial and a model to cycle-level comparisons:
//! inference, torque scaling, optional output delay, power, segmentation and
//! evaluation. The delay sweep reuses [`analyze_delayed`], so its zero-delay
//! entry and [`analyze`] run exactly the same code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecn::{
    build_windows, EcnError, EcnModel, TrainSample, DEFAULT_DELAY_S, FEATURE_ORDER_TAG,
    HISTORY_STEPS, TAU_MAX_NM,
};
use crate::gait::{ensemble, segment_trial, CycleSpan, GaitCycleSet, GaitError, SegmentConfig};
use crate::ingest::{Condition, Environment, Joint, JointChannels, Trial};
use crate::metrics::{
    channel_name, environment_means, evaluate_condition, power_summary, rescale_to_gt,
    ConditionEvaluation, CorrelationConfig, JointGroup, MetricsError, PowerSummary, Quantity,
};
use crate::signal::{
    central_diff, delay_shift, normalize_clip_torque, resample, SignalError, UniformSeries,
    WORKING_RATE_HZ,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ecn(#[from] EcnError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("trial {0} has no velocities")]
    MissingVelocities(String),
    #[error("trial {0} has no reference moments")]
    MissingMoments(String),
    #[error("trial {0} has no body mass")]
    MissingBodyMass(String),
    #[error("prediction covers {got} samples, trial has {expected}")]
    PredictionLength { expected: usize, got: usize },
    #[error("no complete cycle starts at or after sample {0}")]
    NoValidCycles(usize),
    #[error("invalid delay list: {0}")]
    InvalidDelays(String),
}

fn trial_name(trial: &Trial) -> String {
    format!("{}/{}", trial.subject_id, trial.condition.label())
}

/// Bring a trial onto the 100 Hz working grid. Velocities are resampled when
/// the source has them and otherwise differentiated from the resampled angles.
pub fn to_working_rate(trial: &Trial) -> Result<Trial, PipelineError> {
    let rate = trial.sample_rate_hz;
    let start = trial.start_s();
    let move_channels = |chans: &JointChannels| -> Result<JointChannels, SignalError> {
        let mut out: JointChannels = Default::default();
        for (o, c) in out.iter_mut().zip(chans) {
            *o = resample(
                &UniformSeries::new(rate, start, c.clone())?,
                WORKING_RATE_HZ,
            )?
            .into_values();
        }
        Ok(out)
    };
    let angles = move_channels(&trial.angles_rad)?;
    let velocities = match &trial.velocities_rad_s {
        Some(v) => move_channels(v)?,
        None => {
            let mut out: JointChannels = Default::default();
            for (o, a) in out.iter_mut().zip(&angles) {
                *o = central_diff(&UniformSeries::new(WORKING_RATE_HZ, start, a.clone())?)?
                    .into_values();
            }
            out
        }
    };
    let moments = trial
        .gt_moments_nm_per_kg
        .as_ref()
        .map(move_channels)
        .transpose()?;
    let n = angles[0].len();
    let grid = UniformSeries::new(WORKING_RATE_HZ, start, vec![0.0; n])?;
    Ok(Trial {
        subject_id: trial.subject_id.clone(),
        condition: trial.condition,
        sample_rate_hz: WORKING_RATE_HZ,
        time_s: (0..n).map(|i| grid.time_at(i)).collect(),
        angles_rad: angles,
        velocities_rad_s: Some(velocities),
        gt_moments_nm_per_kg: moments,
        body_mass_kg: trial.body_mass_kg,
    })
}

/// Training pairs for every window of a trial. Sample `k` belongs to trial
/// index `k + 3`; its target is the reference moment there in Nm, divided by
/// `tau_max_nm` and clipped.
pub fn training_samples(
    trial: &Trial,
    delay_s: f64,
    tau_max_nm: f64,
) -> Result<Vec<TrainSample>, PipelineError> {
    let gt = trial
        .gt_moments_nm_per_kg
        .as_ref()
        .ok_or_else(|| PipelineError::MissingMoments(trial_name(trial)))?;
    let mass = trial
        .body_mass_kg
        .ok_or_else(|| PipelineError::MissingBodyMass(trial_name(trial)))?;
    let windows = build_windows(trial, delay_s)?;
    windows
        .into_iter()
        .enumerate()
        .map(|(k, w)| {
            let i = k + HISTORY_STEPS - 1;
            let mut target = [0.0; 4];
            for (j, t) in target.iter_mut().enumerate() {
                *t = normalize_clip_torque(gt[j][i] * mass, tau_max_nm)?;
            }
            Ok(TrainSample::new(w, target)?)
        })
        .collect()
}

/// Normalized torque commands aligned with the trial samples. Entries before
/// `valid_from` have no full history window and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub normalized: JointChannels,
    pub valid_from: usize,
    pub tau_max_nm: f64,
}

pub fn infer_trial(
    trial: &Trial,
    model: &EcnModel,
    delay_input_s: f64,
) -> Result<Prediction, PipelineError> {
    model.ensure_feature_order(FEATURE_ORDER_TAG)?;
    let windows = build_windows(trial, delay_input_s)?;
    let outputs = model.predict_all(&windows)?;
    let valid_from = HISTORY_STEPS - 1;
    let normalized = std::array::from_fn(|j| {
        let mut v = vec![0.0; valid_from];
        v.extend(outputs.iter().map(|o| o[j]));
        v
    });
    Ok(Prediction {
        normalized,
        valid_from,
        tau_max_nm: model.tau_max_nm(),
    })
}

/// Stand-in prediction equal to the reference moments, with the same
/// warm-up gap as a real inference.
pub fn inject_ground_truth(trial: &Trial) -> Result<Prediction, PipelineError> {
    let gt = trial
        .gt_moments_nm_per_kg
        .as_ref()
        .ok_or_else(|| PipelineError::MissingMoments(trial_name(trial)))?;
    let valid_from = HISTORY_STEPS - 1;
    let normalized = std::array::from_fn(|j| {
        let mut v = gt[j].clone();
        let head = valid_from.min(v.len());
        v[..head].fill(0.0);
        v
    });
    Ok(Prediction {
        normalized,
        valid_from,
        tau_max_nm: TAU_MAX_NM,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub segment: SegmentConfig,
    pub correlation: CorrelationConfig,
    /// Value of the delay input feature during inference.
    pub delay_input_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            segment: SegmentConfig::default(),
            correlation: CorrelationConfig::default(),
            delay_input_s: DEFAULT_DELAY_S,
        }
    }
}

/// How normalized commands became Nm/kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TorqueScale {
    /// Per-joint gain matching the mean-profile peak of the reference.
    RescaledToReference { gains: [f64; 4] },
    /// `tau_max_nm / body_mass_kg` for every joint.
    BodyMass { gain: f64 },
}

impl TorqueScale {
    pub fn gains(&self) -> [f64; 4] {
        match *self {
            TorqueScale::RescaledToReference { gains } => gains,
            TorqueScale::BodyMass { gain } => [gain; 4],
        }
    }

    /// Rescale against reference moments over `spans` when they exist,
    /// otherwise fall back to body mass.
    pub fn fit(
        trial: &Trial,
        pred: &Prediction,
        spans: &[CycleSpan],
    ) -> Result<Self, PipelineError> {
        match &trial.gt_moments_nm_per_kg {
            Some(gt) => {
                let mut gains = [0.0; 4];
                for (j, g) in gains.iter_mut().enumerate() {
                    let p = GaitCycleSet::build(
                        spans,
                        &[("p".into(), &pred.normalized[j])],
                        trial.sample_rate_hz,
                    )?;
                    let r =
                        GaitCycleSet::build(spans, &[("r".into(), &gt[j])], trial.sample_rate_hz)?;
                    *g = rescale_to_gt(&p.channels[0].mean_profile, &r.channels[0].mean_profile)?
                        .gain;
                }
                Ok(TorqueScale::RescaledToReference { gains })
            }
            None => {
                let mass = trial
                    .body_mass_kg
                    .ok_or_else(|| PipelineError::MissingBodyMass(trial_name(trial)))?;
                Ok(TorqueScale::BodyMass {
                    gain: pred.tau_max_nm / mass,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointSummary {
    pub joint: Joint,
    pub summary: PowerSummary,
}

/// Everything computed for one trial at one output delay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAnalysis {
    pub subject_id: String,
    pub condition: Condition,
    pub delay_s: f64,
    /// Leading samples of the delayed torque without a value.
    pub trim: usize,
    pub valid_from: usize,
    pub scale: TorqueScale,
    pub cycles: Vec<CycleSpan>,
    /// Whole-series power of the scaled, delayed prediction.
    pub pred_power: Vec<JointSummary>,
    /// Whole-series reference power from `valid_from` on.
    pub gt_power: Option<Vec<JointSummary>>,
    pub pred_set: GaitCycleSet,
    pub gt_set: Option<GaitCycleSet>,
    pub evaluation: Option<ConditionEvaluation>,
}

/// Analyse an undelayed prediction.
pub fn analyze(
    trial: &Trial,
    pred: &Prediction,
    cfg: &EvalConfig,
) -> Result<TrialAnalysis, PipelineError> {
    analyze_delayed(trial, pred, None, 0.0, cfg)
}

/// Analyse `pred` after shifting the scaled torque `delay_s` later. With
/// `scale = None` the scale is fitted on cycles from `valid_from` on.
pub fn analyze_delayed(
    trial: &Trial,
    pred: &Prediction,
    scale: Option<TorqueScale>,
    delay_s: f64,
    cfg: &EvalConfig,
) -> Result<TrialAnalysis, PipelineError> {
    let n = trial.len();
    if let Some(bad) = pred.normalized.iter().find(|c| c.len() != n) {
        return Err(PipelineError::PredictionLength {
            expected: n,
            got: bad.len(),
        });
    }
    let vel = trial
        .velocities_rad_s
        .as_ref()
        .ok_or_else(|| PipelineError::MissingVelocities(trial_name(trial)))?;
    let rate = trial.sample_rate_hz;
    let seg = segment_trial(trial, &cfg.segment)?;
    let usable = |from: usize| -> Vec<CycleSpan> {
        seg.cycles
            .iter()
            .filter(|c| c.start >= from)
            .copied()
            .collect()
    };
    let scale = match scale {
        Some(s) => s,
        None => {
            let base = usable(pred.valid_from);
            if base.is_empty() {
                return Err(PipelineError::NoValidCycles(pred.valid_from));
            }
            TorqueScale::fit(trial, pred, &base)?
        }
    };
    let gains = scale.gains();

    let v0 = pred.valid_from;
    let t0 = trial.time_s.get(v0).copied().unwrap_or_default();
    let mut trim = 0;
    let mut pred_torque: JointChannels = Default::default();
    let mut pred_pw: JointChannels = Default::default();
    let mut pred_power = Vec::with_capacity(4);
    for joint in Joint::ALL {
        let j = joint.index();
        let scaled: Vec<f64> = pred.normalized[j][v0..]
            .iter()
            .map(|x| gains[j] * x)
            .collect();
        let shifted = delay_shift(&UniformSeries::new(rate, t0, scaled)?, delay_s)?;
        let velocity = UniformSeries::new(rate, t0, vel[j][v0..].to_vec())?;
        let p = crate::metrics::power_series(&shifted.series, &velocity, shifted.trim)?;
        trim = shifted.trim;
        pred_power.push(JointSummary {
            joint,
            summary: power_summary(p.values())?,
        });
        let mut tq = vec![0.0; v0];
        tq.extend_from_slice(shifted.series.values());
        let mut pw = vec![0.0; v0 + trim];
        pw.extend_from_slice(p.values());
        pred_torque[j] = tq;
        pred_pw[j] = pw;
    }

    let spans = usable(v0 + trim);
    if spans.is_empty() {
        return Err(PipelineError::NoValidCycles(v0 + trim));
    }
    let pred_set = cycle_set(&spans, &pred_torque, &pred_pw, rate)?;

    let (gt_power, gt_set, evaluation) = match &trial.gt_moments_nm_per_kg {
        Some(gt) => {
            let gt_pw: JointChannels =
                std::array::from_fn(|j| gt[j].iter().zip(&vel[j]).map(|(t, w)| t * w).collect());
            let summaries = Joint::ALL
                .into_iter()
                .map(|joint| {
                    Ok(JointSummary {
                        joint,
                        summary: power_summary(&gt_pw[joint.index()][v0..])?,
                    })
                })
                .collect::<Result<Vec<_>, MetricsError>>()?;
            let gt_set = cycle_set(&spans, gt, &gt_pw, rate)?;
            let ev = evaluate_condition(&pred_set, &gt_set, &cfg.correlation)?;
            (Some(summaries), Some(gt_set), Some(ev))
        }
        None => (None, None, None),
    };

    Ok(TrialAnalysis {
        subject_id: trial.subject_id.clone(),
        condition: trial.condition,
        delay_s,
        trim,
        valid_from: v0,
        scale,
        cycles: spans,
        pred_power,
        gt_power,
        pred_set,
        gt_set,
        evaluation,
    })
}

fn cycle_set(
    spans: &[CycleSpan],
    torque: &JointChannels,
    power: &JointChannels,
    rate: f64,
) -> Result<GaitCycleSet, GaitError> {
    let mut chans: Vec<(String, &[f64])> = Vec::with_capacity(8);
    for joint in Joint::ALL {
        chans.push((
            channel_name(joint, Quantity::Torque),
            &torque[joint.index()],
        ));
        chans.push((channel_name(joint, Quantity::Power), &power[joint.index()]));
    }
    GaitCycleSet::build(spans, &chans, rate)
}

/// Correlation table layout: rows hip/knee x torque/power, one column per condition,
/// each cell the mean over trials and both sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub conditions: Vec<Condition>,
    pub rows: Vec<TableRow>,
    pub environments: Vec<Environment>,
    pub environment_rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub group: JointGroup,
    pub quantity: Quantity,
    pub values: Vec<Option<f64>>,
}

pub fn correlation_table(analyses: &[&TrialAnalysis]) -> CorrelationTable {
    let mut conditions: Vec<Condition> = Vec::new();
    for a in analyses {
        if a.evaluation.is_some() && !conditions.iter().any(|c| c.label() == a.condition.label()) {
            conditions.push(a.condition);
        }
    }
    conditions.sort_by(|a, b| {
        a.order_key()
            .partial_cmp(&b.order_key())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut rows = Vec::new();
    let mut environment_rows = Vec::new();
    let mut environments: Vec<Environment> = conditions.iter().map(|c| c.environment()).collect();
    environments.sort();
    environments.dedup();
    for group in JointGroup::ALL {
        for quantity in Quantity::ALL {
            let values: Vec<Option<f64>> = conditions
                .iter()
                .map(|cond| {
                    let rs: Vec<f64> = analyses
                        .iter()
                        .filter(|a| a.condition.label() == cond.label())
                        .filter_map(|a| a.evaluation.as_ref())
                        .flat_map(|ev| ev.correlations.entries.iter())
                        .filter(|e| JointGroup::of(e.joint) == group && e.quantity == quantity)
                        .map(|e| e.r)
                        .collect();
                    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
                })
                .collect();
            let pairs: Vec<(Condition, f64)> = conditions
                .iter()
                .zip(&values)
                .filter_map(|(c, v)| v.map(|v| (*c, v)))
                .collect();
            let means: BTreeMap<Environment, f64> = environment_means(&pairs);
            environment_rows.push(TableRow {
                group,
                quantity,
                values: environments.iter().map(|e| means.get(e).copied()).collect(),
            });
            rows.push(TableRow {
                group,
                quantity,
                values,
            });
        }
    }
    CorrelationTable {
        conditions,
        rows,
        environments,
        environment_rows,
    }
}

/// Mean and SD cycle profile of one channel, for plotting.
pub fn channel_profile(set: &GaitCycleSet, name: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    set.channel(name)
        .map(|c| (c.mean_profile.clone(), c.sd_profile.clone()))
}

/// Pool the cycle profiles of several sets into one mean and SD profile.
pub fn pooled_profile(sets: &[&GaitCycleSet], name: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    let profiles: Vec<Vec<f64>> = sets
        .iter()
        .filter_map(|s| s.channel(name))
        .flat_map(|c| c.profiles.iter().cloned())
        .collect();
    ensemble(&profiles).ok()
}

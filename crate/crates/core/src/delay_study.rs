//! Delay injection: shift the inferred torque later by fixed intervals while
//! the joint velocity stays put, then compare power against the undelayed
//! baseline and the reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecn::EcnModel;
use crate::ingest::{Condition, Joint, Trial};
use crate::metrics::{channel_name, CyclePowerStats, PowerSummary, Quantity};
use crate::pipeline::{
    analyze_delayed, infer_trial, EvalConfig, PipelineError, Prediction, TorqueScale, TrialAnalysis,
};

pub const DEFAULT_DELAYS_S: [f64; 4] = [0.0, 0.05, 0.10, 0.15];

/// 1.2 m/s level walking and +-5 deg ramps.
pub fn default_conditions() -> Vec<Condition> {
    vec![
        Condition::LevelGround { speed_mps: 1.2 },
        Condition::Ramp { grade_deg: 5.0 },
        Condition::Ramp { grade_deg: -5.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    pub delays_s: Vec<f64>,
    /// Also raise the delay input feature by each injected delay.
    pub covary_input_delay: bool,
    /// Conditions the sweep runs on; empty means all.
    pub conditions: Vec<Condition>,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            delays_s: DEFAULT_DELAYS_S.to_vec(),
            covary_input_delay: false,
            conditions: default_conditions(),
        }
    }
}

impl DelayConfig {
    pub fn includes(&self, condition: &Condition) -> bool {
        self.conditions.is_empty()
            || self
                .conditions
                .iter()
                .any(|c| c.label() == condition.label())
    }
}

/// Sorted, deduplicated delays with the zero baseline first.
pub fn normalize_delays(delays_s: &[f64]) -> Result<Vec<f64>, PipelineError> {
    if let Some(d) = delays_s.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(PipelineError::InvalidDelays(format!(
            "{d} is not a finite non-negative delay"
        )));
    }
    let mut out = delays_s.to_vec();
    out.push(0.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerDelta {
    pub mp: f64,
    pub mpp: f64,
    pub mnp: f64,
}

impl PowerDelta {
    pub fn between(a: &PowerSummary, b: &PowerSummary) -> Self {
        Self {
            mp: a.mp_w_per_kg - b.mp_w_per_kg,
            mpp: a.mpp_w_per_kg - b.mpp_w_per_kg,
            mnp: a.mnp_w_per_kg - b.mnp_w_per_kg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDelay {
    pub joint: Joint,
    pub summary: PowerSummary,
    pub cycle_stats: CyclePowerStats,
    pub mean_power_profile: Vec<f64>,
    pub sd_power_profile: Vec<f64>,
    pub mean_torque_profile: Vec<f64>,
    pub delta_vs_baseline: PowerDelta,
    pub delta_vs_gt: Option<PowerDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayLevel {
    pub delay_s: f64,
    pub trim: usize,
    pub cycles: usize,
    pub joints: Vec<JointDelay>,
    #[serde(skip)]
    pub analysis: TrialAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceJoint {
    pub joint: Joint,
    pub summary: PowerSummary,
    pub cycle_stats: CyclePowerStats,
    pub mean_power_profile: Vec<f64>,
    pub sd_power_profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySweepResult {
    pub subject_id: String,
    pub condition: Condition,
    pub delays_s: Vec<f64>,
    pub covary_input_delay: bool,
    pub scale: TorqueScale,
    pub levels: Vec<DelayLevel>,
    /// Reference power over the baseline cycles.
    pub reference: Option<Vec<ReferenceJoint>>,
}

impl DelaySweepResult {
    pub fn level(&self, delay_s: f64) -> Option<&DelayLevel> {
        self.levels.iter().find(|l| l.delay_s == delay_s)
    }
}

/// Infer once (or once per level when the input delay co-varies), fix the
/// torque scale from the undelayed baseline, and analyse every delay level.
pub fn run_delay_sweep(
    trial: &Trial,
    model: &EcnModel,
    delays_s: &[f64],
    covary_input_delay: bool,
    cfg: &EvalConfig,
) -> Result<DelaySweepResult, PipelineError> {
    let delays = normalize_delays(delays_s)?;
    let base_pred = infer_trial(trial, model, cfg.delay_input_s)?;
    let baseline = analyze_delayed(trial, &base_pred, None, 0.0, cfg)?;
    let scale = baseline.scale;

    let others = delays[1..]
        .par_iter()
        .map(|&d| {
            let pred: Prediction = if covary_input_delay {
                infer_trial(trial, model, cfg.delay_input_s + d)?
            } else {
                base_pred.clone()
            };
            analyze_delayed(trial, &pred, Some(scale), d, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut analyses = vec![baseline];
    analyses.extend(others);
    let base_summaries: Vec<PowerSummary> =
        analyses[0].pred_power.iter().map(|s| s.summary).collect();

    let levels = analyses
        .into_iter()
        .map(|a| level_from(a, &base_summaries))
        .collect::<Result<Vec<_>, _>>()?;

    let reference = match (&levels[0].analysis.gt_set, &levels[0].analysis.gt_power) {
        (Some(set), Some(power)) => Some(
            Joint::ALL
                .into_iter()
                .map(|joint| {
                    let ch = set
                        .channel(&channel_name(joint, Quantity::Power))
                        .expect("reference set carries every power channel");
                    Ok(ReferenceJoint {
                        joint,
                        summary: power[joint.index()].summary,
                        cycle_stats: CyclePowerStats::from_segments(&ch.segments)?,
                        mean_power_profile: ch.mean_profile.clone(),
                        sd_power_profile: ch.sd_profile.clone(),
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?,
        ),
        _ => None,
    };

    Ok(DelaySweepResult {
        subject_id: trial.subject_id.clone(),
        condition: trial.condition,
        delays_s: delays,
        covary_input_delay,
        scale,
        levels,
        reference,
    })
}

fn level_from(a: TrialAnalysis, baseline: &[PowerSummary]) -> Result<DelayLevel, PipelineError> {
    let joints = Joint::ALL
        .into_iter()
        .map(|joint| {
            let j = joint.index();
            let power = a
                .pred_set
                .channel(&channel_name(joint, Quantity::Power))
                .expect("prediction set carries every power channel");
            let torque = a
                .pred_set
                .channel(&channel_name(joint, Quantity::Torque))
                .expect("prediction set carries every torque channel");
            let summary = a.pred_power[j].summary;
            Ok(JointDelay {
                joint,
                summary,
                cycle_stats: CyclePowerStats::from_segments(&power.segments)?,
                mean_power_profile: power.mean_profile.clone(),
                sd_power_profile: power.sd_profile.clone(),
                mean_torque_profile: torque.mean_profile.clone(),
                delta_vs_baseline: PowerDelta::between(&summary, &baseline[j]),
                delta_vs_gt: a
                    .gt_power
                    .as_ref()
                    .map(|g| PowerDelta::between(&summary, &g[j].summary)),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(DelayLevel {
        delay_s: a.delay_s,
        trim: a.trim,
        cycles: a.cycles.len(),
        joints,
        analysis: a,
    })
}

//! One function per CLI verb. Each writes its outputs under `ctx.out` and
//! returns `CliError::Partial` when some items failed but others were written.

use std::fs;
use std::path::{Path, PathBuf};

use exoval_core::delay_study::{run_delay_sweep, DelaySweepResult};
use exoval_core::ecn::{load_model, save_model, train, EcnModel, LoadOptions};
use exoval_core::ingest::{
    canonical_bytes, catalog_directory, ColumnMap, Condition, Joint, Trial, TrialCatalog,
};
use exoval_core::metrics::{channel_name, round2, CyclePowerStats, Quantity};
use exoval_core::pipeline::{
    analyze, correlation_table, infer_trial, inject_ground_truth, to_working_rate,
    training_samples, CorrelationTable, TrialAnalysis,
};
use exoval_core::synth::{generate, DatasetSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{
    ensure_dir, num, opt_num, write_atomic, write_csv, write_json, Document, Provenance,
};

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// File stem for a trial, e.g. `S01_level_1.2mps` or `S01_ramp_-5deg`.
pub fn trial_stem(trial: &Trial) -> String {
    let cond = match trial.condition {
        Condition::LevelGround { speed_mps } => format!("level_{speed_mps}mps"),
        Condition::Ramp { grade_deg } if grade_deg > 0.0 => format!("ramp_+{grade_deg}deg"),
        Condition::Ramp { grade_deg } => format!("ramp_{grade_deg}deg"),
    };
    format!("{}_{}", trial.subject_id, cond)
}

fn report_failures(items: &[(String, String)]) {
    for (item, err) in items {
        eprintln!("failed: {item}: {err}");
    }
}

fn finish(failures: &[(String, String)], total: usize) -> Result<()> {
    if failures.is_empty() {
        Ok(())
    } else {
        report_failures(failures);
        Err(CliError::Partial {
            failed: failures.len(),
            total,
        })
    }
}

fn load_trials(
    ctx: &Context,
    dir: &Path,
    map: &ColumnMap,
) -> Result<(TrialCatalog, Vec<(String, String)>)> {
    let mut catalog = catalog_directory(dir, map)?;
    catalog.exclude_subjects(&ctx.cfg.exclude_subjects);
    let failures = catalog
        .failures
        .iter()
        .map(|f| (f.path.display().to_string(), f.error.clone()))
        .collect();
    Ok((catalog, failures))
}

fn write_trial(
    path: &Path,
    trial: &Trial,
    prov: &Provenance,
    extra: Option<serde_json::Value>,
) -> Result<()> {
    let mut meta = serde_json::to_value(prov)?;
    if let (Some(extra), Some(obj)) = (extra, meta.as_object_mut()) {
        obj.insert("source".into(), extra);
    }
    let (csv, sidecar) = canonical_bytes(trial, &prov.comment_lines(), Some(meta))?;
    write_atomic(path, &csv)?;
    write_atomic(&exoval_core::ingest::sidecar_path(path), &sidecar)
}

pub fn cmd_convert(ctx: &Context, raw_dir: &Path, columns: Option<&Path>) -> Result<()> {
    let map = match columns {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ctx.cfg.columns.clone(),
    };
    let (catalog, mut failures) = load_trials(ctx, raw_dir, &map)?;
    ensure_dir(&ctx.out)?;
    let prov = Provenance::new(&ctx.cfg, None);
    let total = catalog.trials.len() + failures.len();
    let results: Vec<(String, Result<()>)> = catalog
        .trials
        .par_iter()
        .map(|t| {
            let src = catalog
                .source_of(t)
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            let r = to_working_rate(t).map_err(CliError::from).and_then(|c| {
                write_trial(
                    &ctx.path(&format!("{}.csv", trial_stem(&c))),
                    &c,
                    &prov,
                    Some(serde_json::Value::String(src.clone())),
                )
            });
            (src, r)
        })
        .collect();
    for (item, r) in results {
        if let Err(e) = r {
            failures.push((item, e.to_string()));
        }
    }
    finish(&failures, total)
}

pub fn cmd_synth(ctx: &Context, spec_file: Option<&Path>) -> Result<()> {
    let mut dataset: DatasetSpec = match spec_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ctx.cfg.synth.clone(),
    };
    dataset.base.seed = ctx.cfg.seed;
    ensure_dir(&ctx.out)?;
    let prov = Provenance::new(&ctx.cfg, None);
    for spec in dataset.specs() {
        let trial = generate(&spec)?;
        write_trial(
            &ctx.path(&format!("{}.csv", trial_stem(&trial))),
            &trial,
            &prov,
            Some(serde_json::to_value(&spec)?),
        )?;
    }
    Ok(())
}

pub fn cmd_train(ctx: &Context, trials_dir: &Path) -> Result<()> {
    let (catalog, failures) = load_trials(ctx, trials_dir, &ColumnMap::canonical())?;
    let envs = &ctx.cfg.train_environments;
    let mut samples = Vec::new();
    for t in &catalog.trials {
        if envs.is_empty() || envs.contains(&t.condition.environment()) {
            samples.extend(training_samples(
                t,
                ctx.cfg.eval.delay_input_s,
                exoval_core::ecn::TAU_MAX_NM,
            )?);
        }
    }
    let outcome = train(&samples, &ctx.cfg.train)?;
    ensure_dir(&ctx.out)?;
    let prov = Provenance::new(&ctx.cfg, None);
    let model_path = ctx.path("model.json");
    let tmp = ctx.path(".model.json.partial");
    save_model(&outcome.model, &tmp, Some(serde_json::to_value(&prov)?))?;
    fs::rename(&tmp, &model_path).map_err(|source| CliError::Io {
        path: model_path.clone(),
        source,
    })?;
    let prov = Provenance::new(&ctx.cfg, Some(outcome.model.checksum()));
    let mut rows = vec![vec!["0".to_string(), num(outcome.initial_loss)]];
    rows.extend(
        outcome
            .loss_history
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), num(*l)]),
    );
    write_csv(
        &ctx.path("loss_curve.csv"),
        &prov,
        &["epoch", "loss"],
        &rows,
    )?;
    finish(&failures, catalog.trials.len() + failures.len())
}

fn load_checked_model(path: &Path) -> Result<EcnModel> {
    Ok(load_model(path, LoadOptions::default())?)
}

pub fn cmd_infer(ctx: &Context, trials_dir: &Path, model_path: &Path) -> Result<()> {
    let model = load_checked_model(model_path)?;
    let (catalog, mut failures) = load_trials(ctx, trials_dir, &ColumnMap::canonical())?;
    ensure_dir(&ctx.out)?;
    let prov = Provenance::new(&ctx.cfg, Some(model.checksum()));
    let total = catalog.trials.len() + failures.len();
    let results: Vec<(String, Result<()>)> = catalog
        .trials
        .par_iter()
        .map(|t| {
            let r = (|| -> Result<()> {
                let pred = infer_trial(t, &model, ctx.cfg.eval.delay_input_s)?;
                let gain = t.body_mass_kg.map(|m| pred.tau_max_nm / m);
                let mut header: Vec<String> = vec!["time_s".into()];
                for j in Joint::ALL {
                    header.push(format!("{j}_cmd"));
                    if gain.is_some() {
                        header.push(format!("{j}_torque_nm_per_kg"));
                        header.push(format!("{j}_power_w_per_kg"));
                    }
                }
                let vel = t.velocities_rad_s.as_ref();
                let rows: Vec<Vec<String>> = (pred.valid_from..t.len())
                    .map(|i| {
                        let mut row = vec![num(t.time_s[i])];
                        for j in 0..4 {
                            let c = pred.normalized[j][i];
                            row.push(num(c));
                            if let Some(g) = gain {
                                row.push(num(g * c));
                                row.push(opt_num(vel.map(|v| g * c * v[j][i])));
                            }
                        }
                        row
                    })
                    .collect();
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(
                    &ctx.path(&format!("pred_{}.csv", trial_stem(t))),
                    &prov,
                    &header,
                    &rows,
                )
            })();
            (trial_stem(t), r)
        })
        .collect();
    for (item, r) in results {
        if let Err(e) = r {
            failures.push((item, e.to_string()));
        }
    }
    finish(&failures, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRowOut {
    pub row: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOut {
    pub conditions: Vec<String>,
    pub rows: Vec<TableRowOut>,
    pub environments: Vec<String>,
    pub environment_rows: Vec<TableRowOut>,
}

impl From<&CorrelationTable> for TableOut {
    fn from(t: &CorrelationTable) -> Self {
        let row = |r: &exoval_core::pipeline::TableRow| TableRowOut {
            row: format!("{}_{}", r.group.name(), r.quantity.name()),
            values: r.values.clone(),
        };
        Self {
            conditions: t.conditions.iter().map(|c| c.label()).collect(),
            rows: t.rows.iter().map(row).collect(),
            environments: t
                .environments
                .iter()
                .map(|e| e.label().to_string())
                .collect(),
            environment_rows: t.environment_rows.iter().map(row).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub subject: String,
    pub condition: String,
    pub environment: String,
    pub joint: String,
    pub quantity: String,
    pub r: f64,
    pub lag_pct: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub subject: String,
    pub condition: String,
    pub joint: String,
    pub source: String,
    pub cycles: usize,
    pub mp_mean: f64,
    pub mp_sd: f64,
    pub mpp_mean: f64,
    pub mpp_sd: f64,
    pub mnp_mean: f64,
    pub mnp_sd: f64,
    pub series_mp: f64,
    pub series_mpp: f64,
    pub series_mnp: f64,
    pub n: usize,
    pub n_p: usize,
    pub n_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub subject: String,
    pub condition: String,
    pub joint: String,
    pub gain: f64,
}

/// Long-format evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationData {
    /// `matched`, or `mismatched` for ramp trials through a level-ground model.
    pub scenario: String,
    /// `model` or `inject_gt`.
    pub prediction_source: String,
    pub table: TableOut,
    pub correlations: Vec<CorrelationRow>,
    pub power: Vec<PowerRow>,
    pub gains: Vec<GainRow>,
    pub failures: Vec<(String, String)>,
}

fn power_row(
    a: &TrialAnalysis,
    joint: Joint,
    source: &str,
    stats: &CyclePowerStats,
    series: &exoval_core::metrics::PowerSummary,
) -> PowerRow {
    PowerRow {
        subject: a.subject_id.clone(),
        condition: a.condition.label(),
        joint: joint.name().into(),
        source: source.into(),
        cycles: stats.cycles,
        mp_mean: stats.mp.mean,
        mp_sd: stats.mp.sd,
        mpp_mean: stats.mpp.mean,
        mpp_sd: stats.mpp.sd,
        mnp_mean: stats.mnp.mean,
        mnp_sd: stats.mnp.sd,
        series_mp: series.mp_w_per_kg,
        series_mpp: series.mpp_w_per_kg,
        series_mnp: series.mnp_w_per_kg,
        n: series.n,
        n_p: series.n_p,
        n_n: series.n_n,
    }
}

/// Build the long-format document from finished analyses.
pub fn evaluation_data(
    analyses: &[TrialAnalysis],
    scenario: &str,
    prediction_source: &str,
    failures: Vec<(String, String)>,
) -> EvaluationData {
    let refs: Vec<&TrialAnalysis> = analyses.iter().collect();
    let table = TableOut::from(&correlation_table(&refs));
    let mut correlations = Vec::new();
    let mut power = Vec::new();
    let mut gains = Vec::new();
    for a in analyses {
        let gain = a.scale.gains();
        for joint in Joint::ALL {
            gains.push(GainRow {
                subject: a.subject_id.clone(),
                condition: a.condition.label(),
                joint: joint.name().into(),
                gain: gain[joint.index()],
            });
        }
        let Some(ev) = &a.evaluation else { continue };
        for e in &ev.correlations.entries {
            correlations.push(CorrelationRow {
                subject: a.subject_id.clone(),
                condition: a.condition.label(),
                environment: a.condition.environment().label().into(),
                joint: e.joint.name().into(),
                quantity: e.quantity.name().into(),
                r: e.r,
                lag_pct: e.lag_pct,
            });
        }
        let gt_series = a.gt_power.as_ref();
        for (k, jp) in ev.pred_power.iter().enumerate() {
            power.push(power_row(
                a,
                jp.joint,
                "pred",
                &jp.stats,
                &a.pred_power[k].summary,
            ));
            if let Some(g) = gt_series {
                power.push(power_row(
                    a,
                    jp.joint,
                    "gt",
                    &ev.gt_power[k].stats,
                    &g[k].summary,
                ));
            }
        }
    }
    EvaluationData {
        scenario: scenario.into(),
        prediction_source: prediction_source.into(),
        table,
        correlations,
        power,
        gains,
        failures,
    }
}

fn table_rows(scenario: &str, rows: &[TableRowOut]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut v = vec![scenario.to_string(), r.row.clone()];
            v.extend(r.values.iter().map(|x| opt_num(*x)));
            v
        })
        .collect()
}

fn write_evaluation_outputs(
    ctx: &Context,
    prov: &Provenance,
    data: &EvaluationData,
    analyses: &[TrialAnalysis],
) -> Result<()> {
    let t = &data.table;
    let mut header = vec!["scenario", "row"];
    header.extend(t.conditions.iter().map(String::as_str));
    write_csv(
        &ctx.path("table_i_conditions.csv"),
        prov,
        &header,
        &table_rows(&data.scenario, &t.rows),
    )?;
    let mut header = vec!["scenario", "row"];
    header.extend(t.environments.iter().map(String::as_str));
    write_csv(
        &ctx.path("table_i_environments.csv"),
        prov,
        &header,
        &table_rows(&data.scenario, &t.environment_rows),
    )?;

    let rows: Vec<Vec<String>> = data
        .power
        .iter()
        .map(|p| {
            vec![
                data.scenario.clone(),
                p.subject.clone(),
                p.condition.clone(),
                p.joint.clone(),
                p.source.clone(),
                p.cycles.to_string(),
                num(p.mp_mean),
                num(p.mp_sd),
                num(p.mpp_mean),
                num(p.mpp_sd),
                num(p.mnp_mean),
                num(p.mnp_sd),
                num(p.series_mp),
                num(p.series_mpp),
                num(p.series_mnp),
                p.n.to_string(),
                p.n_p.to_string(),
                p.n_n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("power_summary.csv"),
        prov,
        &[
            "scenario",
            "subject",
            "condition",
            "joint",
            "source",
            "cycles",
            "mp_mean",
            "mp_sd",
            "mpp_mean",
            "mpp_sd",
            "mnp_mean",
            "mnp_sd",
            "series_mp",
            "series_mpp",
            "series_mnp",
            "n",
            "n_p",
            "n_n",
        ],
        &rows,
    )?;

    let mut rows = Vec::new();
    for a in analyses {
        let sets = [("pred", Some(&a.pred_set)), ("gt", a.gt_set.as_ref())];
        for (source, set) in sets {
            let Some(set) = set else { continue };
            for joint in Joint::ALL {
                for q in Quantity::ALL {
                    let Some(ch) = set.channel(&channel_name(joint, q)) else {
                        continue;
                    };
                    for (k, (m, s)) in ch.mean_profile.iter().zip(&ch.sd_profile).enumerate() {
                        rows.push(vec![
                            data.scenario.clone(),
                            a.subject_id.clone(),
                            a.condition.label(),
                            format!("{source}_{joint}_{q}"),
                            k.to_string(),
                            num(*m),
                            num(*s),
                        ]);
                    }
                }
            }
        }
    }
    write_csv(
        &ctx.path("profiles.csv"),
        prov,
        &[
            "scenario",
            "subject",
            "condition",
            "series",
            "cycle_pct",
            "mean",
            "sd",
        ],
        &rows,
    )?;
    write_json(&ctx.path("evaluation.json"), prov, data)
}

pub fn cmd_evaluate(
    ctx: &Context,
    trials_dir: &Path,
    model_path: Option<&Path>,
    mismatched: bool,
    inject_gt: bool,
) -> Result<()> {
    let model = match (model_path, inject_gt) {
        (_, true) => None,
        (Some(p), false) => Some(load_checked_model(p)?),
        (None, false) => {
            return Err(CliError::Config(
                "evaluate needs --model or --inject-gt".into(),
            ))
        }
    };
    let (catalog, mut failures) = load_trials(ctx, trials_dir, &ColumnMap::canonical())?;
    let trials: Vec<&Trial> = catalog
        .trials
        .iter()
        .filter(|t| !mismatched || t.condition.is_ramp())
        .collect();
    let total = trials.len() + failures.len();
    let cfg = &ctx.cfg.eval;
    let results: Vec<(String, Result<TrialAnalysis>)> = trials
        .par_iter()
        .map(|t| {
            let r = (|| -> Result<TrialAnalysis> {
                let pred = match &model {
                    Some(m) => infer_trial(t, m, cfg.delay_input_s)?,
                    None => inject_ground_truth(t)?,
                };
                Ok(analyze(t, &pred, cfg)?)
            })();
            (trial_stem(t), r)
        })
        .collect();
    let mut analyses = Vec::new();
    for (item, r) in results {
        match r {
            Ok(a) => analyses.push(a),
            Err(e) => failures.push((item, e.to_string())),
        }
    }
    if analyses.is_empty() {
        report_failures(&failures);
        return Err(CliError::Config("no trial could be evaluated".into()));
    }
    let scenario = if mismatched { "mismatched" } else { "matched" };
    let source = if inject_gt { "inject_gt" } else { "model" };
    let data = evaluation_data(&analyses, scenario, source, failures.clone());
    let prov = Provenance::new(&ctx.cfg, model.as_ref().map(EcnModel::checksum));
    write_evaluation_outputs(ctx, &prov, &data, &analyses)?;
    finish(&failures, total)
}

pub fn cmd_delay_sweep(
    ctx: &Context,
    trials_dir: &Path,
    model_path: &Path,
    delays: Option<&[f64]>,
    covary: bool,
) -> Result<()> {
    let model = load_checked_model(model_path)?;
    let (catalog, mut failures) = load_trials(ctx, trials_dir, &ColumnMap::canonical())?;
    let dcfg = &ctx.cfg.delay;
    let delays = delays.unwrap_or(&dcfg.delays_s).to_vec();
    let covary = covary || dcfg.covary_input_delay;
    let trials: Vec<&Trial> = catalog
        .trials
        .iter()
        .filter(|t| dcfg.includes(&t.condition))
        .collect();
    if trials.is_empty() {
        return Err(CliError::Config(
            "no trial matches the delay-sweep condition filter".into(),
        ));
    }
    let total = trials.len() + failures.len();
    let results: Vec<(String, Result<DelaySweepResult>)> = trials
        .par_iter()
        .map(|t| {
            (
                trial_stem(t),
                run_delay_sweep(t, &model, &delays, covary, &ctx.cfg.eval).map_err(CliError::from),
            )
        })
        .collect();
    let mut sweeps = Vec::new();
    for (item, r) in results {
        match r {
            Ok(s) => sweeps.push(s),
            Err(e) => failures.push((item, e.to_string())),
        }
    }
    if sweeps.is_empty() {
        report_failures(&failures);
        return Err(CliError::Config("no trial could be swept".into()));
    }
    let prov = Provenance::new(&ctx.cfg, Some(model.checksum()));

    let mut rows = Vec::new();
    let mut profile_rows = Vec::new();
    for s in &sweeps {
        for level in &s.levels {
            for j in &level.joints {
                let gt = j.delta_vs_gt;
                rows.push(vec![
                    s.subject_id.clone(),
                    s.condition.label(),
                    num(level.delay_s),
                    level.trim.to_string(),
                    j.joint.name().into(),
                    j.summary.n.to_string(),
                    num(j.summary.mp_w_per_kg),
                    num(j.summary.mpp_w_per_kg),
                    num(j.summary.mnp_w_per_kg),
                    num(j.cycle_stats.mpp.mean),
                    num(j.cycle_stats.mpp.sd),
                    num(j.delta_vs_baseline.mp),
                    num(j.delta_vs_baseline.mpp),
                    num(j.delta_vs_baseline.mnp),
                    opt_num(gt.map(|d| d.mp)),
                    opt_num(gt.map(|d| d.mpp)),
                    opt_num(gt.map(|d| d.mnp)),
                ]);
                for (k, (m, sd)) in j
                    .mean_power_profile
                    .iter()
                    .zip(&j.sd_power_profile)
                    .enumerate()
                {
                    profile_rows.push(vec![
                        s.subject_id.clone(),
                        s.condition.label(),
                        num(level.delay_s),
                        j.joint.name().into(),
                        k.to_string(),
                        num(*m),
                        num(*sd),
                        num(j.mean_torque_profile[k]),
                    ]);
                }
            }
        }
        for r in s.reference.iter().flatten() {
            for (k, (m, sd)) in r
                .mean_power_profile
                .iter()
                .zip(&r.sd_power_profile)
                .enumerate()
            {
                profile_rows.push(vec![
                    s.subject_id.clone(),
                    s.condition.label(),
                    "gt".into(),
                    r.joint.name().into(),
                    k.to_string(),
                    num(*m),
                    num(*sd),
                    String::new(),
                ]);
            }
        }
    }
    write_csv(
        &ctx.path("delay_sweep.csv"),
        &prov,
        &[
            "subject",
            "condition",
            "delay_s",
            "trim",
            "joint",
            "n",
            "mp",
            "mpp",
            "mnp",
            "cycle_mpp_mean",
            "cycle_mpp_sd",
            "d_mp_vs_baseline",
            "d_mpp_vs_baseline",
            "d_mnp_vs_baseline",
            "d_mp_vs_gt",
            "d_mpp_vs_gt",
            "d_mnp_vs_gt",
        ],
        &rows,
    )?;
    write_csv(
        &ctx.path("delay_profiles.csv"),
        &prov,
        &[
            "subject",
            "condition",
            "delay_s",
            "joint",
            "cycle_pct",
            "power_mean",
            "power_sd",
            "torque_mean",
        ],
        &profile_rows,
    )?;
    write_json(&ctx.path("delay_sweep.json"), &prov, &sweeps)?;
    finish(&failures, total)
}

/// Render the correlation table from a saved `evaluation.json`, two decimals per cell.
pub fn render_report(data: &EvaluationData) -> String {
    let mut s = format!(
        "Cross-correlation, {} ({})\n\n",
        data.scenario, data.prediction_source
    );
    let fmt_rows = |cols: &[String], rows: &[TableRowOut]| {
        let mut out = format!("{:<14}", "");
        for c in cols {
            out.push_str(&format!("{c:>14}"));
        }
        out.push('\n');
        for r in rows {
            out.push_str(&format!("{:<14}", r.row));
            for v in &r.values {
                match v {
                    Some(x) => out.push_str(&format!("{:>14.2}", round2(*x))),
                    None => out.push_str(&format!("{:>14}", "-")),
                }
            }
            out.push('\n');
        }
        out
    };
    s.push_str(&fmt_rows(&data.table.conditions, &data.table.rows));
    s.push_str("\nEnvironment means\n");
    s.push_str(&fmt_rows(
        &data.table.environments,
        &data.table.environment_rows,
    ));
    if !data.failures.is_empty() {
        s.push_str(&format!("\n{} trial(s) failed\n", data.failures.len()));
    }
    s
}

pub fn cmd_report(ctx: &Context, evaluation: &Path) -> Result<()> {
    let text = fs::read_to_string(evaluation).map_err(|source| CliError::Io {
        path: evaluation.to_path_buf(),
        source,
    })?;
    let doc: Document<EvaluationData> = serde_json::from_str(&text)?;
    let mut report = String::new();
    for line in doc.provenance.comment_lines() {
        report.push_str(&format!("# {line}\n"));
    }
    let table = render_report(&doc.data);
    report.push_str(&table);
    print!("{table}");
    write_atomic(&ctx.path("report.txt"), report.as_bytes())
}

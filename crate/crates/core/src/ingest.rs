//! Canonical trial representation, CSV + sidecar loading and directory catalogs.
//!
//! A trial on disk is a pair of files sharing a stem: `<stem>.csv` holding the
//! kinematics table and `<stem>.json` holding the metadata sidecar. Third-party
//! layouts are read through a [`ColumnMap`]; internally angles are always radians.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{SignalError, UniformSeries};

/// Joint channel order used everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    HipL,
    HipR,
    KneeL,
    KneeR,
}

impl Joint {
    pub const ALL: [Joint; 4] = [Joint::HipL, Joint::HipR, Joint::KneeL, Joint::KneeR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::HipL => "hip_l",
            Joint::HipR => "hip_r",
            Joint::KneeL => "knee_l",
            Joint::KneeR => "knee_r",
        }
    }

    pub fn is_hip(self) -> bool {
        matches!(self, Joint::HipL | Joint::HipR)
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One series per joint, in [`Joint::ALL`] order.
pub type JointChannels = [Vec<f64>; 4];

/// Walking condition of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    LevelGround {
        speed_mps: f64,
    },
    /// Positive grade is incline.
    Ramp {
        grade_deg: f64,
    },
}

/// Grouping used for environment-wise averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    LevelGround,
    Incline,
    Decline,
}

impl Environment {
    pub fn label(self) -> &'static str {
        match self {
            Environment::LevelGround => "level_ground",
            Environment::Incline => "incline",
            Environment::Decline => "decline",
        }
    }
}

impl Condition {
    pub fn validate(&self) -> Result<(), IngestError> {
        match *self {
            Condition::LevelGround { speed_mps }
                if !(speed_mps.is_finite() && speed_mps >= 0.0) =>
            {
                Err(IngestError::InvalidMetadata(format!(
                    "level-ground speed must be finite and >= 0, got {speed_mps}"
                )))
            }
            Condition::Ramp { grade_deg } if !grade_deg.is_finite() => Err(
                IngestError::InvalidMetadata(format!("ramp grade must be finite, got {grade_deg}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short stable label, e.g. `1.2m/s` or `-5deg`.
    pub fn label(&self) -> String {
        match *self {
            Condition::LevelGround { speed_mps } => format!("{speed_mps}m/s"),
            Condition::Ramp { grade_deg } if grade_deg > 0.0 => format!("+{grade_deg}deg"),
            Condition::Ramp { grade_deg } => format!("{grade_deg}deg"),
        }
    }

    pub fn environment(&self) -> Environment {
        match *self {
            Condition::LevelGround { .. } => Environment::LevelGround,
            Condition::Ramp { grade_deg } if grade_deg > 0.0 => Environment::Incline,
            Condition::Ramp { grade_deg } if grade_deg < 0.0 => Environment::Decline,
            Condition::Ramp { .. } => Environment::LevelGround,
        }
    }

    pub fn is_ramp(&self) -> bool {
        matches!(self, Condition::Ramp { .. })
    }

    /// Sort key: level speeds ascending, then inclines, then declines.
    pub fn order_key(&self) -> (u8, f64) {
        match *self {
            Condition::LevelGround { speed_mps } => (0, speed_mps),
            Condition::Ramp { grade_deg } if grade_deg >= 0.0 => (1, grade_deg),
            Condition::Ramp { grade_deg } => (2, -grade_deg),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    Deg,
    #[default]
    Rad,
}

impl AngleUnit {
    fn to_rad_factor(self) -> f64 {
        match self {
            AngleUnit::Deg => std::f64::consts::PI / 180.0,
            AngleUnit::Rad => 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("time is not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },
    #[error("sample interval at row {row} deviates from the nominal period by more than 1%")]
    IrregularSampling { row: usize },
    #[error("non-finite sample in column `{column}` at row {row}")]
    NonFiniteSample { column: String, row: usize },
    #[error("unparseable number `{value}` in column `{column}` at row {row}")]
    InvalidNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("channel `{channel}` has {got} samples, expected {expected}")]
    LengthMismatch {
        channel: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("duplicate trial ({subject_id}, {condition}) in {first} and {second}")]
    DuplicateTrialKey {
        subject_id: String,
        condition: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("no trial could be loaded ({} file(s) failed)", failures.len())]
    EmptyCatalog { failures: Vec<LoadFailure> },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One subject x condition recording on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: String,
    pub condition: Condition,
    pub sample_rate_hz: f64,
    pub time_s: Vec<f64>,
    pub angles_rad: JointChannels,
    pub velocities_rad_s: Option<JointChannels>,
    pub gt_moments_nm_per_kg: Option<JointChannels>,
    pub body_mass_kg: Option<f64>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn start_s(&self) -> f64 {
        self.time_s.first().copied().unwrap_or(0.0)
    }

    /// Check every structural invariant of a trial.
    pub fn validate(&self) -> Result<(), IngestError> {
        self.condition.validate()?;
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(IngestError::InvalidMetadata(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if let Some(m) = self.body_mass_kg {
            if !(m.is_finite() && m > 0.0) {
                return Err(IngestError::InvalidMetadata(format!(
                    "body mass must be positive, got {m}"
                )));
            }
        }
        if let Some(row) = self.time_s.iter().position(|t| !t.is_finite()) {
            return Err(IngestError::NonFiniteSample {
                column: "time_s".into(),
                row,
            });
        }
        let nominal = 1.0 / self.sample_rate_hz;
        for row in 1..self.time_s.len() {
            let dt = self.time_s[row] - self.time_s[row - 1];
            if dt <= 0.0 {
                return Err(IngestError::NonMonotoneTime { row });
            }
            if (dt - nominal).abs() >= 0.01 * nominal {
                return Err(IngestError::IrregularSampling { row });
            }
        }
        let n = self.len();
        let groups = [
            ("rad", Some(&self.angles_rad)),
            ("vel", self.velocities_rad_s.as_ref()),
            ("mom", self.gt_moments_nm_per_kg.as_ref()),
        ];
        for (suffix, group) in groups {
            let Some(group) = group else { continue };
            for (joint, ch) in Joint::ALL.iter().zip(group.iter()) {
                let name = format!("{joint}_{suffix}");
                if ch.len() != n {
                    return Err(IngestError::LengthMismatch {
                        channel: name,
                        expected: n,
                        got: ch.len(),
                    });
                }
                if let Some(row) = ch.iter().position(|v| !v.is_finite()) {
                    return Err(IngestError::NonFiniteSample { column: name, row });
                }
            }
        }
        Ok(())
    }

    pub fn key(&self) -> TrialKey {
        TrialKey {
            subject_id: self.subject_id.clone(),
            condition: self.condition.label(),
        }
    }

    fn series(&self, values: &[f64]) -> Result<UniformSeries, SignalError> {
        UniformSeries::new(self.sample_rate_hz, self.start_s(), values.to_vec())
    }

    pub fn angle_series(&self, joint: Joint) -> Result<UniformSeries, SignalError> {
        self.series(&self.angles_rad[joint.index()])
    }

    pub fn velocity_series(&self, joint: Joint) -> Option<Result<UniformSeries, SignalError>> {
        self.velocities_rad_s
            .as_ref()
            .map(|v| self.series(&v[joint.index()]))
    }

    pub fn metadata(&self, provenance: Option<serde_json::Value>) -> TrialMeta {
        TrialMeta {
            subject_id: self.subject_id.clone(),
            condition: self.condition,
            sample_rate_hz: self.sample_rate_hz,
            body_mass_kg: self.body_mass_kg,
            angle_unit: AngleUnit::Rad,
            provenance,
        }
    }
}

/// Catalog key. Condition is compared through its label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TrialKey {
    pub subject_id: String,
    pub condition: String,
}

/// Metadata sidecar stored next to each trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub subject_id: String,
    pub condition: Condition,
    pub sample_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_mass_kg: Option<f64>,
    #[serde(default)]
    pub angle_unit: AngleUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Column names for one source layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub time: String,
    pub angles: [String; 4],
    /// Loaded only when every column is present in the header.
    pub velocities: Option<[String; 4]>,
    pub moments: Option<[String; 4]>,
    /// Overrides the sidecar's `angle_unit` when set.
    pub angle_unit: Option<AngleUnit>,
    /// Per-joint sign flips applied to angles and velocities.
    pub flip_angle: [bool; 4],
    /// Per-joint sign flips applied to moments.
    pub flip_moment: [bool; 4],
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ColumnMap {
    pub fn canonical() -> Self {
        let cols = |suffix: &str| Joint::ALL.map(|j| format!("{j}_{suffix}"));
        Self {
            time: "time_s".into(),
            angles: cols("rad"),
            velocities: Some(cols("vel")),
            moments: Some(cols("mom")),
            angle_unit: None,
            flip_angle: [false; 4],
            flip_moment: [false; 4],
        }
    }
}

/// Sidecar path for a trial CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<TrialMeta, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IngestError::Sidecar {
        path: path.to_path_buf(),
        source,
    })
}

fn optional_group(
    header: &csv::StringRecord,
    names: Option<&[String; 4]>,
) -> Result<Option<[usize; 4]>, IngestError> {
    let Some(names) = names else { return Ok(None) };
    let found: Vec<Option<usize>> = names
        .iter()
        .map(|n| header.iter().position(|h| h.trim() == n))
        .collect();
    if found.iter().all(Option::is_none) {
        return Ok(None);
    }
    let mut idx = [0; 4];
    for (k, (slot, name)) in found.iter().zip(names).enumerate() {
        idx[k] = slot.ok_or_else(|| IngestError::MissingColumn(name.clone()))?;
    }
    Ok(Some(idx))
}

fn parse_cell(
    record: &csv::StringRecord,
    col: usize,
    name: &str,
    row: usize,
) -> Result<f64, IngestError> {
    let raw = record.get(col).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| IngestError::InvalidNumber {
        column: name.to_string(),
        row,
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IngestError::NonFiniteSample {
            column: name.to_string(),
            row,
        });
    }
    Ok(v)
}

/// Load one trial from `path` and its sidecar. Lines starting with `#` are
/// treated as comments.
pub fn load_canonical_csv(path: &Path, map: &ColumnMap) -> Result<Trial, IngestError> {
    let meta = read_sidecar(&sidecar_path(path))?;
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &String| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.clone()))
    };
    let time_col = find(&map.time)?;
    let mut angle_cols = [0; 4];
    for (slot, name) in angle_cols.iter_mut().zip(&map.angles) {
        *slot = find(name)?;
    }
    let vel_cols = optional_group(&header, map.velocities.as_ref())?;
    let mom_cols = optional_group(&header, map.moments.as_ref())?;

    let unit = map.angle_unit.unwrap_or(meta.angle_unit);
    let to_rad = unit.to_rad_factor();
    let angle_sign = map.flip_angle.map(|f| if f { -1.0 } else { 1.0 });
    let moment_sign = map.flip_moment.map(|f| if f { -1.0 } else { 1.0 });

    let mut time_s = Vec::new();
    let mut angles: JointChannels = Default::default();
    let mut vels: JointChannels = Default::default();
    let mut moms: JointChannels = Default::default();

    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let t = parse_cell(&record, time_col, &map.time, row)?;
        if let Some(&prev) = time_s.last() {
            if t <= prev {
                return Err(IngestError::NonMonotoneTime { row });
            }
        }
        time_s.push(t);
        for j in 0..4 {
            let a = parse_cell(&record, angle_cols[j], &map.angles[j], row)?;
            angles[j].push(a * to_rad * angle_sign[j]);
        }
        if let (Some(cols), Some(names)) = (vel_cols, map.velocities.as_ref()) {
            for j in 0..4 {
                let v = parse_cell(&record, cols[j], &names[j], row)?;
                vels[j].push(v * to_rad * angle_sign[j]);
            }
        }
        if let (Some(cols), Some(names)) = (mom_cols, map.moments.as_ref()) {
            for j in 0..4 {
                let m = parse_cell(&record, cols[j], &names[j], row)?;
                moms[j].push(m * moment_sign[j]);
            }
        }
    }

    let trial = Trial {
        subject_id: meta.subject_id,
        condition: meta.condition,
        sample_rate_hz: meta.sample_rate_hz,
        time_s,
        angles_rad: angles,
        velocities_rad_s: vel_cols.map(|_| vels),
        gt_moments_nm_per_kg: mom_cols.map(|_| moms),
        body_mass_kg: meta.body_mass_kg,
    };
    trial.validate()?;
    Ok(trial)
}

/// Write a trial as canonical CSV (radians) plus sidecar. `comments` become
/// leading `#` lines of the CSV.
pub fn write_canonical_csv(
    trial: &Trial,
    path: &Path,
    comments: &[String],
    provenance: Option<serde_json::Value>,
) -> Result<(), IngestError> {
    let (csv_bytes, sidecar_bytes) = canonical_bytes(trial, comments, provenance)?;
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IngestError::Io { path: p, source }
    };
    fs::write(path, csv_bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    fs::write(&side, sidecar_bytes).map_err(io_err(&side))?;
    Ok(())
}

/// Serialized canonical CSV and sidecar contents.
pub fn canonical_bytes(
    trial: &Trial,
    comments: &[String],
    provenance: Option<serde_json::Value>,
) -> Result<(Vec<u8>, Vec<u8>), IngestError> {
    trial.validate()?;
    let mut out = Vec::new();
    for c in comments {
        writeln!(out, "# {c}").expect("write to Vec");
    }
    let canonical = ColumnMap::canonical();
    let mut header = vec![canonical.time.clone()];
    header.extend(canonical.angles.iter().cloned());
    let groups: Vec<(&JointChannels, [String; 4])> = [
        (
            trial.velocities_rad_s.as_ref(),
            canonical.velocities.clone(),
        ),
        (
            trial.gt_moments_nm_per_kg.as_ref(),
            canonical.moments.clone(),
        ),
    ]
    .into_iter()
    .filter_map(|(g, names)| g.zip(names))
    .collect();
    for (_, names) in &groups {
        header.extend(names.iter().cloned());
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |source| IngestError::Csv {
            path: PathBuf::from("<memory>"),
            source,
        };
        w.write_record(&header).map_err(csv_err)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..trial.len() {
            row.clear();
            row.push(trial.time_s[i].to_string());
            row.extend(trial.angles_rad.iter().map(|c| c[i].to_string()));
            for (g, _) in &groups {
                row.extend(g.iter().map(|c| c[i].to_string()));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| IngestError::Io {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    }
    let mut sidecar = serde_json::to_vec_pretty(&trial.metadata(provenance)).map_err(|source| {
        IngestError::Sidecar {
            path: PathBuf::from("<memory>"),
            source,
        }
    })?;
    sidecar.push(b'\n');
    Ok((out, sidecar))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub error: String,
}

/// Trials loaded from one directory, plus the files that failed to load.
#[derive(Debug, Clone, Default)]
pub struct TrialCatalog {
    pub trials: Vec<Trial>,
    pub provenance: BTreeMap<TrialKey, PathBuf>,
    pub failures: Vec<LoadFailure>,
}

impl TrialCatalog {
    pub fn source_of(&self, trial: &Trial) -> Option<&Path> {
        self.provenance.get(&trial.key()).map(PathBuf::as_path)
    }

    /// Drop trials whose subject appears in `excluded`.
    pub fn exclude_subjects(&mut self, excluded: &[String]) {
        self.trials.retain(|t| !excluded.contains(&t.subject_id));
        self.provenance
            .retain(|k, _| !excluded.contains(&k.subject_id));
    }
}

/// CSV files directly under `root`, sorted by name.
pub fn list_trial_files(root: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let rd = fs::read_dir(root).map_err(|source| IngestError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Load every `*.csv` trial under `root`. Files that fail to parse are listed
/// in `failures`; duplicate (subject, condition) pairs are an error.
pub fn catalog_directory(root: &Path, map: &ColumnMap) -> Result<TrialCatalog, IngestError> {
    let files = list_trial_files(root)?;
    let loaded: Vec<(PathBuf, Result<Trial, IngestError>)> = files
        .into_par_iter()
        .map(|p| {
            let r = load_canonical_csv(&p, map);
            (p, r)
        })
        .collect();

    let mut catalog = TrialCatalog::default();
    for (path, result) in loaded {
        match result {
            Ok(trial) => {
                let key = trial.key();
                if let Some(first) = catalog.provenance.get(&key) {
                    return Err(IngestError::DuplicateTrialKey {
                        subject_id: key.subject_id,
                        condition: key.condition,
                        first: first.clone(),
                        second: path,
                    });
                }
                catalog.provenance.insert(key, path);
                catalog.trials.push(trial);
            }
            Err(e) => catalog.failures.push(LoadFailure {
                path,
                error: e.to_string(),
            }),
        }
    }
    if catalog.trials.is_empty() {
        return Err(IngestError::EmptyCatalog {
            failures: catalog.failures,
        });
    }
    Ok(catalog)
}

//! File formats: JSON documents for structured inputs, CSV for numeric
//! exports, JSON lines for execution logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{Joint, JointConfig, JointType, RobotModel};
use crate::protocol::{
    ExecutionLog, LogRecord, PlannedStep, ProtocolPlan, ProtocolStep, RunStatus, ScriptedSensors, SkillEntry,
    SkillLibrary, TaskReport,
};
use crate::rmrc::JointPath;
use crate::se3::{Pose, ScrewDisplacement, Se3Error};
use crate::segmentation::{PosePath, SegmentTolerance, SegmentedPath};
use crate::transfer::{ConstraintLeg, Demonstration, GuidingPoseSet, TaskInstance, Waypoint};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn invalid(path: &Path, message: impl std::fmt::Display) -> IoError {
    IoError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// On-disk pose: translation in meters and a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let t = p.translation();
        Self {
            t: [t.x, t.y, t.z],
            q: p.quaternion_wxyz(),
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Se3Error;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        Pose::from_translation_quaternion(r.t, r.q)
    }
}

/// Top-level keys of `value` that are not in `known`.
pub fn unknown_fields(value: &serde_json::Value, known: &[&str]) -> Vec<String> {
    match value.as_object() {
        Some(map) => map.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect(),
        None => Vec::new(),
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `path` as `T`, warning about top-level keys outside `known`.
pub fn read_json_strict<T: DeserializeOwned>(path: &Path, known: &[&str]) -> Result<T, IoError> {
    let text = read_text(path)?;
    let json_err = |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    for k in unknown_fields(&value, known) {
        log::warn!("{}: ignoring unknown field {k:?}", path.display());
    }
    serde_json::from_value(value).map_err(json_err)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationFile {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<Pose>>,
    /// Joint-space recording, mapped through `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<Vec<f64>>>,
    /// Robot model file, relative to the demonstration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub objects: TaskInstance,
}

const DEMO_FIELDS: &[&str] = &["label", "roi_radius", "timestamps", "poses", "joints", "model", "objects"];

impl DemonstrationFile {
    pub fn from_demonstration(demo: &Demonstration, roi_radius: Option<f64>) -> Self {
        Self {
            label: demo.label().to_string(),
            roi_radius,
            timestamps: demo.path().timestamps().map(<[f64]>::to_vec),
            poses: Some(demo.path().poses().to_vec()),
            joints: None,
            model: None,
            objects: demo.instance().clone(),
        }
    }

    /// Builds the demonstration; a relative model path is resolved against
    /// the directory of `path`.
    pub fn into_demonstration(self, path: &Path) -> Result<(Demonstration, Option<f64>), IoError> {
        let poses = match (self.poses, self.joints) {
            (Some(p), None) => p,
            (None, Some(js)) => {
                let model_ref = self
                    .model
                    .ok_or_else(|| invalid(path, "joint-space recordings need a \"model\" reference"))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let model = load_model(&base.join(model_ref))?;
                js.into_iter()
                    .enumerate()
                    .map(|(i, q)| {
                        model
                            .forward_kinematics(&JointConfig::new(q))
                            .map_err(|e| invalid(path, format!("joints[{i}]: {e}")))
                    })
                    .collect::<Result<_, _>>()?
            }
            (Some(_), Some(_)) => return Err(invalid(path, "give either \"poses\" or \"joints\", not both")),
            (None, None) => return Err(invalid(path, "missing \"poses\" or \"joints\"")),
        };
        if let Some(r) = self.roi_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(invalid(path, format!("roi_radius must be positive, got {r}")));
            }
        }
        let pose_path = PosePath::new(poses, self.timestamps).map_err(|e| invalid(path, e))?;
        let demo = Demonstration::new(self.label, pose_path, self.objects).map_err(|e| invalid(path, e))?;
        Ok((demo, self.roi_radius))
    }
}

pub fn load_demonstration(path: &Path) -> Result<(Demonstration, Option<f64>), IoError> {
    let file: DemonstrationFile = read_json_strict(path, DEMO_FIELDS)?;
    file.into_demonstration(path)
}

pub fn save_demonstration(path: &Path, demo: &Demonstration, roi_radius: Option<f64>) -> Result<(), IoError> {
    write_json(path, &DemonstrationFile::from_demonstration(demo, roi_radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    #[serde(rename = "type")]
    pub joint_type: JointType,
    pub axis: [f64; 3],
    /// A point on the axis for revolute joints, the sliding direction for
    /// prismatic ones.
    pub point_or_direction: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dof: usize,
    pub joints: Vec<JointRecord>,
    pub home_pose: Pose,
}

const MODEL_FIELDS: &[&str] = &["name", "dof", "joints", "home_pose"];

fn unit(path: &Path, what: &str, v: [f64; 3]) -> Result<Vector3<f64>, IoError> {
    let v = Vector3::from(v);
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid(path, format!("{what} must be a nonzero finite vector")));
    }
    if (n - 1.0).abs() > 1e-6 {
        log::warn!("{}: {what} has norm {n}, normalizing", path.display());
    }
    Ok(v / n)
}

impl RobotModelFile {
    pub fn from_model(model: &RobotModel) -> Self {
        let joints = model
            .joints()
            .iter()
            .map(|j| {
                let tw = &j.twist;
                let (axis, pd) = match j.joint_type {
                    JointType::Revolute => (tw.angular, tw.angular.cross(&tw.linear)),
                    JointType::Prismatic => (tw.linear, tw.linear),
                };
                JointRecord {
                    joint_type: j.joint_type,
                    axis: axis.into(),
                    point_or_direction: pd.into(),
                    limits: [j.lower, j.upper],
                }
            })
            .collect();
        Self {
            name: Some(model.name().to_string()),
            dof: model.dof(),
            joints,
            home_pose: *model.home_pose(),
        }
    }

    pub fn into_model(self, path: &Path) -> Result<RobotModel, IoError> {
        if self.dof != self.joints.len() {
            return Err(invalid(
                path,
                format!("dof is {} but {} joints are listed", self.dof, self.joints.len()),
            ));
        }
        let mut joints = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let what = format!("joint {} axis", i + 1);
            let axis = unit(path, &what, j.axis)?;
            let [lo, hi] = j.limits;
            joints.push(match j.joint_type {
                JointType::Revolute => Joint::revolute(axis, Vector3::from(j.point_or_direction), lo, hi),
                JointType::Prismatic => {
                    let dir = unit(path, &format!("joint {} direction", i + 1), j.point_or_direction)?;
                    if (dir - axis).norm() > 1e-9 {
                        return Err(invalid(
                            path,
                            format!("joint {}: prismatic axis and direction disagree", i + 1),
                        ));
                    }
                    Joint::prismatic(dir, lo, hi)
                }
            });
        }
        let name = self.name.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        RobotModel::new(name, joints, self.home_pose).map_err(|e| invalid(path, e))
    }
}

pub fn load_model(path: &Path) -> Result<RobotModel, IoError> {
    let file: RobotModelFile = read_json_strict(path, MODEL_FIELDS)?;
    file.into_model(path)
}

pub fn save_model(path: &Path, model: &RobotModel) -> Result<(), IoError> {
    write_json(path, &RobotModelFile::from_model(model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillRecord {
    pub demonstration: DemonstrationFile,
    pub roi_radius: f64,
    pub tolerance: SegmentTolerance,
    pub breakpoints: Vec<usize>,
    pub guiding_poses: GuidingPoseSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkillLibraryFile {
    pub skills: BTreeMap<String, SkillRecord>,
}

const LIBRARY_FIELDS: &[&str] = &["skills"];

impl SkillLibraryFile {
    pub fn from_library(lib: &SkillLibrary) -> Self {
        let skills = lib
            .entries()
            .map(|(label, e)| {
                (
                    label.to_string(),
                    SkillRecord {
                        demonstration: DemonstrationFile::from_demonstration(&e.demonstration, None),
                        roi_radius: e.guiding.roi_radius,
                        tolerance: e.segmented.tolerance(),
                        breakpoints: e.segmented.breakpoints().to_vec(),
                        guiding_poses: e.guiding.clone(),
                    },
                )
            })
            .collect();
        Self { skills }
    }

    /// Rebuilds every entry from its demonstration and stored breakpoints
    /// and checks the stored guiding poses against a fresh extraction.
    pub fn into_library(self, path: &Path) -> Result<SkillLibrary, IoError> {
        let mut lib = SkillLibrary::new();
        for (label, rec) in self.skills {
            let ctx = |e: &dyn std::fmt::Display| invalid(path, format!("skill {label:?}: {e}"));
            let (demo, _) = rec.demonstration.into_demonstration(path)?;
            let seg = SegmentedPath::from_breakpoints(demo.path(), rec.breakpoints, rec.tolerance)
                .map_err(|e| ctx(&e))?;
            let entry = SkillEntry::from_segmentation(&label, demo, seg, rec.roi_radius).map_err(|e| ctx(&e))?;
            let stored = serde_json::to_value(&rec.guiding_poses).expect("guiding poses serialize");
            let fresh = serde_json::to_value(&entry.guiding).expect("guiding poses serialize");
            if stored != fresh {
                return Err(ctx(&"stored guiding poses differ from the demonstration's"));
            }
            lib.insert(&label, entry, false).map_err(|e| ctx(&e))?;
        }
        Ok(lib)
    }
}

pub fn load_library(path: &Path) -> Result<SkillLibrary, IoError> {
    let file: SkillLibraryFile = read_json_strict(path, LIBRARY_FIELDS)?;
    file.into_library(path)
}

pub fn save_library(path: &Path, lib: &SkillLibrary) -> Result<(), IoError> {
    write_json(path, &SkillLibraryFile::from_library(lib))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Starting joint configuration; the model's zero configuration when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_start: Option<JointConfig>,
    pub steps: Vec<ProtocolStep>,
}

const PROTOCOL_FIELDS: &[&str] = &["name", "q_start", "steps"];

pub fn load_protocol(path: &Path) -> Result<ProtocolFile, IoError> {
    read_json_strict(path, PROTOCOL_FIELDS)
}

pub fn load_sensors(path: &Path) -> Result<ScriptedSensors, IoError> {
    let s: ScriptedSensors = read_json_strict(path, &["ph", "color"])?;
    s.validate().map_err(|e| invalid(path, e))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub objects: TaskInstance,
}

pub fn load_instance(path: &Path) -> Result<TaskInstance, IoError> {
    let f: InstanceFile = read_json_strict(path, &["objects"])?;
    Ok(f.objects)
}

/// Summary of a protocol plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    pub model: String,
    pub q_start: JointConfig,
    pub q_end: JointConfig,
    pub tasks: Vec<TaskReport>,
    pub returns: Vec<ReturnReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnReport {
    pub step_id: String,
    pub configs: usize,
    pub path_hash: String,
}

/// Every joint path of a plan with the file stem it is exported under, in
/// execution order of a single pass.
pub fn plan_exports(plan: &ProtocolPlan) -> Vec<(String, &JointPath)> {
    fn walk<'a>(steps: &'a [PlannedStep], prefix: &str, out: &mut Vec<(String, &'a JointPath)>) {
        for (i, s) in steps.iter().enumerate() {
            let id = if prefix.is_empty() {
                format!("{:02}", i + 1)
            } else {
                format!("{prefix}-{:02}", i + 1)
            };
            match s {
                PlannedStep::Task(t) => out.push((format!("task_{id}_{}", t.label), &t.path)),
                PlannedStep::Repeat { body, return_path } => {
                    walk(body, &id, out);
                    if let Some(p) = return_path {
                        out.push((format!("return_{id}"), p));
                    }
                }
                PlannedStep::Idle => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&plan.steps, "", &mut out);
    out
}

impl PlanReport {
    pub fn new(plan: &ProtocolPlan, protocol: Option<&str>, model: &RobotModel) -> Self {
        fn returns(steps: &[PlannedStep], prefix: &str, out: &mut Vec<ReturnReport>) {
            for (i, s) in steps.iter().enumerate() {
                let id = if prefix.is_empty() {
                    format!("{}", i + 1)
                } else {
                    format!("{prefix}.{}", i + 1)
                };
                if let PlannedStep::Repeat { body, return_path } = s {
                    returns(body, &id, out);
                    if let Some(p) = return_path {
                        out.push(ReturnReport {
                            step_id: id,
                            configs: p.len(),
                            path_hash: p.summary_hash(),
                        });
                    }
                }
            }
        }
        let mut rets = Vec::new();
        returns(&plan.steps, "", &mut rets);
        Self {
            protocol: protocol.map(str::to_string),
            model: model.name().to_string(),
            q_start: plan.q_start.clone(),
            q_end: plan.q_end.clone(),
            tasks: plan.tasks().into_iter().map(TaskReport::from).collect(),
            returns: rets,
        }
    }
}

/// Output of the segment command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedFile {
    pub label: String,
    pub tolerance: SegmentTolerance,
    pub breakpoints: Vec<usize>,
    pub segments: Vec<SegmentRecord>,
    pub reconstruction_error: ReconstructionError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_index: usize,
    pub end_index: usize,
    pub start: Pose,
    pub end: Pose,
    pub screw: ScrewDisplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    pub rot: f64,
    pub trans: f64,
}

impl SegmentedFile {
    pub fn new(label: &str, seg: &SegmentedPath, err: (f64, f64)) -> Self {
        Self {
            label: label.to_string(),
            tolerance: seg.tolerance(),
            breakpoints: seg.breakpoints().to_vec(),
            segments: seg
                .segments()
                .iter()
                .map(|s| SegmentRecord {
                    start_index: s.start_index,
                    end_index: s.end_index,
                    start: s.start,
                    end: s.end,
                    screw: s.screw,
                })
                .collect(),
            reconstruction_error: ReconstructionError {
                rot: err.0,
                trans: err.1,
            },
        }
    }
}

/// Output of the transfer command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointsFile {
    pub label: String,
    pub waypoints: Vec<Waypoint>,
    pub legs: Vec<ConstraintLeg>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row of a trajectory export.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step_index: usize,
    pub leg_index: usize,
    pub tau: f64,
    pub q: Vec<f64>,
    pub ee_t: [f64; 3],
    /// `[w, x, y, z]`, `w >= 0`.
    pub ee_q: [f64; 4],
}

pub fn trajectory_header(dof: usize) -> Vec<String> {
    let mut h = vec!["step_index".to_string(), "leg_index".into(), "tau".into()];
    h.extend((1..=dof).map(|i| format!("q_{i}")));
    h.extend(["ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz"].map(String::from));
    h
}

pub fn trajectory_rows(model: &RobotModel, path: &JointPath) -> Result<Vec<TrajectoryRow>, IoError> {
    path.configs()
        .iter()
        .zip(path.points())
        .enumerate()
        .map(|(i, (q, p))| {
            let ee = model
                .forward_kinematics(q)
                .map_err(|e| invalid(Path::new(model.name()), e))?;
            let t = ee.translation();
            Ok(TrajectoryRow {
                step_index: i,
                leg_index: p.leg,
                tau: p.tau,
                q: q.values().to_vec(),
                ee_t: [t.x, t.y, t.z],
                ee_q: ee.quaternion_wxyz(),
            })
        })
        .collect()
}

pub fn trajectory_csv(rows: &[TrajectoryRow], dof: usize) -> String {
    let mut out = trajectory_header(dof).join(",");
    out.push('\n');
    for r in rows {
        let mut fields = vec![r.step_index.to_string(), r.leg_index.to_string(), fmt_f64(r.tau)];
        fields.extend(r.q.iter().map(|v| fmt_f64(*v)));
        fields.extend(r.ee_t.iter().chain(&r.ee_q).map(|v| fmt_f64(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trajectory(path: &Path, model: &RobotModel, jp: &JointPath) -> Result<(), IoError> {
    let rows = trajectory_rows(model, jp)?;
    write_text(path, &trajectory_csv(&rows, model.dof()))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    let n = header.len();
    if n < 10 {
        return Err(invalid(path, "too few trajectory columns"));
    }
    let dof = n - 10;
    let expected = trajectory_header(dof);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(invalid(path, format!("unexpected trajectory header, want {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = line + 2;
        let num = |k: usize| -> Result<f64, IoError> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| invalid(path, format!("row {row}, column {}: {e}", expected[k])))
        };
        let int = |k: usize| -> Result<usize, IoError> {
            rec[k]
                .parse::<usize>()
                .map_err(|e| invalid(path, format!("row {row}, column {}: {e}", expected[k])))
        };
        let q = (0..dof).map(|j| num(3 + j)).collect::<Result<Vec<_>, _>>()?;
        let b = 3 + dof;
        rows.push(TrajectoryRow {
            step_index: int(0)?,
            leg_index: int(1)?,
            tau: num(2)?,
            q,
            ee_t: [num(b)?, num(b + 1)?, num(b + 2)?],
            ee_q: [num(b + 3)?, num(b + 4)?, num(b + 5)?, num(b + 6)?],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
enum LogLine {
    Record(LogRecord),
    Summary { status: RunStatus, records: usize, end_time: f64 },
}

/// One JSON object per line: the records, then a summary line.
pub fn log_jsonl(log: &ExecutionLog) -> String {
    let mut out = String::new();
    for r in &log.records {
        let line = serde_json::to_string(&LogLine::Record(r.clone())).expect("log records serialize");
        let _ = writeln!(out, "{line}");
    }
    let summary = LogLine::Summary {
        status: log.status,
        records: log.records.len(),
        end_time: log.end_time(),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes"));
    out
}

pub fn write_log(path: &Path, log: &ExecutionLog) -> Result<(), IoError> {
    write_text(path, &log_jsonl(log))
}

pub fn read_log(path: &Path) -> Result<ExecutionLog, IoError> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    let mut status = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| invalid(path, format!("line {}: {e}", i + 1)))?;
        match parsed {
            LogLine::Record(r) => {
                if status.is_some() {
                    return Err(invalid(path, format!("line {}: record after summary", i + 1)));
                }
                records.push(r);
            }
            LogLine::Summary { status: s, records: n, .. } => {
                if n != records.len() {
                    return Err(invalid(path, format!("summary counts {n} records, found {}", records.len())));
                }
                status = Some(s);
            }
        }
    }
    let status = status.ok_or_else(|| invalid(path, "log has no summary line"))?;
    Ok(ExecutionLog { status, records })
}

/// Titration curve point with the central-difference slope where both
/// neighbours exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TitrationRow {
    pub volume: f64,
    pub ph: f64,
    pub derivative: Option<f64>,
}

/// pH against dispensed titrant volume from every volume-tagged reading.
/// Repeated readings at one volume keep the latest.
pub fn titration_rows(log: &ExecutionLog) -> Vec<TitrationRow> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in log.readings() {
        if let (Some(ph), Some(v)) = (r.ph, r.titrant_ml) {
            match pts.last_mut() {
                Some(last) if last.0 == v => last.1 = ph,
                _ => pts.push((v, ph)),
            }
        }
    }
    let n = pts.len();
    (0..n)
        .map(|i| TitrationRow {
            volume: pts[i].0,
            ph: pts[i].1,
            derivative: (i > 0 && i + 1 < n).then(|| (pts[i + 1].1 - pts[i - 1].1) / (pts[i + 1].0 - pts[i - 1].0)),
        })
        .collect()
}

/// Rows where the slope is a strict local maximum.
pub fn derivative_peaks(rows: &[TitrationRow]) -> Vec<TitrationRow> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        let Some(d) = rows[i].derivative else { continue };
        let before = i.checked_sub(1).and_then(|j| rows[j].derivative);
        let after = rows.get(i + 1).and_then(|r| r.derivative);
        if before.is_none_or(|b| d > b) && after.is_none_or(|a| d >= a) && (before.is_some() || after.is_some()) {
            out.push(rows[i]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Titration,
    Path3d,
    Joint,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "titration" => Ok(Self::Titration),
            "path3d" => Ok(Self::Path3d),
            "joint" => Ok(Self::Joint),
            other => Err(format!("unknown plot kind {other:?}; expected titration, path3d or joint")),
        }
    }
}

pub fn titration_csv(rows: &[TitrationRow]) -> String {
    let mut out = String::from("volume_dispensed,pH,pH_first_derivative\n");
    for r in rows {
        let d = r.derivative.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{d}", fmt_f64(r.volume), fmt_f64(r.ph));
    }
    out
}

pub fn path3d_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("step_index,x,y,z\n");
    for r in rows {
        let [x, y, z] = r.ee_t.map(fmt_f64);
        let _ = writeln!(out, "{},{x},{y},{z}", r.step_index);
    }
    out
}

pub fn joint_csv(rows: &[TrajectoryRow]) -> String {
    let dof = rows.first().map_or(0, |r| r.q.len());
    let mut out = String::from("step_index");
    for i in 1..=dof {
        let _ = write!(out, ",q_{i}");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.step_index.to_string());
        for v in &r.q {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Plot-ready CSV from a log (titration) or a trajectory export.
pub fn plot_data(input: &Path, kind: PlotKind) -> Result<String, IoError> {
    match kind {
        PlotKind::Titration => {
            let log = read_log(input)?;
            let rows = titration_rows(&log);
            if rows.is_empty() {
                return Err(invalid(input, "log holds no volume-tagged pH readings"));
            }
            Ok(titration_csv(&rows))
        }
        PlotKind::Path3d | PlotKind::Joint => {
            let rows = read_trajectory(input)?;
            if rows.is_empty() {
                return Err(invalid(input, "trajectory has no rows"));
            }
            Ok(if kind == PlotKind::Path3d {
                path3d_csv(&rows)
            } else {
                joint_csv(&rows)
            })
        }
    }
}

//! Skill library, protocol planning and gated execution on virtual time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{JointConfig, KinematicsError, RobotModel};
use crate::rmrc::{audit_joint_path, joint_space_path, track_constraint_plan, JointPath, TrackError, TrackerParams};
use crate::segmentation::{segment_path, SegmentError, SegmentTolerance, SegmentedPath};
use crate::transfer::{
    build_constraint_plan, extract_guiding_poses, transfer_guiding_poses, ConstraintLeg, Demonstration,
    ExtractionReport, GuidingPoseSet, LegMode, TaskInstance, TransferError, Waypoint,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("skill {0:?} is already registered")]
    DuplicateLabel(String),
    #[error("skill {0:?} is not in the library")]
    UnknownLabel(String),
    #[error("skill {label:?}: {source}")]
    Segmentation {
        label: String,
        #[source]
        source: SegmentError,
    },
    #[error("skill {label:?}: {source}")]
    Extraction {
        label: String,
        #[source]
        source: TransferError,
    },
    #[error("step {step}: {message}")]
    InvalidStep { step: String, message: String },
    #[error("step {step} ({label}): {source}")]
    Transfer {
        step: String,
        label: String,
        #[source]
        source: TransferError,
    },
    #[error("step {step} ({label}): {source}")]
    Tracking {
        step: String,
        label: String,
        #[source]
        source: TrackError,
    },
    #[error("step {step} ({label}): audit found {rot_err:.3e} rad / {trans_err:.3e} m off the planned poses")]
    AuditFailed {
        step: String,
        label: String,
        rot_err: f64,
        trans_err: f64,
    },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("plan does not match the protocol: {0}")]
    PlanMismatch(String),
    #[error("invalid execution options: {0}")]
    InvalidOptions(String),
}

/// Everything derived from one demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillEntry {
    pub demonstration: Demonstration,
    pub segmented: SegmentedPath,
    pub guiding: GuidingPoseSet,
    pub report: ExtractionReport,
}

impl SkillEntry {
    pub fn build(
        label: &str,
        demonstration: Demonstration,
        roi_radius: f64,
        tol: SegmentTolerance,
    ) -> Result<Self, ProtocolError> {
        let segmented = segment_path(demonstration.path(), tol).map_err(|source| ProtocolError::Segmentation {
            label: label.to_string(),
            source,
        })?;
        Self::from_segmentation(label, demonstration, segmented, roi_radius)
    }

    pub fn from_segmentation(
        label: &str,
        demonstration: Demonstration,
        segmented: SegmentedPath,
        roi_radius: f64,
    ) -> Result<Self, ProtocolError> {
        let (guiding, report) =
            extract_guiding_poses(&demonstration, &segmented, roi_radius).map_err(|source| {
                ProtocolError::Extraction {
                    label: label.to_string(),
                    source,
                }
            })?;
        for w in &report.warnings {
            log::warn!("skill {label:?}: {w}");
        }
        Ok(Self {
            demonstration,
            segmented,
            guiding,
            report,
        })
    }
}

/// Label to skill mapping. Iteration order is lexicographic by label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    entries: BTreeMap<String, SkillEntry>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Segments `demo`, extracts its guiding poses and stores them under
    /// `label`.
    pub fn register(
        &mut self,
        label: &str,
        demo: Demonstration,
        roi_radius: f64,
        tol: SegmentTolerance,
        overwrite: bool,
    ) -> Result<&SkillEntry, ProtocolError> {
        if label.is_empty() {
            return Err(ProtocolError::Extraction {
                label: String::new(),
                source: TransferError::EmptyLabel,
            });
        }
        if !overwrite && self.entries.contains_key(label) {
            return Err(ProtocolError::DuplicateLabel(label.to_string()));
        }
        let entry = SkillEntry::build(label, demo, roi_radius, tol)?;
        self.entries.insert(label.to_string(), entry);
        Ok(&self.entries[label])
    }

    /// Stores an already built entry.
    pub fn insert(&mut self, label: &str, entry: SkillEntry, overwrite: bool) -> Result<(), ProtocolError> {
        if !overwrite && self.entries.contains_key(label) {
            return Err(ProtocolError::DuplicateLabel(label.to_string()));
        }
        self.entries.insert(label.to_string(), entry);
        Ok(())
    }

    /// Copies `labels` from `other` without re-demonstration.
    pub fn import(&mut self, other: &SkillLibrary, labels: &[String], overwrite: bool) -> Result<(), ProtocolError> {
        for l in labels {
            let entry = other.get(l).ok_or_else(|| ProtocolError::UnknownLabel(l.clone()))?;
            if !overwrite && self.entries.contains_key(l) {
                return Err(ProtocolError::DuplicateLabel(l.clone()));
            }
            self.entries.insert(l.clone(), entry.clone());
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&SkillEntry> {
        self.entries.get(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &SkillEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GateCondition {
    PhAtLeast { threshold: f64 },
    ColorDistanceAtLeast { reference: [f64; 3], threshold: f64 },
    /// Simulated seconds since the protocol started.
    ElapsedAtLeast { seconds: f64 },
}

impl GateCondition {
    fn validate(&self) -> Result<(), String> {
        match self {
            GateCondition::PhAtLeast { threshold } if !(0.0..=14.0).contains(threshold) => {
                Err(format!("pH threshold {threshold} outside 0..14"))
            }
            GateCondition::ColorDistanceAtLeast { reference, threshold } => {
                if !(*threshold >= 0.0) || !threshold.is_finite() {
                    return Err(format!("color distance threshold {threshold} must be nonnegative"));
                }
                if reference.iter().any(|c| !c.is_finite()) {
                    return Err("color reference must be finite".into());
                }
                Ok(())
            }
            GateCondition::ElapsedAtLeast { seconds } if !(*seconds >= 0.0) || !seconds.is_finite() => {
                Err(format!("elapsed seconds {seconds} must be nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dispense {
    pub reagent: String,
    pub ml: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Ph,
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolStep {
    Task {
        label: String,
        instance: TaskInstance,
    },
    Wait {
        seconds: f64,
    },
    Gate {
        condition: GateCondition,
    },
    Repeat {
        steps: Vec<ProtocolStep>,
        until: GateCondition,
        period: f64,
    },
    /// A non-manipulation side effect such as a pump or heater switch.
    Action {
        name: String,
        seconds: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dispense: Option<Dispense>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        read: Option<SensorKind>,
    },
}

fn child_id(prefix: &str, i: usize) -> String {
    if prefix.is_empty() {
        format!("{}", i + 1)
    } else {
        format!("{prefix}.{}", i + 1)
    }
}

/// Checks durations, thresholds and that every Task label is registered.
pub fn validate_steps(lib: &SkillLibrary, steps: &[ProtocolStep]) -> Result<(), ProtocolError> {
    validate_inner(lib, steps, "")
}

fn validate_inner(lib: &SkillLibrary, steps: &[ProtocolStep], prefix: &str) -> Result<(), ProtocolError> {
    for (i, s) in steps.iter().enumerate() {
        let id = child_id(prefix, i);
        let bad = |message: String| ProtocolError::InvalidStep {
            step: id.clone(),
            message,
        };
        match s {
            ProtocolStep::Task { label, .. } => {
                if !lib.contains(label) {
                    return Err(bad(format!("skill {label:?} is not in the library")));
                }
            }
            ProtocolStep::Wait { seconds } => {
                if !(*seconds > 0.0) || !seconds.is_finite() {
                    return Err(bad(format!("wait duration {seconds} must be positive")));
                }
            }
            ProtocolStep::Gate { condition } => condition.validate().map_err(bad)?,
            ProtocolStep::Repeat { steps, until, period } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(bad(format!("repeat period {period} must be positive")));
                }
                if steps.is_empty() {
                    return Err(bad("repeat body is empty".into()));
                }
                until.validate().map_err(bad)?;
                validate_inner(lib, steps, &id)?;
            }
            ProtocolStep::Action { seconds, dispense, .. } => {
                if !(*seconds > 0.0) || !seconds.is_finite() {
                    return Err(bad(format!("action duration {seconds} must be positive")));
                }
                if let Some(d) = dispense {
                    if !(d.ml > 0.0) || !d.ml.is_finite() || d.reagent.is_empty() {
                        return Err(bad("dispense needs a reagent and a positive volume".into()));
                    }
                }
            }
        }
    }
    Ok(())
}

/// One planned Task step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTask {
    pub step_id: String,
    pub label: String,
    pub waypoints: Vec<Waypoint>,
    pub legs: Vec<ConstraintLeg>,
    pub path: JointPath,
    pub audit_rot: f64,
    pub audit_trans: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannedStep {
    Task(PlannedTask),
    /// Wait, Gate and Action steps need no motion.
    Idle,
    Repeat {
        body: Vec<PlannedStep>,
        /// Joint-space path from the body's final configuration back to the
        /// loop entry configuration, absent when the body does not move.
        return_path: Option<JointPath>,
    },
}

/// Joint paths for a whole protocol, aligned with its steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPlan {
    pub q_start: JointConfig,
    pub q_end: JointConfig,
    pub steps: Vec<PlannedStep>,
}

impl ProtocolPlan {
    /// Task steps in protocol order, each body of a Repeat listed once.
    pub fn tasks(&self) -> Vec<&PlannedTask> {
        fn walk<'a>(steps: &'a [PlannedStep], out: &mut Vec<&'a PlannedTask>) {
            for s in steps {
                match s {
                    PlannedStep::Task(t) => out.push(t),
                    PlannedStep::Repeat { body, .. } => walk(body, out),
                    PlannedStep::Idle => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.steps, &mut out);
        out
    }
}

/// Per-task plan summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub step_id: String,
    pub label: String,
    pub waypoints: usize,
    pub legs: usize,
    pub configs: usize,
    pub audit_rot: f64,
    pub audit_trans: f64,
    pub path_hash: String,
}

impl From<&PlannedTask> for TaskReport {
    fn from(t: &PlannedTask) -> Self {
        Self {
            step_id: t.step_id.clone(),
            label: t.label.clone(),
            waypoints: t.waypoints.len(),
            legs: t.legs.len(),
            configs: t.path.len(),
            audit_rot: t.audit_rot,
            audit_trans: t.audit_trans,
            path_hash: t.path.summary_hash(),
        }
    }
}

/// Transfers, plans and tracks every Task step in order, each starting
/// where the previous one ended.
pub fn plan_protocol(
    lib: &SkillLibrary,
    steps: &[ProtocolStep],
    model: &RobotModel,
    q_start: &JointConfig,
    params: &TrackerParams,
) -> Result<ProtocolPlan, ProtocolError> {
    validate_steps(lib, steps)?;
    model.forward_kinematics(q_start)?;
    let mut q = q_start.clone();
    let planned = plan_inner(lib, steps, "", model, &mut q, params)?;
    Ok(ProtocolPlan {
        q_start: q_start.clone(),
        q_end: q,
        steps: planned,
    })
}

fn plan_inner(
    lib: &SkillLibrary,
    steps: &[ProtocolStep],
    prefix: &str,
    model: &RobotModel,
    q: &mut JointConfig,
    params: &TrackerParams,
) -> Result<Vec<PlannedStep>, ProtocolError> {
    let mut out = Vec::with_capacity(steps.len());
    for (i, s) in steps.iter().enumerate() {
        let id = child_id(prefix, i);
        match s {
            ProtocolStep::Task { label, instance } => {
                let task = plan_task(lib, &id, label, instance, model, q, params)?;
                *q = task.path.last().expect("tracked paths hold the start").clone();
                out.push(PlannedStep::Task(task));
            }
            ProtocolStep::Repeat { steps: body, .. } => {
                let entry = q.clone();
                let planned = plan_inner(lib, body, &id, model, q, params)?;
                let return_path = if *q == entry {
                    None
                } else {
                    let p = joint_space_path(q, &entry, params.max_joint_step);
                    *q = entry;
                    Some(p)
                };
                out.push(PlannedStep::Repeat {
                    body: planned,
                    return_path,
                });
            }
            _ => out.push(PlannedStep::Idle),
        }
    }
    Ok(out)
}

fn plan_task(
    lib: &SkillLibrary,
    id: &str,
    label: &str,
    instance: &TaskInstance,
    model: &RobotModel,
    q: &JointConfig,
    params: &TrackerParams,
) -> Result<PlannedTask, ProtocolError> {
    let entry = lib.get(label).ok_or_else(|| ProtocolError::UnknownLabel(label.to_string()))?;
    let transfer_err = |source| ProtocolError::Transfer {
        step: id.to_string(),
        label: label.to_string(),
        source,
    };
    let waypoints = transfer_guiding_poses(&entry.guiding, instance).map_err(transfer_err)?;
    let first = waypoints
        .first()
        .ok_or(TransferError::TooFewWaypoints(0))
        .map_err(transfer_err)?;
    let here = model.forward_kinematics(q)?;
    let mut legs = vec![ConstraintLeg {
        start: here,
        goal: first.pose,
        mode: LegMode::Transit,
    }];
    if waypoints.len() >= 2 {
        legs.extend(build_constraint_plan(&waypoints).map_err(transfer_err)?);
    }
    let tracking_err = |source| ProtocolError::Tracking {
        step: id.to_string(),
        label: label.to_string(),
        source,
    };
    let path = track_constraint_plan(model, q, &legs, params).map_err(tracking_err)?;
    let (audit_rot, audit_trans) = audit_joint_path(model, &path, &legs).map_err(tracking_err)?;
    if audit_rot > params.pose_tol_rot || audit_trans > params.pose_tol_trans {
        return Err(ProtocolError::AuditFailed {
            step: id.to_string(),
            label: label.to_string(),
            rot_err: audit_rot,
            trans_err: audit_trans,
        });
    }
    Ok(PlannedTask {
        step_id: id.to_string(),
        label: label.to_string(),
        waypoints,
        legs,
        path,
        audit_rot,
        audit_trans,
    })
}

/// A pH sample with the titrant volume that produced it, if the script is
/// volume driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhSample {
    pub ph: f64,
    pub titrant_ml: Option<f64>,
}

/// Simulated instruments. Readings depend only on the query time and the
/// dispensing history.
pub trait Sensors {
    fn ph(&mut self, t: f64) -> Option<PhSample>;
    fn color(&mut self, t: f64) -> Option<[f64; 3]>;
    fn dispense(&mut self, reagent: &str, ml: f64);
}

/// What drives a scripted pH curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhSource {
    /// Seconds since protocol start.
    Time,
    /// Cumulative milliliters of one reagent.
    Volume { reagent: String },
}

/// Piecewise-linear pH curve, held constant beyond its end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhScript {
    pub source: PhSource,
    /// `(x, pH)` pairs with strictly increasing `x`.
    pub points: Vec<[f64; 2]>,
}

impl PhScript {
    pub fn validate(&self) -> Result<(), String> {
        if self.points.is_empty() {
            return Err("pH script needs at least one point".into());
        }
        if self.points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err("pH script x values must increase strictly".into());
        }
        if self.points.iter().any(|p| !(0.0..=14.0).contains(&p[1]) || !p[0].is_finite()) {
            return Err("pH values must lie in 0..14".into());
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0][0] {
            return pts[0][1];
        }
        let last = pts[pts.len() - 1];
        if x >= last[0] {
            return last[1];
        }
        let k = pts.partition_point(|p| p[0] <= x);
        let (a, b) = (pts[k - 1], pts[k]);
        a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
    }
}

/// Pre-segmented mean vial color from time `t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorFrame {
    pub t: f64,
    pub rgb: [f64; 3],
}

/// Sensors replayed from fixture data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedSensors {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<PhScript>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub color: Vec<ColorFrame>,
    #[serde(skip)]
    dispensed: BTreeMap<String, f64>,
}

impl ScriptedSensors {
    pub fn new(ph: Option<PhScript>, color: Vec<ColorFrame>) -> Result<Self, String> {
        let s = Self {
            ph,
            color,
            dispensed: BTreeMap::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(p) = &self.ph {
            p.validate()?;
        }
        if self.color.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err("color frame times must increase strictly".into());
        }
        Ok(())
    }

    pub fn dispensed(&self, reagent: &str) -> f64 {
        self.dispensed.get(reagent).copied().unwrap_or(0.0)
    }
}

impl Sensors for ScriptedSensors {
    fn ph(&mut self, t: f64) -> Option<PhSample> {
        let script = self.ph.as_ref()?;
        Some(match &script.source {
            PhSource::Time => PhSample {
                ph: script.eval(t),
                titrant_ml: None,
            },
            PhSource::Volume { reagent } => {
                let v = self.dispensed(reagent);
                PhSample {
                    ph: script.eval(v),
                    titrant_ml: Some(v),
                }
            }
        })
    }

    fn color(&mut self, t: f64) -> Option<[f64; 3]> {
        let k = self.color.partition_point(|f| f.t <= t);
        (k > 0).then(|| self.color[k - 1].rgb)
    }

    fn dispense(&mut self, reagent: &str, ml: f64) {
        *self.dispensed.entry(reagent.to_string()).or_insert(0.0) += ml;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecOptions {
    pub poll_interval: f64,
    /// Longest simulated wait for a gate or a repeat condition.
    pub gate_timeout: f64,
    pub seconds_per_config: f64,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            poll_interval: 1.0,
            gate_timeout: 86_400.0,
            seconds_per_config: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reading {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub titrant_ml: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Satisfied,
    NotSatisfied,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step_id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub start: f64,
    pub end: f64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readings: Vec<Reading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub status: RunStatus,
    pub records: Vec<LogRecord>,
}

impl ExecutionLog {
    pub fn end_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.end)
    }

    /// Every reading in record order.
    pub fn readings(&self) -> impl Iterator<Item = &Reading> {
        self.records.iter().flat_map(|r| r.readings.iter())
    }
}

fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Executor<'a, S: Sensors> {
    sensors: &'a mut S,
    opts: ExecOptions,
    t: f64,
    records: Vec<LogRecord>,
}

struct Halted;

impl<S: Sensors> Executor<'_, S> {
    /// Polls once; returns whether `cond` holds and the reading taken.
    fn check(&mut self, cond: &GateCondition) -> (bool, Reading) {
        let mut r = Reading {
            t: self.t,
            ..Default::default()
        };
        let ok = match cond {
            GateCondition::ElapsedAtLeast { seconds } => self.t >= *seconds,
            GateCondition::PhAtLeast { threshold } => match self.sensors.ph(self.t) {
                Some(s) => {
                    r.ph = Some(s.ph);
                    r.titrant_ml = s.titrant_ml;
                    s.ph >= *threshold
                }
                None => false,
            },
            GateCondition::ColorDistanceAtLeast { reference, threshold } => match self.sensors.color(self.t) {
                Some(rgb) => {
                    let d = color_distance(&rgb, reference);
                    r.rgb = Some(rgb);
                    r.color_distance = Some(d);
                    d >= *threshold
                }
                None => false,
            },
        };
        (ok, r)
    }

    fn read(&mut self, kind: SensorKind) -> Reading {
        let mut r = Reading {
            t: self.t,
            ..Default::default()
        };
        match kind {
            SensorKind::Ph => {
                if let Some(s) = self.sensors.ph(self.t) {
                    r.ph = Some(s.ph);
                    r.titrant_ml = s.titrant_ml;
                }
            }
            SensorKind::Color => r.rgb = self.sensors.color(self.t),
        }
        r
    }

    fn motion(&mut self, id: &str, kind: &str, label: Option<&str>, path: &JointPath) {
        let start = self.t;
        self.t += path.len() as f64 * self.opts.seconds_per_config;
        self.records.push(LogRecord {
            step_id: id.to_string(),
            kind: kind.to_string(),
            label: label.map(str::to_string),
            start,
            end: self.t,
            outcome: Outcome::Done,
            readings: Vec::new(),
            path_hash: Some(path.summary_hash()),
            detail: None,
        });
    }

    fn run(&mut self, steps: &[ProtocolStep], plan: &[PlannedStep], prefix: &str) -> Result<(), Halted> {
        for (i, (s, p)) in steps.iter().zip(plan).enumerate() {
            let id = child_id(prefix, i);
            match (s, p) {
                (ProtocolStep::Task { label, .. }, PlannedStep::Task(t)) => {
                    self.motion(&id, "task", Some(label), &t.path);
                }
                (ProtocolStep::Wait { seconds }, _) => {
                    let start = self.t;
                    self.t += seconds;
                    self.records.push(LogRecord {
                        step_id: id,
                        kind: "wait".into(),
                        label: None,
                        start,
                        end: self.t,
                        outcome: Outcome::Done,
                        readings: Vec::new(),
                        path_hash: None,
                        detail: None,
                    });
                }
                (ProtocolStep::Gate { condition }, _) => {
                    let start = self.t;
                    let mut polls = 1usize;
                    let (mut ok, mut reading) = self.check(condition);
                    while !ok && self.t - start + self.opts.poll_interval <= self.opts.gate_timeout {
                        self.t += self.opts.poll_interval;
                        polls += 1;
                        (ok, reading) = self.check(condition);
                    }
                    self.records.push(LogRecord {
                        step_id: id,
                        kind: "gate".into(),
                        label: None,
                        start,
                        end: self.t,
                        outcome: if ok { Outcome::Satisfied } else { Outcome::Timeout },
                        readings: vec![reading],
                        path_hash: None,
                        detail: Some(format!("{polls} polls")),
                    });
                    if !ok {
                        return Err(Halted);
                    }
                }
                (ProtocolStep::Action { name, seconds, dispense, read }, _) => {
                    let start = self.t;
                    if let Some(d) = dispense {
                        self.sensors.dispense(&d.reagent, d.ml);
                    }
                    self.t += seconds;
                    let readings = read.map(|k| vec![self.read(k)]).unwrap_or_default();
                    self.records.push(LogRecord {
                        step_id: id,
                        kind: "action".into(),
                        label: Some(name.clone()),
                        start,
                        end: self.t,
                        outcome: Outcome::Done,
                        readings,
                        path_hash: None,
                        detail: dispense.as_ref().map(|d| format!("dispense {} ml {}", d.ml, d.reagent)),
                    });
                }
                (
                    ProtocolStep::Repeat { steps: body, until, period },
                    PlannedStep::Repeat { body: planned, return_path },
                ) => {
                    let loop_start = self.t;
                    let mut iteration = 0usize;
                    loop {
                        iteration += 1;
                        let iter_start = self.t;
                        self.run(body, planned, &id)?;
                        if let Some(rp) = return_path {
                            self.motion(&id, "return", None, rp);
                        }
                        let (ok, reading) = self.check(until);
                        let timed_out = !ok && self.t - loop_start >= self.opts.gate_timeout;
                        self.records.push(LogRecord {
                            step_id: id.clone(),
                            kind: "repeat".into(),
                            label: None,
                            start: iter_start,
                            end: self.t,
                            outcome: if ok {
                                Outcome::Satisfied
                            } else if timed_out {
                                Outcome::Timeout
                            } else {
                                Outcome::NotSatisfied
                            },
                            readings: vec![reading],
                            path_hash: None,
                            detail: Some(format!("iteration {iteration}")),
                        });
                        if ok {
                            break;
                        }
                        if timed_out {
                            return Err(Halted);
                        }
                        self.t = self.t.max(iter_start + period);
                    }
                }
                _ => unreachable!("plan shape checked before execution"),
            }
        }
        Ok(())
    }
}

fn check_shape(steps: &[ProtocolStep], plan: &[PlannedStep], prefix: &str) -> Result<(), ProtocolError> {
    if steps.len() != plan.len() {
        return Err(ProtocolError::PlanMismatch(format!(
            "{} steps but {} planned entries{}",
            steps.len(),
            plan.len(),
            if prefix.is_empty() { String::new() } else { format!(" in step {prefix}") }
        )));
    }
    for (i, (s, p)) in steps.iter().zip(plan).enumerate() {
        let id = child_id(prefix, i);
        match (s, p) {
            (ProtocolStep::Task { label, .. }, PlannedStep::Task(t)) if *label == t.label => {}
            (ProtocolStep::Repeat { steps, .. }, PlannedStep::Repeat { body, .. }) => check_shape(steps, body, &id)?,
            (ProtocolStep::Wait { .. } | ProtocolStep::Gate { .. } | ProtocolStep::Action { .. }, PlannedStep::Idle) => {}
            _ => return Err(ProtocolError::PlanMismatch(format!("step {id} differs from its plan"))),
        }
    }
    Ok(())
}

/// Runs a planned protocol on a simulated clock starting at zero.
///
/// A gate or repeat condition that is not met within
/// `opts.gate_timeout` ends the run with a timeout record and
/// [`RunStatus::Failed`].
pub fn execute_protocol<S: Sensors>(
    plan: &ProtocolPlan,
    steps: &[ProtocolStep],
    sensors: &mut S,
    opts: &ExecOptions,
) -> Result<ExecutionLog, ProtocolError> {
    for (name, v) in [
        ("poll_interval", opts.poll_interval),
        ("gate_timeout", opts.gate_timeout),
        ("seconds_per_config", opts.seconds_per_config),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(ProtocolError::InvalidOptions(format!("{name} must be positive, got {v}")));
        }
    }
    check_shape(steps, &plan.steps, "")?;
    let mut ex = Executor {
        sensors,
        opts: *opts,
        t: 0.0,
        records: Vec::new(),
    };
    let status = match ex.run(steps, &plan.steps, "") {
        Ok(()) => RunStatus::Completed,
        Err(Halted) => RunStatus::Failed,
    };
    Ok(ExecutionLog {
        status,
        records: ex.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{panda_like_7dof, panda_ready_config};
    use crate::se3::Pose;
    use crate::segmentation::PosePath;
    use nalgebra::{UnitQuaternion, Vector3};

    fn down() -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    }

    /// Approach from above, descend onto the object, lift.
    fn pick_demo(label: &str, obj: Vector3<f64>) -> Demonstration {
        let mut poses = Vec::new();
        let above = obj + Vector3::new(0.0, 0.0, 0.15);
        let start = Vector3::new(0.3, 0.0, 0.5);
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            poses.push(Pose::new(down(), start + (above - start) * s));
        }
        for k in 1..=20 {
            let s = k as f64 / 20.0;
            poses.push(Pose::new(down(), above + Vector3::new(0.0, 0.0, -0.1 * s)));
        }
        for k in 1..=20 {
            let s = k as f64 / 20.0;
            poses.push(Pose::new(down(), above + Vector3::new(0.0, 0.0, -0.1 + 0.1 * s)));
        }
        let path = PosePath::from_poses(poses).unwrap();
        let inst = TaskInstance::from_pairs([("vial", Pose::from_translation(obj))]).unwrap();
        Demonstration::new(label, path, inst).unwrap()
    }

    fn lib() -> SkillLibrary {
        let mut lib = SkillLibrary::new();
        lib.register(
            "pick",
            pick_demo("pick", Vector3::new(0.45, 0.1, 0.2)),
            0.25,
            SegmentTolerance::default(),
            false,
        )
        .unwrap();
        lib
    }

    #[test]
    fn register_and_query() {
        let l = lib();
        let e = l.get("pick").unwrap();
        assert!(e.guiding.pose_count() > 0);
        assert_eq!(l.labels().collect::<Vec<_>>(), ["pick"]);
    }

    #[test]
    fn duplicate_without_overwrite_rejected() {
        let mut l = lib();
        let d = pick_demo("pick", Vector3::new(0.45, 0.1, 0.2));
        assert_eq!(
            l.register("pick", d.clone(), 0.25, SegmentTolerance::default(), false).unwrap_err(),
            ProtocolError::DuplicateLabel("pick".into())
        );
        assert!(l.register("pick", d, 0.25, SegmentTolerance::default(), true).is_ok());
    }

    #[test]
    fn import_copies_entries() {
        let src = lib();
        let mut dst = SkillLibrary::new();
        dst.import(&src, &["pick".to_string()], false).unwrap();
        assert_eq!(dst.get("pick"), src.get("pick"));
        assert!(matches!(
            dst.import(&src, &["place".to_string()], false),
            Err(ProtocolError::UnknownLabel(_))
        ));
    }

    #[test]
    fn empty_protocol_plans_to_nothing() {
        let m = panda_like_7dof();
        let q = panda_ready_config();
        let plan = plan_protocol(&lib(), &[], &m, &q, &TrackerParams::default()).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.q_end, q);
    }

    #[test]
    fn unknown_label_is_invalid_step() {
        let m = panda_like_7dof();
        let steps = [ProtocolStep::Task {
            label: "stir".into(),
            instance: TaskInstance::new(vec![]).unwrap(),
        }];
        let err = plan_protocol(&lib(), &steps, &m, &panda_ready_config(), &TrackerParams::default()).unwrap_err();
        assert!(matches!(err, ProtocolError::InvalidStep { ref step, .. } if step == "1"), "{err}");
    }

    #[test]
    fn missing_object_names_step() {
        let m = panda_like_7dof();
        let steps = [ProtocolStep::Task {
            label: "pick".into(),
            instance: TaskInstance::from_pairs([("jar", Pose::identity())]).unwrap(),
        }];
        let err = plan_protocol(&lib(), &steps, &m, &panda_ready_config(), &TrackerParams::default()).unwrap_err();
        assert!(
            matches!(err, ProtocolError::Transfer { ref step, source: TransferError::MissingObject(ref o), .. } if step == "1" && o == "vial"),
            "{err}"
        );
    }

    #[test]
    fn consecutive_tasks_are_continuous() {
        let m = panda_like_7dof();
        let l = lib();
        let inst = |x: f64| TaskInstance::from_pairs([("vial", Pose::from_translation(Vector3::new(x, 0.1, 0.2)))]).unwrap();
        let steps = [
            ProtocolStep::Task {
                label: "pick".into(),
                instance: inst(0.45),
            },
            ProtocolStep::Wait { seconds: 5.0 },
            ProtocolStep::Task {
                label: "pick".into(),
                instance: inst(0.4),
            },
        ];
        let plan = plan_protocol(&l, &steps, &m, &panda_ready_config(), &TrackerParams::default()).unwrap();
        let tasks = plan.tasks();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].path.first(), Some(&plan.q_start));
        assert_eq!(tasks[0].path.last(), tasks[1].path.first());
        assert_eq!(tasks[1].path.last(), Some(&plan.q_end));
    }

    #[test]
    fn single_wait_advances_clock() {
        let plan = ProtocolPlan {
            q_start: JointConfig::zeros(1),
            q_end: JointConfig::zeros(1),
            steps: vec![PlannedStep::Idle],
        };
        let steps = [ProtocolStep::Wait { seconds: 3600.0 }];
        let mut sensors = ScriptedSensors::default();
        let log = execute_protocol(&plan, &steps, &mut sensors, &ExecOptions::default()).unwrap();
        assert_eq!(log.status, RunStatus::Completed);
        assert_eq!(log.end_time(), 3600.0);
        assert_eq!(log.readings().count(), 0);
    }

    #[test]
    fn unsatisfiable_gate_times_out() {
        let plan = ProtocolPlan {
            q_start: JointConfig::zeros(1),
            q_end: JointConfig::zeros(1),
            steps: vec![PlannedStep::Idle, PlannedStep::Idle],
        };
        let steps = [
            ProtocolStep::Gate {
                condition: GateCondition::PhAtLeast { threshold: 12.0 },
            },
            ProtocolStep::Wait { seconds: 1.0 },
        ];
        let mut sensors = ScriptedSensors::new(
            Some(PhScript {
                source: PhSource::Time,
                points: vec![[0.0, 7.0], [100.0, 8.0]],
            }),
            vec![],
        )
        .unwrap();
        let opts = ExecOptions {
            gate_timeout: 600.0,
            ..Default::default()
        };
        let log = execute_protocol(&plan, &steps, &mut sensors, &opts).unwrap();
        assert_eq!(log.status, RunStatus::Failed);
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].outcome, Outcome::Timeout);
        assert_eq!(log.end_time(), 600.0);
    }

    #[test]
    fn gate_logs_triggering_reading() {
        let plan = ProtocolPlan {
            q_start: JointConfig::zeros(1),
            q_end: JointConfig::zeros(1),
            steps: vec![PlannedStep::Idle],
        };
        let reference = [200.0, 180.0, 60.0];
        let steps = [ProtocolStep::Gate {
            condition: GateCondition::ColorDistanceAtLeast { reference, threshold: 100.0 },
        }];
        let frames = vec![
            ColorFrame { t: 0.0, rgb: reference },
            ColorFrame { t: 90.5, rgb: [150.0, 30.0, 40.0] },
        ];
        let mut sensors = ScriptedSensors::new(None, frames).unwrap();
        let log = execute_protocol(&plan, &steps, &mut sensors, &ExecOptions::default()).unwrap();
        let r = &log.records[0];
        assert_eq!(r.outcome, Outcome::Satisfied);
        assert_eq!(r.end, 91.0);
        assert!(r.readings[0].color_distance.unwrap() >= 100.0);
    }

    #[test]
    fn repeat_runs_until_volume_driven_ph() {
        let plan = ProtocolPlan {
            q_start: JointConfig::zeros(1),
            q_end: JointConfig::zeros(1),
            steps: vec![PlannedStep::Repeat {
                body: vec![PlannedStep::Idle],
                return_path: None,
            }],
        };
        let steps = [ProtocolStep::Repeat {
            steps: vec![ProtocolStep::Action {
                name: "base".into(),
                seconds: 10.0,
                dispense: Some(Dispense {
                    reagent: "NaOH".into(),
                    ml: 4.0,
                }),
                read: None,
            }],
            until: GateCondition::PhAtLeast { threshold: 12.0 },
            period: 60.0,
        }];
        let mut sensors = ScriptedSensors::new(
            Some(PhScript {
                source: PhSource::Volume { reagent: "NaOH".into() },
                points: vec![[0.0, 2.0], [40.0, 13.0]],
            }),
            vec![],
        )
        .unwrap();
        let log = execute_protocol(&plan, &steps, &mut sensors, &ExecOptions::default()).unwrap();
        assert_eq!(log.status, RunStatus::Completed);
        let checks: Vec<_> = log.records.iter().filter(|r| r.kind == "repeat").collect();
        // pH(36) = 11.9, pH(40) = 13.
        assert_eq!(checks.len(), 10);
        assert_eq!(checks.last().unwrap().readings[0].titrant_ml, Some(40.0));
        assert!(checks[..9].iter().all(|r| r.outcome == Outcome::NotSatisfied));
        assert_eq!(checks[1].start, 60.0);
    }

    #[test]
    fn ph_script_interpolates_and_holds() {
        let s = PhScript {
            source: PhSource::Time,
            points: vec![[0.0, 2.0], [10.0, 4.0], [20.0, 10.0]],
        };
        assert_eq!(s.eval(-1.0), 2.0);
        assert_eq!(s.eval(5.0), 3.0);
        assert_eq!(s.eval(10.0), 4.0);
        assert_eq!(s.eval(15.0), 7.0);
        assert_eq!(s.eval(30.0), 10.0);
    }

    #[test]
    fn invalid_steps_rejected() {
        let l = lib();
        for s in [
            ProtocolStep::Wait { seconds: 0.0 },
            ProtocolStep::Gate {
                condition: GateCondition::PhAtLeast { threshold: 15.0 },
            },
            ProtocolStep::Repeat {
                steps: vec![],
                until: GateCondition::ElapsedAtLeast { seconds: 1.0 },
                period: 1.0,
            },
            ProtocolStep::Repeat {
                steps: vec![ProtocolStep::Wait { seconds: 1.0 }],
                until: GateCondition::ElapsedAtLeast { seconds: 1.0 },
                period: -1.0,
            },
        ] {
            assert!(validate_steps(&l, &[s]).is_err());
        }
    }

    #[test]
    fn mismatched_plan_rejected() {
        let plan = ProtocolPlan {
            q_start: JointConfig::zeros(1),
            q_end: JointConfig::zeros(1),
            steps: vec![],
        };
        let steps = [ProtocolStep::Wait { seconds: 1.0 }];
        assert!(matches!(
            execute_protocol(&plan, &steps, &mut ScriptedSensors::default(), &ExecOptions::default()),
            Err(ProtocolError::PlanMismatch(_))
        ));
    }

    #[test]
    fn step_serialization_shape() {
        let s = ProtocolStep::Gate {
            condition: GateCondition::ElapsedAtLeast { seconds: 5.0 },
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["kind"], "gate");
        assert_eq!(v["condition"]["type"], "elapsed_at_least");
        let back: ProtocolStep = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}

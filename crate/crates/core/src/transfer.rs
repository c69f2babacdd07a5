//! Guiding-pose extraction and transfer to new task instances.
//!
//! Breakpoints of a segmented demonstration that fall inside a sphere around
//! a task-relevant object are stored relative to that object (`O_i^-1 * G`).
//! For a new instance the same relative poses are re-anchored on the new
//! object poses (`O_i' * O_i^-1 * G`), and consecutive waypoints become
//! constant-screw legs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::Pose;
use crate::segmentation::{PosePath, SegmentedPath};

/// Default region-of-interest radius in meters.
pub const DEFAULT_ROI_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error("object id {0:?} appears more than once in the task instance")]
    DuplicateObject(String),
    #[error("object id must be nonempty")]
    EmptyObjectId,
    #[error("demonstration label must be nonempty")]
    EmptyLabel,
    #[error("region-of-interest radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("segmentation covers {segmented} poses but the demonstration has {path}")]
    SegmentationMismatch { segmented: usize, path: usize },
    #[error("no breakpoint lies within {radius} m of any object (nearest misses: {})", format_misses(.nearest))]
    NothingInRoi { radius: f64, nearest: Vec<(String, f64)> },
    #[error("task instance has no object with id {0:?}")]
    MissingObject(String),
    #[error("a constraint plan needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
}

fn format_misses(nearest: &[(String, f64)]) -> String {
    nearest
        .iter()
        .map(|(id, d)| format!("{id}: {d:.4} m"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceObject {
    pub id: String,
    pub pose: Pose,
}

/// Ordered task-relevant object poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<InstanceObject>", into = "Vec<InstanceObject>")]
pub struct TaskInstance {
    objects: Vec<InstanceObject>,
}

impl TryFrom<Vec<InstanceObject>> for TaskInstance {
    type Error = TransferError;

    fn try_from(objects: Vec<InstanceObject>) -> Result<Self, Self::Error> {
        Self::new(objects)
    }
}

impl From<TaskInstance> for Vec<InstanceObject> {
    fn from(t: TaskInstance) -> Self {
        t.objects
    }
}

impl TaskInstance {
    pub fn new(objects: Vec<InstanceObject>) -> Result<Self, TransferError> {
        let mut seen = BTreeSet::new();
        for o in &objects {
            if o.id.is_empty() {
                return Err(TransferError::EmptyObjectId);
            }
            if !seen.insert(o.id.as_str()) {
                return Err(TransferError::DuplicateObject(o.id.clone()));
            }
        }
        Ok(Self { objects })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Pose)>) -> Result<Self, TransferError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, pose)| InstanceObject { id: id.into(), pose })
                .collect(),
        )
    }

    pub fn objects(&self) -> &[InstanceObject] {
        &self.objects
    }

    pub fn get(&self, id: &str) -> Option<&Pose> {
        self.objects.iter().find(|o| o.id == id).map(|o| &o.pose)
    }

    /// Left-multiplies every object pose by `t`.
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            objects: self
                .objects
                .iter()
                .map(|o| InstanceObject {
                    id: o.id.clone(),
                    pose: t.compose(&o.pose),
                })
                .collect(),
        }
    }
}

/// A single recorded demonstration and the instance it was recorded in.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    label: String,
    path: PosePath,
    instance: TaskInstance,
}

impl Demonstration {
    pub fn new(label: impl Into<String>, path: PosePath, instance: TaskInstance) -> Result<Self, TransferError> {
        let label = label.into();
        if label.is_empty() {
            return Err(TransferError::EmptyLabel);
        }
        Ok(Self { label, path, instance })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn path(&self) -> &PosePath {
        &self.path
    }

    pub fn instance(&self) -> &TaskInstance {
        &self.instance
    }
}

/// Object-relative breakpoint poses for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGuidingPoses {
    pub object_id: String,
    /// Indices into the demonstration path of the retained breakpoints.
    pub breakpoint_indices: Vec<usize>,
    pub relative_poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidingPoseSet {
    pub per_object: Vec<ObjectGuidingPoses>,
    pub roi_radius: f64,
}

impl GuidingPoseSet {
    pub fn pose_count(&self) -> usize {
        self.per_object.iter().map(|o| o.relative_poses.len()).sum()
    }
}

/// Diagnostics gathered during extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    /// Objects with no retained breakpoint.
    pub absent: Vec<String>,
    /// Closest breakpoint distance per object, in instance order.
    pub nearest_distance: Vec<(String, f64)>,
    /// Objects whose retained breakpoints are not contiguous in path order.
    pub reentered: Vec<String>,
    pub warnings: Vec<String>,
}

/// Retains breakpoints inside each object's region of interest (closed ball
/// of radius `roi_radius`) as object-relative poses.
///
/// A breakpoint inside several regions goes to the object whose region the
/// path entered first, then to the nearer object. Objects are ordered by
/// first entry.
pub fn extract_guiding_poses(
    demo: &Demonstration,
    seg: &SegmentedPath,
    roi_radius: f64,
) -> Result<(GuidingPoseSet, ExtractionReport), TransferError> {
    if !(roi_radius > 0.0) || !roi_radius.is_finite() {
        return Err(TransferError::InvalidRadius(roi_radius));
    }
    if seg.source_len() != demo.path().len() {
        return Err(TransferError::SegmentationMismatch {
            segmented: seg.source_len(),
            path: demo.path().len(),
        });
    }
    let objects = demo.instance().objects();
    let poses = demo.path().poses();
    let bps = seg.breakpoints();

    // distance[k][i]: breakpoint k to object i.
    let distance: Vec<Vec<f64>> = bps
        .iter()
        .map(|&k| {
            objects
                .iter()
                .map(|o| (poses[k].translation() - o.pose.translation()).norm())
                .collect()
        })
        .collect();

    let first_entry: Vec<Option<usize>> = (0..objects.len())
        .map(|i| (0..bps.len()).find(|&k| distance[k][i] <= roi_radius))
        .collect();

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); objects.len()];
    for (k, row) in distance.iter().enumerate() {
        let owner = (0..objects.len())
            .filter(|&i| row[i] <= roi_radius)
            .min_by(|&a, &b| {
                first_entry[a]
                    .cmp(&first_entry[b])
                    .then(row[a].total_cmp(&row[b]))
                    .then(a.cmp(&b))
            });
        if let Some(i) = owner {
            assigned[i].push(k);
        }
    }

    let mut report = ExtractionReport {
        nearest_distance: (0..objects.len())
            .map(|i| {
                let d = distance.iter().map(|row| row[i]).fold(f64::INFINITY, f64::min);
                (objects[i].id.clone(), d)
            })
            .collect(),
        ..Default::default()
    };

    let mut order: Vec<usize> = (0..objects.len()).filter(|&i| !assigned[i].is_empty()).collect();
    if order.is_empty() {
        return Err(TransferError::NothingInRoi {
            radius: roi_radius,
            nearest: report.nearest_distance,
        });
    }
    order.sort_by_key(|&i| (assigned[i][0], i));

    for (i, o) in objects.iter().enumerate() {
        if assigned[i].is_empty() {
            report.absent.push(o.id.clone());
            if first_entry[i].is_some() {
                report.warnings.push(format!(
                    "object {:?} is entered only inside an earlier object's region",
                    o.id
                ));
            }
        } else if assigned[i].windows(2).any(|w| w[1] != w[0] + 1) {
            report.reentered.push(o.id.clone());
            report
                .warnings
                .push(format!("demonstration re-enters the region of object {:?}", o.id));
        }
    }
    if !order.windows(2).all(|w| w[0] < w[1]) {
        report.warnings.push(format!(
            "visit order {:?} differs from instance order",
            order.iter().map(|&i| objects[i].id.as_str()).collect::<Vec<_>>()
        ));
    }
    for w in &report.warnings {
        log::warn!("{}: {w}", demo.label());
    }

    let per_object = order
        .iter()
        .map(|&i| {
            let inv = objects[i].pose.inverse();
            let indices: Vec<usize> = assigned[i].iter().map(|&k| bps[k]).collect();
            ObjectGuidingPoses {
                object_id: objects[i].id.clone(),
                relative_poses: indices.iter().map(|&j| inv.compose(&poses[j])).collect(),
                breakpoint_indices: indices,
            }
        })
        .collect();
    Ok((
        GuidingPoseSet {
            per_object,
            roi_radius,
        },
        report,
    ))
}

/// An absolute waypoint tagged with the object it was anchored to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub object_id: String,
    pub pose: Pose,
}

/// Re-anchors every stored relative pose on the new object poses. The
/// waypoints come out in the demonstration's temporal order.
pub fn transfer_guiding_poses(
    gp: &GuidingPoseSet,
    new_instance: &TaskInstance,
) -> Result<Vec<Waypoint>, TransferError> {
    let mut out = Vec::with_capacity(gp.pose_count());
    for entry in &gp.per_object {
        let anchor = new_instance
            .get(&entry.object_id)
            .ok_or_else(|| TransferError::MissingObject(entry.object_id.clone()))?;
        out.extend(entry.breakpoint_indices.iter().zip(&entry.relative_poses).map(|(k, rel)| {
            (
                *k,
                Waypoint {
                    object_id: entry.object_id.clone(),
                    pose: anchor.compose(rel),
                },
            )
        }));
    }
    out.sort_by_key(|(k, _)| *k);
    Ok(out.into_iter().map(|(_, w)| w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegMode {
    WithinObject,
    BetweenObjects,
    /// Inserted between tasks; not part of any demonstration.
    Transit,
}

/// A constant-screw leg from `start` to `goal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLeg {
    pub start: Pose,
    pub goal: Pose,
    pub mode: LegMode,
}

pub fn build_constraint_plan(waypoints: &[Waypoint]) -> Result<Vec<ConstraintLeg>, TransferError> {
    if waypoints.len() < 2 {
        return Err(TransferError::TooFewWaypoints(waypoints.len()));
    }
    Ok(waypoints
        .windows(2)
        .map(|w| ConstraintLeg {
            start: w[0].pose,
            goal: w[1].pose,
            mode: if w[0].object_id == w[1].object_id {
                LegMode::WithinObject
            } else {
                LegMode::BetweenObjects
            },
        })
        .collect())
}

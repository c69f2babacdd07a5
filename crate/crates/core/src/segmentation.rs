//! Constant-screw segmentation of demonstrated pose sequences.
//!
//! A demonstration is reduced to the sub-sequence of poses at which the
//! motion stops being explainable by a single screw. Segments are grown
//! greedily from each breakpoint: the candidate endpoint is pushed forward
//! while every interior pose stays within tolerance of the ScLERP path
//! between the segment endpoints.
//!
//! Interior poses are matched to the chord by arc length, counting one radian
//! of rotation as one meter of translation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, ScrewDisplacement, ScrewInterpolator};

/// Consecutive poses closer than this (rotation + translation) are sensor
/// holds and cannot become breakpoints.
pub const DUPLICATE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("pose path needs at least 2 poses, got {0}")]
    TooShort(usize),
    #[error("timestamps: {0}")]
    InvalidTimestamps(String),
    #[error("tolerances must be positive, got rotation {rot} rad and translation {trans} m")]
    InvalidTolerance { rot: f64, trans: f64 },
    #[error("invalid breakpoints: {0}")]
    InvalidBreakpoints(String),
    #[error("segmentation was built for a path of {expected} poses, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// An ordered sequence of end-effector poses with optional timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePath {
    poses: Vec<Pose>,
    timestamps: Option<Vec<f64>>,
}

impl PosePath {
    pub fn new(poses: Vec<Pose>, timestamps: Option<Vec<f64>>) -> Result<Self, SegmentError> {
        if poses.len() < 2 {
            return Err(SegmentError::TooShort(poses.len()));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != poses.len() {
                return Err(SegmentError::InvalidTimestamps(format!(
                    "{} timestamps for {} poses",
                    ts.len(),
                    poses.len()
                )));
            }
            if ts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(SegmentError::InvalidTimestamps("not strictly increasing".into()));
            }
        }
        Ok(Self { poses, timestamps })
    }

    pub fn from_poses(poses: Vec<Pose>) -> Result<Self, SegmentError> {
        Self::new(poses, None)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Left-multiplies every pose by `t`.
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    /// Cumulative arc length with one radian counted as one meter.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.poses.len());
        out.push(0.0);
        for w in self.poses.windows(2) {
            acc += composite_distance(&w[0], &w[1]);
            out.push(acc);
        }
        out
    }
}

fn composite_distance(a: &Pose, b: &Pose) -> f64 {
    a.rotation_distance(b) + a.translation_distance(b)
}

/// Rotation (rad) and translation (m) tolerances for segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTolerance {
    pub rot: f64,
    pub trans: f64,
}

impl Default for SegmentTolerance {
    fn default() -> Self {
        Self {
            rot: 0.05,
            trans: 0.005,
        }
    }
}

impl SegmentTolerance {
    pub fn new(rot: f64, trans: f64) -> Result<Self, SegmentError> {
        if !(rot > 0.0) || !(trans > 0.0) || !rot.is_finite() || !trans.is_finite() {
            return Err(SegmentError::InvalidTolerance { rot, trans });
        }
        Ok(Self { rot, trans })
    }
}

/// One constant-screw segment between two breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_index: usize,
    pub end_index: usize,
    pub start: Pose,
    pub end: Pose,
    pub screw: ScrewDisplacement,
}

/// Breakpoints (0-based indices into the source path, first and last
/// included) and the segments between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedPath {
    breakpoints: Vec<usize>,
    segments: Vec<Segment>,
    source_len: usize,
    tolerance: SegmentTolerance,
}

impl SegmentedPath {
    /// Rebuilds a segmentation from stored breakpoints.
    pub fn from_breakpoints(
        path: &PosePath,
        breakpoints: Vec<usize>,
        tolerance: SegmentTolerance,
    ) -> Result<Self, SegmentError> {
        let m = path.len();
        if breakpoints.len() < 2 {
            return Err(SegmentError::InvalidBreakpoints("need at least 2".into()));
        }
        if breakpoints[0] != 0 || *breakpoints.last().unwrap() != m - 1 {
            return Err(SegmentError::InvalidBreakpoints(format!(
                "must start at 0 and end at {}",
                m - 1
            )));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SegmentError::InvalidBreakpoints("not strictly increasing".into()));
        }
        let poses = path.poses();
        let segments = breakpoints
            .windows(2)
            .map(|w| {
                let chord = ScrewInterpolator::new(&poses[w[0]], &poses[w[1]]);
                Segment {
                    start_index: w[0],
                    end_index: w[1],
                    start: poses[w[0]],
                    end: poses[w[1]],
                    screw: *chord.screw(),
                }
            })
            .collect();
        Ok(Self {
            breakpoints,
            segments,
            source_len: m,
            tolerance,
        })
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn tolerance(&self) -> SegmentTolerance {
        self.tolerance
    }

    /// Poses at the breakpoints, in path order.
    pub fn breakpoint_poses(&self) -> Vec<Pose> {
        let mut out: Vec<Pose> = self.segments.iter().map(|s| s.start).collect();
        if let Some(last) = self.segments.last() {
            out.push(last.end);
        }
        out
    }
}

/// Maximum rotational and translational deviation of the interior poses
/// `a+1..b` from the ScLERP chord between poses `a` and `b`.
fn chord_deviation(poses: &[Pose], arc: &[f64], a: usize, b: usize) -> (f64, f64) {
    let chord = ScrewInterpolator::new(&poses[a], &poses[b]);
    let total = arc[b] - arc[a];
    let mut max_rot = 0.0_f64;
    let mut max_trans = 0.0_f64;
    for j in a + 1..b {
        let tau = if total > 0.0 {
            ((arc[j] - arc[a]) / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = chord.at_unchecked(tau);
        max_rot = max_rot.max(poses[j].rotation_distance(&p));
        max_trans = max_trans.max(poses[j].translation_distance(&p));
    }
    (max_rot, max_trans)
}

fn chord_within(poses: &[Pose], arc: &[f64], a: usize, b: usize, tol: &SegmentTolerance) -> bool {
    let chord = ScrewInterpolator::new(&poses[a], &poses[b]);
    let total = arc[b] - arc[a];
    (a + 1..b).all(|j| {
        let tau = if total > 0.0 {
            ((arc[j] - arc[a]) / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = chord.at_unchecked(tau);
        poses[j].rotation_distance(&p) <= tol.rot && poses[j].translation_distance(&p) <= tol.trans
    })
}

/// Indices that may become breakpoints: runs of near-identical poses are
/// represented by their first pose, and the final pose is always present.
fn candidate_indices(poses: &[Pose]) -> Vec<usize> {
    let mut keep = vec![0];
    for (i, p) in poses.iter().enumerate().skip(1) {
        let last = &poses[*keep.last().unwrap()];
        if composite_distance(last, p) > DUPLICATE_THRESHOLD {
            keep.push(i);
        }
    }
    let last = poses.len() - 1;
    if *keep.last().unwrap() != last {
        if keep.len() > 1 {
            *keep.last_mut().unwrap() = last;
        } else {
            keep.push(last);
        }
    }
    keep
}

/// Greedy constant-screw segmentation.
pub fn segment_path(path: &PosePath, tol: SegmentTolerance) -> Result<SegmentedPath, SegmentError> {
    let tol = SegmentTolerance::new(tol.rot, tol.trans)?;
    let poses = path.poses();
    let arc = path.arc_lengths();
    let candidates = candidate_indices(poses);

    let mut breakpoints = vec![candidates[0]];
    let mut start = 0;
    while start + 1 < candidates.len() {
        let a = candidates[start];
        let mut end = start + 1;
        while end + 1 < candidates.len() && chord_within(poses, &arc, a, candidates[end + 1], &tol) {
            end += 1;
        }
        breakpoints.push(candidates[end]);
        start = end;
    }
    SegmentedPath::from_breakpoints(path, breakpoints, tol)
}

/// Maximum `(rotation, translation)` deviation of all interior poses from
/// their segment's ScLERP interpolant.
pub fn reconstruction_error(path: &PosePath, seg: &SegmentedPath) -> Result<(f64, f64), SegmentError> {
    if seg.source_len() != path.len() {
        return Err(SegmentError::LengthMismatch {
            expected: seg.source_len(),
            actual: path.len(),
        });
    }
    let arc = path.arc_lengths();
    Ok(seg.breakpoints().windows(2).fold((0.0_f64, 0.0_f64), |acc, w| {
        let (r, t) = chord_deviation(path.poses(), &arc, w[0], w[1]);
        (acc.0.max(r), acc.1.max(t))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{displacement_from_screw, ScrewDisplacement};
    use nalgebra::{UnitQuaternion, Vector3};

    /// Samples `n` poses (including both ends) along a constant screw from `start`.
    fn screw_samples(start: &Pose, screw: &ScrewDisplacement, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|k| {
                let s = screw.with_magnitude(screw.magnitude() * k as f64 / (n - 1) as f64);
                displacement_from_screw(&s).compose(start)
            })
            .collect()
    }

    fn start_pose() -> Pose {
        Pose::new(
            UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
            Vector3::new(0.4, 0.1, 0.3),
        )
    }

    #[test]
    fn too_short_rejected() {
        assert_eq!(PosePath::from_poses(vec![Pose::identity()]), Err(SegmentError::TooShort(1)));
    }

    #[test]
    fn bad_timestamps_rejected() {
        let poses = vec![Pose::identity(); 3];
        assert!(PosePath::new(poses.clone(), Some(vec![0.0, 1.0])).is_err());
        assert!(PosePath::new(poses.clone(), Some(vec![0.0, 1.0, 1.0])).is_err());
        assert!(PosePath::new(poses, Some(vec![0.0, 1.0, 2.0])).is_ok());
    }

    #[test]
    fn single_screw_is_one_segment() {
        let screw = ScrewDisplacement::about_axis(
            &Vector3::new(0.3, 0.2, 1.0),
            &Vector3::new(0.1, 0.5, 0.0),
            0.05,
            1.2,
        )
        .unwrap();
        let path = PosePath::from_poses(screw_samples(&start_pose(), &screw, 50)).unwrap();
        let seg = segment_path(&path, SegmentTolerance::default()).unwrap();
        assert_eq!(seg.breakpoints(), &[0, 49]);
        let (r, t) = reconstruction_error(&path, &seg).unwrap();
        assert!(r <= 1e-9 && t <= 1e-9, "{r} {t}");
    }

    #[test]
    fn translation_then_rotation_splits_at_junction() {
        let a = ScrewDisplacement::translation(&Vector3::z(), 0.3).unwrap();
        let b = ScrewDisplacement::about_axis(&Vector3::x(), &Vector3::zeros(), 0.0, 1.0).unwrap();
        let mut poses = screw_samples(&start_pose(), &a, 25);
        let junction = *poses.last().unwrap();
        poses.extend(screw_samples(&junction, &b, 26).into_iter().skip(1));
        let path = PosePath::from_poses(poses).unwrap();
        let seg = segment_path(&path, SegmentTolerance::default()).unwrap();
        assert_eq!(seg.segment_count(), 2);
        assert!((seg.breakpoints()[1] as i64 - 24).abs() <= 1);
    }

    #[test]
    fn duplicates_never_become_breakpoints() {
        let a = ScrewDisplacement::translation(&Vector3::x(), 0.2).unwrap();
        let mut poses = screw_samples(&start_pose(), &a, 10);
        let hold = *poses.last().unwrap();
        poses.extend(std::iter::repeat_n(hold, 5));
        let path = PosePath::from_poses(poses).unwrap();
        let seg = segment_path(&path, SegmentTolerance::default()).unwrap();
        assert_eq!(seg.breakpoints(), &[0, 14]);
    }

    #[test]
    fn all_duplicates_give_one_zero_segment() {
        let path = PosePath::from_poses(vec![start_pose(); 4]).unwrap();
        let seg = segment_path(&path, SegmentTolerance::default()).unwrap();
        assert_eq!(seg.breakpoints(), &[0, 3]);
        assert!(seg.segments()[0].screw.is_zero());
    }

    #[test]
    fn perturbed_middle_pose_error() {
        // Chord from the identity to a 0.2 m x-translation; the middle pose
        // sits at the chord midpoint pushed 1 mm along y.
        let end = Pose::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let mid = Pose::from_translation(Vector3::new(0.1, 0.001, 0.0));
        let path = PosePath::from_poses(vec![Pose::identity(), mid, end]).unwrap();
        let seg = SegmentedPath::from_breakpoints(&path, vec![0, 2], SegmentTolerance::default()).unwrap();
        let (r, t) = reconstruction_error(&path, &seg).unwrap();
        assert_eq!(r, 0.0);
        // Arc-length matching puts the middle pose at tau = 0.5 exactly.
        assert!((t - 0.001).abs() <= 1e-6, "{t}");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let path = PosePath::from_poses(vec![Pose::identity(), Pose::from_translation(Vector3::x())]).unwrap();
        let seg = segment_path(&path, SegmentTolerance::default()).unwrap();
        let longer = PosePath::from_poses(vec![Pose::identity(); 3]).unwrap();
        assert!(matches!(
            reconstruction_error(&longer, &seg),
            Err(SegmentError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn bad_tolerance_rejected() {
        let path = PosePath::from_poses(vec![Pose::identity(); 2]).unwrap();
        assert!(segment_path(&path, SegmentTolerance { rot: 0.0, trans: 0.1 }).is_err());
    }

    #[test]
    fn bad_breakpoints_rejected() {
        let path = PosePath::from_poses(vec![Pose::identity(); 4]).unwrap();
        let tol = SegmentTolerance::default();
        assert!(SegmentedPath::from_breakpoints(&path, vec![0, 2], tol).is_err());
        assert!(SegmentedPath::from_breakpoints(&path, vec![1, 3], tol).is_err());
        assert!(SegmentedPath::from_breakpoints(&path, vec![0, 2, 2, 3], tol).is_err());
    }
}

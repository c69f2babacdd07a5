//! Screw-geometry programming by demonstration.
//!
//! A recorded end-effector path is split into constant-screw segments, the
//! segment endpoints are re-expressed relative to task objects, carried over
//! to a new arrangement of those objects, and turned into joint paths by
//! screw interpolation with resolved motion rate control. Protocols chain
//! such skills with waits, sensor gates and loops.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod io;
pub mod kinematics;
pub mod protocol;
pub mod rmrc;
pub mod se3;
pub mod segmentation;
pub mod transfer;

pub use kinematics::{JointConfig, RobotModel};
pub use rmrc::{track_constraint_plan, JointPath, TrackerParams};
pub use se3::{sclerp, Pose, ScrewDisplacement};
pub use segmentation::{segment_path, PosePath, SegmentTolerance, SegmentedPath};
pub use transfer::{Demonstration, TaskInstance};

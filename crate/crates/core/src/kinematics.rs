//! Serial-manipulator kinematics in product-of-exponentials form.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, UnitTwist};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub joint_type: JointType,
    /// Unit twist in the base frame at the zero configuration.
    pub twist: UnitTwist,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    pub fn revolute(axis: Vector3<f64>, point: Vector3<f64>, lower: f64, upper: f64) -> Self {
        Self {
            joint_type: JointType::Revolute,
            twist: UnitTwist::revolute(&axis, &point),
            lower,
            upper,
        }
    }

    pub fn prismatic(direction: Vector3<f64>, lower: f64, upper: f64) -> Self {
        Self {
            joint_type: JointType::Prismatic,
            twist: UnitTwist::prismatic(&direction),
            lower,
            upper,
        }
    }
}

/// Joint values, radians for revolute and meters for prismatic joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(Vec<f64>);

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<Joint>,
    home_pose: Pose,
}

impl RobotModel {
    pub fn new(name: impl Into<String>, joints: Vec<Joint>, home_pose: Pose) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidModel("at least one joint is required".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            if !(j.lower < j.upper) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {}: lower limit {} must be below upper limit {}",
                    i + 1,
                    j.lower,
                    j.upper
                )));
            }
            let tw = &j.twist;
            let ok = match j.joint_type {
                JointType::Revolute => {
                    (tw.angular.norm() - 1.0).abs() <= 1e-12 && tw.linear.iter().all(|v| v.is_finite())
                }
                JointType::Prismatic => {
                    tw.angular == Vector3::zeros() && (tw.linear.norm() - 1.0).abs() <= 1e-12
                }
            };
            if !ok {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {}: twist does not match its joint type",
                    i + 1
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            joints,
            home_pose,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn home_pose(&self) -> &Pose {
        &self.home_pose
    }

    fn check_dim(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// `exp(xi_1 q_1) ... exp(xi_n q_n) * home_pose`.
    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Pose, KinematicsError> {
        self.check_dim(q)?;
        let chain = self
            .joints
            .iter()
            .zip(q.values())
            .fold(Pose::identity(), |acc, (j, &v)| acc.compose(&j.twist.exp(v)));
        Ok(chain.compose(&self.home_pose))
    }

    /// Spatial Jacobian: column `j` is joint `j`'s unit twist carried to the
    /// configuration `q`, rows ordered `[linear; angular]`.
    pub fn geometric_jacobian(&self, q: &JointConfig) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_dim(q)?;
        let mut jac = DMatrix::zeros(6, self.dof());
        let mut chain = Pose::identity();
        for (c, (j, &v)) in self.joints.iter().zip(q.values()).enumerate() {
            let col = chain.adjoint() * j.twist.to_vector();
            jac.set_column(c, &col);
            chain = chain.compose(&j.twist.exp(v));
        }
        Ok(jac)
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q.values())
                .all(|(j, &v)| v >= j.lower && v <= j.upper)
    }

    /// Index of the first joint outside its limits.
    pub fn limit_violation(&self, q: &JointConfig) -> Option<usize> {
        self.joints
            .iter()
            .zip(q.values())
            .position(|(j, &v)| !(v >= j.lower && v <= j.upper))
    }

    /// Clamps each joint value into its limits; returns the first clamped joint.
    pub fn clamp(&self, q: &mut JointConfig) -> Option<usize> {
        let mut first = None;
        for (i, (j, v)) in self.joints.iter().zip(q.0.iter_mut()).enumerate() {
            let c = v.clamp(j.lower, j.upper);
            if c != *v {
                *v = c;
                first.get_or_insert(i);
            }
        }
        first
    }
}

/// Planar two-link arm with unit links in the xy-plane; the end effector
/// sits at `(2, 0, 0)` with identity orientation at the zero configuration.
pub fn planar_2r() -> RobotModel {
    let lim = std::f64::consts::PI;
    RobotModel::new(
        "planar-2r",
        vec![
            Joint::revolute(Vector3::z(), Vector3::zeros(), -lim, lim),
            Joint::revolute(Vector3::z(), Vector3::x(), -lim, lim),
        ],
        Pose::from_translation(Vector3::new(2.0, 0.0, 0.0)),
    )
    .expect("valid model")
}

/// Seven-joint arm with the joint layout of a Franka Emika Panda at its zero
/// configuration (flange plus a 0.1034 m tool), reach about 0.85 m.
pub fn panda_like_7dof() -> RobotModel {
    let z = Vector3::z();
    let y = Vector3::y();
    let joints = vec![
        Joint::revolute(z, Vector3::new(0.0, 0.0, 0.333), -2.8973, 2.8973),
        Joint::revolute(y, Vector3::new(0.0, 0.0, 0.333), -1.7628, 1.7628),
        Joint::revolute(z, Vector3::new(0.0, 0.0, 0.649), -2.8973, 2.8973),
        Joint::revolute(-y, Vector3::new(0.0825, 0.0, 0.649), -3.0718, -0.0698),
        Joint::revolute(z, Vector3::new(0.0, 0.0, 1.033), -2.8973, 2.8973),
        Joint::revolute(-y, Vector3::new(0.0, 0.0, 1.033), -0.0175, 3.7525),
        Joint::revolute(-z, Vector3::new(0.088, 0.0, 1.033), -2.8973, 2.8973),
    ];
    let home = Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
        Vector3::new(0.088, 0.0, 0.8226),
    );
    RobotModel::new("panda-like-7dof", joints, home).expect("valid model")
}

/// A comfortable starting configuration for [`panda_like_7dof`]: gripper
/// pointing down about 0.3 m in front of the base.
pub fn panda_ready_config() -> JointConfig {
    JointConfig::new(vec![0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785])
}

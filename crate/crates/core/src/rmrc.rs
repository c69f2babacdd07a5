//! ScLERP planning with resolved motion rate control.
//!
//! Every constraint leg is discretized by screw interpolation and each
//! intermediate pose is servoed with damped least-squares steps on the
//! spatial error twist `log(target * current^-1)`.

use nalgebra::{DMatrix, Matrix6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kinematics::{JointConfig, KinematicsError, RobotModel};
use crate::se3::{log_vector, sclerp, Pose, ScrewInterpolator};
use crate::transfer::ConstraintLeg;

/// Consecutive clamped iterations without progress before a joint-limit
/// failure is reported.
const CLAMP_STALL_LIMIT: usize = 10;

/// Step halvings tried when a full damped step does not reduce the error.
const BACKTRACK_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
    #[error(
        "start configuration is {rot_err:.3e} rad / {trans_err:.3e} m away from the first waypoint"
    )]
    StartMismatch { rot_err: f64, trans_err: f64 },
    #[error(
        "tracking failed on leg {leg} at tau {tau:.3}: {iters} iterations left {rot_err:.3e} rad / {trans_err:.3e} m"
    )]
    NotConverged {
        leg: usize,
        tau: f64,
        iters: usize,
        rot_err: f64,
        trans_err: f64,
    },
    #[error("joint {joint} limit blocks progress on leg {leg} at tau {tau:.3}")]
    JointLimit { joint: usize, leg: usize, tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub step_tau: f64,
    pub damping_lambda: f64,
    pub max_joint_step: f64,
    pub pose_tol_rot: f64,
    pub pose_tol_trans: f64,
    pub max_iters: usize,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            step_tau: 0.02,
            damping_lambda: 0.01,
            max_joint_step: 0.1,
            pose_tol_rot: 1e-3,
            pose_tol_trans: 1e-3,
            max_iters: 200,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackError> {
        let positive = [
            self.step_tau,
            self.damping_lambda,
            self.max_joint_step,
            self.pose_tol_rot,
            self.pose_tol_trans,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iters == 0 {
            return Err(TrackError::InvalidParams("all parameters must be positive".into()));
        }
        if self.step_tau > 0.1 {
            return Err(TrackError::InvalidParams(format!(
                "step_tau {} exceeds 0.1",
                self.step_tau
            )));
        }
        Ok(())
    }

    fn within(&self, a: &Pose, b: &Pose) -> bool {
        a.rotation_distance(b) <= self.pose_tol_rot && a.translation_distance(b) <= self.pose_tol_trans
    }

    /// Number of interpolation steps per leg.
    pub fn steps_per_leg(&self) -> usize {
        (1.0 / self.step_tau - 1e-9).ceil().max(1.0) as usize
    }
}

/// Rotation plus translation error, one radian weighted as one meter.
fn composite_error(a: &Pose, b: &Pose) -> f64 {
    a.rotation_distance(b) + a.translation_distance(b)
}

/// Spatial error twist `log(target * current^-1)`.
pub fn pose_error_twist(target: &Pose, current: &Pose) -> nalgebra::Vector6<f64> {
    log_vector(&target.compose(&current.inverse()))
}

struct StepOutcome {
    q: JointConfig,
    clamped: Option<usize>,
    improved: bool,
}

fn damped_step(
    model: &RobotModel,
    q: &JointConfig,
    current: &Pose,
    target: &Pose,
    params: &TrackerParams,
) -> Result<StepOutcome, KinematicsError> {
    let err = pose_error_twist(target, current);
    let jac = model.geometric_jacobian(q)?;
    let lambda2 = params.damping_lambda * params.damping_lambda;
    let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned()
        + Matrix6::identity() * lambda2;
    let y = jjt
        .cholesky()
        .expect("damped J J^T is positive definite")
        .solve(&err);
    let mut dq: DMatrix<f64> = jac.transpose() * DMatrix::from_column_slice(6, 1, y.as_slice());
    let largest = dq.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if largest > params.max_joint_step {
        dq *= params.max_joint_step / largest;
    }

    let e0 = composite_error(current, target);
    let mut alpha = 1.0;
    let mut last = None;
    for _ in 0..=BACKTRACK_STEPS {
        let mut cand = JointConfig::new(
            q.values()
                .iter()
                .zip(dq.iter())
                .map(|(v, d)| v + alpha * d)
                .collect(),
        );
        let clamped = model.clamp(&mut cand);
        let e = composite_error(&model.forward_kinematics(&cand)?, target);
        if e < e0 {
            return Ok(StepOutcome {
                q: cand,
                clamped,
                improved: true,
            });
        }
        last.get_or_insert(clamped);
        alpha *= 0.5;
    }
    Ok(StepOutcome {
        q: q.clone(),
        clamped: last.flatten(),
        improved: false,
    })
}

/// One damped least-squares rate-control update toward `target`.
///
/// Returns `q` unchanged when already within the pose tolerance or when no
/// step along the damped direction lowers the error.
pub fn rmrc_step(
    model: &RobotModel,
    q: &JointConfig,
    target: &Pose,
    params: &TrackerParams,
) -> Result<JointConfig, KinematicsError> {
    let current = model.forward_kinematics(q)?;
    if params.within(&current, target) {
        return Ok(q.clone());
    }
    Ok(damped_step(model, q, &current, target, params)?.q)
}

/// Iterates [`rmrc_step`] until `target` is within tolerance.
fn servo(
    model: &RobotModel,
    q: &JointConfig,
    target: &Pose,
    params: &TrackerParams,
    leg: usize,
    tau: f64,
) -> Result<JointConfig, TrackError> {
    let mut q = q.clone();
    let mut stalled = 0;
    for _ in 0..params.max_iters {
        let current = model.forward_kinematics(&q)?;
        if params.within(&current, target) {
            return Ok(q);
        }
        let step = damped_step(model, &q, &current, target, params)?;
        match step.clamped {
            Some(joint) if !step.improved => {
                stalled += 1;
                if stalled >= CLAMP_STALL_LIMIT {
                    return Err(TrackError::JointLimit {
                        joint: joint + 1,
                        leg,
                        tau,
                    });
                }
            }
            _ => stalled = 0,
        }
        q = step.q;
    }
    let current = model.forward_kinematics(&q)?;
    if params.within(&current, target) {
        return Ok(q);
    }
    Err(TrackError::NotConverged {
        leg,
        tau,
        iters: params.max_iters,
        rot_err: current.rotation_distance(target),
        trans_err: current.translation_distance(target),
    })
}

/// Where a recorded configuration sits in the constraint plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub leg: usize,
    pub tau: f64,
}

/// Joint configurations with their plan annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPath {
    configs: Vec<JointConfig>,
    points: Vec<PathPoint>,
}

impl JointPath {
    pub fn new(configs: Vec<JointConfig>, points: Vec<PathPoint>) -> Self {
        assert_eq!(configs.len(), points.len(), "one annotation per configuration");
        Self { configs, points }
    }

    pub fn configs(&self) -> &[JointConfig] {
        &self.configs
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn first(&self) -> Option<&JointConfig> {
        self.configs.first()
    }

    pub fn last(&self) -> Option<&JointConfig> {
        self.configs.last()
    }

    /// SHA-256 over the configurations' and annotations' bit patterns, hex
    /// encoded.
    pub fn summary_hash(&self) -> String {
        let mut h = Sha256::new();
        for (c, p) in self.configs.iter().zip(&self.points) {
            for v in c.values() {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((p.leg as u64).to_le_bytes());
            h.update(p.tau.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Tracks every leg of `plan` starting from `q_start`.
///
/// Zero-length legs contribute no configurations, so a plan made only of
/// such legs yields a path holding just `q_start`.
pub fn track_constraint_plan(
    model: &RobotModel,
    q_start: &JointConfig,
    plan: &[ConstraintLeg],
    params: &TrackerParams,
) -> Result<JointPath, TrackError> {
    params.validate()?;
    let start_pose = model.forward_kinematics(q_start)?;
    if let Some(leg) = plan.first() {
        if !params.within(&start_pose, &leg.start) {
            return Err(TrackError::StartMismatch {
                rot_err: start_pose.rotation_distance(&leg.start),
                trans_err: start_pose.translation_distance(&leg.start),
            });
        }
    }
    if let Some(j) = model.limit_violation(q_start) {
        return Err(TrackError::JointLimit {
            joint: j + 1,
            leg: 0,
            tau: 0.0,
        });
    }

    let steps = params.steps_per_leg();
    let mut configs = vec![q_start.clone()];
    let mut points = vec![PathPoint { leg: 0, tau: 0.0 }];
    let mut q = q_start.clone();
    for (li, leg) in plan.iter().enumerate() {
        let chord = ScrewInterpolator::new(&leg.start, &leg.goal);
        if chord.screw().is_zero() {
            continue;
        }
        for k in 1..=steps {
            let tau = k as f64 / steps as f64;
            let target = chord.at_unchecked(tau);
            q = servo(model, &q, &target, params, li, tau)?;
            configs.push(q.clone());
            points.push(PathPoint { leg: li, tau });
        }
    }
    Ok(JointPath { configs, points })
}

/// Independent check of a tracked path: maximum rotation and translation
/// error between each configuration's forward kinematics and the ScLERP
/// target its annotation names.
pub fn audit_joint_path(
    model: &RobotModel,
    path: &JointPath,
    plan: &[ConstraintLeg],
) -> Result<(f64, f64), TrackError> {
    let mut worst = (0.0_f64, 0.0_f64);
    for (q, p) in path.configs().iter().zip(path.points()) {
        let Some(leg) = plan.get(p.leg) else {
            if plan.is_empty() {
                continue;
            }
            return Err(TrackError::InvalidParams(format!("annotation names missing leg {}", p.leg)));
        };
        let target = sclerp(&leg.start, &leg.goal, p.tau)
            .map_err(|e| TrackError::InvalidParams(e.to_string()))?;
        let achieved = model.forward_kinematics(q)?;
        worst.0 = worst.0.max(achieved.rotation_distance(&target));
        worst.1 = worst.1.max(achieved.translation_distance(&target));
    }
    Ok(worst)
}

/// Straight joint-space interpolation from `from` to `to` with no joint
/// moving more than `max_step` per configuration. Both ends are included.
pub fn joint_space_path(from: &JointConfig, to: &JointConfig, max_step: f64) -> JointPath {
    let n = (from.max_abs_diff(to) / max_step).ceil().max(1.0) as usize;
    let mut configs = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = k as f64 / n as f64;
        let c = if k == n {
            to.clone()
        } else {
            JointConfig::new(
                from.values()
                    .iter()
                    .zip(to.values())
                    .map(|(a, b)| a + (b - a) * s)
                    .collect(),
            )
        };
        configs.push(c);
        points.push(PathPoint { leg: 0, tau: s });
    }
    JointPath { configs, points }
}

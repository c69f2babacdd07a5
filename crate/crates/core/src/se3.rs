//! Rigid-body pose algebra on SE(3).
//!
//! Poses store orientation as a unit quaternion plus a translation vector.
//! Screw parameters follow the Plücker convention: a unit direction `omega`,
//! a moment `m = r x omega` for any point `r` on the axis, a pitch `h`
//! (translation per radian, or infinite for pure translation) and a
//! magnitude `theta`.
//!
//! Twist coordinates are ordered `[linear; angular]` everywhere in this crate.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::PoseRecord;

/// Rotations smaller than this are treated as the identity rotation when
/// extracting screw parameters.
/// Translations below this norm, in meters, count as no motion when the
/// rotation is also below [`SMALL_ANGLE`].
pub const SMALL_TRANSLATION: f64 = 1e-12;

pub const SMALL_ANGLE: f64 = 1e-10;

/// Above this angle the rotation axis is recovered from the symmetric part of
/// the rotation matrix instead of its skew part.
const NEAR_PI_ANGLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Se3Error {
    #[error("interpolation factor {0} is outside [0, 1]")]
    InvalidTau(f64),
    #[error("invalid screw parameters: {0}")]
    InvalidScrew(String),
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),
}

/// A rigid-body configuration.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", try_from = "PoseRecord")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion_wxyz();
        let t = self.translation;
        write!(
            f,
            "Pose(t: [{:.6}, {:.6}, {:.6}], q: [{:.6}, {:.6}, {:.6}, {:.6}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation by `angle` about the axis through the origin along `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle),
            Vector3::zeros(),
        )
    }

    /// Builds a pose from a translation and a `[w, x, y, z]` quaternion.
    ///
    /// The quaternion is renormalized when it is off unit length by more than
    /// rounding error; a deviation beyond 1e-3 is logged as a warning.
    pub fn from_translation_quaternion(t: [f64; 3], q: [f64; 4]) -> Result<Self, Se3Error> {
        if t.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Se3Error::InvalidQuaternion("non-finite component".into()));
        }
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if norm < 1e-6 {
            return Err(Se3Error::InvalidQuaternion(format!("norm {norm:e} is too small")));
        }
        if (norm - 1.0).abs() > 1e-3 {
            log::warn!("quaternion norm {norm} deviates from 1 by more than 1e-3; renormalizing");
        }
        let rotation = if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
            UnitQuaternion::from_quaternion(raw)
        } else {
            UnitQuaternion::new_unchecked(raw)
        };
        Ok(Self::new(rotation, Vector3::from(t)))
    }

    /// Builds a pose from a 4x4 homogeneous matrix whose upper-left block is
    /// a proper rotation.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let (axis, angle) = axis_angle_from_matrix(&r);
        let half = 0.5 * angle;
        let v = axis * half.sin();
        let q = UnitQuaternion::from_quaternion(Quaternion::new(half.cos(), v.x, v.y, v.z));
        Self::new(q, t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Quaternion as `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// `self * other`: the motion `other` followed by `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Principal rotation axis and angle, angle in `[0, pi]`.
    ///
    /// Returns the z axis and zero for the identity rotation.
    pub fn rotation_axis_angle(&self) -> (Vector3<f64>, f64) {
        let [w, x, y, z] = self.quaternion_wxyz();
        let v = Vector3::new(x, y, z);
        let s = v.norm();
        if s == 0.0 {
            return (Vector3::z(), 0.0);
        }
        (v / s, 2.0 * s.atan2(w))
    }

    /// Angle of the rotation taking this orientation onto `other`'s.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        let d = self.rotation.inverse() * other.rotation;
        let q = d.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Frobenius norm of the rotation-matrix difference.
    pub fn rotation_frobenius_distance(&self, other: &Pose) -> f64 {
        (self.rotation_matrix() - other.rotation_matrix()).norm()
    }

    /// Adjoint map acting on `[linear; angular]` twists.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(self.translation.cross_matrix() * r));
        ad
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Axis and angle of a rotation matrix, angle in `[0, pi]`.
///
/// Uses the skew-symmetric part for angles up to 3 rad and the
/// largest-diagonal column of the symmetric part (which tends to `R + I`)
/// beyond, where the skew part vanishes.
pub fn axis_angle_from_matrix(r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = skew.norm();
    let angle = sin.atan2(cos);
    if angle <= NEAR_PI_ANGLE {
        if sin == 0.0 {
            return (Vector3::z(), 0.0);
        }
        return (skew / sin, angle);
    }
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis = sym.column(k).into_owned().normalize();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    (axis, axis.dot(&skew).atan2(cos))
}

/// Pitch of a screw: translation per radian of rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pitch {
    Finite(f64),
    Infinite,
}

impl Pitch {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Pitch::Infinite)
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Pitch::Finite(h) => *h,
            Pitch::Infinite => f64::INFINITY,
        }
    }
}

/// Screw parameters `(omega, m, h, theta)` of a rigid displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrewDisplacement {
    omega: Vector3<f64>,
    moment: Vector3<f64>,
    pitch: Pitch,
    magnitude: f64,
}

impl ScrewDisplacement {
    /// The canonical zero screw: z direction, infinite pitch, zero magnitude.
    pub fn zero() -> Self {
        Self {
            omega: Vector3::z(),
            moment: Vector3::zeros(),
            pitch: Pitch::Infinite,
            magnitude: 0.0,
        }
    }

    /// Pure translation by `distance` along `direction`.
    pub fn translation(direction: &Vector3<f64>, distance: f64) -> Result<Self, Se3Error> {
        let n = direction.norm();
        if !(n > 0.0) || !distance.is_finite() {
            return Err(Se3Error::InvalidScrew("translation direction must be nonzero".into()));
        }
        let sign = if distance < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            omega: direction / n * sign,
            moment: Vector3::zeros(),
            pitch: Pitch::Infinite,
            magnitude: distance.abs(),
        })
    }

    /// Rotation of `angle` about the line through `point` along `direction`,
    /// with `pitch` meters of translation per radian along the line.
    pub fn about_axis(
        direction: &Vector3<f64>,
        point: &Vector3<f64>,
        pitch: f64,
        angle: f64,
    ) -> Result<Self, Se3Error> {
        let n = direction.norm();
        if !(n > 0.0) || !pitch.is_finite() || !angle.is_finite() {
            return Err(Se3Error::InvalidScrew(
                "axis direction must be nonzero and pitch/angle finite".into(),
            ));
        }
        let sign = if angle < 0.0 { -1.0 } else { 1.0 };
        let omega = direction / n * sign;
        Ok(Self {
            omega,
            moment: point.cross(&omega),
            pitch: Pitch::Finite(pitch),
            magnitude: angle.abs(),
        })
    }

    /// Builds a screw from raw Plücker coordinates, checking the invariants to
    /// 1e-9 and then normalizing `omega` and projecting `moment`.
    pub fn from_plucker(
        omega: Vector3<f64>,
        moment: Vector3<f64>,
        pitch: Pitch,
        magnitude: f64,
    ) -> Result<Self, Se3Error> {
        if !(magnitude >= 0.0) || !magnitude.is_finite() {
            return Err(Se3Error::InvalidScrew(format!("magnitude {magnitude} must be >= 0")));
        }
        if ((omega.norm() - 1.0).abs()) > 1e-9 {
            return Err(Se3Error::InvalidScrew("omega must be a unit vector".into()));
        }
        let omega = omega.normalize();
        match pitch {
            Pitch::Infinite => {
                if moment != Vector3::zeros() {
                    return Err(Se3Error::InvalidScrew(
                        "infinite-pitch screw must have zero moment".into(),
                    ));
                }
                Ok(Self {
                    omega,
                    moment,
                    pitch,
                    magnitude,
                })
            }
            Pitch::Finite(h) => {
                if !h.is_finite() {
                    return Err(Se3Error::InvalidScrew("use Pitch::Infinite".into()));
                }
                if omega.dot(&moment).abs() > 1e-9 * (1.0 + moment.norm()) {
                    return Err(Se3Error::InvalidScrew("moment must be orthogonal to omega".into()));
                }
                Ok(Self {
                    omega,
                    moment: moment - omega * omega.dot(&moment),
                    pitch,
                    magnitude,
                })
            }
        }
    }

    pub fn omega(&self) -> &Vector3<f64> {
        &self.omega
    }

    pub fn moment(&self) -> &Vector3<f64> {
        &self.moment
    }

    pub fn pitch(&self) -> Pitch {
        self.pitch
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn is_zero(&self) -> bool {
        self.magnitude == 0.0
    }

    /// The point on the screw axis closest to the origin.
    pub fn axis_point(&self) -> Vector3<f64> {
        self.omega.cross(&self.moment)
    }

    /// Same axis and pitch with a different magnitude.
    pub fn with_magnitude(&self, magnitude: f64) -> Self {
        Self {
            magnitude: magnitude.abs(),
            ..*self
        }
    }
}

/// Unit twist coordinates `[linear; angular]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTwist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl UnitTwist {
    /// Twist of a revolute joint about the line through `point` along `axis`.
    pub fn revolute(axis: &Vector3<f64>, point: &Vector3<f64>) -> Self {
        let w = axis.normalize();
        Self {
            linear: -w.cross(point),
            angular: w,
        }
    }

    /// Twist of a prismatic joint sliding along `direction`.
    pub fn prismatic(direction: &Vector3<f64>) -> Self {
        Self {
            linear: direction.normalize(),
            angular: Vector3::zeros(),
        }
    }

    pub fn is_pure_translation(&self) -> bool {
        self.angular == Vector3::zeros()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// `exp(xi_hat * theta)` for any real `theta`.
    pub fn exp(&self, theta: f64) -> Pose {
        if self.is_pure_translation() {
            return Pose::from_translation(self.linear * theta);
        }
        let w = self.angular;
        let rotation = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(w), theta);
        let r = rotation.to_rotation_matrix().into_inner();
        let translation =
            (Matrix3::identity() - r) * w.cross(&self.linear) + w * (w.dot(&self.linear) * theta);
        Pose::new(rotation, translation)
    }
}

/// Screw parameters of the displacement from the identity to `t`.
pub fn screw_from_displacement(t: &Pose) -> ScrewDisplacement {
    let (omega, theta) = t.rotation_axis_angle();
    let p = t.translation;
    if theta < SMALL_ANGLE {
        let d = p.norm();
        if d < SMALL_TRANSLATION {
            return ScrewDisplacement::zero();
        }
        return ScrewDisplacement {
            omega: p / d,
            moment: Vector3::zeros(),
            pitch: Pitch::Infinite,
            magnitude: d,
        };
    }
    let r = t.rotation_matrix();
    let a = (Matrix3::identity() - r) * omega.cross_matrix() + omega * omega.transpose() * theta;
    let upsilon = a
        .lu()
        .solve(&p)
        .expect("screw system is invertible for rotation angles in (0, pi]");
    let h = omega.dot(&upsilon);
    let m = upsilon - omega * h;
    ScrewDisplacement {
        omega,
        moment: m - omega * omega.dot(&m),
        pitch: Pitch::Finite(h),
        magnitude: theta,
    }
}

pub fn twist_from_screw(s: &ScrewDisplacement) -> UnitTwist {
    match s.pitch {
        Pitch::Finite(h) => UnitTwist {
            linear: s.moment + s.omega * h,
            angular: s.omega,
        },
        Pitch::Infinite => UnitTwist {
            linear: s.omega,
            angular: Vector3::zeros(),
        },
    }
}

pub fn displacement_from_screw(s: &ScrewDisplacement) -> Pose {
    if s.is_zero() {
        return Pose::identity();
    }
    twist_from_screw(s).exp(s.magnitude)
}

/// Matrix logarithm as a unit twist and magnitude.
pub fn log_pose(t: &Pose) -> (UnitTwist, f64) {
    let s = screw_from_displacement(t);
    (twist_from_screw(&s), s.magnitude)
}

/// Twist coordinates `xi * theta` of `log(t)`.
pub fn log_vector(t: &Pose) -> Vector6<f64> {
    let (twist, theta) = log_pose(t);
    twist.to_vector() * theta
}

/// Constant-screw interpolation between two fixed poses, with the relative
/// screw computed once.
#[derive(Debug, Clone, Copy)]
pub struct ScrewInterpolator {
    start: Pose,
    end: Pose,
    screw: ScrewDisplacement,
    twist: UnitTwist,
}

impl ScrewInterpolator {
    pub fn new(start: &Pose, end: &Pose) -> Self {
        let screw = screw_from_displacement(&end.compose(&start.inverse()));
        Self {
            start: *start,
            end: *end,
            screw,
            twist: twist_from_screw(&screw),
        }
    }

    pub fn start(&self) -> &Pose {
        &self.start
    }

    pub fn end(&self) -> &Pose {
        &self.end
    }

    /// Screw of the relative displacement `end * start^-1`.
    pub fn screw(&self) -> &ScrewDisplacement {
        &self.screw
    }

    /// Pose at `tau` without range checking.
    pub fn at_unchecked(&self, tau: f64) -> Pose {
        if self.screw.is_zero() {
            return self.start;
        }
        self.twist.exp(tau * self.screw.magnitude).compose(&self.start)
    }

    pub fn at(&self, tau: f64) -> Result<Pose, Se3Error> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Se3Error::InvalidTau(tau));
        }
        Ok(self.at_unchecked(tau))
    }
}

/// Screw linear interpolation: `exp(xi_hat * tau * theta) * g_i` where
/// `xi_hat * theta = log(g_f * g_i^-1)`.
pub fn sclerp(g_i: &Pose, g_f: &Pose, tau: f64) -> Result<Pose, Se3Error> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Se3Error::InvalidTau(tau));
    }
    Ok(ScrewInterpolator::new(g_i, g_f).at_unchecked(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    /// Homogeneous-matrix oracle for Rz(angle).
    fn rz_matrix(angle: f64) -> Matrix4<f64> {
        let (s, c) = angle.sin_cos();
        Matrix4::new(c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    fn tx_matrix(x: f64) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m
    }

    fn assert_pose_close(a: &Pose, b: &Pose, tol: f64) {
        assert!(
            a.rotation_frobenius_distance(b) <= tol && a.translation_distance(b) <= tol,
            "{a:?} != {b:?}"
        );
    }

    #[test]
    fn compose_identity() {
        let i = Pose::identity();
        assert_eq!(i.compose(&i), i);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let rz = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let tx = Pose::from_translation(Vector3::x());
        let p = rz.compose(&tx).transform_point(&Vector3::zeros());
        let oracle = rz_matrix(FRAC_PI_2) * tx_matrix(1.0) * nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(p, oracle.xyz(), epsilon = 1e-15);
    }

    #[test]
    fn inverse_of_translation() {
        let t = Pose::from_translation(Vector3::new(1.0, -2.0, 3.0));
        assert_eq!(*t.inverse().translation(), Vector3::new(-1.0, 2.0, -3.0));
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn inverse_matches_matrix_inverse() {
        let t = Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0),
            Vector3::new(0.4, 0.5, -0.6),
        );
        let oracle = t.to_matrix().try_inverse().unwrap();
        assert_relative_eq!(t.inverse().to_matrix(), oracle, epsilon = 1e-14);
        assert_pose_close(&t.compose(&t.inverse()), &Pose::identity(), 1e-12);
    }

    #[test]
    fn axis_angle_from_matrix_branches() {
        for &angle in &[0.0, 1e-8, 0.7, 2.9, 3.05, PI - 1e-9, PI] {
            let axis = Vector3::new(0.2, -0.5, 0.8).normalize();
            let r = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
                .to_rotation_matrix()
                .into_inner();
            let (a, th) = axis_angle_from_matrix(&r);
            assert_relative_eq!(th, angle, epsilon = 1e-9);
            if angle > 1e-6 {
                assert_relative_eq!(a, axis, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn from_matrix_roundtrip() {
        let t = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 3.1),
            Vector3::new(1.0, 2.0, 3.0),
        );
        assert_pose_close(&Pose::from_matrix(&t.to_matrix()), &t, 1e-12);
    }

    #[test]
    fn screw_of_identity_is_canonical_zero() {
        let s = screw_from_displacement(&Pose::identity());
        assert_eq!(s, ScrewDisplacement::zero());
        assert_eq!(displacement_from_screw(&s), Pose::identity());
    }

    #[test]
    fn screw_of_pure_translation() {
        let s = screw_from_displacement(&Pose::from_translation(Vector3::new(0.0, 0.0, 1.0)));
        assert_eq!(*s.omega(), Vector3::z());
        assert_eq!(*s.moment(), Vector3::zeros());
        assert!(s.pitch().is_infinite());
        assert_eq!(s.magnitude(), 1.0);
    }

    #[test]
    fn screw_of_offset_rotation() {
        // Oracle: build the pose from the exponential of the stated parameters.
        let expected =
            ScrewDisplacement::about_axis(&Vector3::z(), &Vector3::x(), 0.0, FRAC_PI_2).unwrap();
        assert_relative_eq!(*expected.moment(), Vector3::new(0.0, -1.0, 0.0));
        let t = displacement_from_screw(&expected);
        let s = screw_from_displacement(&t);
        assert_relative_eq!(*s.omega(), Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(*s.moment(), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s.pitch().as_f64(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.magnitude(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn twist_forms() {
        let rot = ScrewDisplacement::about_axis(&Vector3::z(), &Vector3::zeros(), 0.0, 1.0).unwrap();
        let tw = twist_from_screw(&rot);
        assert_eq!(tw.linear, Vector3::zeros());
        assert_eq!(tw.angular, Vector3::z());

        let tr = ScrewDisplacement::translation(&Vector3::x(), 1.0).unwrap();
        let tw = twist_from_screw(&tr);
        assert_eq!(tw.linear, Vector3::x());
        assert_eq!(tw.angular, Vector3::zeros());

        let general = ScrewDisplacement::from_plucker(
            Vector3::z(),
            Vector3::new(0.0, -1.0, 0.0),
            Pitch::Finite(0.5),
            1.0,
        )
        .unwrap();
        let tw = twist_from_screw(&general);
        assert_eq!(tw.linear, Vector3::new(0.0, -1.0, 0.5));
        assert_eq!(tw.angular, Vector3::z());
    }

    #[test]
    fn exponential_examples() {
        assert_eq!(displacement_from_screw(&ScrewDisplacement::zero()), Pose::identity());
        let t = displacement_from_screw(&ScrewDisplacement::translation(&Vector3::z(), 2.0).unwrap());
        assert_eq!(*t.translation(), Vector3::new(0.0, 0.0, 2.0));

        // Rotation by pi about the z-parallel line through (1, 0, 0): the
        // origin maps to its mirror image (2, 0, 0) and points on the axis
        // stay fixed.
        let s = ScrewDisplacement::from_plucker(
            Vector3::z(),
            Vector3::new(0.0, -1.0, 0.0),
            Pitch::Finite(0.0),
            PI,
        )
        .unwrap();
        let t = displacement_from_screw(&s);
        assert_relative_eq!(*t.translation(), Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        let on_axis = Vector3::new(1.0, 0.0, 0.7);
        assert_relative_eq!(t.transform_point(&on_axis), on_axis, epsilon = 1e-12);
        let (axis, angle) = t.rotation_axis_angle();
        assert_relative_eq!(angle, PI, epsilon = 1e-12);
        assert_relative_eq!(axis.z.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_examples() {
        let (_, theta) = log_pose(&Pose::identity());
        assert_eq!(theta, 0.0);
        let (tw, theta) = log_pose(&Pose::from_axis_angle(&Vector3::z(), 0.3));
        assert_relative_eq!(tw.angular, Vector3::z(), epsilon = 1e-14);
        assert_relative_eq!(tw.linear, Vector3::zeros(), epsilon = 1e-14);
        assert_relative_eq!(theta, 0.3, epsilon = 1e-14);
    }

    #[test]
    fn near_pi_log_roundtrip() {
        let t = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI - 1e-7),
            Vector3::new(0.1, 0.2, 0.3),
        );
        let (tw, theta) = log_pose(&t);
        assert_pose_close(&tw.exp(theta), &t, 1e-9);
    }

    #[test]
    fn small_rotation_treated_as_translation() {
        let t = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1e-12),
            Vector3::new(0.0, 0.5, 0.0),
        );
        let s = screw_from_displacement(&t);
        assert!(s.pitch().is_infinite());
        assert_relative_eq!(s.magnitude(), 0.5);
    }

    #[test]
    fn sclerp_examples() {
        let g_i = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(0.3, 0.0, 0.5),
        );
        let g_f = Pose::new(
            UnitQuaternion::from_euler_angles(-0.4, 0.9, 1.3),
            Vector3::new(-0.1, 0.4, 0.2),
        );
        assert_pose_close(&sclerp(&g_i, &g_f, 0.0).unwrap(), &g_i, 1e-10);
        assert_pose_close(&sclerp(&g_i, &g_f, 1.0).unwrap(), &g_f, 1e-10);

        let half = sclerp(
            &Pose::identity(),
            &Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2),
            0.5,
        )
        .unwrap();
        assert_pose_close(&half, &Pose::from_axis_angle(&Vector3::z(), FRAC_PI_4), 1e-14);

        assert_eq!(sclerp(&g_i, &g_i, 0.37).unwrap(), g_i);
        assert!(matches!(sclerp(&g_i, &g_f, 1.5), Err(Se3Error::InvalidTau(_))));
        assert!(sclerp(&g_i, &g_f, f64::NAN).is_err());
    }

    #[test]
    fn sclerp_composition_consistency() {
        // exp(a xi theta) exp(b xi theta) = exp((a + b) xi theta)
        let g_i = Pose::new(
            UnitQuaternion::from_euler_angles(0.5, -0.2, 0.1),
            Vector3::new(0.2, 0.1, 0.4),
        );
        let g_f = Pose::new(
            UnitQuaternion::from_euler_angles(-1.0, 0.4, 2.2),
            Vector3::new(-0.3, 0.6, 0.1),
        );
        let quarter = sclerp(&g_i, &g_f, 0.25).unwrap();
        let (tw, theta) = log_pose(&g_f.compose(&g_i.inverse()));
        let rest = tw.exp(0.75 * theta).compose(&quarter);
        assert_pose_close(&rest, &g_f, 1e-12);
    }

    #[test]
    fn invalid_plucker_rejected() {
        assert!(ScrewDisplacement::from_plucker(
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::zeros(),
            Pitch::Finite(0.0),
            1.0
        )
        .is_err());
        assert!(ScrewDisplacement::from_plucker(Vector3::z(), Vector3::z(), Pitch::Finite(0.0), 1.0).is_err());
        assert!(ScrewDisplacement::from_plucker(Vector3::z(), Vector3::x(), Pitch::Infinite, 1.0).is_err());
        assert!(ScrewDisplacement::from_plucker(Vector3::z(), Vector3::zeros(), Pitch::Infinite, -1.0).is_err());
    }

    #[test]
    fn quaternion_canonical_sign() {
        let t = Pose::from_translation_quaternion([0.0; 3], [-1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.quaternion_wxyz(), [1.0, -0.0, -0.0, -0.0]);
        assert!(Pose::from_translation_quaternion([0.0; 3], [0.0; 4]).is_err());
    }

    #[test]
    fn adjoint_maps_twists() {
        // Ad_T xi corresponds to T xi_hat T^-1.
        let t = Pose::new(
            UnitQuaternion::from_euler_angles(0.3, 0.2, -0.7),
            Vector3::new(0.5, -0.2, 0.1),
        );
        let tw = UnitTwist::revolute(&Vector3::new(0.0, 1.0, 1.0), &Vector3::new(0.3, 0.0, 0.0));
        let lhs = t.compose(&tw.exp(0.4)).compose(&t.inverse());
        let mapped = UnitTwist::from_vector(&(t.adjoint() * tw.to_vector()));
        assert_pose_close(&mapped.exp(0.4), &lhs, 1e-12);
    }
}

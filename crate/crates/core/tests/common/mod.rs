#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{Matrix4, UnitQuaternion, Vector3};
use rand::Rng;

use screwkit::se3::{Pose, ScrewDisplacement};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn pose_with_angle<R: Rng>(rng: &mut R, angle: f64, reach: f64) -> Pose {
    let t = Vector3::new(
        rng.gen_range(-reach..reach),
        rng.gen_range(-reach..reach),
        rng.gen_range(-reach..reach),
    );
    Pose::new(UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(unit_vector(rng)), angle), t)
}

pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let a = rng.gen_range(0.0..PI - 0.05);
    pose_with_angle(rng, a, 1.0)
}

/// Homogeneous matrix of `p` built from its rotation matrix, for oracles
/// that must not reuse the quaternion code paths.
pub fn matrix(p: &Pose) -> Matrix4<f64> {
    p.to_matrix()
}

pub fn frobenius_rot(a: &Pose, b: &Pose) -> f64 {
    (a.rotation_matrix() - b.rotation_matrix()).norm()
}

/// Random screw with finite pitch in `[-0.1, 0.1]` m/rad about an axis
/// through a point within `reach` of the origin.
pub fn random_screw<R: Rng>(rng: &mut R, angle: std::ops::Range<f64>, reach: f64) -> ScrewDisplacement {
    let w = unit_vector(rng);
    let point = Vector3::new(
        rng.gen_range(-reach..reach),
        rng.gen_range(-reach..reach),
        rng.gen_range(-reach..reach),
    );
    ScrewDisplacement::about_axis(&w, &point, rng.gen_range(-0.1..0.1), rng.gen_range(angle)).unwrap()
}

/// A path made of `segments` constant-screw motions starting at `start`.
/// Returns the poses and the ground-truth breakpoint indices.
pub struct ScrewPath {
    pub poses: Vec<Pose>,
    pub breakpoints: Vec<usize>,
}

pub fn piecewise_screw_path<R: Rng>(rng: &mut R, start: Pose, segments: usize, samples: std::ops::RangeInclusive<usize>) -> ScrewPath {
    let mut poses = vec![start];
    let mut breakpoints = vec![0];
    for _ in 0..segments {
        let n = rng.gen_range(samples.clone());
        let a = *poses.last().unwrap();
        let (screw, _) = distinct_screw(rng, &a);
        let twist = screwkit::se3::twist_from_screw(&screw);
        for k in 1..=n {
            let g = twist.exp(screw.magnitude() * k as f64 / n as f64);
            poses.push(g.compose(&a));
        }
        breakpoints.push(poses.len() - 1);
    }
    ScrewPath { poses, breakpoints }
}

/// A screw whose rotation is 0.3 to 1.5 rad about an axis passing near
/// `at`, with translation of the end effector between 0.05 and 0.3 m.
fn distinct_screw<R: Rng>(rng: &mut R, at: &Pose) -> (ScrewDisplacement, f64) {
    loop {
        let w = unit_vector(rng);
        let offset = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        let point = at.translation() + offset;
        let theta = rng.gen_range(0.3..1.5);
        let pitch = rng.gen_range(-0.05..0.05);
        let s = ScrewDisplacement::about_axis(&w, &point, pitch, theta).unwrap();
        let moved = screwkit::se3::displacement_from_screw(&s).compose(at);
        let d = moved.translation_distance(at);
        if (0.05..=0.3).contains(&d) {
            return (s, d);
        }
    }
}

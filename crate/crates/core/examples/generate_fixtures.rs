//! Writes the bundled fixtures under `fixtures/`.
//!
//! Demonstrations are built from keyframes joined by constant-screw motions
//! sampled at roughly 1 cm / 0.05 rad per pose, with a little seeded
//! recording noise.
//!
//!     cargo run -p screwkit --example generate_fixtures [out_dir]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use screwkit::io::{save_demonstration, save_library, save_model, write_json, ProtocolFile};
use screwkit::kinematics::{panda_like_7dof, panda_ready_config, planar_2r};
use screwkit::protocol::{
    ColorFrame, Dispense, GateCondition, PhScript, PhSource, ProtocolStep, ScriptedSensors, SensorKind, SkillLibrary,
};
use screwkit::rmrc::{track_constraint_plan, TrackerParams};
use screwkit::se3::{sclerp, Pose};
use screwkit::segmentation::{PosePath, SegmentTolerance};
use screwkit::transfer::{ConstraintLeg, Demonstration, LegMode, TaskInstance, DEFAULT_ROI_RADIUS};

const RATE_HZ: f64 = 30.0;

fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

/// Gripper pointing down, turned by `yaw` about the vertical.
fn down(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI)
}

fn at(p: Vector3<f64>, yaw: f64) -> Pose {
    Pose::new(down(yaw), p)
}

fn obj(p: Vector3<f64>, yaw: f64) -> Pose {
    Pose::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), p)
}

/// Keyframes joined by ScLERP; `dwell` repeats a keyframe that many extra
/// times.
struct Recorder {
    poses: Vec<Pose>,
    rng: ChaCha8Rng,
}

impl Recorder {
    fn new(start: Pose, seed: u64) -> Self {
        Self {
            poses: vec![start],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn to(&mut self, goal: Pose) -> &mut Self {
        let a = *self.poses.last().unwrap();
        let n = ((a.translation_distance(&goal) / 0.01).max(a.rotation_distance(&goal) / 0.05))
            .ceil()
            .max(5.0) as usize;
        for k in 1..=n {
            self.poses.push(sclerp(&a, &goal, k as f64 / n as f64).unwrap());
        }
        self
    }

    fn dwell(&mut self, n: usize) -> &mut Self {
        let p = *self.poses.last().unwrap();
        self.poses.extend(std::iter::repeat_n(p, n));
        self
    }

    fn finish(&mut self, label: &str, objects: Vec<(&str, Pose)>) -> Demonstration {
        let noisy = self
            .poses
            .iter()
            .map(|p| {
                let dt = v(
                    self.rng.gen_range(-2e-5..2e-5),
                    self.rng.gen_range(-2e-5..2e-5),
                    self.rng.gen_range(-2e-5..2e-5),
                );
                let dr = UnitQuaternion::from_scaled_axis(v(
                    self.rng.gen_range(-2e-4..2e-4),
                    self.rng.gen_range(-2e-4..2e-4),
                    self.rng.gen_range(-2e-4..2e-4),
                ));
                Pose::new(dr * p.rotation(), p.translation() + dt)
            })
            .collect::<Vec<_>>();
        let ts = (0..noisy.len()).map(|i| i as f64 / RATE_HZ).collect();
        let path = PosePath::new(noisy, Some(ts)).unwrap();
        Demonstration::new(label, path, TaskInstance::from_pairs(objects).unwrap()).unwrap()
    }
}

fn home() -> Pose {
    at(v(0.31, 0.0, 0.45), 0.0)
}

fn pick_demo() -> Demonstration {
    let o = obj(v(0.45, -0.05, 0.05), 0.0);
    let p = |dz: f64| at(o.translation() + v(0.0, 0.0, dz), 0.0);
    Recorder::new(home(), 1)
        .to(p(0.15))
        .dwell(4)
        .to(p(0.02))
        .dwell(6)
        .to(p(0.15))
        .finish("pick", vec![("object", o)])
}

fn place_demo() -> Demonstration {
    let t = obj(v(0.5, 0.05, 0.08), 0.0);
    let p = |dz: f64| at(t.translation() + v(0.0, 0.0, dz), 0.0);
    Recorder::new(home(), 2)
        .to(p(0.14))
        .to(p(0.03))
        .dwell(6)
        .to(p(0.16))
        .finish("place", vec![("target", t)])
}

/// Dispenser frames sit at the nozzle; the vial mouth goes 12 cm below it.
fn predispense_demo() -> Demonstration {
    let d = obj(v(0.42, 0.28, 0.34), 0.0);
    let front = at(d.translation() + v(-0.15, 0.0, -0.12), 0.0);
    let under = at(d.translation() + v(0.0, 0.0, -0.12), 0.0);
    Recorder::new(home(), 3)
        .to(front)
        .dwell(3)
        .to(under)
        .dwell(8)
        .finish("predispense", vec![("dispenser", d)])
}

fn postdispense_demo() -> Demonstration {
    let d = obj(v(0.42, 0.28, 0.34), 0.0);
    let under = at(d.translation() + v(0.0, 0.0, -0.12), 0.0);
    let front = at(d.translation() + v(-0.15, 0.0, -0.12), 0.0);
    let clear = at(d.translation() + v(-0.15, 0.0, -0.04), 0.0);
    Recorder::new(under, 4)
        .dwell(3)
        .to(front)
        .to(clear)
        .to(home())
        .finish("postdispense", vec![("dispenser", d)])
}

/// Grasps the knob on top of the plate and turns it about its vertical axis.
fn stirrer_demo(turn: f64, seed: u64) -> Demonstration {
    let k = obj(v(0.58, 0.2, 0.06), 0.0);
    let p = |dz: f64, yaw: f64| at(k.translation() + v(0.0, 0.0, dz), yaw);
    Recorder::new(home(), seed)
        .to(p(0.12, 0.0))
        .to(p(0.02, 0.0))
        .dwell(4)
        .to(p(0.02, -turn))
        .dwell(4)
        .to(p(0.12, -turn))
        .finish("stirrer", vec![("knob", k)])
}

/// Brings the wrist camera over the vial, tilted toward it.
fn view_demo() -> Demonstration {
    let vial = obj(v(0.5, 0.05, 0.08), 0.0);
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.5) * down(0.0);
    let look = |dx: f64, dz: f64| Pose::new(tilt, vial.translation() + v(dx, 0.0, dz));
    Recorder::new(home(), 6)
        .to(look(-0.15, 0.16))
        .dwell(10)
        .to(look(-0.1, 0.12))
        .dwell(10)
        .to(home())
        .finish("view", vec![("vial", vial)])
}

/// Tips the held beaker about a horizontal line near the flask mouth and
/// back.
fn pour_demo() -> Demonstration {
    let flask = obj(v(0.5, -0.1, 0.18), 0.0);
    let above = at(flask.translation() + v(-0.09, 0.0, 0.12), 0.0);
    let lip = flask.translation() + v(-0.03, 0.0, 0.1);
    let tip = |angle: f64| {
        let r = Pose::from_axis_angle(&Vector3::y(), angle);
        let about = Pose::from_translation(lip).compose(&r).compose(&Pose::from_translation(-lip));
        about.compose(&above)
    };
    Recorder::new(home(), 7)
        .to(above)
        .dwell(4)
        .to(tip(1.4))
        .dwell(12)
        .to(tip(0.0))
        .to(at(flask.translation() + v(-0.09, 0.0, 0.2), 0.0))
        .finish("pour", vec![("container", flask)])
}

/// Joint-space recording of `demo` on the 7-DoF sample arm.
fn joint_recording(demo: &Demonstration) -> Vec<Vec<f64>> {
    let model = panda_like_7dof();
    let params = TrackerParams {
        pose_tol_rot: 1e-9,
        pose_tol_trans: 1e-9,
        ..Default::default()
    };
    let poses = demo.path().poses();
    let start = panda_ready_config();
    let lead = ConstraintLeg {
        start: model.forward_kinematics(&start).unwrap(),
        goal: poses[0],
        mode: LegMode::Transit,
    };
    let q0 = track_constraint_plan(&model, &start, &[lead], &params).unwrap();
    let mut q = q0.last().unwrap().clone();
    let mut out = vec![q.values().to_vec()];
    for w in poses.windows(2) {
        let leg = ConstraintLeg {
            start: model.forward_kinematics(&q).unwrap(),
            goal: w[1],
            mode: LegMode::WithinObject,
        };
        let p = track_constraint_plan(&model, &q, &[leg], &params).unwrap();
        q = p.last().unwrap().clone();
        out.push(q.values().to_vec());
    }
    out
}

fn inst(pairs: Vec<(&str, Pose)>) -> TaskInstance {
    TaskInstance::from_pairs(pairs).unwrap()
}

fn task(label: &str, id: &str, pose: Pose) -> ProtocolStep {
    ProtocolStep::Task {
        label: label.into(),
        instance: inst(vec![(id, pose)]),
    }
}

fn action(name: &str, seconds: f64, dispense: Option<(&str, f64)>, read: Option<SensorKind>) -> ProtocolStep {
    ProtocolStep::Action {
        name: name.into(),
        seconds,
        dispense: dispense.map(|(r, ml)| Dispense {
            reagent: r.into(),
            ml,
        }),
        read,
    }
}

struct GoldSite {
    vpick: Pose,
    vplace: Pose,
    cpick: Pose,
    cplacei: Pose,
    cplace: Pose,
}

fn gold_protocol() -> ProtocolFile {
    let kaucl4 = obj(v(0.40, 0.30, 0.34), 0.0);
    let t80 = obj(v(0.50, 0.26, 0.36), 0.1);
    let stirplate = obj(v(0.58, 0.2, 0.06), 0.2);
    let sites = [
        GoldSite {
            vpick: obj(v(0.42, -0.22, 0.05), 0.0),
            vplace: obj(v(0.55, -0.08, 0.08), 0.0),
            cpick: obj(v(0.36, -0.32, 0.03), 0.3),
            cplacei: obj(v(0.3, -0.42, 0.03), -0.5),
            cplace: obj(v(0.55, -0.08, 0.14), 0.0),
        },
        GoldSite {
            vpick: obj(v(0.48, -0.3, 0.05), -0.2),
            vplace: obj(v(0.58, 0.2, 0.1), 0.0),
            cpick: obj(v(0.3, -0.2, 0.03), 0.0),
            cplacei: obj(v(0.25, -0.35, 0.03), 0.6),
            cplace: obj(v(0.58, 0.2, 0.16), 0.0),
        },
    ];
    let mut steps = Vec::new();
    for s in &sites {
        steps.extend([
            task("pick", "object", s.vpick),
            task("predispense", "dispenser", kaucl4),
            action("dispense KAuCl4", 20.0, Some(("KAuCl4", 4.0)), None),
            task("postdispense", "dispenser", kaucl4),
            task("predispense", "dispenser", t80),
            action("dispense polysorbate 80", 30.0, Some(("T-80", 10.0)), None),
            task("postdispense", "dispenser", t80),
            task("place", "target", s.vplace),
            task("pick", "object", s.cpick),
            task("place", "target", s.cplacei),
            task("pick", "object", s.cplacei),
            task("place", "target", s.cplace),
        ]);
    }
    steps.push(task("stirrer", "knob", stirplate));
    steps.push(ProtocolStep::Gate {
        condition: GateCondition::ElapsedAtLeast { seconds: 3600.0 },
    });
    let mut inspect = Vec::new();
    for s in &sites {
        inspect.extend([
            task("pick", "object", s.cplace),
            task("place", "target", s.cplacei),
            task("pick", "object", s.cplacei),
            task("view", "vial", s.vplace),
            action("photograph", 2.0, None, Some(SensorKind::Color)),
            task("place", "target", s.cplace),
        ]);
    }
    steps.push(ProtocolStep::Repeat {
        steps: inspect,
        until: GateCondition::ElapsedAtLeast { seconds: 18000.0 },
        period: 7200.0,
    });
    steps.push(ProtocolStep::Gate {
        condition: GateCondition::ColorDistanceAtLeast {
            reference: [214.0, 198.0, 122.0],
            threshold: 120.0,
        },
    });
    ProtocolFile {
        name: Some("gold nanoparticles".into()),
        q_start: Some(panda_ready_config()),
        steps,
    }
}

fn gold_sensors() -> ScriptedSensors {
    let frames = [
        (0.0, [214.0, 198.0, 122.0]),
        (1800.0, [205.0, 160.0, 118.0]),
        (3600.0, [180.0, 96.0, 98.0]),
        (10800.0, [152.0, 42.0, 64.0]),
        (18000.0, [140.0, 30.0, 58.0]),
    ];
    ScriptedSensors::new(
        None,
        frames.iter().map(|&(t, rgb)| ColorFrame { t, rgb }).collect(),
    )
    .unwrap()
}

fn magnetite_protocol() -> ProtocolFile {
    let beaker = obj(v(0.4, -0.25, 0.06), 0.0);
    let feso4 = obj(v(0.42, 0.28, 0.34), 0.0);
    let flask = obj(v(0.52, -0.05, 0.2), 0.0);
    let stirplate = obj(v(0.6, 0.18, 0.06), 0.0);
    let steps = vec![
        task("pick", "object", beaker),
        task("predispense", "dispenser", feso4),
        action("dispense FeSO4", 120.0, Some(("FeSO4", 100.0)), None),
        task("pour", "container", flask),
        task("place", "target", beaker),
        task("stirrer", "knob", stirplate),
        action("heating mantle on", 5.0, None, None),
        action("initial pH", 5.0, None, Some(SensorKind::Ph)),
        ProtocolStep::Repeat {
            steps: vec![action("dispense NaOH", 15.0, Some(("NaOH", 4.0)), None)],
            until: GateCondition::PhAtLeast { threshold: 12.0 },
            period: 60.0,
        },
    ];
    ProtocolFile {
        name: Some("magnetite nanoparticles".into()),
        q_start: Some(panda_ready_config()),
        steps,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-step titration curve with inflections at 20 mL (pH 4.2) and 80 mL
/// (pH 10.4), tabulated every millilitre.
fn titration_sensors() -> ScriptedSensors {
    let points = (0..=120)
        .map(|ml| {
            let x = ml as f64;
            [x, 1.5 + 5.4 * sigmoid((x - 20.0) / 3.0) + 7.0 * sigmoid((x - 80.0) / 3.0)]
        })
        .collect();
    ScriptedSensors::new(
        Some(PhScript {
            source: PhSource::Volume { reagent: "NaOH".into() },
            points,
        }),
        vec![],
    )
    .unwrap()
}

/// Sample paths for the segment command: one screw, and a slide followed
/// by a turn.
fn segmentation_samples(dir: &Path) {
    let a = at(v(0.4, 0.0, 0.3), 0.0);
    let one = Recorder::new(a, 11)
        .to(Pose::new(down(0.6), v(0.45, 0.1, 0.2)))
        .finish("single", vec![("table", obj(v(0.4, 0.0, 0.0), 0.0))]);
    save_demonstration(&dir.join("single_screw.json"), &one, None).unwrap();
    let two = Recorder::new(a, 12)
        .to(at(v(0.5, 0.0, 0.3), 0.0))
        .to(at(v(0.5, 0.0, 0.3), 0.8))
        .finish("two", vec![("table", obj(v(0.4, 0.0, 0.0), 0.0))]);
    save_demonstration(&dir.join("two_screw.json"), &two, None).unwrap();
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    let demos = out.join("demos");
    save_model(&out.join("models/planar_2r.json"), &planar_2r()).unwrap();
    save_model(&out.join("models/panda_like_7dof.json"), &panda_like_7dof()).unwrap();

    let tol = SegmentTolerance::default();
    let r = DEFAULT_ROI_RADIUS;
    let gold_demos = [
        pick_demo(),
        place_demo(),
        predispense_demo(),
        postdispense_demo(),
        stirrer_demo(PI / 3.0, 5),
        view_demo(),
    ];
    let mut gold = SkillLibrary::new();
    for d in &gold_demos {
        save_demonstration(&demos.join(format!("gold_np/{}.json", d.label())), d, Some(r)).unwrap();
        gold.register(d.label(), d.clone(), r, tol, false).unwrap();
    }
    save_library(&out.join("libraries/gold_np.json"), &gold).unwrap();

    let stir = stirrer_demo(PI / 2.0, 8);
    let pour = pour_demo();
    save_demonstration(&demos.join("magnetite/pour.json"), &pour, Some(r)).unwrap();
    let joints = joint_recording(&stir);
    let mut doc = serde_json::to_value(screwkit::io::DemonstrationFile::from_demonstration(&stir, Some(r))).unwrap();
    let map = doc.as_object_mut().unwrap();
    map.remove("poses");
    map.insert("joints".into(), serde_json::to_value(&joints).unwrap());
    map.insert("model".into(), "../../models/panda_like_7dof.json".into());
    write_json(&demos.join("magnetite/stirrer.json"), &doc).unwrap();

    let mut magnetite = SkillLibrary::new();
    let reused: Vec<String> = ["pick", "place", "predispense"].map(String::from).to_vec();
    magnetite.import(&gold, &reused, false).unwrap();
    let (stir_loaded, _) = screwkit::io::load_demonstration(&demos.join("magnetite/stirrer.json")).unwrap();
    magnetite.register("stirrer", stir_loaded, r, tol, false).unwrap();
    magnetite.register("pour", pour, r, tol, false).unwrap();
    save_library(&out.join("libraries/magnetite.json"), &magnetite).unwrap();

    write_json(&out.join("protocols/gold_np.json"), &gold_protocol()).unwrap();
    write_json(&out.join("protocols/magnetite.json"), &magnetite_protocol()).unwrap();
    write_json(&out.join("sensors/gold_np.json"), &gold_sensors()).unwrap();
    write_json(&out.join("sensors/titration.json"), &titration_sensors()).unwrap();
    segmentation_samples(&demos);
    println!("fixtures written to {}", out.display());
}

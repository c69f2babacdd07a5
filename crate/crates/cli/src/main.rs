use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use screwkit::io::{self, IoError, PlanReport, PlotKind, SegmentedFile, WaypointsFile};
use screwkit::kinematics::{JointConfig, RobotModel};
use screwkit::protocol::{
    execute_protocol, plan_protocol, ExecOptions, ProtocolError, ProtocolPlan, RunStatus, SkillLibrary,
};
use screwkit::rmrc::{TrackError, TrackerParams};
use screwkit::segmentation::{reconstruction_error, segment_path, SegmentTolerance};
use screwkit::transfer::{build_constraint_plan, transfer_guiding_poses, TransferError, DEFAULT_ROI_RADIUS};

#[derive(Parser)]
#[command(name = "screwkit", version, about = "Screw-based programming by demonstration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a demonstration into constant-screw segments.
    Segment {
        demo: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        tol_rot: f64,
        #[arg(long, default_value_t = 0.005)]
        tol_trans: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add a demonstrated skill to a library, or copy skills between
    /// libraries.
    Register {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, conflicts_with = "import_from")]
        demo: Option<PathBuf>,
        /// Defaults to the demonstration's own label.
        #[arg(long, requires = "demo")]
        label: Option<String>,
        #[arg(long)]
        roi_radius: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        tol_rot: f64,
        #[arg(long, default_value_t = 0.005)]
        tol_trans: f64,
        #[arg(long, requires = "labels")]
        import_from: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Carry a skill's guiding poses over to a new task instance.
    Transfer {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan joint paths for every task of a protocol.
    Plan {
        #[command(flatten)]
        inputs: PlanInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a protocol and execute it against simulated sensors.
    Run {
        #[command(flatten)]
        inputs: PlanInputs,
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        poll_interval: f64,
        #[arg(long, default_value_t = 86_400.0)]
        gate_timeout: f64,
        #[arg(long, default_value_t = 0.02)]
        seconds_per_config: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit plot-ready CSV from a log or a trajectory export.
    PlotData {
        input: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlanInputs {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated start configuration; overrides the protocol file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    q_start: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.02)]
    step_tau: f64,
    #[arg(long, default_value_t = 0.01)]
    damping: f64,
    #[arg(long, default_value_t = 0.1)]
    max_joint_step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pose_tol_rot: f64,
    #[arg(long, default_value_t = 1e-3)]
    pose_tol_trans: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

enum Failure {
    Input(String),
    Planning(String),
    GateTimeout(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Planning(_) => 2,
            Failure::GateTimeout(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Planning(m) | Failure::GateTimeout(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        let m = e.to_string();
        match e {
            ProtocolError::Transfer {
                source: TransferError::MissingObject(_),
                ..
            } => Failure::Input(m),
            ProtocolError::Transfer { .. }
            | ProtocolError::Tracking { .. }
            | ProtocolError::AuditFailed { .. }
            | ProtocolError::Kinematics(_) => Failure::Planning(m),
            _ => Failure::Input(m),
        }
    }
}

fn input<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{ctx}: {e}"))
}

fn load_or_new_library(path: &Path) -> Result<SkillLibrary, Failure> {
    if path.exists() {
        Ok(io::load_library(path)?)
    } else {
        Ok(SkillLibrary::new())
    }
}

fn cmd_segment(demo: &Path, tol_rot: f64, tol_trans: f64, out: Option<&Path>) -> Result<(), Failure> {
    let (d, _) = io::load_demonstration(demo)?;
    let tol = SegmentTolerance::new(tol_rot, tol_trans).map_err(input("tolerance"))?;
    let seg = segment_path(d.path(), tol).map_err(input(d.label()))?;
    let err = reconstruction_error(d.path(), &seg).map_err(input(d.label()))?;
    let n = seg.segment_count();
    println!(
        "{n} segment{} (breakpoints {:?}); reconstruction error {:.3e} rad / {:.3e} m",
        if n == 1 { "" } else { "s" },
        seg.breakpoints(),
        err.0,
        err.1
    );
    if let Some(out) = out {
        io::write_json(out, &SegmentedFile::new(d.label(), &seg, err))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_register(
    library: &Path,
    demo: Option<&Path>,
    label: Option<&str>,
    roi_radius: Option<f64>,
    tol: (f64, f64),
    import_from: Option<&Path>,
    labels: &[String],
    overwrite: bool,
) -> Result<(), Failure> {
    let mut lib = load_or_new_library(library)?;
    match (demo, import_from) {
        (Some(demo), None) => {
            let (d, file_roi) = io::load_demonstration(demo)?;
            let label = label.unwrap_or(d.label()).to_string();
            let roi = roi_radius.or(file_roi).unwrap_or(DEFAULT_ROI_RADIUS);
            let tol = SegmentTolerance::new(tol.0, tol.1).map_err(input("tolerance"))?;
            let entry = lib.register(&label, d, roi, tol, overwrite)?;
            println!(
                "registered {label:?}: {} segments, {} guiding poses",
                entry.segmented.segment_count(),
                entry.guiding.pose_count()
            );
        }
        (None, Some(src)) => {
            let other = io::load_library(src)?;
            lib.import(&other, labels, overwrite)?;
            println!("imported {} from {}", labels.join(", "), src.display());
        }
        _ => return Err(Failure::Input("give either --demo or --import-from with --labels".into())),
    }
    io::save_library(library, &lib)?;
    Ok(())
}

fn cmd_transfer(library: &Path, label: &str, instance: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let lib = io::load_library(library)?;
    let entry = lib
        .get(label)
        .ok_or_else(|| Failure::Input(format!("skill {label:?} is not in {}", library.display())))?;
    let inst = io::load_instance(instance)?;
    let waypoints = transfer_guiding_poses(&entry.guiding, &inst).map_err(|e| match e {
        TransferError::MissingObject(_) => Failure::Input(format!("{label}: {e}")),
        e => Failure::Planning(format!("{label}: {e}")),
    })?;
    let legs = if waypoints.len() >= 2 {
        build_constraint_plan(&waypoints).map_err(|e| Failure::Planning(format!("{label}: {e}")))?
    } else {
        Vec::new()
    };
    println!("{label}: {} waypoints, {} legs", waypoints.len(), legs.len());
    if let Some(out) = out {
        io::write_json(
            out,
            &WaypointsFile {
                label: label.to_string(),
                waypoints,
                legs,
            },
        )?;
    }
    Ok(())
}

fn tracker_params(p: &PlanInputs) -> TrackerParams {
    TrackerParams {
        step_tau: p.step_tau,
        damping_lambda: p.damping,
        max_joint_step: p.max_joint_step,
        pose_tol_rot: p.pose_tol_rot,
        pose_tol_trans: p.pose_tol_trans,
        max_iters: p.max_iters,
    }
}

struct Planned {
    plan: ProtocolPlan,
    steps: Vec<screwkit::protocol::ProtocolStep>,
    name: Option<String>,
    model: RobotModel,
}

fn plan_from(inputs: &PlanInputs, out: &Path) -> Result<Planned, Failure> {
    let lib = io::load_library(&inputs.library)?;
    let proto = io::load_protocol(&inputs.protocol)?;
    let model = io::load_model(&inputs.model)?;
    let q_start = match (&inputs.q_start, &proto.q_start) {
        (Some(q), _) => JointConfig::new(q.clone()),
        (None, Some(q)) => q.clone(),
        (None, None) => JointConfig::zeros(model.dof()),
    };
    let params = tracker_params(inputs);
    params
        .validate()
        .map_err(|e: TrackError| Failure::Input(e.to_string()))?;
    let plan = plan_protocol(&lib, &proto.steps, &model, &q_start, &params)?;
    for (stem, path) in io::plan_exports(&plan) {
        io::write_trajectory(&out.join(format!("{stem}.csv")), &model, path)?;
    }
    let report = PlanReport::new(&plan, proto.name.as_deref(), &model);
    io::write_json(&out.join("plan.json"), &report)?;
    println!(
        "planned {} task steps ({} configurations) into {}",
        report.tasks.len(),
        report.tasks.iter().map(|t| t.configs).sum::<usize>(),
        out.display()
    );
    Ok(Planned {
        plan,
        steps: proto.steps,
        name: proto.name,
        model,
    })
}

fn cmd_run(
    inputs: &PlanInputs,
    sensors: &Path,
    opts: ExecOptions,
    out: &Path,
) -> Result<(), Failure> {
    let mut sensors = io::load_sensors(sensors)?;
    let planned = plan_from(inputs, out)?;
    let log = execute_protocol(&planned.plan, &planned.steps, &mut sensors, &opts)?;
    io::write_log(&out.join("log.jsonl"), &log)?;
    let name = planned.name.as_deref().unwrap_or("protocol");
    log::info!("executed {name} with model {}", planned.model.name());
    match log.status {
        RunStatus::Completed => {
            println!(
                "{name}: completed {} records in {:.1} s simulated",
                log.records.len(),
                log.end_time()
            );
            Ok(())
        }
        RunStatus::Failed => {
            let last = log.records.last().map(|r| r.step_id.as_str()).unwrap_or("?");
            Err(Failure::GateTimeout(format!(
                "{name}: step {last} timed out after {:.1} s simulated",
                log.end_time()
            )))
        }
    }
}

fn cmd_plot_data(input: &Path, kind: &str, out: &Path) -> Result<(), Failure> {
    let kind: PlotKind = kind.parse().map_err(Failure::Input)?;
    let csv = io::plot_data(input, kind)?;
    io::write_text(out, &csv)?;
    println!("{} rows written to {}", csv.lines().count().saturating_sub(1), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Segment {
            demo,
            tol_rot,
            tol_trans,
            out,
        } => cmd_segment(&demo, tol_rot, tol_trans, out.as_deref()),
        Command::Register {
            library,
            demo,
            label,
            roi_radius,
            tol_rot,
            tol_trans,
            import_from,
            labels,
            overwrite,
        } => cmd_register(
            &library,
            demo.as_deref(),
            label.as_deref(),
            roi_radius,
            (tol_rot, tol_trans),
            import_from.as_deref(),
            &labels,
            overwrite,
        ),
        Command::Transfer {
            library,
            label,
            instance,
            out,
        } => cmd_transfer(&library, &label, &instance, out.as_deref()),
        Command::Plan { inputs, out } => plan_from(&inputs, &out).map(|_| ()),
        Command::Run {
            inputs,
            sensors,
            poll_interval,
            gate_timeout,
            seconds_per_config,
            out,
        } => cmd_run(
            &inputs,
            &sensors,
            ExecOptions {
                poll_interval,
                gate_timeout,
                seconds_per_config,
            },
            &out,
        ),
        Command::PlotData { input, kind, out } => cmd_plot_data(&input, &kind, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

//! C ABI over `hrc-core`.
//!
//! Every function returns an [`HrcStatus`]. On failure the message is kept in
//! a thread-local buffer readable with [`hrc_last_error_message`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hrc_core::app::{self, HumanConfig, HumanModel, RunConfig, Scenario, Simulation};
use hrc_core::collision::{self, Shape};
use hrc_core::events;
use hrc_core::geometry::Pose;
use hrc_core::kinematics::{self, IkOptions, JointConfiguration, KinematicsError, RobotModel};
use hrc_core::metrics::{self, Alternative, Condition, PairedSample, StatsError, Tails};
use hrc_core::plan::PlanPhase;
use hrc_core::world::World;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Unreachable = 4,
    NoConvergence = 5,
    Parse = 6,
    Config = 7,
    Runtime = 8,
    Statistics = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: HrcStatus, msg: impl std::fmt::Display) -> HrcStatus {
    set_error(msg.to_string());
    status
}

fn guard<F: FnOnce() -> HrcStatus>(f: F) -> HrcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HrcStatus::Panic, msg)
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(HrcStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Copies the last error message into `buf` as a NUL-terminated string.
///
/// Returns the message length in bytes excluding the terminator; pass a null
/// `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hrc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

fn kin_status(e: &KinematicsError) -> HrcStatus {
    match e {
        KinematicsError::DimensionMismatch { .. } => HrcStatus::DimensionMismatch,
        KinematicsError::Unreachable { .. } => HrcStatus::Unreachable,
        KinematicsError::MaxIterations { .. } => HrcStatus::NoConvergence,
        KinematicsError::InvalidModel(_) => HrcStatus::InvalidArgument,
        _ => HrcStatus::Parse,
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, HrcStatus> {
    if s.is_null() {
        return Err(fail(HrcStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| fail(HrcStatus::InvalidArgument, e))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize) -> Result<&'a [f64], HrcStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HrcStatus::NullPointer, "array argument is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Position in meters and a `(w, x, y, z)` unit quaternion.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrcPose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl HrcPose {
    fn to_pose(self) -> Result<Pose, HrcStatus> {
        let n = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !self.position.iter().all(|v| v.is_finite()) || !n.is_finite() || n < 1e-9 {
            return Err(fail(HrcStatus::InvalidArgument, "pose must be finite with a nonzero quaternion"));
        }
        Ok(Pose::new(self.position, self.orientation))
    }

    fn from_pose(p: &Pose) -> Self {
        Self { position: p.position_array(), orientation: p.orientation_array() }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrcShapeKind {
    Sphere = 0,
    Aabb = 1,
    Capsule = 2,
}

/// Sphere: `dims[0]` radius. Box: `dims` half extents. Capsule: `dims[0]` radius, `dims[1]` half length.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrcShape {
    pub kind: HrcShapeKind,
    pub dims: [f64; 3],
}

impl HrcShape {
    fn to_shape(self) -> Result<Shape, HrcStatus> {
        let d = self.dims;
        let s = match self.kind {
            HrcShapeKind::Sphere => Shape::Sphere { radius: d[0] },
            HrcShapeKind::Aabb => Shape::Aabb { half_extents: d },
            HrcShapeKind::Capsule => Shape::Capsule { radius: d[0], half_length: d[1] },
        };
        if s.is_valid() {
            Ok(s)
        } else {
            Err(fail(HrcStatus::InvalidArgument, format!("invalid shape {s:?}")))
        }
    }
}

pub struct HrcRobotModel(RobotModel);
pub struct HrcWorld(World);
pub struct HrcSimulation(Simulation);

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrc_robot_model_bundled(out: *mut *mut HrcRobotModel) -> HrcStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(HrcRobotModel(RobotModel::bundled())));
        HrcStatus::Ok
    })
}

/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrc_robot_model_from_json(json: *const c_char, out: *mut *mut HrcRobotModel) -> HrcStatus {
    guard(|| {
        non_null!(out);
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RobotModel::from_json(text) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(HrcRobotModel(m)));
                HrcStatus::Ok
            }
            Err(e) => fail(kin_status(&e), e),
        }
    })
}

/// # Safety
/// `model` must come from a `hrc_robot_model_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_robot_model_free(model: *mut HrcRobotModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrc_robot_model_dof(model: *const HrcRobotModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dof())
}

/// # Safety
/// `model` must be a live handle, `q` point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn hrc_forward_kinematics(model: *const HrcRobotModel, q: *const f64, n: usize, out: *mut HrcPose) -> HrcStatus {
    guard(|| {
        non_null!(model, out);
        let q = match slice_arg(q, n) {
            Ok(q) => JointConfiguration(q.to_vec()),
            Err(s) => return s,
        };
        match kinematics::forward_kinematics(&(*model).0, &q) {
            Ok(p) => {
                *out = HrcPose::from_pose(&p);
                HrcStatus::Ok
            }
            Err(e) => fail(kin_status(&e), e),
        }
    })
}

/// Damped least-squares IK with default options. Writes `n` joint values to `q_out`.
///
/// # Safety
/// `model` must be a live handle, `seed` and `q_out` point to `n` values, `target` be valid.
/// `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_inverse_kinematics(
    model: *const HrcRobotModel,
    target: *const HrcPose,
    seed: *const f64,
    n: usize,
    q_out: *mut f64,
    iterations: *mut usize,
) -> HrcStatus {
    guard(|| {
        non_null!(model, target, q_out);
        let seed = match slice_arg(seed, n) {
            Ok(s) => JointConfiguration(s.to_vec()),
            Err(s) => return s,
        };
        let target = match (*target).to_pose() {
            Ok(p) => p,
            Err(s) => return s,
        };
        match kinematics::inverse_kinematics(&(*model).0, &target, &seed, &IkOptions::default()) {
            Ok(sol) => {
                ptr::copy_nonoverlapping(sol.q.0.as_ptr(), q_out, n);
                if !iterations.is_null() {
                    *iterations = sol.iterations;
                }
                HrcStatus::Ok
            }
            Err(e) => fail(kin_status(&e), e),
        }
    })
}

/// # Safety
/// `a`, `pose_a`, `b`, `pose_b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrc_collide(
    a: *const HrcShape,
    pose_a: *const HrcPose,
    b: *const HrcShape,
    pose_b: *const HrcPose,
    out: *mut bool,
) -> HrcStatus {
    guard(|| {
        non_null!(a, pose_a, b, pose_b, out);
        let parts = (|| Ok(((*a).to_shape()?, (*pose_a).to_pose()?, (*b).to_shape()?, (*pose_b).to_pose()?)))();
        match parts {
            Ok((sa, pa, sb, pb)) => {
                *out = collision::collide(&sa, &pa, &sb, &pb);
                HrcStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrc_world_sample(out: *mut *mut HrcWorld) -> HrcStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(HrcWorld(World::sample_scene())));
        HrcStatus::Ok
    })
}

/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrc_world_from_json(json: *const c_char, out: *mut *mut HrcWorld) -> HrcStatus {
    guard(|| {
        non_null!(out);
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match World::from_json(text) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(HrcWorld(w)));
                HrcStatus::Ok
            }
            Err(e) => fail(HrcStatus::Parse, e),
        }
    })
}

/// # Safety
/// `world` must come from a `hrc_world_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_world_free(world: *mut HrcWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Number of (link, object) contacts for configuration `q`.
///
/// # Safety
/// Handles must be live, `q` point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn hrc_world_arm_contacts(
    world: *const HrcWorld,
    model: *const HrcRobotModel,
    q: *const f64,
    n: usize,
    out: *mut usize,
) -> HrcStatus {
    guard(|| {
        non_null!(world, model, out);
        let q = match slice_arg(q, n) {
            Ok(q) => JointConfiguration(q.to_vec()),
            Err(s) => return s,
        };
        match (*world).0.arm_collision(&(*model).0, &q) {
            Ok(c) => {
                *out = c.len();
                HrcStatus::Ok
            }
            Err(e) => fail(HrcStatus::DimensionMismatch, e),
        }
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrcAlternative {
    Less = 0,
    Greater = 1,
    TwoSided = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrcTails {
    One = 1,
    Two = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HrcWilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
}

fn stats_fail(e: StatsError) -> HrcStatus {
    fail(HrcStatus::Statistics, e)
}

/// Paired signed-rank test on `d = c1 - c2`.
///
/// # Safety
/// `c1` and `c2` must point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn hrc_wilcoxon_signed_rank(
    c1: *const f64,
    c2: *const f64,
    n: usize,
    alternative: HrcAlternative,
    out: *mut HrcWilcoxonResult,
) -> HrcStatus {
    guard(|| {
        non_null!(out);
        let (a, b) = match (slice_arg(c1, n), slice_arg(c2, n)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let alt = match alternative {
            HrcAlternative::Less => Alternative::Less,
            HrcAlternative::Greater => Alternative::Greater,
            HrcAlternative::TwoSided => Alternative::TwoSided,
        };
        let sample = PairedSample::new(a.iter().copied().zip(b.iter().copied()).collect());
        match metrics::wilcoxon_signed_rank(&sample, alt) {
            Ok(r) => {
                *out = HrcWilcoxonResult {
                    w_plus: r.w_plus,
                    w_minus: r.w_minus,
                    statistic: r.statistic,
                    p_value: r.p_value,
                    n_effective: r.n_effective,
                    exact: r.exact,
                };
                HrcStatus::Ok
            }
            Err(e) => stats_fail(e),
        }
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrc_critical_value(n: usize, alpha: f64, tails: HrcTails, out: *mut u32) -> HrcStatus {
    guard(|| {
        non_null!(out);
        let tails = match tails {
            HrcTails::One => Tails::One,
            HrcTails::Two => Tails::Two,
        };
        match metrics::critical_value(n, alpha, tails) {
            Ok(w) => {
                *out = w;
                HrcStatus::Ok
            }
            Err(e) => stats_fail(e),
        }
    })
}

/// Headless run settings over the bundled scenario.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrcRunOptions {
    pub delta_t: f64,
    pub tick: f64,
    pub seed: u64,
    /// 0 shows the anticipated motion (C1), 1 does not (C2).
    pub condition: u32,
    pub collision_pause: f64,
    pub assembly_seconds: f64,
    pub p_block: f64,
    pub p_intervene: f64,
}

/// Defaults matching the command-line tool.
#[no_mangle]
pub extern "C" fn hrc_run_options_default() -> HrcRunOptions {
    let c = RunConfig::default();
    let assembly_seconds = match c.human.assembly {
        HumanModel::Fixed { seconds } => seconds,
        HumanModel::Uniform { lo, hi } => 0.5 * (lo + hi),
    };
    HrcRunOptions {
        delta_t: c.delta_t,
        tick: c.tick,
        seed: c.seed,
        condition: 0,
        collision_pause: c.collision_pause,
        assembly_seconds,
        p_block: c.human.p_block,
        p_intervene: c.human.p_intervene,
    }
}

fn run_config(o: &HrcRunOptions) -> Result<RunConfig, HrcStatus> {
    let condition = match o.condition {
        0 => Condition::C1,
        1 => Condition::C2,
        c => return Err(fail(HrcStatus::InvalidArgument, format!("condition must be 0 or 1, got {c}"))),
    };
    let config = RunConfig {
        delta_t: o.delta_t,
        tick: o.tick,
        seed: o.seed,
        condition,
        collision_pause: o.collision_pause,
        human: HumanConfig {
            assembly: HumanModel::Fixed { seconds: o.assembly_seconds },
            p_block: o.p_block,
            p_intervene: o.p_intervene,
            ..Default::default()
        },
        ..Default::default()
    };
    config.check().map_err(|e| fail(HrcStatus::Config, e))?;
    Ok(config)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HrcTrialSummary {
    pub steps: usize,
    pub collisions: usize,
    pub interventions: usize,
    pub total_time: f64,
}

/// Runs the bundled scenario to completion.
///
/// # Safety
/// `options` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrc_run_headless(options: *const HrcRunOptions, out: *mut HrcTrialSummary) -> HrcStatus {
    guard(|| {
        non_null!(options, out);
        let cfg = match run_config(&*options) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match app::run_headless(cfg, Scenario::bundled()) {
            Ok(o) => {
                *out = HrcTrialSummary {
                    steps: o.trial.step_durations.len(),
                    collisions: o.trial.collisions.len(),
                    interventions: o.trial.interventions.len(),
                    total_time: o.total_time,
                };
                HrcStatus::Ok
            }
            Err(e) => fail(HrcStatus::Runtime, e),
        }
    })
}

/// Creates a step-wise simulation of the bundled scenario driven by the scripted human.
///
/// # Safety
/// `options` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_new(options: *const HrcRunOptions, out: *mut *mut HrcSimulation) -> HrcStatus {
    guard(|| {
        non_null!(options, out);
        let cfg = match run_config(&*options) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match Simulation::new(cfg, Scenario::bundled()) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(HrcSimulation(sim)));
                HrcStatus::Ok
            }
            Err(e) => fail(HrcStatus::Config, e),
        }
    })
}

/// # Safety
/// `sim` must come from [`hrc_simulation_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_free(sim: *mut HrcSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one tick; `finished` is set once the plan is done.
///
/// # Safety
/// `sim` must be a live handle; `finished` may be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_step(sim: *mut HrcSimulation, finished: *mut bool) -> HrcStatus {
    guard(|| {
        non_null!(sim);
        let s = &mut (*sim).0;
        if let Err(e) = s.step() {
            return fail(HrcStatus::Runtime, e);
        }
        if !finished.is_null() {
            *finished = s.is_finished();
        }
        HrcStatus::Ok
    })
}

/// Queues a button press for the next tick.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_user_input(sim: *mut HrcSimulation, value: bool) -> HrcStatus {
    guard(|| {
        non_null!(sim);
        (*sim).0.enqueue(app::Command::UserInput(value));
        HrcStatus::Ok
    })
}

/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_clock(sim: *const HrcSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.0.clock())
}

/// Plan cursor (1-based, `N + 1` when done) and whether the plan awaits input.
///
/// # Safety
/// `sim` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_plan_status(sim: *const HrcSimulation, cursor: *mut usize, awaiting_input: *mut bool) -> HrcStatus {
    guard(|| {
        non_null!(sim);
        let ps = (*sim).0.plan_state();
        if !cursor.is_null() {
            *cursor = ps.cursor();
        }
        if !awaiting_input.is_null() {
            *awaiting_input = ps.phase() == PlanPhase::AwaitingInput;
        }
        HrcStatus::Ok
    })
}

/// Copies the current joint configuration into `q_out` (`n` must equal the model's DOF).
///
/// # Safety
/// `sim` must be a live handle and `q_out` point to `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_joint_state(sim: *const HrcSimulation, q_out: *mut f64, n: usize) -> HrcStatus {
    guard(|| {
        non_null!(sim, q_out);
        let q = &(*sim).0.scheduler().state().q;
        if q.len() != n {
            return fail(HrcStatus::DimensionMismatch, format!("expected {} joints, buffer holds {n}", q.len()));
        }
        ptr::copy_nonoverlapping(q.0.as_ptr(), q_out, n);
        HrcStatus::Ok
    })
}

/// Writes the NDJSON event log so far. `needed` receives the byte length;
/// returns `BufferTooSmall` when `len` is short (pass a null `buf` to query).
///
/// # Safety
/// `sim` must be a live handle, `buf` null or `len` writable bytes, `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn hrc_simulation_event_log(sim: *const HrcSimulation, buf: *mut u8, len: usize, needed: *mut usize) -> HrcStatus {
    guard(|| {
        non_null!(sim, needed);
        let log = events::to_ndjson((*sim).0.events());
        *needed = log.len();
        if buf.is_null() || len < log.len() {
            return fail(HrcStatus::BufferTooSmall, format!("event log needs {} bytes", log.len()));
        }
        ptr::copy_nonoverlapping(log.as_ptr(), buf, log.len());
        HrcStatus::Ok
    })
}

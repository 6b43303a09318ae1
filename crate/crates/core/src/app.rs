//! Run configuration, the simulation loop and the headless/serve/replay front ends.

use std::collections::VecDeque;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::Shape;
use crate::comm::{self, BindError, Envelope, ErrorCode, Hello, Hub, Inbound, Message, Role, Server};
use crate::events::{self, Event, EventKind, MediumKind};
use crate::geometry::Pose;
use crate::kinematics::{forward_kinematics, inverse_kinematics, IkOptions, JointConfiguration, KinematicsError, RobotModel};
use crate::metrics::{self, Condition, TrialRecord, TrialRecorder};
use crate::plan::{Plan, PlanPhase, PlanState, UserInput};
use crate::planner::{JointTrajectory, MotionPlanner, PlannerConfig, Skill};
use crate::scheduler::{self, Scheduler, SchedulerConfig};
use crate::world::{self, ObjectKind, PoseSource, World, WorldObject};

pub const HAND_ID: &str = "human_hand";
pub const DEFAULT_TCP_PORT: u16 = 7400;
pub const DEFAULT_CONSOLE_PORT: u16 = 7401;
const MAX_PLANNING_FAILURES: u32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl AppError {
    /// 1 for configuration problems, 2 for anything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Bind(_) | AppError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Headless,
    Serve,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "headless" => Ok(Mode::Headless),
            "serve" => Ok(Mode::Serve),
            _ => Err(format!("unknown mode {s:?}, expected headless or serve")),
        }
    }
}

/// Simulated human assembly time between a step's completion and the next press.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HumanModel {
    Fixed { seconds: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for HumanModel {
    fn default() -> Self {
        HumanModel::Fixed { seconds: 5.0 }
    }
}

impl HumanModel {
    fn is_valid(&self) -> bool {
        match *self {
            HumanModel::Fixed { seconds } => seconds.is_finite() && seconds >= 0.0,
            HumanModel::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            HumanModel::Fixed { seconds } => seconds,
            HumanModel::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

/// `fixed:<s>` or `uniform:<lo>,<hi>`.
impl std::str::FromStr for HumanModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid human model {s:?}, expected fixed:<s> or uniform:<lo>,<hi>");
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let m = match (kind, nums.as_slice()) {
            ("fixed", [s]) => HumanModel::Fixed { seconds: *s },
            ("uniform", [lo, hi]) => HumanModel::Uniform { lo: *lo, hi: *hi },
            _ => return Err(bad()),
        };
        if m.is_valid() {
            Ok(m)
        } else {
            Err(bad())
        }
    }
}

/// Who presses the advance button.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanDriver {
    Scripted,
    Console,
}

/// Behaviour of the scripted human.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    pub assembly: HumanModel,
    /// Chance per act that the hand ends up on the arm's path.
    pub p_block: f64,
    /// Chance per step that the next object is nudged before the press.
    pub p_intervene: f64,
    pub hand_radius: f64,
    /// Half-width of the nudge in x and y (m).
    pub nudge: f64,
}

impl Default for HumanConfig {
    fn default() -> Self {
        Self { assembly: HumanModel::default(), p_block: 0.0, p_intervene: 0.0, hand_radius: 0.04, nudge: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `None` selects the bundled asset.
    pub robot_model_path: Option<PathBuf>,
    pub world_path: Option<PathBuf>,
    pub plan_path: Option<PathBuf>,
    pub delta_t: f64,
    pub condition: Condition,
    pub tick: f64,
    pub seed: u64,
    pub mode: Mode,
    pub host: String,
    pub tcp_port: u16,
    pub console_port: u16,
    pub collision_pause: f64,
    pub human: HumanConfig,
    pub driver: HumanDriver,
    /// Marker pose seen by the viewer for headless calibration.
    pub marker_pose: Pose,
    pub marker_to_base: Pose,
    pub out_dir: Option<PathBuf>,
    /// Abort the run past this much simulated time.
    pub max_sim_time: f64,
    /// Simulated seconds per wall second in serve mode.
    pub speed: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            robot_model_path: None,
            world_path: None,
            plan_path: None,
            delta_t: scheduler::DEFAULT_DELTA_T,
            condition: Condition::C1,
            tick: scheduler::DEFAULT_TICK,
            seed: 42,
            mode: Mode::Headless,
            host: "127.0.0.1".into(),
            tcp_port: DEFAULT_TCP_PORT,
            console_port: DEFAULT_CONSOLE_PORT,
            collision_pause: scheduler::DEFAULT_COLLISION_PAUSE,
            human: HumanConfig::default(),
            driver: HumanDriver::Scripted,
            marker_pose: Pose::identity(),
            marker_to_base: Pose::identity(),
            out_dir: None,
            max_sim_time: 3600.0,
            speed: 1.0,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), AppError> {
        let cfg = |m: String| Err(AppError::Config(m));
        if !(self.delta_t.is_finite() && self.delta_t >= 0.0) {
            return cfg(format!("delta_t must be >= 0, got {}", self.delta_t));
        }
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return cfg(format!("tick must be > 0, got {}", self.tick));
        }
        if !(self.collision_pause.is_finite() && self.collision_pause >= 0.0) {
            return cfg(format!("collision_pause must be >= 0, got {}", self.collision_pause));
        }
        if !(self.max_sim_time.is_finite() && self.max_sim_time > 0.0) {
            return cfg(format!("max_sim_time must be > 0, got {}", self.max_sim_time));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return cfg(format!("speed must be > 0, got {}", self.speed));
        }
        let h = &self.human;
        for (name, p) in [("p_block", h.p_block), ("p_intervene", h.p_intervene)] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !h.assembly.is_valid() {
            return cfg(format!("invalid human model {:?}", h.assembly));
        }
        if !(h.hand_radius > 0.0 && h.nudge >= 0.0) {
            return cfg("hand_radius must be > 0 and nudge >= 0".into());
        }
        if self.mode == Mode::Headless && self.driver == HumanDriver::Console {
            return cfg("headless runs need the scripted human".into());
        }
        for p in [&self.robot_model_path, &self.world_path, &self.plan_path].into_iter().flatten() {
            if !p.is_file() {
                return cfg(format!("file not found: {}", p.display()));
            }
        }
        Ok(())
    }
}

/// Robot model, world and plan for one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: RobotModel,
    pub world: World,
    pub plan: Plan,
}

impl Scenario {
    pub fn bundled() -> Self {
        Self { model: RobotModel::bundled(), world: World::sample_scene(), plan: Plan::sample() }
    }

    pub fn load(config: &RunConfig) -> Result<Self, AppError> {
        let ctx = |p: &Path, e: &dyn std::fmt::Display| AppError::Config(format!("{}: {e}", p.display()));
        let model = match &config.robot_model_path {
            Some(p) => RobotModel::load(p).map_err(|e| ctx(p, &e))?,
            None => RobotModel::bundled(),
        };
        let world = match &config.world_path {
            Some(p) => World::load(p).map_err(|e| ctx(p, &e))?,
            None => World::sample_scene(),
        };
        let plan = match &config.plan_path {
            Some(p) => Plan::load(p).map_err(|e| ctx(p, &e))?,
            None => Plan::sample(),
        };
        Ok(Self { model, world, plan })
    }
}

/// Commands entering the loop; applied at the next tick.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    UserInput(bool),
    Intervention { object_id: String, pose: Pose },
    Calibrate { marker_pose: Pose },
}

#[derive(Debug)]
struct ScriptedHuman {
    config: HumanConfig,
    assembly_rng: ChaCha8Rng,
    intervene_rng: ChaCha8Rng,
    block_rng: ChaCha8Rng,
    press_at: Option<f64>,
    pressed: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ScriptedHuman {
    fn new(config: HumanConfig, seed: u64) -> Self {
        Self {
            config,
            assembly_rng: stream_rng(seed, 1),
            intervene_rng: stream_rng(seed, 2),
            block_rng: stream_rng(seed, 3),
            press_at: None,
            pressed: false,
        }
    }

    fn reset(&mut self) {
        self.press_at = None;
        self.pressed = false;
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub events: Vec<Event>,
    pub trial: TrialRecord,
    pub total_time: f64,
}

impl RunOutcome {
    pub fn event_log(&self) -> Vec<u8> {
        events::to_ndjson(&self.events)
    }

    /// `events.ndjson` and `trial.ndjson` in `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("events.ndjson"), self.event_log())?;
        let mut buf = Vec::new();
        metrics::write_trials(std::slice::from_ref(&self.trial), &mut buf)?;
        fs::write(dir.join("trial.ndjson"), buf)
    }
}

/// The single-threaded simulation loop.
pub struct Simulation {
    config: RunConfig,
    model: RobotModel,
    world: World,
    plan_state: PlanState,
    planner: MotionPlanner,
    scheduler: Scheduler,
    recorder: TrialRecorder,
    human: Option<ScriptedHuman>,
    inbox: VecDeque<Command>,
    ticks: u64,
    log: Vec<Event>,
    last_status: Option<(usize, PlanPhase)>,
    planning_failures: u32,
    hand_home: Option<WorldObject>,
    finished: Option<f64>,
}

impl Simulation {
    pub fn new(config: RunConfig, scenario: Scenario) -> Result<Self, AppError> {
        config.check()?;
        let Scenario { model, world, plan } = scenario;
        let sched = Scheduler::new(
            SchedulerConfig { delta_t: config.delta_t, collision_pause: config.collision_pause },
            crate::assets::home_configuration(&model),
        );
        let human = (config.driver == HumanDriver::Scripted).then(|| ScriptedHuman::new(config.human, config.seed));
        let mut sim = Self {
            planner: MotionPlanner::new(PlannerConfig::default(), config.seed),
            recorder: TrialRecorder::new(config.condition, config.seed),
            plan_state: PlanState::new(plan),
            scheduler: sched,
            model,
            world,
            human,
            inbox: VecDeque::new(),
            ticks: 0,
            log: Vec::new(),
            last_status: None,
            planning_failures: 0,
            hand_home: None,
            finished: None,
            config,
        };
        let mut first = Vec::new();
        if sim.config.driver == HumanDriver::Scripted {
            first.push(sim.apply_calibration(sim.config.marker_pose, 0.0));
        }
        sim.push_status(0.0, &mut first);
        sim.emit(first);
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn plan_state(&self) -> &PlanState {
        &self.plan_state
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn clock(&self) -> f64 {
        self.ticks as f64 * self.config.tick
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn enqueue(&mut self, cmd: Command) {
        self.inbox.push_back(cmd);
    }

    /// Whether an intervention on `object_id` is currently allowed.
    pub fn intervention_allowed(&self, object_id: &str) -> Result<(), (ErrorCode, String)> {
        if !self.world.contains(object_id) || object_id == HAND_ID {
            return Err((ErrorCode::UnknownObject, format!("unknown object {object_id:?}")));
        }
        if self.scheduler.active_act().is_some_and(|a| a.info.object_id == object_id) {
            return Err((ErrorCode::Rejected, format!("{object_id} is being handled by the robot")));
        }
        Ok(())
    }

    fn apply_calibration(&mut self, marker: Pose, t: f64) -> Event {
        let r = world::calibrate(&marker, &self.config.marker_to_base, t);
        let ev = Event::new(t, EventKind::Calibrated { base_in_viewer: r.base_in_viewer, marker_pose: r.marker_pose_used });
        self.world.set_calibration(r);
        ev
    }

    fn push_status(&mut self, t: f64, out: &mut Vec<Event>) {
        let key = (self.plan_state.cursor(), self.plan_state.phase());
        if self.last_status == Some(key) {
            return;
        }
        self.last_status = Some(key);
        let instruction = self.plan_state.current_action().map(|a| a.instruction.clone()).unwrap_or_default();
        out.push(Event::new(
            t,
            EventKind::PlanStatus { cursor: key.0, total: self.plan_state.plan().len(), phase: key.1, instruction },
        ));
    }

    /// Appends events to the log, dropping the anticipated stream when it is not shown.
    fn emit(&mut self, events: Vec<Event>) -> Vec<Event> {
        let shown: Vec<Event> = events
            .into_iter()
            .filter(|e| self.config.condition.shows_anticipation() || e.medium() != Some(MediumKind::AnticipatedRobotMotion))
            .collect();
        for e in &shown {
            self.recorder.record(e).expect("trial open while running");
        }
        self.log.extend(shown.iter().cloned());
        shown
    }

    fn handle_command(&mut self, cmd: Command, clock: f64, out: &mut Vec<Event>) -> Result<(), AppError> {
        match cmd {
            Command::UserInput(value) => {
                out.push(Event::new(clock, EventKind::UserInput { value }));
                match self.plan_state.advance(UserInput(value), clock) {
                    Some(d) => self.plan_and_dispatch(d.action, clock, out)?,
                    None if value => out.push(Event::new(clock, EventKind::InputIgnored { phase: self.plan_state.phase() })),
                    None => {}
                }
            }
            Command::Intervention { object_id, pose } => {
                if self.intervention_allowed(&object_id).is_err() {
                    return Ok(());
                }
                if let Ok(Some(iv)) = self.world.update_object_pose(&object_id, pose, PoseSource::Intervention) {
                    out.push(Event::new(clock, EventKind::Intervention { object_id: iv.object_id, pose: iv.pose }));
                }
            }
            Command::Calibrate { marker_pose } => out.push(self.apply_calibration(marker_pose, clock)),
        }
        Ok(())
    }

    fn plan_and_dispatch(&mut self, action: crate::planner::PlanAction, clock: f64, out: &mut Vec<Event>) -> Result<(), AppError> {
        let q = self.scheduler.state().q.clone();
        match self.planner.plan_action(&action, &self.world, &q, &self.model) {
            Ok(traj) => {
                self.planning_failures = 0;
                let block = self.draw_block(&traj);
                let (act, evs) = self
                    .scheduler
                    .dispatch(action, traj, clock)
                    .map_err(|e| AppError::Runtime(e.to_string()))?;
                self.plan_state.on_dispatched(act.act_id);
                out.extend(evs);
                if let Some(hand) = block {
                    self.world.register_object(hand).map_err(|e| AppError::Runtime(e.to_string()))?;
                }
            }
            Err(e) => {
                self.planning_failures += 1;
                out.push(Event::new(clock, EventKind::PlanningFailed { step: action.step_index, reason: e.to_string() }));
                self.plan_state.on_planning_failed();
                if let Some(h) = &mut self.human {
                    h.reset();
                }
                if self.planning_failures >= MAX_PLANNING_FAILURES && self.human.is_some() {
                    return Err(AppError::Runtime(format!(
                        "step {} failed to plan {MAX_PLANNING_FAILURES} times: {e}",
                        action.step_index
                    )));
                }
            }
        }
        Ok(())
    }

    /// Where the scripted human's hand lands on this act's path, if it does.
    fn draw_block(&mut self, traj: &JointTrajectory) -> Option<WorldObject> {
        let h = self.human.as_mut()?;
        let roll: f64 = h.block_rng.random();
        let frac: f64 = h.block_rng.random_range(0.3..0.7);
        if roll >= h.config.p_block || traj.duration() <= 0.0 || self.world.contains(HAND_ID) {
            return None;
        }
        let q = traj.sample(frac * traj.duration());
        let p = forward_kinematics(&self.model, &q).ok()?.position();
        let hand = WorldObject {
            id: HAND_ID.into(),
            kind: ObjectKind::Fixture,
            pose: Pose::from_translation(p.x, p.y, p.z),
            shape: Shape::Sphere { radius: h.config.hand_radius },
            grasp_offset: Pose::identity(),
        };
        let mut probe = World::new();
        probe.set_link_radius(self.world.link_radius());
        probe.register_object(hand.clone()).ok()?;
        let touching_at_start = !probe.arm_collision(&self.model, traj.start()).ok()?.is_empty();
        (!touching_at_start).then_some(hand)
    }

    fn schedule_human(&mut self, clock: f64) {
        let awaiting = self.plan_state.phase() == PlanPhase::AwaitingInput;
        let next_object = self.plan_state.current_action().map(|a| a.object_id.clone());
        let Some(h) = self.human.as_mut() else { return };
        if !awaiting {
            h.reset();
            return;
        }
        if h.press_at.is_none() {
            let delay = h.config.assembly.draw(&mut h.assembly_rng);
            h.press_at = Some(clock + delay);
            let roll: f64 = h.intervene_rng.random();
            let dx = h.intervene_rng.random_range(-1.0..=1.0) * h.config.nudge;
            let dy = h.intervene_rng.random_range(-1.0..=1.0) * h.config.nudge;
            if roll < h.config.p_intervene {
                if let Some(pose) = next_object.as_deref().and_then(|id| self.world.object_pose(id).ok()) {
                    let moved = pose.translated(nalgebra::Vector3::new(dx, dy, 0.0));
                    self.inbox.push_back(Command::Intervention { object_id: next_object.unwrap(), pose: moved });
                }
            }
        }
        let h = self.human.as_mut().expect("checked above");
        if !h.pressed && h.press_at.is_some_and(|at| clock >= at) {
            h.pressed = true;
            self.inbox.push_back(Command::UserInput(true));
        }
    }

    /// Advances one tick and returns the events it produced (after condition filtering).
    pub fn step(&mut self) -> Result<Vec<Event>, AppError> {
        if self.finished.is_some() {
            return Ok(Vec::new());
        }
        self.ticks += 1;
        let clock = self.clock();
        let dt = self.config.tick;
        let mut out = Vec::new();

        let cmds: Vec<Command> = self.inbox.drain(..).collect();
        for cmd in cmds {
            self.handle_command(cmd, clock, &mut out)?;
        }

        let tick_events = self.scheduler.tick(&self.world, &self.model, clock, dt);
        let mut bookkeeping = Vec::new();
        for ev in &tick_events {
            match &ev.kind {
                EventKind::Collision { object_id, .. } if object_id == HAND_ID => {
                    self.hand_home = self.world.remove_object(HAND_ID).ok();
                }
                EventKind::ActCompleted { act_id, .. } => {
                    if let Some(action) = self.plan_state.current_action().cloned() {
                        if let (Skill::PickPlace, Some(pose)) = (action.skill, action.place_pose) {
                            if self.world.update_object_pose(&action.object_id, pose, PoseSource::Plan).is_ok() {
                                bookkeeping.push(Event::new(clock, EventKind::ObjectMoved { object_id: action.object_id.clone(), pose }));
                            }
                        }
                    }
                    self.plan_state.on_act_completed(*act_id, clock).map_err(|e| AppError::Runtime(e.to_string()))?;
                    let _ = self.world.remove_object(HAND_ID);
                }
                _ => {}
            }
        }
        // Commands, then the tick they feed, then the bookkeeping the tick triggers.
        out.extend(tick_events);
        out.append(&mut bookkeeping);

        self.push_status(clock, &mut out);
        self.schedule_human(clock);

        if self.plan_state.phase() == PlanPhase::Done && !self.scheduler.is_busy() {
            self.finished = Some(clock);
            out.push(Event::new(clock, EventKind::RunFinished { total_time: clock }));
        } else if clock > self.config.max_sim_time {
            return Err(AppError::Runtime(format!("run exceeded {} s of simulated time", self.config.max_sim_time)));
        }
        Ok(self.emit(out))
    }

    pub fn into_outcome(mut self) -> Result<RunOutcome, AppError> {
        let total_time = self.finished.ok_or_else(|| AppError::Runtime("run did not finish".into()))?;
        let trial = self.recorder.finalize(total_time).map_err(|e| AppError::Runtime(e.to_string()))?;
        let _ = self.hand_home.take();
        Ok(RunOutcome { events: self.log, trial, total_time })
    }

    /// Hello carrying the model and a world snapshot.
    pub fn hello(&self) -> Message {
        Message::Hello(Hello {
            protocol_version: comm::PROTOCOL_VERSION,
            role: Role::Server,
            robot_model: Some(self.model.clone()),
            objects: self.world.objects().filter(|o| o.id != HAND_ID).cloned().collect(),
            delta_t: Some(self.config.delta_t),
        })
    }

    pub fn plan_status_message(&self) -> Message {
        Message::PlanStatus {
            cursor: self.plan_state.cursor(),
            total: self.plan_state.plan().len(),
            phase: self.plan_state.phase(),
            instruction: self.plan_state.current_action().map(|a| a.instruction.clone()).unwrap_or_default(),
        }
    }
}

/// Runs the scenario to completion as fast as possible.
pub fn run_headless(config: RunConfig, scenario: Scenario) -> Result<RunOutcome, AppError> {
    let mut sim = Simulation::new(config, scenario)?;
    while !sim.is_finished() {
        sim.step()?;
    }
    sim.into_outcome()
}

/// Loads the scenario, runs it in the configured mode and writes artifacts.
pub fn run(config: RunConfig) -> Result<RunOutcome, AppError> {
    config.check()?;
    let scenario = Scenario::load(&config)?;
    let out_dir = config.out_dir.clone();
    let outcome = match config.mode {
        Mode::Headless => run_headless(config, scenario)?,
        Mode::Serve => serve(config, scenario)?,
    };
    if let Some(dir) = out_dir {
        outcome.write_to(&dir)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.step {
            Some(s) => write!(f, "step {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn reach_check(model: &RobotModel, target: &Pose, seed: &JointConfiguration) -> Result<(), String> {
    let opts = IkOptions::default();
    match inverse_kinematics(model, target, seed, &opts) {
        Ok(_) => Ok(()),
        Err(KinematicsError::MaxIterations { .. }) if inverse_kinematics(model, target, &model.neutral(), &opts).is_ok() => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

/// Static checks of a configuration; an empty list means valid.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let general = |m: String| Diagnostic { step: None, message: m };
    if let Err(e) = config.check() {
        out.push(general(e.to_string()));
        return out;
    }
    let scenario = match Scenario::load(config) {
        Ok(s) => s,
        Err(e) => {
            out.push(general(e.to_string()));
            return out;
        }
    };
    validate_scenario(&scenario, &mut out);
    out
}

pub fn validate_scenario(s: &Scenario, out: &mut Vec<Diagnostic>) {
    let home = crate::assets::home_configuration(&s.model);
    let planner = MotionPlanner::new(PlannerConfig::default(), 0);
    let reach = s.model.total_reach();
    let base = s.model.base_frame.position();
    let check = |step: u32, what: &str, target: &Pose| {
        let d = (target.position() - base).norm();
        let message = if d > reach {
            format!("{what} at distance {d:.3} m is beyond reach {reach:.3} m")
        } else if let Err(e) = reach_check(&s.model, target, &home) {
            format!("{what} is not reachable: {e}")
        } else {
            return None;
        };
        Some(Diagnostic { step: Some(step), message })
    };
    for a in &s.plan.actions {
        let Ok(obj) = s.world.object(&a.object_id) else {
            out.push(Diagnostic { step: Some(a.step_index), message: format!("object {:?} is not in the world", a.object_id) });
            continue;
        };
        out.extend(check(a.step_index, "grasp pose", &obj.grasp_pose()));
        let second = match (a.skill, a.place_pose) {
            (Skill::PickPlace, Some(place)) => check(a.step_index, "place pose", &place.compose(&obj.grasp_offset)),
            (Skill::PickPlace, None) => Some(Diagnostic { step: Some(a.step_index), message: "pick_place without a place pose".into() }),
            (Skill::Handover, _) => check(a.step_index, "handover pose", &planner.handover_pose(&s.world)),
        };
        out.extend(second);
    }
}

fn bind_servers(config: &RunConfig, hub: &Arc<Hub>) -> Result<(Server, Server, Receiver<Inbound>), AppError> {
    let (tx, rx) = mpsc::channel();
    let tcp = comm::serve_tcp(&format!("{}:{}", config.host, config.tcp_port), Arc::clone(hub), tx.clone())?;
    let console = comm::serve_console(&format!("{}:{}", config.host, config.console_port), Arc::clone(hub), tx)?;
    log::info!("listening on tcp {} and console ws://{}", tcp.local_addr(), console.local_addr());
    Ok((tcp, console, rx))
}

fn reply(hub: &Hub, conn: u64, t: f64, correlation: Option<u64>, message: Message) {
    let mut env = Envelope::new(0, t, message);
    env.correlation_id = correlation;
    if let Err(e) = hub.send_to(conn, &env) {
        log::warn!("reply to connection {conn} not encodable: {e}");
    }
}

fn handle_inbound(sim: &mut Simulation, hub: &Hub, msg: Inbound) {
    let t = sim.clock();
    match msg {
        Inbound::Connected { connection } => {
            log::info!("client {connection} connected");
            reply(hub, connection, t, None, sim.hello());
            reply(hub, connection, t, None, sim.plan_status_message());
        }
        Inbound::Disconnected { connection } => log::info!("client {connection} disconnected"),
        Inbound::Invalid { connection, error } => {
            let code = if error.contains("unknown message type") { ErrorCode::UnknownType } else { ErrorCode::MalformedBody };
            reply(hub, connection, t, None, Message::Error { code, message: error });
        }
        Inbound::Message { connection, envelope } => {
            let corr = envelope.correlation_id;
            match envelope.message {
                Message::Hello(_) => reply(hub, connection, t, corr, sim.hello()),
                Message::Calibrate { marker_pose } => {
                    let r = world::calibrate(&marker_pose, &sim.config.marker_to_base, t);
                    sim.enqueue(Command::Calibrate { marker_pose });
                    reply(
                        hub,
                        connection,
                        t,
                        corr,
                        Message::CalibrationResult { base_in_viewer: r.base_in_viewer, marker_pose_used: marker_pose, timestamp: t },
                    );
                }
                Message::ObjectPoseRequest { object_id } => {
                    let m = match sim.world.object_pose(&object_id) {
                        Ok(pose) => Message::ObjectPoseResponse { object_id, pose },
                        Err(e) => Message::Error { code: ErrorCode::UnknownObject, message: e.to_string() },
                    };
                    reply(hub, connection, t, corr, m);
                }
                Message::UserInput { value } => sim.enqueue(Command::UserInput(value)),
                Message::Intervention { object_id, new_pose } => match sim.intervention_allowed(&object_id) {
                    Ok(()) => sim.enqueue(Command::Intervention { object_id, pose: new_pose }),
                    Err((code, message)) => reply(hub, connection, t, corr, Message::Error { code, message }),
                },
                other => reply(
                    hub,
                    connection,
                    t,
                    corr,
                    Message::Error { code: ErrorCode::Rejected, message: format!("{} is not accepted by the server", other.type_tag()) },
                ),
            }
        }
    }
}

fn publish(hub: &Hub, events: &[Event]) {
    for ev in events {
        if let Some(m) = Message::from_event(ev) {
            if let Err(e) = hub.broadcast(&Envelope::new(0, ev.t, m)) {
                log::warn!("event at {} not encodable: {e}", ev.t);
            }
        }
    }
    for d in hub.take_disconnects() {
        log::warn!("client {} disconnected: {:?}", d.subscriber, d.reason);
    }
}

/// Serves console clients with wall-clock pacing until the plan is done.
pub fn serve(config: RunConfig, scenario: Scenario) -> Result<RunOutcome, AppError> {
    let hub = Arc::new(Hub::default());
    let (_tcp, _console, inbound) = bind_servers(&config, &hub)?;
    let mut sim = Simulation::new(config, scenario)?;
    let started = Instant::now();
    publish(&hub, &sim.log.clone());
    while !sim.is_finished() {
        while let Ok(msg) = inbound.try_recv() {
            handle_inbound(&mut sim, &hub, msg);
        }
        let events = sim.step()?;
        publish(&hub, &events);
        let due = started + Duration::from_secs_f64(sim.clock() / sim.config.speed);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    // Let writers drain the final frames.
    std::thread::sleep(Duration::from_millis(200));
    sim.into_outcome()
}

/// Options for re-emitting a stored event log.
#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub host: String,
    pub tcp_port: u16,
    pub console_port: u16,
    /// Simulated seconds per wall second.
    pub speed: f64,
    pub wait_for_client: bool,
}

/// Broadcasts a recorded event log to connected consoles at its original pace.
pub fn replay(log_path: &Path, opts: &ReplayOptions) -> Result<usize, AppError> {
    let file = fs::File::open(log_path).map_err(|e| AppError::Config(format!("{}: {e}", log_path.display())))?;
    let events = events::read_ndjson(BufReader::new(file)).map_err(|e| AppError::Config(format!("{}: {e}", log_path.display())))?;
    if !(opts.speed.is_finite() && opts.speed > 0.0) {
        return Err(AppError::Config(format!("speed must be > 0, got {}", opts.speed)));
    }
    let config = RunConfig { host: opts.host.clone(), tcp_port: opts.tcp_port, console_port: opts.console_port, ..Default::default() };
    let hub = Arc::new(Hub::default());
    let (_tcp, _console, inbound) = bind_servers(&config, &hub)?;
    let scenario = Scenario::bundled();
    let hello = Message::Hello(Hello {
        protocol_version: comm::PROTOCOL_VERSION,
        role: Role::Server,
        robot_model: Some(scenario.model),
        objects: scenario.world.objects().cloned().collect(),
        delta_t: events.iter().find_map(|e| match e.kind {
            EventKind::ActDispatched { delta_t, .. } => Some(delta_t),
            _ => None,
        }),
    });
    let greet = |msg: Inbound| {
        if let Inbound::Connected { connection } = msg {
            reply(&hub, connection, 0.0, None, hello.clone());
        }
    };
    if opts.wait_for_client {
        log::info!("waiting for a client");
        match inbound.recv() {
            Ok(m) => greet(m),
            Err(_) => return Err(AppError::Runtime("listener stopped".into())),
        }
    }
    let started = Instant::now();
    for ev in &events {
        while let Ok(m) = inbound.try_recv() {
            greet(m);
        }
        let due = started + Duration::from_secs_f64(ev.t.max(0.0) / opts.speed);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        publish(&hub, std::slice::from_ref(ev));
    }
    std::thread::sleep(Duration::from_millis(200));
    Ok(events.len())
}

/// Reads trial NDJSON files and writes `report.json` / `report.csv` into `out_dir`.
pub fn report_files(inputs: &[PathBuf], out_dir: &Path) -> Result<metrics::Report, AppError> {
    let mut trials = Vec::new();
    for p in inputs {
        let file = fs::File::open(p).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
        let mut t = metrics::read_trials(BufReader::new(file)).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
        trials.append(&mut t);
    }
    if trials.is_empty() {
        return Err(AppError::Config("no trial records in the inputs".into()));
    }
    let report = metrics::report(&trials);
    report.write_to(out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        RunConfig { human: HumanConfig { assembly: HumanModel::Fixed { seconds: 0.5 }, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn headless_sample_completes() {
        let out = run_headless(quick(), Scenario::bundled()).unwrap();
        assert_eq!(out.trial.step_durations.len(), 10);
        assert!(out.trial.collisions.is_empty());
        assert!(matches!(out.events.last().unwrap().kind, EventKind::RunFinished { .. }));
    }

    #[test]
    fn config_errors() {
        let missing = RunConfig { plan_path: Some("/nonexistent/x.plan".into()), ..quick() };
        let err = run(missing).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("/nonexistent/x.plan"));
        assert!(RunConfig { delta_t: -1.0, ..quick() }.check().is_err());
        assert!(RunConfig { tick: 0.0, ..quick() }.check().is_err());
    }

    #[test]
    fn human_model_parsing() {
        assert_eq!("fixed:2.5".parse::<HumanModel>(), Ok(HumanModel::Fixed { seconds: 2.5 }));
        assert_eq!("uniform:1,3".parse::<HumanModel>(), Ok(HumanModel::Uniform { lo: 1.0, hi: 3.0 }));
        assert!("uniform:3,1".parse::<HumanModel>().is_err());
        assert!("gauss:1".parse::<HumanModel>().is_err());
    }

    #[test]
    fn sample_validates_clean() {
        assert_eq!(validate(&RunConfig::default()), vec![]);
    }

    #[test]
    fn missing_object_and_far_place() {
        let mut s = Scenario::bundled();
        s.plan = crate::plan::parse_plan(
            "handover banana | \"x\"\npick_place hex_key place: 2.0 0.0 0.0 1 0 0 0 | \"y\"\n",
        )
        .unwrap();
        let mut d = Vec::new();
        validate_scenario(&s, &mut d);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].message.contains("banana"));
        assert!(d[1].message.contains("beyond reach"));
    }

    #[test]
    fn rejected_intervention_on_active_object() {
        let mut sim = Simulation::new(quick(), Scenario::bundled()).unwrap();
        while !sim.scheduler().is_busy() {
            sim.step().unwrap();
        }
        let obj = sim.scheduler().active_act().unwrap().info.object_id.clone();
        assert!(matches!(sim.intervention_allowed(&obj), Err((ErrorCode::Rejected, _))));
        assert!(sim.intervention_allowed("hammer").is_ok());
        assert!(matches!(sim.intervention_allowed("banana"), Err((ErrorCode::UnknownObject, _))));
    }
}

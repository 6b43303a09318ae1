//! Anticipatory trajectory scheduling.
//!
//! A planned trajectory becomes a communicative act carried by two streams:
//! the anticipated stream (`am`) starts at dispatch time and the real stream
//! (`m`) starts `delta_t` later. Both share the same waypoints and relative
//! timing. The scheduler advances on a fixed simulated tick and drives the
//! robot along the `m` stream, pausing after each new contact episode.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::events::{Event, EventKind, MediumKind};
use crate::kinematics::{JointConfiguration, RobotModel};
use crate::planner::{JointTrajectory, PlanAction, Skill, SkillPhase};
use crate::world::World;

pub const DEFAULT_DELTA_T: f64 = 3.0;
pub const DEFAULT_TICK: f64 = 0.02;
pub const DEFAULT_COLLISION_PAUSE: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("delta_t must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("unknown or finished act {0}")]
    UnknownAct(u64),
    #[error("act {0} is still executing")]
    Busy(u64),
}

#[derive(Debug, Clone)]
pub struct ScheduledStream {
    pub medium: MediumKind,
    /// Absolute sim seconds.
    pub start_time: f64,
    pub trajectory: Arc<JointTrajectory>,
}

#[derive(Debug, Clone)]
pub struct CommunicativeAct {
    pub act_id: u64,
    pub info: PlanAction,
    pub streams: BTreeMap<MediumKind, ScheduledStream>,
    pub delta_t: f64,
}

impl CommunicativeAct {
    pub fn stream(&self, medium: MediumKind) -> &ScheduledStream {
        &self.streams[&medium]
    }

    pub fn real(&self) -> &ScheduledStream {
        self.stream(MediumKind::RobotMotion)
    }

    pub fn anticipated(&self) -> &ScheduledStream {
        self.stream(MediumKind::AnticipatedRobotMotion)
    }
}

/// `am` starts at `dispatch_time`, `m` at `dispatch_time + delta_t`, over one shared trajectory.
pub fn make_communicative_act(
    act_id: u64,
    info: PlanAction,
    traj: JointTrajectory,
    dispatch_time: f64,
    delta_t: f64,
) -> Result<CommunicativeAct, SchedulerError> {
    if delta_t.is_nan() || delta_t < 0.0 {
        return Err(SchedulerError::NegativeDelay(delta_t));
    }
    let trajectory = Arc::new(traj);
    let mut streams = BTreeMap::new();
    streams.insert(
        MediumKind::AnticipatedRobotMotion,
        ScheduledStream {
            medium: MediumKind::AnticipatedRobotMotion,
            start_time: dispatch_time,
            trajectory: Arc::clone(&trajectory),
        },
    );
    streams.insert(
        MediumKind::RobotMotion,
        ScheduledStream { medium: MediumKind::RobotMotion, start_time: dispatch_time + delta_t, trajectory },
    );
    Ok(CommunicativeAct { act_id, info, streams, delta_t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: JointConfiguration,
    pub attached_object: Option<String>,
    pub executing_act: Option<u64>,
    pub paused_until: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub delta_t: f64,
    pub collision_pause: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { delta_t: DEFAULT_DELTA_T, collision_pause: DEFAULT_COLLISION_PAUSE }
    }
}

#[derive(Debug, Clone)]
struct ActiveAct {
    act: CommunicativeAct,
    am_next: usize,
    m_next: usize,
    m_announced: bool,
    /// Closed pause intervals plus the current one, absolute time.
    pauses: Vec<(f64, f64)>,
}

impl ActiveAct {
    fn paused_time(&self, clock: f64) -> f64 {
        self.pauses.iter().map(|(s, e)| (e.min(clock) - s).max(0.0)).sum()
    }

    /// Trajectory time reached by the real stream at `clock`.
    fn progress(&self, clock: f64) -> f64 {
        let start = self.act.real().start_time;
        if clock < start {
            return 0.0;
        }
        (clock - start - self.paused_time(clock)).max(0.0)
    }
}

/// Owns the robot state and the act in flight.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    state: RobotState,
    active: Option<ActiveAct>,
    next_act_id: u64,
    in_contact: bool,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, initial_q: JointConfiguration) -> Self {
        Self {
            config,
            state: RobotState { q: initial_q, attached_object: None, executing_act: None, paused_until: None },
            active: None,
            next_act_id: 1,
            in_contact: false,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn active_act(&self) -> Option<&CommunicativeAct> {
        self.active.as_ref().map(|a| &a.act)
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some()
    }

    /// Builds the act for `traj` and starts the anticipated stream at `clock`.
    pub fn dispatch(&mut self, info: PlanAction, traj: JointTrajectory, clock: f64) -> Result<(CommunicativeAct, Vec<Event>), SchedulerError> {
        if let Some(a) = &self.active {
            return Err(SchedulerError::Busy(a.act.act_id));
        }
        let act = make_communicative_act(self.next_act_id, info, traj, clock, self.config.delta_t)?;
        self.next_act_id += 1;
        let am = act.anticipated();
        let events = vec![
            Event::new(
                clock,
                EventKind::ActDispatched {
                    act_id: act.act_id,
                    step: act.info.step_index,
                    skill: act.info.skill,
                    object_id: act.info.object_id.clone(),
                    delta_t: act.delta_t,
                    am_start: am.start_time,
                    m_start: act.real().start_time,
                    duration: am.trajectory.duration(),
                },
            ),
            Event::new(
                clock,
                EventKind::StreamStarted {
                    act_id: act.act_id,
                    medium: MediumKind::AnticipatedRobotMotion,
                    start_time: am.start_time,
                    points: am.trajectory.points.clone(),
                },
            ),
        ];
        self.state.executing_act = Some(act.act_id);
        self.active = Some(ActiveAct { act: act.clone(), am_next: 0, m_next: 0, m_announced: false, pauses: Vec::new() });
        Ok((act, events))
    }

    /// Cancels both streams; the robot holds its current configuration.
    pub fn abort(&mut self, act_id: u64, clock: f64) -> Result<Event, SchedulerError> {
        match &self.active {
            Some(a) if a.act.act_id == act_id => {
                self.active = None;
                self.state.executing_act = None;
                self.state.paused_until = None;
                self.state.attached_object = None;
                Ok(Event::new(clock, EventKind::ActAborted { act_id, q: self.state.q.clone() }))
            }
            _ => Err(SchedulerError::UnknownAct(act_id)),
        }
    }

    /// Advances to `clock` (end of a tick of length `dt`).
    ///
    /// Emits, in order: anticipated waypoints due by `clock`, real-stream
    /// waypoints reached, joint telemetry, a collision event on a new contact
    /// episode and act completion.
    pub fn tick(&mut self, world: &World, model: &RobotModel, clock: f64, dt: f64) -> Vec<Event> {
        assert!(dt > 0.0, "tick length must be positive");
        let mut events = Vec::new();
        let mut completed = None;
        let mut excluded: Option<String> = None;

        if let Some(active) = &mut self.active {
            let act_id = active.act.act_id;

            let am = active.act.anticipated().clone();
            while let Some(p) = am.trajectory.points.get(active.am_next) {
                if am.start_time + p.time > clock {
                    break;
                }
                events.push(Event::new(
                    clock,
                    EventKind::Waypoint {
                        act_id,
                        medium: MediumKind::AnticipatedRobotMotion,
                        index: active.am_next,
                        t_rel: p.time,
                        q: p.q.clone(),
                    },
                ));
                active.am_next += 1;
            }

            let real = active.act.real().clone();
            if clock >= real.start_time {
                if !active.m_announced {
                    active.m_announced = true;
                    events.push(Event::new(
                        clock,
                        EventKind::StreamStarted {
                            act_id,
                            medium: MediumKind::RobotMotion,
                            start_time: real.start_time,
                            points: real.trajectory.points.clone(),
                        },
                    ));
                }
                if let Some((_, end)) = active.pauses.last() {
                    if *end <= clock {
                        self.state.paused_until = None;
                    }
                }
                let progress = active.progress(clock);
                let traj = &real.trajectory;
                while let Some(p) = traj.points.get(active.m_next) {
                    if p.time > progress {
                        break;
                    }
                    events.push(Event::new(
                        clock,
                        EventKind::Waypoint {
                            act_id,
                            medium: MediumKind::RobotMotion,
                            index: active.m_next,
                            t_rel: p.time,
                            q: p.q.clone(),
                        },
                    ));
                    active.m_next += 1;
                }
                self.state.q = traj.sample(progress);
                self.state.attached_object = attached_at(&active.act.info, traj, progress);
                excluded = traj.excluded_object_at(progress).map(str::to_owned);
                if active.m_next >= traj.points.len() {
                    completed = Some((act_id, active.act.info.step_index));
                }
            }
        }

        events.push(Event::new(
            clock,
            EventKind::JointState { q: self.state.q.clone(), act_id: self.state.executing_act },
        ));

        let contacts = world
            .arm_collision_excluding(model, &self.state.q, excluded.as_deref())
            .unwrap_or_default();
        let touching = !contacts.is_empty();
        if touching && !self.in_contact && completed.is_none() {
            let mut paused_until = None;
            if let Some(active) = &mut self.active {
                if clock >= active.act.real().start_time {
                    let until = clock + self.config.collision_pause;
                    active.pauses.push((clock, until));
                    paused_until = Some(until);
                    self.state.paused_until = Some(until);
                }
            }
            let first = contacts[0];
            events.push(Event::new(
                clock,
                EventKind::Collision {
                    act_id: self.state.executing_act,
                    link: first.link,
                    object_id: first.object_id.to_owned(),
                    paused_until,
                },
            ));
        }
        self.in_contact = touching;

        if let Some((act_id, step)) = completed {
            self.active = None;
            self.state.executing_act = None;
            self.state.paused_until = None;
            self.state.attached_object = None;
            events.push(Event::new(clock, EventKind::ActCompleted { act_id, step }));
        }
        events
    }
}

/// Object held by the gripper at trajectory time `t`.
fn attached_at(info: &PlanAction, traj: &JointTrajectory, t: f64) -> Option<String> {
    let mark = |phase| traj.skill_phase_marks.iter().find(|m| m.phase == phase).map(|m| m.time);
    let grasped = mark(SkillPhase::Transit)?;
    if t < grasped {
        return None;
    }
    match (info.skill, mark(SkillPhase::Release)) {
        (Skill::PickPlace, Some(release)) if t >= release => None,
        _ => Some(info.object_id.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::Shape;
    use crate::geometry::Pose;
    use crate::planner::{time_parameterize, TrajectoryPoint};
    use crate::world::{ObjectKind, WorldObject};

    fn action() -> PlanAction {
        PlanAction {
            step_index: 1,
            skill: Skill::Handover,
            object_id: "hammer".into(),
            place_pose: None,
            instruction: "Tap".into(),
        }
    }

    fn simple_traj(model: &RobotModel) -> JointTrajectory {
        let a = crate::assets::home_configuration(model);
        let mut b = a.clone();
        b.0[0] += 0.8;
        time_parameterize(&[a, b], model).unwrap()
    }

    #[test]
    fn act_stream_timing() {
        let model = RobotModel::bundled();
        let act = make_communicative_act(1, action(), simple_traj(&model), 10.0, 3.0).unwrap();
        assert_eq!(act.anticipated().start_time, 10.0);
        assert_eq!(act.real().start_time, 13.0);
        assert!(Arc::ptr_eq(&act.anticipated().trajectory, &act.real().trajectory));
        let act = make_communicative_act(2, action(), simple_traj(&model), 10.0, 0.0).unwrap();
        assert_eq!(act.anticipated().start_time, act.real().start_time);
        assert_eq!(
            make_communicative_act(3, action(), simple_traj(&model), 10.0, -1.0).unwrap_err(),
            SchedulerError::NegativeDelay(-1.0)
        );
    }

    fn run_until_idle(s: &mut Scheduler, w: &World, m: &RobotModel, start_tick: u64, dt: f64) -> Vec<Event> {
        let mut out = Vec::new();
        let mut k = start_tick;
        while s.is_busy() {
            k += 1;
            out.extend(s.tick(w, m, k as f64 * dt, dt));
            assert!(k < 100_000);
        }
        out
    }

    #[test]
    fn robot_waits_for_delay() {
        let model = RobotModel::bundled();
        let world = World::new();
        let dt = 0.02;
        let mut s = Scheduler::new(SchedulerConfig::default(), crate::assets::home_configuration(&model));
        let q0 = s.state().q.clone();
        // Dispatch at tick 500 -> t = 10.0.
        let (_, dispatched) = s.dispatch(action(), simple_traj(&model), 500.0 * dt).unwrap();
        assert_eq!(dispatched.len(), 2);
        let first = s.tick(&world, &model, 500.0 * dt, dt);
        assert!(matches!(first[0].kind, EventKind::Waypoint { medium: MediumKind::AnticipatedRobotMotion, index: 0, .. }));
        let events = run_until_idle(&mut s, &world, &model, 500, dt);
        for ev in &events {
            if let EventKind::JointState { q, .. } = &ev.kind {
                if ev.t < 13.0 {
                    assert_eq!(q, &q0, "moved at {}", ev.t);
                }
            }
        }
        assert!(matches!(events.last().unwrap().kind, EventKind::ActCompleted { act_id: 1, .. }));
    }

    #[test]
    fn idle_tick_is_telemetry_only() {
        let model = RobotModel::bundled();
        let mut s = Scheduler::new(SchedulerConfig::default(), model.neutral());
        let ev = s.tick(&World::new(), &model, 0.02, 0.02);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].type_tag(), "joint_state");
    }

    #[test]
    fn abort_semantics() {
        let model = RobotModel::bundled();
        let world = World::new();
        let dt = 0.02;
        let mut s = Scheduler::new(SchedulerConfig { delta_t: 0.0, ..Default::default() }, crate::assets::home_configuration(&model));
        let traj = simple_traj(&model);
        let (act, _) = s.dispatch(action(), traj.clone(), 0.0).unwrap();
        for k in 1..=20 {
            s.tick(&world, &model, k as f64 * dt, dt);
        }
        let mid = s.state().q.clone();
        assert_eq!(mid, traj.sample(0.4));
        let ev = s.abort(act.act_id, 0.4).unwrap();
        assert!(matches!(ev.kind, EventKind::ActAborted { .. }));
        s.tick(&world, &model, 0.42, dt);
        assert_eq!(s.state().q, mid);
        assert_eq!(s.abort(99, 0.5), Err(SchedulerError::UnknownAct(99)));
        assert_eq!(s.abort(act.act_id, 0.5), Err(SchedulerError::UnknownAct(act.act_id)));

        let (act2, _) = s.dispatch(action(), JointTrajectory::single(mid.clone()), 1.0).unwrap();
        run_until_idle(&mut s, &world, &model, 50, dt);
        assert_eq!(s.abort(act2.act_id, 2.0), Err(SchedulerError::UnknownAct(act2.act_id)));
    }

    #[test]
    fn collision_episode_pauses_once() {
        let model = RobotModel::bundled();
        let dt = 0.02;
        let traj = simple_traj(&model);
        let duration = traj.duration();
        let tip = crate::kinematics::forward_kinematics(&model, &traj.sample(duration * 0.5)).unwrap().position();
        let mut world = World::new();
        world
            .register_object(WorldObject {
                id: "hand".into(),
                kind: ObjectKind::Fixture,
                pose: Pose::from_translation(tip.x, tip.y, tip.z),
                shape: Shape::Sphere { radius: 0.03 },
                grasp_offset: Pose::identity(),
            })
            .unwrap();
        let mut s = Scheduler::new(SchedulerConfig::default(), traj.start().clone());
        s.dispatch(action(), traj, 0.0).unwrap();
        let events = run_until_idle(&mut s, &world, &model, 0, dt);
        let collisions: Vec<_> = events.iter().filter(|e| e.type_tag() == "collision").collect();
        assert_eq!(collisions.len(), 1);
        let EventKind::Collision { paused_until: Some(until), .. } = collisions[0].kind else { panic!() };
        assert!((until - collisions[0].t - 2.0).abs() < 1e-9);
        // Frozen during the pause.
        let states: Vec<_> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::JointState { q, .. } if e.t >= collisions[0].t && e.t <= until => Some(q.clone()),
                _ => None,
            })
            .collect();
        assert!(states.windows(2).all(|w| w[0] == w[1]));
        let done = events.iter().find(|e| e.type_tag() == "act_completed").unwrap();
        let wall = done.t - 3.0;
        assert!((wall - (duration + 2.0)).abs() <= dt + 1e-9, "wall {wall} vs {}", duration + 2.0);
    }

    #[test]
    fn busy_scheduler_rejects_second_dispatch() {
        let model = RobotModel::bundled();
        let mut s = Scheduler::new(SchedulerConfig::default(), model.neutral());
        let t = JointTrajectory { points: vec![TrajectoryPoint { time: 0.0, q: model.neutral() }], skill_phase_marks: vec![], grasped_object: None };
        s.dispatch(action(), t.clone(), 0.0).unwrap();
        assert!(matches!(s.dispatch(action(), t, 0.0), Err(SchedulerError::Busy(1))));
    }
}

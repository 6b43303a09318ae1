//! Motion planning for the `pick_place` and `handover` skills.
//!
//! A plan is a chain of Cartesian keyframes (pre-grasp above the object,
//! grasp, retreat, goal) solved by IK and joined by straight joint-space
//! segments. Each segment is timed as a rest-to-rest trapezoid limited by the
//! slowest joint. Colliding segments get a random via-configuration inserted,
//! up to a fixed retry budget.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, pose_error, IkOptions, JointConfiguration, KinematicsError, RobotModel,
};
use crate::world::{World, WorldError};

/// Velocity-bound slack used when validating trajectories.
pub const VELOCITY_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("no IK solution for {keyframe} of step {step}: {source}")]
    IkFailure { step: u32, keyframe: &'static str, source: KinematicsError },
    #[error("no collision-free path for step {step} after {attempts} attempts (link {link} hits {object:?} at t={time:.2})")]
    NoCollisionFreePath { step: u32, attempts: usize, link: usize, object: String, time: f64 },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("no waypoints given")]
    EmptyWaypoints,
    #[error("waypoints differ in dimension")]
    DimensionMismatch,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    World(WorldError),
}

impl From<WorldError> for PlanError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::UnknownId(id) => PlanError::UnknownObject(id),
            other => PlanError::World(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    PickPlace,
    Handover,
}

impl Skill {
    pub fn as_str(&self) -> &'static str {
        match self {
            Skill::PickPlace => "pick_place",
            Skill::Handover => "handover",
        }
    }
}

/// One scripted step of the collaboration plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanAction {
    pub step_index: u32,
    pub skill: Skill,
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_pose: Option<Pose>,
    pub instruction: String,
}

impl PlanAction {
    pub fn validate(&self) -> Result<(), PlanError> {
        match (self.skill, &self.place_pose) {
            (Skill::PickPlace, None) => Err(PlanError::InvalidAction(format!(
                "step {}: pick_place requires a place pose",
                self.step_index
            ))),
            (Skill::Handover, Some(_)) => Err(PlanError::InvalidAction(format!(
                "step {}: handover takes no place pose",
                self.step_index
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillPhase {
    Approach,
    Grasp,
    Transit,
    Release,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Seconds from trajectory start.
    pub time: f64,
    pub q: JointConfiguration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub time: f64,
    pub phase: SkillPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub points: Vec<TrajectoryPoint>,
    #[serde(default)]
    pub skill_phase_marks: Vec<PhaseMark>,
    /// Object carried from the grasp mark on; ignored by contact checks from then on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasped_object: Option<String>,
}

impl JointTrajectory {
    pub fn single(q: JointConfiguration) -> Self {
        Self { points: vec![TrajectoryPoint { time: 0.0, q }], skill_phase_marks: Vec::new(), grasped_object: None }
    }

    pub fn duration(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time)
    }

    pub fn start(&self) -> &JointConfiguration {
        &self.points[0].q
    }

    pub fn end(&self) -> &JointConfiguration {
        &self.points[self.points.len() - 1].q
    }

    /// Linear joint interpolation; clamps outside `[0, duration]`.
    pub fn sample(&self, t: f64) -> JointConfiguration {
        let pts = &self.points;
        if t <= 0.0 || pts.len() == 1 {
            return pts[0].q.clone();
        }
        if t >= self.duration() {
            return pts[pts.len() - 1].q.clone();
        }
        let k = pts.partition_point(|p| p.time <= t);
        let (a, b) = (&pts[k - 1], &pts[k]);
        a.q.lerp(&b.q, (t - a.time) / (b.time - a.time))
    }

    /// Index of the segment containing `t`.
    pub fn segment_at(&self, t: f64) -> usize {
        let k = self.points.partition_point(|p| p.time <= t);
        k.clamp(1, self.points.len().max(2) - 1) - 1
    }

    fn first_mark(&self, phase: SkillPhase) -> Option<f64> {
        self.skill_phase_marks.iter().find(|m| m.phase == phase).map(|m| m.time)
    }

    /// Object excluded from contact checks at `t`.
    pub fn excluded_object_at(&self, t: f64) -> Option<&str> {
        let obj = self.grasped_object.as_deref()?;
        match self.first_mark(SkillPhase::Grasp) {
            Some(start) if t >= start => Some(obj),
            _ => None,
        }
    }

    /// Checks monotone time from zero, joint limits and the per-joint velocity bound.
    pub fn check_invariants(&self, model: &RobotModel) -> Result<(), String> {
        let Some(first) = self.points.first() else {
            return Err("empty trajectory".into());
        };
        if first.time != 0.0 {
            return Err(format!("starts at {}", first.time));
        }
        for p in &self.points {
            if !crate::kinematics::within_limits(model, &p.q) {
                return Err(format!("point at {} outside joint limits", p.time));
            }
        }
        for w in self.points.windows(2) {
            let dt = w[1].time - w[0].time;
            if dt <= 0.0 {
                return Err(format!("time not increasing at {}", w[1].time));
            }
            for (j, spec) in model.joints.iter().enumerate() {
                let v = (w[1].q.0[j] - w[0].q.0[j]).abs() / dt;
                if v > spec.v_max + VELOCITY_SLACK {
                    return Err(format!("joint {} at {:.3} rad/s over limit at t={}", spec.name, v, w[1].time));
                }
            }
        }
        Ok(())
    }
}

/// Linear interpolation inclusive of both endpoints.
pub fn straight_joint_path(
    q_start: &JointConfiguration,
    q_goal: &JointConfiguration,
    n_points: usize,
) -> Result<Vec<JointConfiguration>, PlanError> {
    if n_points < 2 {
        return Err(PlanError::TooFewPoints(n_points));
    }
    if q_start.len() != q_goal.len() {
        return Err(PlanError::DimensionMismatch);
    }
    let last = (n_points - 1) as f64;
    Ok((0..n_points).map(|i| q_start.lerp(q_goal, i as f64 / last)).collect())
}

/// Rest-to-rest duration for a move of `dq` under velocity and acceleration limits.
pub fn trapezoid_duration(dq: f64, v_max: f64, a_max: f64) -> f64 {
    let dq = dq.abs();
    if dq == 0.0 {
        return 0.0;
    }
    if dq >= v_max * v_max / a_max {
        dq / v_max + v_max / a_max
    } else {
        2.0 * (dq / a_max).sqrt()
    }
}

fn segment_duration(model: &RobotModel, a: &JointConfiguration, b: &JointConfiguration) -> f64 {
    model
        .joints
        .iter()
        .zip(a.0.iter().zip(&b.0))
        .map(|(j, (x, y))| trapezoid_duration(y - x, j.v_max, j.a_max))
        .fold(0.0, f64::max)
}

/// Times a waypoint list; zero-length segments are dropped.
pub fn time_parameterize(waypoints: &[JointConfiguration], model: &RobotModel) -> Result<JointTrajectory, PlanError> {
    let marked: Vec<_> = waypoints.iter().map(|q| (q.clone(), None)).collect();
    parameterize_marked(&marked, model).map(|(traj, _)| traj)
}

/// Also returns, per output point, the index of the waypoint it came from.
fn parameterize_marked(
    waypoints: &[(JointConfiguration, Option<SkillPhase>)],
    model: &RobotModel,
) -> Result<(JointTrajectory, Vec<usize>), PlanError> {
    let Some((first, first_mark)) = waypoints.first() else {
        return Err(PlanError::EmptyWaypoints);
    };
    for (q, _) in waypoints {
        model.check_dim(q)?;
    }
    let mut points = vec![TrajectoryPoint { time: 0.0, q: first.clone() }];
    let mut sources = vec![0];
    let mut marks = Vec::new();
    if let Some(phase) = first_mark {
        marks.push(PhaseMark { time: 0.0, phase: *phase });
    }
    let mut t = 0.0;
    for (i, (q, mark)) in waypoints.iter().enumerate().skip(1) {
        let prev = &points[points.len() - 1].q;
        let d = segment_duration(model, prev, q);
        if d > 0.0 {
            t += d;
            points.push(TrajectoryPoint { time: t, q: q.clone() });
            sources.push(i);
        }
        if let Some(phase) = mark {
            marks.push(PhaseMark { time: t, phase: *phase });
        }
    }
    Ok((JointTrajectory { points, skill_phase_marks: marks, grasped_object: None }, sources))
}

/// First sample time with an arm contact, if any.
pub fn first_contact(traj: &JointTrajectory, world: &World, model: &RobotModel, resolution: f64) -> Option<f64> {
    assert!(resolution > 0.0, "resolution must be positive");
    let total = traj.duration();
    let mut k = 0u64;
    loop {
        let mut t = k as f64 * resolution;
        let last = t >= total;
        if last {
            t = total;
        }
        let q = traj.sample(t);
        let hit = world
            .arm_collision_excluding(model, &q, traj.excluded_object_at(t))
            .map(|c| !c.is_empty())
            .unwrap_or(true);
        if hit {
            return Some(t);
        }
        if last {
            return None;
        }
        k += 1;
    }
}

/// True iff no sample in `{0, r, 2r, …, T}` touches a world object.
pub fn collision_free(traj: &JointTrajectory, world: &World, model: &RobotModel, resolution: f64) -> bool {
    first_contact(traj, world, model, resolution).is_none()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Pre-grasp / retreat height above grasp and place frames (m).
    pub approach_height: f64,
    /// Used when the world does not define one.
    pub handover_pose: Pose,
    /// Collision sampling step (s).
    pub resolution: f64,
    /// Extra link radius while checking planned paths (m).
    pub clearance: f64,
    pub max_retries: usize,
    /// Random IK restarts after the deterministic seeds fail.
    pub ik_restarts: usize,
    /// Half-width of the uniform via-configuration perturbation (rad).
    pub via_spread: f64,
    pub ik: IkOptions,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            approach_height: 0.10,
            handover_pose: Pose::new([0.70, 0.0, 0.35], [s, 0.0, s, 0.0]),
            resolution: 0.01,
            clearance: 0.01,
            max_retries: 5,
            ik_restarts: 8,
            via_spread: 0.6,
            ik: IkOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MotionPlanner {
    config: PlannerConfig,
    rng: ChaCha8Rng,
}

struct Keyframe {
    name: &'static str,
    pose: Pose,
    phase: Option<SkillPhase>,
}

impl MotionPlanner {
    pub fn new(config: PlannerConfig, seed: u64) -> Self {
        Self { config, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn handover_pose(&self, world: &World) -> Pose {
        world.handover_pose().unwrap_or(self.config.handover_pose)
    }

    pub fn plan_action(
        &mut self,
        action: &PlanAction,
        world: &World,
        current_q: &JointConfiguration,
        model: &RobotModel,
    ) -> Result<JointTrajectory, PlanError> {
        action.validate()?;
        let obj = world.object(&action.object_id)?;
        model.check_dim(current_q)?;
        if !crate::kinematics::within_limits(model, current_q) {
            return Err(PlanError::InvalidAction("current configuration outside joint limits".into()));
        }

        let lift = Vector3::new(0.0, 0.0, self.config.approach_height);
        let grasp = obj.grasp_pose();
        let pre = grasp.translated(lift);

        let keyframes = match action.skill {
            Skill::PickPlace => {
                let place = action.place_pose.expect("validated");
                let place_grasp = place.compose(&obj.grasp_offset);
                if obj.pose.distance_to(&place) < 1e-9 && obj.pose.angle_to(&place) < 1e-9 {
                    let here = forward_kinematics(model, current_q)?;
                    let (dp, dr) = pose_error(&here, &grasp);
                    if dp < self.config.ik.tolerance && dr < self.config.ik.tolerance {
                        return Ok(JointTrajectory::single(current_q.clone()));
                    }
                }
                let pre_place = place_grasp.translated(lift);
                vec![
                    Keyframe { name: "pre-grasp", pose: pre, phase: Some(SkillPhase::Grasp) },
                    Keyframe { name: "grasp", pose: grasp, phase: None },
                    Keyframe { name: "retreat", pose: pre, phase: Some(SkillPhase::Transit) },
                    Keyframe { name: "pre-place", pose: pre_place, phase: None },
                    Keyframe { name: "place", pose: place_grasp, phase: Some(SkillPhase::Release) },
                    Keyframe { name: "post-place", pose: pre_place, phase: None },
                ]
            }
            Skill::Handover => vec![
                Keyframe { name: "pre-grasp", pose: pre, phase: Some(SkillPhase::Grasp) },
                Keyframe { name: "grasp", pose: grasp, phase: None },
                Keyframe { name: "retreat", pose: pre, phase: Some(SkillPhase::Transit) },
                Keyframe { name: "handover", pose: self.handover_pose(world), phase: Some(SkillPhase::Hold) },
            ],
        };

        let mut waypoints: Vec<(JointConfiguration, Option<SkillPhase>)> =
            vec![(current_q.clone(), Some(SkillPhase::Approach))];
        let mut solved: Vec<(Pose, JointConfiguration)> = Vec::new();
        for kf in &keyframes {
            // Revisited poses reuse their solution so retreats retrace the approach.
            let reuse = solved.iter().find(|(p, _)| *p == kf.pose).map(|(_, q)| q.clone());
            let q = match reuse {
                Some(q) => q,
                None => {
                    let seed = &waypoints[waypoints.len() - 1].0;
                    self.solve(model, &kf.pose, seed).map_err(|source| PlanError::IkFailure {
                        step: action.step_index,
                        keyframe: kf.name,
                        source,
                    })?
                }
            };
            solved.push((kf.pose, q.clone()));
            waypoints.push((q, kf.phase));
        }

        let mut padded = world.clone();
        padded.set_link_radius(world.link_radius() + self.config.clearance);
        let world = &padded;
        let mut attempts = 0;
        loop {
            let (mut traj, sources) = parameterize_marked(&waypoints, model)?;
            traj.grasped_object = Some(action.object_id.clone());
            attempts += 1;
            let Some(t_hit) = first_contact(&traj, world, model, self.config.resolution) else {
                return Ok(traj);
            };
            if attempts > self.config.max_retries {
                let q = traj.sample(t_hit);
                let contacts = world.arm_collision_excluding(model, &q, traj.excluded_object_at(t_hit))?;
                let (link, object) = contacts.first().map_or((0, String::new()), |c| (c.link, c.object_id.to_owned()));
                return Err(PlanError::NoCollisionFreePath { step: action.step_index, attempts, link, object, time: t_hit });
            }
            let seg = traj.segment_at(t_hit);
            let (a, b) = (&traj.points[seg].q, &traj.points[seg + 1].q);
            let via = self.random_via(model, a, b);
            waypoints.insert(sources[seg + 1], (via, None));
        }
    }

    /// IK from `seed`, then the neutral and home configurations, then random restarts.
    fn solve(&mut self, model: &RobotModel, target: &Pose, seed: &JointConfiguration) -> Result<JointConfiguration, KinematicsError> {
        let mut last = match inverse_kinematics(model, target, seed, &self.config.ik) {
            Ok(sol) => return Ok(sol.q),
            Err(e @ KinematicsError::MaxIterations { .. }) => e,
            Err(e) => return Err(e),
        };
        let fixed = [model.neutral(), crate::assets::home_configuration(model)];
        for k in 0..fixed.len() + self.config.ik_restarts {
            let start = match fixed.get(k) {
                Some(q) => q.clone(),
                None => JointConfiguration(
                    model.joints.iter().map(|j| self.rng.random_range(j.limits.lower..=j.limits.upper)).collect(),
                ),
            };
            match inverse_kinematics(model, target, &start, &self.config.ik) {
                Ok(sol) => return Ok(sol.q),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// A lifted, jittered Cartesian midpoint solved by IK; joint-space jitter if that fails.
    fn random_via(&mut self, model: &RobotModel, a: &JointConfiguration, b: &JointConfiguration) -> JointConfiguration {
        let mid = a.lerp(b, 0.5);
        if let (Ok(pa), Ok(pb)) = (forward_kinematics(model, a), forward_kinematics(model, b)) {
            let jitter = Vector3::new(
                self.rng.random_range(-0.05..=0.05),
                self.rng.random_range(-0.05..=0.05),
                self.rng.random_range(0.08..=0.25),
            );
            let position = (pa.position() + pb.position()) * 0.5 + jitter;
            let rotation = pa.rotation().slerp(&pb.rotation(), 0.5);
            let target = Pose::from_parts(position, rotation);
            if let Ok(sol) = inverse_kinematics(model, &target, &mid, &self.config.ik) {
                return sol.q;
            }
        }
        let spread = self.config.via_spread;
        let perturbed = mid.0.iter().map(|v| v + self.rng.random_range(-spread..=spread)).collect();
        model.clamp(&JointConfiguration(perturbed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::Shape;
    use crate::kinematics::{DhParams, JointLimits, JointSpec};
    use crate::world::{ObjectKind, WorldObject};

    fn one_joint(v_max: f64, a_max: f64) -> RobotModel {
        RobotModel {
            name: "one".into(),
            base_frame: Pose::identity(),
            joints: vec![JointSpec {
                name: "j".into(),
                dh: DhParams { a: 1.0, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
                limits: JointLimits { lower: -3.0, upper: 3.0 },
                v_max,
                a_max,
            }],
        }
    }

    fn q(v: &[f64]) -> JointConfiguration {
        JointConfiguration(v.to_vec())
    }

    #[test]
    fn straight_path_examples() {
        assert_eq!(straight_joint_path(&q(&[0.0]), &q(&[1.0]), 3).unwrap(), vec![q(&[0.0]), q(&[0.5]), q(&[1.0])]);
        assert_eq!(straight_joint_path(&q(&[0.3]), &q(&[0.3]), 4).unwrap(), vec![q(&[0.3]); 4]);
        assert_eq!(straight_joint_path(&q(&[0.0, 1.0]), &q(&[2.0, 3.0]), 2).unwrap(), vec![q(&[0.0, 1.0]), q(&[2.0, 3.0])]);
        assert!(matches!(straight_joint_path(&q(&[0.0]), &q(&[1.0]), 1), Err(PlanError::TooFewPoints(1))));
    }

    #[test]
    fn trapezoid_and_triangle() {
        let m = one_joint(1.0, 2.0);
        let t = time_parameterize(&[q(&[0.0]), q(&[1.0])], &m).unwrap();
        assert!((t.duration() - 1.5).abs() < 1e-12);
        let t = time_parameterize(&[q(&[0.0]), q(&[0.25])], &m).unwrap();
        assert!((t.duration() - 2.0 * (0.125f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_waypoints_collapse() {
        let m = one_joint(1.0, 2.0);
        let t = time_parameterize(&[q(&[0.0]), q(&[0.0]), q(&[1.0]), q(&[1.0])], &m).unwrap();
        assert_eq!(t.points.len(), 2);
        assert!(matches!(time_parameterize(&[], &m), Err(PlanError::EmptyWaypoints)));
        let single = time_parameterize(&[q(&[0.5])], &m).unwrap();
        assert_eq!(single.duration(), 0.0);
    }

    #[test]
    fn sample_interpolates() {
        let m = one_joint(1.0, 2.0);
        let t = time_parameterize(&[q(&[0.0]), q(&[1.0])], &m).unwrap();
        assert_eq!(t.sample(-1.0), q(&[0.0]));
        assert_eq!(t.sample(0.75), q(&[0.5]));
        assert_eq!(t.sample(9.0), q(&[1.0]));
    }

    #[test]
    fn collision_free_examples() {
        let model = RobotModel::bundled();
        let a = q(&[0.0, 0.3, 0.0, -1.0, 0.0, 0.8, 0.0]);
        let b = q(&[0.8, 0.5, 0.2, -1.2, 0.1, 0.6, 0.0]);
        let traj = time_parameterize(&[a.clone(), b], &model).unwrap();
        assert!(collision_free(&traj, &World::new(), &model, 0.05));

        // Obstacle on the tool tip at a sampled time.
        let tip = forward_kinematics(&model, &traj.sample(traj.duration() * 0.4)).unwrap().position();
        let mut w = World::new();
        w.register_object(WorldObject {
            id: "ball".into(),
            kind: ObjectKind::Fixture,
            pose: Pose::from_translation(tip.x, tip.y, tip.z),
            shape: Shape::Sphere { radius: 0.02 },
            grasp_offset: Pose::identity(),
        })
        .unwrap();
        assert!(!collision_free(&traj, &w, &model, 0.05));

        let still = JointTrajectory::single(a);
        assert!(collision_free(&still, &World::new(), &model, 0.05));
    }

    #[test]
    fn handover_ends_at_handover_pose() {
        let model = RobotModel::bundled();
        let world = World::sample_scene();
        let mut planner = MotionPlanner::new(PlannerConfig::default(), 7);
        let action = PlanAction {
            step_index: 1,
            skill: Skill::Handover,
            object_id: "screwdriver".into(),
            place_pose: None,
            instruction: "Fasten".into(),
        };
        let start = crate::assets::home_configuration(&model);
        let traj = planner.plan_action(&action, &world, &start, &model).unwrap();
        assert_eq!(traj.start(), &start);
        traj.check_invariants(&model).unwrap();
        assert!(collision_free(&traj, &world, &model, 0.05));
        let end = forward_kinematics(&model, traj.end()).unwrap();
        assert!(end.distance_to(&planner.handover_pose(&world)) < 1e-4);
        let phases: Vec<_> = traj.skill_phase_marks.iter().map(|m| m.phase).collect();
        assert_eq!(phases, [SkillPhase::Approach, SkillPhase::Grasp, SkillPhase::Transit, SkillPhase::Hold]);
    }

    #[test]
    fn null_pick_place() {
        let model = RobotModel::bundled();
        let world = World::sample_scene();
        let obj = world.object("hex_key").unwrap().clone();
        let sol = inverse_kinematics(&model, &obj.grasp_pose(), &crate::assets::home_configuration(&model), &IkOptions::default()).unwrap();
        let mut planner = MotionPlanner::new(PlannerConfig::default(), 1);
        let action = PlanAction {
            step_index: 1,
            skill: Skill::PickPlace,
            object_id: "hex_key".into(),
            place_pose: Some(obj.pose),
            instruction: String::new(),
        };
        let traj = planner.plan_action(&action, &world, &sol.q, &model).unwrap();
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.duration(), 0.0);
    }

    #[test]
    fn unknown_object_and_bad_action() {
        let model = RobotModel::bundled();
        let world = World::sample_scene();
        let mut planner = MotionPlanner::new(PlannerConfig::default(), 1);
        let mut action = PlanAction {
            step_index: 1,
            skill: Skill::Handover,
            object_id: "banana".into(),
            place_pose: None,
            instruction: String::new(),
        };
        let q0 = model.neutral();
        assert!(matches!(planner.plan_action(&action, &world, &q0, &model), Err(PlanError::UnknownObject(_))));
        action.object_id = "hammer".into();
        action.skill = Skill::PickPlace;
        assert!(matches!(planner.plan_action(&action, &world, &q0, &model), Err(PlanError::InvalidAction(_))));
    }

    #[test]
    fn unreachable_place_is_ik_failure() {
        let model = RobotModel::bundled();
        let world = World::sample_scene();
        let mut planner = MotionPlanner::new(PlannerConfig::default(), 1);
        let action = PlanAction {
            step_index: 4,
            skill: Skill::PickPlace,
            object_id: "hammer".into(),
            place_pose: Some(Pose::from_translation(3.0, 0.0, 0.0)),
            instruction: String::new(),
        };
        let err = planner.plan_action(&action, &world, &crate::assets::home_configuration(&model), &model).unwrap_err();
        assert!(matches!(err, PlanError::IkFailure { step: 4, .. }), "{err}");
    }
}

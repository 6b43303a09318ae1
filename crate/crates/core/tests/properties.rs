mod common;

use nalgebra::{Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hrc_core::app::{self, HumanConfig, HumanModel, RunConfig, Scenario};
use hrc_core::assets;
use hrc_core::collision::{self, Shape};
use hrc_core::events::{EventKind, MediumKind};
use hrc_core::geometry::Pose;
use hrc_core::kinematics::{self, JointConfiguration, RobotModel};
use hrc_core::metrics::{self, Alternative, Condition, PairedSample};
use hrc_core::planner::{self, MotionPlanner, PlannerConfig, Skill};
use hrc_core::world::{self, PoseSource, World};

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        (0.01..0.3f64).prop_map(|radius| Shape::Sphere { radius }),
        prop::array::uniform3(0.01..0.3f64).prop_map(|half_extents| Shape::Aabb { half_extents }),
        (0.01..0.2f64, 0.01..0.3f64).prop_map(|(radius, half_length)| Shape::Capsule { radius, half_length }),
    ]
}

fn round_shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        (0.01..0.3f64).prop_map(|radius| Shape::Sphere { radius }),
        (0.01..0.2f64, 0.01..0.3f64).prop_map(|(radius, half_length)| Shape::Capsule { radius, half_length }),
    ]
}

fn pose(spread: f64) -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-spread..spread), prop::array::uniform4(-1.0..1.0f64))
        .prop_filter("nonzero quaternion", |(_, q)| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(|(p, q)| Pose::new(p, q))
}

fn bundled_q() -> impl Strategy<Value = JointConfiguration> {
    prop::collection::vec(-4.0..4.0f64, 7).prop_map(JointConfiguration)
}

/// Rigid motions keep the answer unless the pair sits within rounding of touching.
fn separation_is_robust(a: &Shape, pa: &Pose, b: &Shape, pb: &Pose) -> bool {
    let grow = |s: &Shape, d: f64| match *s {
        Shape::Sphere { radius } => Shape::Sphere { radius: radius + d },
        Shape::Capsule { radius, half_length } => Shape::Capsule { radius: radius + d, half_length },
        Shape::Aabb { half_extents } => Shape::Aabb { half_extents: half_extents.map(|h| h + d) },
    };
    let shrink = |s: &Shape| grow(s, -1e-9);
    collision::collide(&grow(a, 1e-9), pa, b, pb) == collision::collide(&shrink(a), pa, b, pb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn collide_is_symmetric(a in shape(), b in shape(), pa in pose(0.4), pb in pose(0.4)) {
        prop_assert_eq!(collision::collide(&a, &pa, &b, &pb), collision::collide(&b, &pb, &a, &pa));
    }

    #[test]
    fn round_shapes_invariant_under_rigid_motion(a in round_shape(), b in round_shape(), pa in pose(0.4), pb in pose(0.4), g in pose(2.0)) {
        prop_assume!(separation_is_robust(&a, &pa, &b, &pb));
        prop_assert_eq!(collision::collide(&a, &pa, &b, &pb), collision::collide(&a, &g.compose(&pa), &b, &g.compose(&pb)));
    }

    #[test]
    fn boxes_invariant_under_translation(a in shape(), b in shape(), pa in pose(0.4), pb in pose(0.4), t in prop::array::uniform3(-2.0..2.0f64)) {
        prop_assume!(separation_is_robust(&a, &pa, &b, &pb));
        let g = Pose::from_translation(t[0], t[1], t[2]);
        prop_assert_eq!(collision::collide(&a, &pa, &b, &pb), collision::collide(&a, &g.compose(&pa), &b, &g.compose(&pb)));
    }

    #[test]
    fn boxes_invariant_under_axis_preserving_rotation(h1 in prop::array::uniform3(0.01..0.3f64), h2 in prop::array::uniform3(0.01..0.3f64),
        c1 in prop::array::uniform3(-0.4..0.4f64), c2 in prop::array::uniform3(-0.4..0.4f64), turns in 0u8..4) {
        // A quarter turn about z maps boxes to boxes with x and y extents swapped.
        let a = Shape::Aabb { half_extents: h1 };
        let b = Shape::Aabb { half_extents: h2 };
        let (pa, pb) = (Pose::from_translation(c1[0], c1[1], c1[2]), Pose::from_translation(c2[0], c2[1], c2[2]));
        prop_assume!(separation_is_robust(&a, &pa, &b, &pb));
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), f64::from(turns) * std::f64::consts::FRAC_PI_2);
        let swap = |h: [f64; 3]| if turns % 2 == 1 { [h[1], h[0], h[2]] } else { h };
        let moved = |c: [f64; 3]| Pose::from_parts(rot * Vector3::from(c), UnitQuaternion::identity());
        prop_assert_eq!(
            collision::collide(&a, &pa, &b, &pb),
            collision::collide(&Shape::Aabb { half_extents: swap(h1) }, &moved(c1), &Shape::Aabb { half_extents: swap(h2) }, &moved(c2))
        );
    }

    #[test]
    fn calibration_recovers_marker_to_base(t1 in pose(3.0), t2 in pose(3.0)) {
        let r = world::calibrate(&t1, &t2, 0.0);
        let back = t1.inverse().compose(&r.base_in_viewer);
        prop_assert!(back.distance_to(&t2) < 1e-9 && back.angle_to(&t2) < 1e-9);
        // Matrix product oracle.
        let m = t1.isometry().to_homogeneous() * t2.isometry().to_homogeneous();
        let got = r.base_in_viewer.isometry().to_homogeneous();
        prop_assert!((m - got).abs().max() < 1e-12);
    }

    #[test]
    fn clamping_lands_within_limits(q in bundled_q()) {
        let model = RobotModel::bundled();
        let c = model.clamp(&q);
        prop_assert!(kinematics::within_limits(&model, &c));
        if kinematics::within_limits(&model, &q) {
            prop_assert_eq!(c, q);
        }
    }

    #[test]
    fn fk_is_pure(q in bundled_q()) {
        let model = RobotModel::bundled();
        let a = kinematics::forward_kinematics(&model, &q).unwrap();
        let b = kinematics::forward_kinematics(&model.clone(), &q.clone()).unwrap();
        prop_assert_eq!(a.isometry().to_homogeneous().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.isometry().to_homogeneous().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_world_never_collides(q in bundled_q()) {
        let model = RobotModel::bundled();
        prop_assert!(World::new().arm_collision(&model, &q).unwrap().is_empty());
    }

    #[test]
    fn timing_is_reversal_symmetric(qs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 7), 2..6)) {
        let model = RobotModel::bundled();
        let fwd: Vec<JointConfiguration> = qs.into_iter().map(JointConfiguration).collect();
        let mut rev = fwd.clone();
        rev.reverse();
        let a = planner::time_parameterize(&fwd, &model).unwrap();
        let b = planner::time_parameterize(&rev, &model).unwrap();
        prop_assert!((a.duration() - b.duration()).abs() < 1e-9);
    }

    #[test]
    fn one_sided_p_is_a_probability_and_monotone(d in prop::collection::vec(-5i32..=5, 1..15)) {
        let d: Vec<f64> = d.into_iter().map(f64::from).collect();
        prop_assume!(d.iter().any(|x| *x != 0.0));
        let p = metrics::wilcoxon_signed_rank(&PairedSample::from_differences(&d), Alternative::Less).unwrap().p_value;
        prop_assert!(p > 0.0 && p <= 1.0);
        // A pair more negative than every other difference supports "less".
        let mut more = d.clone();
        more.push(-100.0);
        let p2 = metrics::wilcoxon_signed_rank(&PairedSample::from_differences(&more), Alternative::Less).unwrap().p_value;
        prop_assert!(p2 <= p + 1e-15, "p rose from {} to {}", p, p2);
        let g = metrics::wilcoxon_signed_rank(&PairedSample::from_differences(&d), Alternative::Greater).unwrap().p_value;
        let mut more = d.clone();
        more.push(100.0);
        let g2 = metrics::wilcoxon_signed_rank(&PairedSample::from_differences(&more), Alternative::Greater).unwrap().p_value;
        prop_assert!(g2 <= g + 1e-15);
    }

    #[test]
    fn exact_p_matches_generating_function(d in prop::collection::vec(-6i32..=6, 1..=12)) {
        let d: Vec<f64> = d.into_iter().map(|v| f64::from(v) * 0.25).collect();
        prop_assume!(d.iter().any(|x| *x != 0.0));
        let (lo, hi, _, _) = common::gf_tails(&d);
        let s = PairedSample::from_differences(&d);
        prop_assert!((metrics::wilcoxon_signed_rank(&s, Alternative::Less).unwrap().p_value - lo).abs() <= 1e-12);
        prop_assert!((metrics::wilcoxon_signed_rank(&s, Alternative::Greater).unwrap().p_value - hi).abs() <= 1e-12);
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let model = RobotModel::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let q = common::random_configuration(&model, &mut rng);
        let j = kinematics::jacobian(&model, &q).unwrap();
        for (i, col) in common::fd_jacobian(&model, &q.0, 1e-6).iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                assert!((j[(r, i)] - v).abs() < 1e-5, "J[{r},{i}] = {} vs {v}", j[(r, i)]);
            }
        }
    }
}

#[test]
fn fk_matches_dh_product_on_a_rotated_base() {
    let mut model = RobotModel::bundled();
    model.base_frame = Pose::from_parts(Vector3::new(0.2, -0.1, 0.75), UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let q = common::random_configuration(&model, &mut rng);
        let fk = kinematics::forward_kinematics(&model, &q).unwrap().isometry().to_homogeneous();
        assert!((fk - common::dh_forward(&model, &q.0)).abs().max() < 1e-12);
    }
    let _ = Translation3::new(0.0, 0.0, 0.0);
}

#[test]
fn planned_trajectories_satisfy_invariants() {
    let model = RobotModel::bundled();
    let mut world = World::sample_scene();
    let plan = hrc_core::plan::Plan::sample();
    let mut planner = MotionPlanner::new(PlannerConfig::default(), 42);
    let mut q = assets::home_configuration(&model);
    for action in &plan.actions {
        let traj = planner.plan_action(action, &world, &q, &model).unwrap_or_else(|e| panic!("step {}: {e}", action.step_index));
        assert_eq!(traj.start(), &q, "step {} does not start at the current configuration", action.step_index);
        traj.check_invariants(&model).unwrap();
        assert!(planner::collision_free(&traj, &world, &model, 0.05), "step {} collides", action.step_index);
        q = traj.end().clone();
        if action.skill == Skill::PickPlace {
            world.update_object_pose(&action.object_id, action.place_pose.unwrap(), PoseSource::Plan).unwrap();
        }
    }
}

fn busy(condition: Condition, seed: u64) -> RunConfig {
    RunConfig {
        condition,
        seed,
        human: HumanConfig { assembly: HumanModel::Uniform { lo: 1.0, hi: 3.0 }, p_block: 0.5, p_intervene: 0.3, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn zero_lead_makes_streams_coincide() {
    // Collision pauses hold back only the real stream, so the human stays off the path here.
    let mut config = RunConfig { delta_t: 0.0, ..busy(Condition::C1, 3) };
    config.human.p_block = 0.0;
    let out = app::run_headless(config, Scenario::bundled()).unwrap();
    let strip = |m: MediumKind| -> Vec<String> {
        out.events
            .iter()
            .filter(|e| e.medium() == Some(m))
            .map(|e| {
                let mut v = serde_json::to_value(e).unwrap();
                v["payload"]["medium"] = serde_json::Value::Null;
                v.to_string()
            })
            .collect()
    };
    let am = strip(MediumKind::AnticipatedRobotMotion);
    assert!(!am.is_empty());
    assert_eq!(am, strip(MediumKind::RobotMotion));
}

#[test]
fn pauses_are_conserved() {
    for seed in 0..8 {
        let out = app::run_headless(busy(Condition::C2, seed), Scenario::bundled()).unwrap();
        let tick = RunConfig::default().tick;
        let mut open: Option<(u64, f64, f64, f64)> = None;
        let mut paused = 0;
        for e in &out.events {
            match &e.kind {
                EventKind::ActDispatched { act_id, m_start, duration, .. } => open = Some((*act_id, *m_start, *duration, 0.0)),
                EventKind::Collision { paused_until: Some(until), .. } => {
                    let o = open.as_mut().unwrap();
                    o.3 += until - e.t;
                    paused += 1;
                }
                EventKind::ActCompleted { act_id, .. } => {
                    let (id, m_start, duration, pauses) = open.take().unwrap();
                    assert_eq!(id, *act_id);
                    let wall = e.t - m_start;
                    assert!((wall - (duration + pauses)).abs() <= tick + 1e-9, "act {id}: {wall} vs {duration} + {pauses}");
                }
                _ => {}
            }
        }
        if seed == 0 {
            assert!(paused > 0, "no collisions to exercise");
        }
    }
}

#[test]
fn acts_run_in_file_order_one_at_a_time() {
    let out = app::run_headless(busy(Condition::C1, 11), Scenario::bundled()).unwrap();
    let mut in_flight = false;
    let mut steps = Vec::new();
    for e in &out.events {
        match &e.kind {
            EventKind::ActDispatched { step, .. } => {
                assert!(!in_flight, "dispatch while another act runs");
                in_flight = true;
                steps.push(*step);
            }
            EventKind::ActCompleted { .. } => in_flight = false,
            _ => {}
        }
    }
    assert_eq!(steps, (1..=10).collect::<Vec<u32>>());
    assert_eq!(out.trial.step_durations.len(), 10);
    assert!(out.trial.step_durations.iter().all(|d| *d >= 0.0));
}

#[test]
fn am_frame_precedes_motion_in_the_log() {
    let out = app::run_headless(busy(Condition::C1, 5), Scenario::bundled()).unwrap();
    let mut seen_am = std::collections::HashSet::new();
    let mut last: Option<&JointConfiguration> = None;
    for e in &out.events {
        match &e.kind {
            EventKind::StreamStarted { act_id, medium: MediumKind::AnticipatedRobotMotion, .. } => {
                seen_am.insert(*act_id);
            }
            EventKind::JointState { q, act_id } => {
                if let (Some(prev), Some(id)) = (last, act_id) {
                    if prev != q {
                        assert!(seen_am.contains(id));
                    }
                }
                last = Some(q);
            }
            _ => {}
        }
    }
}

#[test]
fn report_is_pure() {
    let trials: Vec<_> = (0..6)
        .flat_map(|s| [Condition::C1, Condition::C2].map(|c| app::run_headless(busy(c, s), Scenario::bundled()).unwrap().trial))
        .collect();
    let a = metrics::report(&trials);
    let b = metrics::report(&trials.clone());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
}

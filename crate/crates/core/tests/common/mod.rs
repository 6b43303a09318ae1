//! Reference implementations kept independent of the library code paths.

#![allow(dead_code)]

use nalgebra::{Matrix4, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use hrc_core::collision::Shape;
use hrc_core::geometry::Pose;
use hrc_core::kinematics::{JointConfiguration, RobotModel};

/// Flange pose by multiplying standard DH matrices.
pub fn dh_forward(model: &RobotModel, q: &[f64]) -> Matrix4<f64> {
    let mut t = model.base_frame.isometry().to_homogeneous();
    for (j, v) in model.joints.iter().zip(q) {
        let th = v + j.dh.theta_offset;
        let (st, ct) = th.sin_cos();
        let (sa, ca) = j.dh.alpha.sin_cos();
        #[rustfmt::skip]
        let a = Matrix4::new(
            ct, -st * ca,  st * sa, j.dh.a * ct,
            st,  ct * ca, -ct * sa, j.dh.a * st,
            0.0,      sa,       ca, j.dh.d,
            0.0,     0.0,      0.0, 1.0,
        );
        t *= a;
    }
    t
}

fn rotation_of(m: &Matrix4<f64>) -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned())
}

/// Central-difference Jacobian: linear rows from the flange position, angular
/// rows from the skew part of `R(q+h) R(q-h)ᵀ` (`sin θ` axis, exact to `θ³`).
pub fn fd_jacobian(model: &RobotModel, q: &[f64], h: f64) -> Vec<[f64; 6]> {
    (0..q.len())
        .map(|i| {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let tp = dh_forward(model, &qp);
            let tm = dh_forward(model, &qm);
            let dp = (tp.fixed_view::<3, 1>(0, 3) - tm.fixed_view::<3, 1>(0, 3)) / (2.0 * h);
            let r = rotation_of(&tp) * rotation_of(&tm).transpose();
            let m = r.matrix();
            let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) / (4.0 * h);
            [dp[0], dp[1], dp[2], w[0], w[1], w[2]]
        })
        .collect()
}

pub fn random_configuration(model: &RobotModel, rng: &mut ChaCha8Rng) -> JointConfiguration {
    JointConfiguration(model.joints.iter().map(|j| rng.random_range(j.limits.lower..j.limits.upper)).collect())
}

/// World-frame point membership written from the shape definitions.
pub fn inside(shape: &Shape, pose: &Pose, p: &Vector3<f64>) -> bool {
    let c = pose.position();
    match *shape {
        Shape::Sphere { radius } => (p - c).norm_squared() <= radius * radius,
        Shape::Aabb { half_extents } => (0..3).all(|k| (p[k] - c[k]).abs() <= half_extents[k]),
        Shape::Capsule { radius, half_length } => {
            // Local frame: axis along z.
            let local = pose.rotation().inverse() * (p - c);
            let z = local.z.clamp(-half_length, half_length);
            let d2 = local.x * local.x + local.y * local.y + (local.z - z) * (local.z - z);
            d2 <= radius * radius
        }
    }
}

/// Conservative world-frame bounds.
pub fn bounds(shape: &Shape, pose: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let c = pose.position();
    let e = match *shape {
        Shape::Sphere { radius } => Vector3::repeat(radius),
        Shape::Aabb { half_extents } => Vector3::from(half_extents),
        Shape::Capsule { radius, half_length } => {
            let axis = pose.rotation() * Vector3::z() * half_length;
            axis.abs() + Vector3::repeat(radius)
        }
    };
    (c - e, c + e)
}

/// Samples uniformly in the intersection of both bounding boxes. Returns the
/// number of samples inside both shapes and the sampled region volume.
pub fn monte_carlo_overlap(
    a: &Shape,
    pa: &Pose,
    b: &Shape,
    pb: &Pose,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let (amin, amax) = bounds(a, pa);
    let (bmin, bmax) = bounds(b, pb);
    let lo = amin.sup(&bmin);
    let hi = amax.inf(&bmax);
    if (0..3).any(|k| lo[k] > hi[k]) {
        return (0, 0.0);
    }
    let vol = (hi - lo).product();
    let mut hits = 0;
    for _ in 0..samples {
        let p = Vector3::new(
            lo.x + (hi.x - lo.x) * rng.random::<f64>(),
            lo.y + (hi.y - lo.y) * rng.random::<f64>(),
            lo.z + (hi.z - lo.z) * rng.random::<f64>(),
        );
        if inside(a, pa, &p) && inside(b, pb, &p) {
            hits += 1;
        }
    }
    (hits, vol)
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    match rng.random_range(0..3) {
        0 => Shape::Sphere { radius: rng.random_range(0.02..0.2) },
        1 => Shape::Aabb {
            half_extents: [rng.random_range(0.02..0.2), rng.random_range(0.02..0.2), rng.random_range(0.02..0.2)],
        },
        _ => Shape::Capsule { radius: rng.random_range(0.02..0.12), half_length: rng.random_range(0.02..0.2) },
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> Pose {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let p: [f64; 3] = std::array::from_fn(|_| if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 });
    Pose::new(p, q)
}

pub fn volume(shape: &Shape) -> f64 {
    use std::f64::consts::PI;
    match *shape {
        Shape::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
        Shape::Aabb { half_extents: h } => 8.0 * h[0] * h[1] * h[2],
        Shape::Capsule { radius, half_length } => PI * radius * radius * (4.0 / 3.0 * radius + 2.0 * half_length),
    }
}

/// Midranks of the nonzero `|d|`, doubled, with their signs.
pub fn doubled_midranks(d: &[f64]) -> Vec<(u64, bool)> {
    let mut nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    nz.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let mut out = Vec::new();
    for x in &nz {
        let below = nz.iter().filter(|y| y.abs() < x.abs()).count() as u64;
        let tied = nz.iter().filter(|y| y.abs() == x.abs()).count() as u64;
        // Mean of ranks below+1 ..= below+tied, doubled.
        out.push((2 * below + tied + 1, *x > 0.0));
    }
    out
}

/// Coefficients of `∏ (1 + x^{r_i})` over doubled ranks.
pub fn generating_function(ranks2: &[u64]) -> Vec<f64> {
    let total: u64 = ranks2.iter().sum();
    let mut poly = vec![0.0f64; total as usize + 1];
    poly[0] = 1.0;
    for &r in ranks2 {
        let r = r as usize;
        for s in (r..poly.len()).rev() {
            poly[s] += poly[s - r];
        }
    }
    poly
}

/// Exact `(P(W+ <= w), P(W+ >= w))` for the observed doubled positive rank sum.
pub fn gf_tails(d: &[f64]) -> (f64, f64, u64, u64) {
    let ranks = doubled_midranks(d);
    let r2: Vec<u64> = ranks.iter().map(|r| r.0).collect();
    let plus: u64 = ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    let total: u64 = r2.iter().sum();
    let poly = generating_function(&r2);
    let norm: f64 = poly.iter().sum();
    let lo: f64 = poly[..=plus as usize].iter().sum::<f64>() / norm;
    let hi: f64 = poly[plus as usize..].iter().sum::<f64>() / norm;
    (lo, hi, plus, total)
}

use hrc_core::comm::{Envelope, ErrorCode, Hello, Message, Role, PROTOCOL_VERSION};
use hrc_core::events::MediumKind;
use hrc_core::planner::TrajectoryPoint;
use hrc_core::plan::PlanPhase;
use hrc_core::world::{ObjectKind, WorldObject};

/// One envelope per catalog type, in catalog order.
pub fn sample_envelopes() -> Vec<Envelope> {
    let marker = Pose::new([0.5, -0.25, 0.75], [0.5, 0.5, 0.5, 0.5]);
    let q = |s: f64| JointConfiguration((0..7).map(|i| s * (i as f64 - 3.0) / 8.0).collect());
    let messages = vec![
        Message::Hello(Hello {
            protocol_version: PROTOCOL_VERSION,
            role: Role::Server,
            robot_model: None,
            objects: vec![WorldObject {
                id: "hex_key".into(),
                kind: ObjectKind::Tool,
                pose: Pose::new([0.4, 0.25, 0.005], [1.0, 0.0, 0.0, 0.0]),
                shape: Shape::Aabb { half_extents: [0.04, 0.01, 0.005] },
                grasp_offset: Pose::identity(),
            }],
            delta_t: Some(3.0),
        }),
        Message::Calibrate { marker_pose: marker },
        Message::CalibrationResult { base_in_viewer: marker, marker_pose_used: marker, timestamp: 0.0 },
        Message::ObjectPoseRequest { object_id: "seat_panel".into() },
        Message::ObjectPoseResponse {
            object_id: "seat_panel".into(),
            pose: Pose::new([0.6, 0.0, 0.01], [1.0, 0.0, 0.0, 0.0]),
        },
        Message::Trajectory {
            act_id: 1,
            medium: MediumKind::AnticipatedRobotMotion,
            start_time: 0.5,
            points: vec![TrajectoryPoint { time: 0.0, q: q(0.0) }, TrajectoryPoint { time: 1.25, q: q(1.0) }],
        },
        Message::JointState { q: q(0.5), act_id: Some(1) },
        Message::UserInput { value: true },
        Message::Intervention {
            object_id: "hex_key".into(),
            new_pose: Pose::new([0.43, 0.25, 0.005], [1.0, 0.0, 0.0, 0.0]),
        },
        Message::PlanStatus {
            cursor: 1,
            total: 10,
            phase: PlanPhase::AwaitingInput,
            instruction: "Take the dowels from the box".into(),
        },
        Message::CollisionEvent { act_id: Some(2), link: 5, object_id: "human_hand".into(), paused_until: Some(14.5) },
        Message::ActCompleted { act_id: 2, step: 2 },
        Message::Error { code: ErrorCode::UnknownObject, message: "no object \"vase\"".into() },
    ];
    messages
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let env = Envelope::new(i as u64 + 1, 0.25 * i as f64, m);
            match env.type_tag() {
                "object_pose_response" | "calibration_result" => env.with_correlation(i as u64),
                _ => env,
            }
        })
        .collect()
}

/// Parses a dump of `offset: hex... |ascii|` lines; `#` lines are comments.
pub fn parse_hex_dump(text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let body = line.split_once(':').map_or(line, |(_, rest)| rest);
        let body = body.split('|').next().unwrap_or("");
        for tok in body.split_whitespace() {
            out.push(u8::from_str_radix(tok, 16).expect("hex byte"));
        }
    }
    out
}

pub fn hex_dump(bytes: &[u8]) -> String {
    let mut s = String::new();
    for (i, chunk) in bytes.chunks(16).enumerate() {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        let ascii: String = chunk.iter().map(|&b| if (0x20..0x7f).contains(&b) { b as char } else { '.' }).collect();
        s.push_str(&format!("{:08x}: {:<47}  |{}|\n", i * 16, hex.join(" "), ascii));
    }
    s
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

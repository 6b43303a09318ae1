//! Serial-arm model: standard Denavit–Hartenberg forward kinematics, the
//! geometric Jacobian, damped-least-squares inverse kinematics and joint limits.
//!
//! Every joint is revolute. Joint `i` contributes
//! `Rz(q_i + theta_offset) · Tz(d) · Tx(a) · Rx(alpha)`, and the whole chain is
//! prefixed by the model's `base_frame` (robot base expressed in world frame).

use std::path::Path;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Transform};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("configuration has {got} values, model has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no convergence after {iterations} iterations (position error {position_error:.3e} m, orientation error {orientation_error:.3e} rad)")]
    MaxIterations { iterations: usize, position_error: f64, orientation_error: f64 },
    #[error("target is {distance:.3} m from the base, beyond total reach {reach:.3} m")]
    Unreachable { distance: f64, reach: f64 },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("reading robot model: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing robot model: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhParams {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimits {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub dh: DhParams,
    pub limits: JointLimits,
    /// rad/s
    pub v_max: f64,
    /// rad/s²
    pub a_max: f64,
}

impl JointSpec {
    fn local_transform(&self, q: f64) -> Isometry3<f64> {
        let dh = &self.dh;
        let rz = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + dh.theta_offset),
        );
        let tzx = Isometry3::translation(dh.a, 0.0, dh.d);
        let rx = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), dh.alpha),
        );
        // Rz·Tz·Tx·Rx; Tz and Tx commute so they are folded into one translation.
        rz * tzx * rx
    }
}

/// Link segment endpoints in world frame.
pub type Segment = (Vector3<f64>, Vector3<f64>);

/// Joint values in radians, one per model joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfiguration(pub Vec<f64>);

impl JointConfiguration {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointConfiguration) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Linear interpolation; `s = 0` gives `self`, `s = 1` gives `other` exactly.
    pub fn lerp(&self, other: &JointConfiguration, s: f64) -> JointConfiguration {
        if s <= 0.0 {
            return self.clone();
        }
        if s >= 1.0 {
            return other.clone();
        }
        JointConfiguration(self.0.iter().zip(&other.0).map(|(a, b)| a + (b - a) * s).collect())
    }
}

impl From<Vec<f64>> for JointConfiguration {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub base_frame: Transform,
    pub joints: Vec<JointSpec>,
}

impl RobotModel {
    /// Parses and validates a robot model JSON document.
    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let model: RobotModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The bundled 7-DOF desk-scale arm.
    pub fn bundled() -> Self {
        Self::from_json(crate::assets::ROBOT_MODEL).expect("bundled robot model is valid")
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.joints.is_empty() {
            return Err(KinematicsError::InvalidModel("model has no joints".into()));
        }
        for j in &self.joints {
            let finite = [j.dh.a, j.dh.alpha, j.dh.d, j.dh.theta_offset, j.limits.lower, j.limits.upper, j.v_max, j.a_max]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(KinematicsError::InvalidModel(format!("joint {}: non-finite value", j.name)));
            }
            if j.limits.lower >= j.limits.upper {
                return Err(KinematicsError::InvalidModel(format!("joint {}: lower limit not below upper", j.name)));
            }
            if j.v_max <= 0.0 || j.a_max <= 0.0 {
                return Err(KinematicsError::InvalidModel(format!("joint {}: v_max and a_max must be positive", j.name)));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Upper bound on the distance from the base origin to the end effector.
    pub fn total_reach(&self) -> f64 {
        self.joints.iter().map(|j| j.dh.a.hypot(j.dh.d)).sum()
    }

    pub fn check_dim(&self, q: &JointConfiguration) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    pub fn clamp(&self, q: &JointConfiguration) -> JointConfiguration {
        JointConfiguration(self.joints.iter().zip(&q.0).map(|(j, v)| j.limits.clamp(*v)).collect())
    }

    /// Midpoint of the limits with the zero configuration preferred when it is admissible.
    pub fn neutral(&self) -> JointConfiguration {
        self.clamp(&JointConfiguration::zeros(self.dof()))
    }

    /// World-frame poses of frames `0..=n` (frame 0 is the base).
    pub fn frames(&self, q: &JointConfiguration) -> Result<Vec<Isometry3<f64>>, KinematicsError> {
        self.check_dim(q)?;
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut t = *self.base_frame.isometry();
        out.push(t);
        for (j, v) in self.joints.iter().zip(&q.0) {
            t *= j.local_transform(*v);
            out.push(t);
        }
        Ok(out)
    }

    /// Segments `frame[i-1] -> frame[i]` for links `1..=n`.
    pub fn link_segments(&self, q: &JointConfiguration) -> Result<Vec<Segment>, KinematicsError> {
        let frames = self.frames(q)?;
        Ok(frames.windows(2).map(|w| (w[0].translation.vector, w[1].translation.vector)).collect())
    }
}

pub fn forward_kinematics(model: &RobotModel, q: &JointConfiguration) -> Result<Pose, KinematicsError> {
    let frames = model.frames(q)?;
    Ok(Pose::from_isometry(*frames.last().expect("at least the base frame")))
}

/// Geometric Jacobian (rows 0..3 linear, 3..6 angular) in world frame.
pub fn jacobian(model: &RobotModel, q: &JointConfiguration) -> Result<DMatrix<f64>, KinematicsError> {
    let frames = model.frames(q)?;
    Ok(jacobian_from_frames(&frames))
}

fn jacobian_from_frames(frames: &[Isometry3<f64>]) -> DMatrix<f64> {
    let n = frames.len() - 1;
    let p_end = frames[n].translation.vector;
    let mut j = DMatrix::zeros(6, n);
    for i in 0..n {
        let z = frames[i].rotation * Vector3::z();
        let p = frames[i].translation.vector;
        let lin = z.cross(&(p_end - p));
        for r in 0..3 {
            j[(r, i)] = lin[r];
            j[(r + 3, i)] = z[r];
        }
    }
    j
}

pub fn within_limits(model: &RobotModel, q: &JointConfiguration) -> bool {
    q.len() == model.dof() && model.joints.iter().zip(&q.0).all(|(j, v)| j.limits.contains(*v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub max_iters: usize,
    /// Applies to both position (m) and orientation angle (rad).
    pub tolerance: f64,
    pub damping: f64,
    /// Largest joint-space step norm per iteration (rad).
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { max_iters: 300, tolerance: 1e-6, damping: 0.05, max_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointConfiguration,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

/// Position error (m) and orientation error (rad, angle of relative rotation).
pub fn pose_error(current: &Pose, target: &Pose) -> (f64, f64) {
    (current.distance_to(target), current.angle_to(target))
}

/// Damped least squares: `dq = Jᵀ (J Jᵀ + λ² I)⁻¹ e`, clamped into limits every step.
///
/// `opts.damping` caps the damping; the value used is `min(λ, |e|)` so steps
/// near the solution are close to Gauss-Newton even at near-singular poses.
pub fn inverse_kinematics(
    model: &RobotModel,
    target: &Pose,
    seed: &JointConfiguration,
    opts: &IkOptions,
) -> Result<IkSolution, KinematicsError> {
    model.check_dim(seed)?;
    let base = model.base_frame.position();
    let distance = (target.position() - base).norm();
    let reach = model.total_reach();
    if distance > reach {
        return Err(KinematicsError::Unreachable { distance, reach });
    }

    let mut q = model.clamp(seed);
    let mut iterations = 0;
    loop {
        let frames = model.frames(&q)?;
        let current = Pose::from_isometry(*frames.last().unwrap());
        let (pos_err, rot_err) = pose_error(&current, target);
        if pos_err < opts.tolerance && rot_err < opts.tolerance {
            return Ok(IkSolution { q, iterations, position_error: pos_err, orientation_error: rot_err });
        }
        if iterations >= opts.max_iters {
            return Err(KinematicsError::MaxIterations {
                iterations,
                position_error: pos_err,
                orientation_error: rot_err,
            });
        }

        let dp = target.position() - current.position();
        let dr = (target.rotation() * current.rotation().inverse()).scaled_axis();
        let e = DVector::from_column_slice(&[dp.x, dp.y, dp.z, dr.x, dr.y, dr.z]);
        let mut jac = jacobian_from_frames(&frames);
        let lambda = opts.damping.min(e.norm());
        // Joints on a limit and pushed outward are frozen and the step re-solved.
        let mut dq;
        loop {
            let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * (lambda * lambda);
            let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
                return Err(KinematicsError::MaxIterations {
                    iterations,
                    position_error: pos_err,
                    orientation_error: rot_err,
                });
            };
            dq = jac.transpose() * &y;
            let mut froze = false;
            for (i, j) in model.joints.iter().enumerate() {
                let pushing = (q.0[i] <= j.limits.lower && dq[i] < 0.0) || (q.0[i] >= j.limits.upper && dq[i] > 0.0);
                if pushing {
                    jac.column_mut(i).fill(0.0);
                    froze = true;
                }
            }
            if !froze {
                break;
            }
        }
        let norm = dq.norm();
        if norm > opts.max_step {
            dq *= opts.max_step / norm;
        }
        let next: Vec<f64> = q.0.iter().zip(dq.iter()).map(|(v, d)| v + d).collect();
        q = model.clamp(&JointConfiguration(next));
        iterations += 1;
    }
}

//! Rigid poses and frame transforms.
//!
//! Serialized as `{"position": [x, y, z], "orientation": [w, x, y, z]}`.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Allowed deviation of a deserialized quaternion from unit norm.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// Position in meters plus a unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    iso: Isometry3<f64>,
}

/// A pose read as a frame transform (`parent <- child`).
pub type Transform = Pose;

impl Pose {
    pub fn identity() -> Self {
        Self { iso: Isometry3::identity() }
    }

    /// Builds a pose from a position and a `(w, x, y, z)` quaternion, normalizing the latter.
    pub fn new(position: [f64; 3], orientation: [f64; 4]) -> Self {
        let [w, x, y, z] = orientation;
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self::from_parts(Vector3::from(position), rot)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_parts(position: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { iso: Isometry3::from_parts(Translation3::from(position), rotation) }
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self { iso }
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn position(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn position_array(&self) -> [f64; 3] {
        let p = self.position();
        [p.x, p.y, p.z]
    }

    /// Orientation as `(w, x, y, z)`.
    pub fn orientation_array(&self) -> [f64; 4] {
        let q = self.iso.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { iso: self.iso * other.iso }
    }

    pub fn inverse(&self) -> Pose {
        Pose { iso: self.iso.inverse() }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.transform_point(&(*p).into()).coords
    }

    /// Returns the same pose shifted by `delta` in the parent frame.
    pub fn translated(&self, delta: Vector3<f64>) -> Pose {
        Pose::from_parts(self.position() + delta, self.rotation())
    }

    /// Angle (radians) of the relative rotation between two orientations.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.iso.rotation.angle_to(&other.iso.rotation)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.position() - other.position()).norm()
    }

    /// 4x4 homogeneous matrix (row-major nested arrays).
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let m = self.iso.to_homogeneous();
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.position_array().iter().chain(self.orientation_array().iter()).all(|v| v.is_finite())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr { position: self.position_array(), orientation: self.orientation_array() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let norm = repr.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(serde::de::Error::custom(format!(
                "orientation quaternion norm {norm} is not 1"
            )));
        }
        if repr.position.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("non-finite position"));
        }
        let [w, x, y, z] = repr.orientation;
        let q = Quaternion::new(w, x, y, z);
        // Unit-norm input is kept verbatim.
        let rot = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Pose::from_parts(Vector3::from(repr.position), rot))
    }
}

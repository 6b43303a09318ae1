//! Registry of workspace objects, arm/object contact queries and the
//! viewer-to-robot calibration anchor.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{primitives_overlap, Primitive, Shape};
use crate::geometry::{Pose, Transform};
use crate::kinematics::{JointConfiguration, KinematicsError, RobotModel};

pub const DEFAULT_LINK_RADIUS: f64 = 0.06;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("object id {0:?} already registered")]
    DuplicateId(String),
    #[error("unknown object id {0:?}")]
    UnknownId(String),
    #[error("object {0:?} has a non-positive shape dimension")]
    InvalidShape(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("reading world file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing world file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Tool,
    Piece,
    Box,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: ObjectKind,
    pub pose: Pose,
    pub shape: Shape,
    /// Object frame -> grasp frame.
    #[serde(default)]
    pub grasp_offset: Transform,
}

impl WorldObject {
    pub fn grasp_pose(&self) -> Pose {
        self.pose.compose(&self.grasp_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    Plan,
    Intervention,
}

/// Emitted when a human moves an object.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionEvent {
    pub object_id: String,
    pub previous: Pose,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub base_in_viewer: Transform,
    pub marker_pose_used: Transform,
    pub timestamp: f64,
}

/// `base_in_viewer = marker_pose_in_viewer ∘ marker_to_base`.
pub fn calibrate(marker_pose_in_viewer: &Transform, marker_to_base: &Transform, timestamp: f64) -> CalibrationResult {
    CalibrationResult {
        base_in_viewer: marker_pose_in_viewer.compose(marker_to_base),
        marker_pose_used: *marker_pose_in_viewer,
        timestamp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Contact<'a> {
    /// 1-based: link `i` spans DH frames `i-1 .. i`.
    pub link: usize,
    pub object_id: &'a str,
}

/// World file document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub objects: Vec<WorldObject>,
    /// Where handed-over tools are presented to the human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handover_pose: Option<Pose>,
}

#[derive(Debug, Clone)]
pub struct World {
    objects: IndexMap<String, WorldObject>,
    link_radius: f64,
    anchor: Option<CalibrationResult>,
    handover_pose: Option<Pose>,
}

impl Default for World {
    fn default() -> Self {
        Self::new()
    }
}

impl World {
    pub fn new() -> Self {
        Self { objects: IndexMap::new(), link_radius: DEFAULT_LINK_RADIUS, anchor: None, handover_pose: None }
    }

    pub fn from_file(file: WorldFile) -> Result<Self, WorldError> {
        let mut w = World::new();
        for obj in file.objects {
            w.register_object(obj)?;
        }
        w.handover_pose = file.handover_pose;
        Ok(w)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The bundled chair-assembly desk scene.
    pub fn sample_scene() -> Self {
        Self::from_json(crate::assets::SAMPLE_SCENE).expect("bundled scene is valid")
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile { objects: self.objects.values().cloned().collect(), handover_pose: self.handover_pose }
    }

    pub fn link_radius(&self) -> f64 {
        self.link_radius
    }

    pub fn set_link_radius(&mut self, r: f64) {
        self.link_radius = r;
    }

    pub fn handover_pose(&self) -> Option<Pose> {
        self.handover_pose
    }

    pub fn register_object(&mut self, obj: WorldObject) -> Result<(), WorldError> {
        if self.objects.contains_key(&obj.id) {
            return Err(WorldError::DuplicateId(obj.id));
        }
        if !obj.shape.is_valid() {
            return Err(WorldError::InvalidShape(obj.id));
        }
        self.objects.insert(obj.id.clone(), obj);
        Ok(())
    }

    pub fn remove_object(&mut self, id: &str) -> Result<WorldObject, WorldError> {
        self.objects.shift_remove(id).ok_or_else(|| WorldError::UnknownId(id.to_owned()))
    }

    pub fn object(&self, id: &str) -> Result<&WorldObject, WorldError> {
        self.objects.get(id).ok_or_else(|| WorldError::UnknownId(id.to_owned()))
    }

    pub fn object_pose(&self, id: &str) -> Result<Pose, WorldError> {
        self.object(id).map(|o| o.pose)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.objects.contains_key(id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &WorldObject> {
        self.objects.values()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Replaces an object's pose. Human-sourced moves yield an [`InterventionEvent`].
    pub fn update_object_pose(
        &mut self,
        id: &str,
        pose: Pose,
        source: PoseSource,
    ) -> Result<Option<InterventionEvent>, WorldError> {
        let obj = self.objects.get_mut(id).ok_or_else(|| WorldError::UnknownId(id.to_owned()))?;
        let previous = std::mem::replace(&mut obj.pose, pose);
        Ok(match source {
            PoseSource::Plan => None,
            PoseSource::Intervention => Some(InterventionEvent { object_id: id.to_owned(), previous, pose }),
        })
    }

    /// Stores a new anchor, replacing any earlier one.
    pub fn set_calibration(&mut self, result: CalibrationResult) {
        self.anchor = Some(result);
    }

    pub fn calibration(&self) -> Option<&CalibrationResult> {
        self.anchor.as_ref()
    }

    /// Every (link, object) overlap with links modelled as capsules between consecutive frames.
    pub fn arm_collision(&self, model: &RobotModel, q: &JointConfiguration) -> Result<Vec<Contact<'_>>, WorldError> {
        self.arm_collision_excluding(model, q, None)
    }

    pub fn arm_collision_excluding(
        &self,
        model: &RobotModel,
        q: &JointConfiguration,
        exclude: Option<&str>,
    ) -> Result<Vec<Contact<'_>>, WorldError> {
        let mut contacts = Vec::new();
        if self.objects.is_empty() {
            model.check_dim(q)?;
            return Ok(contacts);
        }
        let links: Vec<Primitive> = model
            .link_segments(q)?
            .into_iter()
            .map(|(a, b)| Primitive::Capsule { a, b, radius: self.link_radius })
            .collect();
        for (i, link) in links.iter().enumerate() {
            for obj in self.objects.values() {
                if Some(obj.id.as_str()) == exclude {
                    continue;
                }
                if primitives_overlap(link, &obj.shape.placed(&obj.pose)) {
                    contacts.push(Contact { link: i + 1, object_id: &obj.id });
                }
            }
        }
        Ok(contacts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;

    fn sphere(id: &str, at: [f64; 3], r: f64) -> WorldObject {
        WorldObject {
            id: id.into(),
            kind: ObjectKind::Tool,
            pose: Pose::from_translation(at[0], at[1], at[2]),
            shape: Shape::Sphere { radius: r },
            grasp_offset: Pose::identity(),
        }
    }

    #[test]
    fn register_and_lookup() {
        let mut w = World::new();
        for i in 0..20 {
            w.register_object(sphere(&format!("o{i}"), [i as f64, 0.0, 0.0], 0.1)).unwrap();
        }
        for i in 0..20 {
            assert_eq!(w.object_pose(&format!("o{i}")).unwrap().position_array(), [i as f64, 0.0, 0.0]);
        }
        assert!(matches!(w.register_object(sphere("o3", [0.0; 3], 0.1)), Err(WorldError::DuplicateId(_))));
        assert!(matches!(w.object_pose("nope"), Err(WorldError::UnknownId(_))));
    }

    #[test]
    fn invalid_shape_rejected() {
        let mut w = World::new();
        assert!(matches!(w.register_object(sphere("s", [0.0; 3], 0.0)), Err(WorldError::InvalidShape(_))));
    }

    #[test]
    fn intervention_vs_plan_updates() {
        let mut w = World::new();
        w.register_object(sphere("screwdriver", [0.5, 0.0, 0.0], 0.02)).unwrap();
        let moved = Pose::from_translation(0.53, 0.0, 0.0);
        let ev = w.update_object_pose("screwdriver", moved, PoseSource::Intervention).unwrap().unwrap();
        assert_eq!(ev.object_id, "screwdriver");
        assert_eq!(ev.previous.position_array(), [0.5, 0.0, 0.0]);
        assert_eq!(w.object_pose("screwdriver").unwrap(), moved);
        let placed = Pose::from_translation(0.6, 0.1, 0.0);
        assert!(w.update_object_pose("screwdriver", placed, PoseSource::Plan).unwrap().is_none());
        assert_eq!(w.object_pose("screwdriver").unwrap(), placed);
        assert!(matches!(
            w.update_object_pose("x", placed, PoseSource::Plan),
            Err(WorldError::UnknownId(_))
        ));
    }

    #[test]
    fn arm_contacts() {
        let model = RobotModel::bundled();
        let q = JointConfiguration(vec![0.2, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0]);
        let w = World::new();
        assert!(w.arm_collision(&model, &q).unwrap().is_empty());

        // Link 3 (upper arm) spans frames 2..3.
        let frames = model.frames(&q).unwrap();
        let mid = (frames[2].translation.vector + frames[3].translation.vector) * 0.5;
        let mut w = World::new();
        w.register_object(sphere("ball", [mid.x, mid.y, mid.z], 0.03)).unwrap();
        let contacts = w.arm_collision(&model, &q).unwrap();
        assert!(contacts.contains(&Contact { link: 3, object_id: "ball" }));
        assert!(w.arm_collision_excluding(&model, &q, Some("ball")).unwrap().is_empty());

        let mut far = World::new();
        far.register_object(sphere("far", [10.0, 0.0, 0.0], 0.1)).unwrap();
        assert!(far.arm_collision(&model, &q).unwrap().is_empty());

        let tip = forward_kinematics(&model, &q).unwrap().position();
        let mut w = World::new();
        w.register_object(sphere("tip", [tip.x, tip.y, tip.z], 0.01)).unwrap();
        assert!(w.arm_collision(&model, &q).unwrap().iter().any(|c| c.link == 7));
    }

    #[test]
    fn calibration_examples() {
        let id = calibrate(&Pose::identity(), &Pose::identity(), 0.0);
        assert_eq!(id.base_in_viewer, Pose::identity());
        let marker = Pose::from_translation(0.5, 0.0, 0.2);
        let r = calibrate(&marker, &Pose::identity(), 1.0);
        assert_eq!(r.base_in_viewer.position_array(), [0.5, 0.0, 0.2]);
        assert_eq!(r.marker_pose_used, marker);
        let mut w = World::new();
        w.set_calibration(r.clone());
        w.set_calibration(id.clone());
        assert_eq!(w.calibration(), Some(&id));
    }

    #[test]
    fn world_file_round_trip() {
        let w = World::sample_scene();
        let text = serde_json::to_string(&w.to_file()).unwrap();
        let back = World::from_json(&text).unwrap();
        assert_eq!(back.len(), w.len());
        assert!(w.contains("screwdriver") && w.contains("hammer") && w.contains("hex_key"));
    }
}

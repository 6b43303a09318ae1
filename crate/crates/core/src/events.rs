//! Simulation events and the newline-delimited JSON event log.
//!
//! Each line is `{"t": <sim seconds>, "type": "<tag>", "payload": {...}}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::kinematics::JointConfiguration;
use crate::plan::PlanPhase;
use crate::planner::{Skill, TrajectoryPoint};

/// Communication medium of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MediumKind {
    /// The robot's own motion.
    #[serde(rename = "m")]
    RobotMotion,
    /// The holographic preview of the same motion.
    #[serde(rename = "am")]
    AnticipatedRobotMotion,
}

impl MediumKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MediumKind::RobotMotion => "m",
            MediumKind::AnticipatedRobotMotion => "am",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Self { t, kind }
    }

    pub fn type_tag(&self) -> &'static str {
        self.kind.type_tag()
    }

    /// Medium of stream-specific events.
    pub fn medium(&self) -> Option<MediumKind> {
        match &self.kind {
            EventKind::StreamStarted { medium, .. } | EventKind::Waypoint { medium, .. } => Some(*medium),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    ActDispatched {
        act_id: u64,
        step: u32,
        skill: Skill,
        object_id: String,
        delta_t: f64,
        am_start: f64,
        m_start: f64,
        duration: f64,
    },
    /// A stream's full trajectory is published.
    StreamStarted {
        act_id: u64,
        medium: MediumKind,
        start_time: f64,
        points: Vec<TrajectoryPoint>,
    },
    /// A stream reached one of its waypoints.
    Waypoint {
        act_id: u64,
        medium: MediumKind,
        index: usize,
        t_rel: f64,
        q: JointConfiguration,
    },
    JointState {
        q: JointConfiguration,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act_id: Option<u64>,
    },
    Collision {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act_id: Option<u64>,
        link: usize,
        object_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paused_until: Option<f64>,
    },
    ActCompleted {
        act_id: u64,
        step: u32,
    },
    ActAborted {
        act_id: u64,
        q: JointConfiguration,
    },
    PlanStatus {
        cursor: usize,
        total: usize,
        phase: PlanPhase,
        instruction: String,
    },
    UserInput {
        value: bool,
    },
    InputIgnored {
        phase: PlanPhase,
    },
    Intervention {
        object_id: String,
        pose: Pose,
    },
    ObjectMoved {
        object_id: String,
        pose: Pose,
    },
    Calibrated {
        base_in_viewer: Pose,
        marker_pose: Pose,
    },
    PlanningFailed {
        step: u32,
        reason: String,
    },
    RunFinished {
        total_time: f64,
    },
}

impl EventKind {
    pub fn type_tag(&self) -> &'static str {
        match self {
            EventKind::ActDispatched { .. } => "act_dispatched",
            EventKind::StreamStarted { .. } => "stream_started",
            EventKind::Waypoint { .. } => "waypoint",
            EventKind::JointState { .. } => "joint_state",
            EventKind::Collision { .. } => "collision",
            EventKind::ActCompleted { .. } => "act_completed",
            EventKind::ActAborted { .. } => "act_aborted",
            EventKind::PlanStatus { .. } => "plan_status",
            EventKind::UserInput { .. } => "user_input",
            EventKind::InputIgnored { .. } => "input_ignored",
            EventKind::Intervention { .. } => "intervention",
            EventKind::ObjectMoved { .. } => "object_moved",
            EventKind::Calibrated { .. } => "calibrated",
            EventKind::PlanningFailed { .. } => "planning_failed",
            EventKind::RunFinished { .. } => "run_finished",
        }
    }
}

pub fn write_ndjson<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_ndjson(events: &[Event]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ndjson(events, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<Event>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

//! Scripted sequential plan and the human-gated step machine.
//!
//! Plan files hold one action per line:
//!
//! ```text
//! # comment
//! handover screwdriver | "Fasten the backrest screws"
//! pick_place dowel_box place: 0.4 0.2 0.0 1 0 0 0 | "Insert dowels"
//! ```
//!
//! `place:` takes a position and a `(w, x, y, z)` quaternion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::planner::{PlanAction, Skill};

#[derive(Debug, Error, PartialEq)]
pub enum PlanParseError {
    #[error("line {line}: unknown skill {skill:?}")]
    UnknownSkill { line: usize, skill: String },
    #[error("line {line}: pick_place needs a `place:` pose")]
    MissingPlacePose { line: usize },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("plan has no actions")]
    EmptyPlan,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanStateError {
    #[error("act completion received while {phase:?}")]
    PhaseViolation { phase: PlanPhase },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub title: String,
    pub actions: Vec<PlanAction>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn sample() -> Plan {
        parse_plan(crate::assets::SAMPLE_PLAN).expect("bundled plan parses")
    }

    pub fn load(path: &std::path::Path) -> Result<Plan, PlanLoadError> {
        let text = std::fs::read_to_string(path)?;
        let mut plan = parse_plan(&text)?;
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            plan.title = stem.to_owned();
        }
        Ok(plan)
    }
}

#[derive(Debug, Error)]
pub enum PlanLoadError {
    #[error("reading plan: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] PlanParseError),
}

pub fn parse_plan(text: &str) -> Result<Plan, PlanParseError> {
    let mut actions = Vec::new();
    let mut title = String::from("plan");
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if actions.is_empty() && title == "plan" && !comment.trim().is_empty() {
                title = comment.trim().trim_end_matches(['.', ':']).to_owned();
            }
            continue;
        }
        let step_index = actions.len() as u32 + 1;
        actions.push(parse_line(trimmed, line, step_index)?);
    }
    if actions.is_empty() {
        return Err(PlanParseError::EmptyPlan);
    }
    Ok(Plan { title, actions })
}

fn parse_line(text: &str, line: usize, step_index: u32) -> Result<PlanAction, PlanParseError> {
    let malformed = |reason: &str| PlanParseError::MalformedLine { line, reason: reason.to_owned() };
    let (head, instruction) = match text.split_once('|') {
        Some((h, rest)) => (h, Some(rest.trim())),
        None => (text, None),
    };
    let mut tokens = head.split_whitespace();
    let skill = match tokens.next() {
        Some("pick_place") => Skill::PickPlace,
        Some("handover") => Skill::Handover,
        Some(other) => return Err(PlanParseError::UnknownSkill { line, skill: other.to_owned() }),
        None => return Err(malformed("missing skill")),
    };
    let object_id = tokens.next().ok_or_else(|| malformed("missing object id"))?.to_owned();

    let place_pose = match tokens.next() {
        None => None,
        Some("place:") => {
            let nums: Vec<f64> = tokens
                .by_ref()
                .map(|t| t.parse::<f64>().map_err(|_| malformed(&format!("bad number {t:?}"))))
                .collect::<Result<_, _>>()?;
            if nums.len() != 7 || nums.iter().any(|v| !v.is_finite()) {
                return Err(malformed("place: expects x y z qw qx qy qz"));
            }
            let norm = nums[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > crate::geometry::QUATERNION_NORM_TOLERANCE {
                return Err(malformed("place: quaternion is not unit length"));
            }
            Some(Pose::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5], nums[6]]))
        }
        Some(other) => return Err(malformed(&format!("unexpected token {other:?}"))),
    };
    match (skill, &place_pose) {
        (Skill::PickPlace, None) => return Err(PlanParseError::MissingPlacePose { line }),
        (Skill::Handover, Some(_)) => return Err(malformed("handover takes no place pose")),
        _ => {}
    }

    let instruction = instruction.ok_or_else(|| malformed("missing `| \"instruction\"`"))?;
    let instruction = instruction
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .ok_or_else(|| malformed("instruction must be double-quoted"))?
        .to_owned();

    Ok(PlanAction { step_index, skill, object_id, place_pose, instruction })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPhase {
    AwaitingInput,
    Planning,
    Executing,
    Done,
}

/// Boolean press from the human's input device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserInput(pub bool);

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub action: PlanAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub started_at: f64,
    pub ended_at: f64,
}

#[derive(Debug, Clone)]
pub struct PlanState {
    plan: Plan,
    cursor: usize,
    phase: PlanPhase,
    current_act: Option<u64>,
    step_started_at: Option<f64>,
    timings: Vec<StepTiming>,
}

impl PlanState {
    pub fn new(plan: Plan) -> Self {
        Self { plan, cursor: 1, phase: PlanPhase::AwaitingInput, current_act: None, step_started_at: None, timings: Vec::new() }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Next step, 1-based; `len + 1` once done.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn phase(&self) -> PlanPhase {
        self.phase
    }

    pub fn timings(&self) -> &[StepTiming] {
        &self.timings
    }

    /// Action the cursor points at, if any.
    pub fn current_action(&self) -> Option<&PlanAction> {
        self.plan.actions.get(self.cursor - 1)
    }

    /// A `true` press while awaiting input dispatches the next action. Anything else is ignored.
    pub fn advance(&mut self, input: UserInput, clock: f64) -> Option<Dispatch> {
        if self.phase != PlanPhase::AwaitingInput || !input.0 {
            return None;
        }
        let action = self.current_action()?.clone();
        self.phase = PlanPhase::Planning;
        self.step_started_at = Some(clock);
        Some(Dispatch { action })
    }

    /// The planned act has been handed to the scheduler.
    pub fn on_dispatched(&mut self, act_id: u64) {
        if self.phase == PlanPhase::Planning {
            self.phase = PlanPhase::Executing;
            self.current_act = Some(act_id);
        }
    }

    /// Planning failed; the same step waits for another press.
    pub fn on_planning_failed(&mut self) {
        if self.phase == PlanPhase::Planning {
            self.phase = PlanPhase::AwaitingInput;
            self.step_started_at = None;
        }
    }

    pub fn on_act_completed(&mut self, act_id: u64, clock: f64) -> Result<(), PlanStateError> {
        if self.phase != PlanPhase::Executing || self.current_act != Some(act_id) {
            return Err(PlanStateError::PhaseViolation { phase: self.phase });
        }
        let started_at = self.step_started_at.take().unwrap_or(clock);
        self.timings.push(StepTiming { started_at, ended_at: clock });
        self.current_act = None;
        self.cursor += 1;
        self.phase = if self.cursor > self.plan.len() { PlanPhase::Done } else { PlanPhase::AwaitingInput };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_plan() {
        let text = "handover screwdriver | \"Fasten the backrest screws\"\n\
                    pick_place dowel_box place: 0.4 0.2 0.0 1 0 0 0 | \"Insert dowels\"\n";
        let plan = parse_plan(text).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.actions[0].skill, Skill::Handover);
        assert_eq!(plan.actions[1].skill, Skill::PickPlace);
        assert_eq!(plan.actions[0].instruction, "Fasten the backrest screws");
        assert_eq!(plan.actions[1].step_index, 2);
        assert_eq!(plan.actions[1].place_pose.unwrap().position_array(), [0.4, 0.2, 0.0]);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_plan("weld seat"), Err(PlanParseError::UnknownSkill { line: 1, skill: "weld".into() }));
        assert_eq!(parse_plan(""), Err(PlanParseError::EmptyPlan));
        assert_eq!(parse_plan("# only comments\n\n"), Err(PlanParseError::EmptyPlan));
        assert_eq!(
            parse_plan("\npick_place seat | \"x\""),
            Err(PlanParseError::MissingPlacePose { line: 2 })
        );
        assert!(matches!(parse_plan("handover"), Err(PlanParseError::MalformedLine { line: 1, .. })));
        assert!(matches!(
            parse_plan("pick_place a place: 1 2 3 | \"x\""),
            Err(PlanParseError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_plan("handover a place: 0 0 0 1 0 0 0 | \"x\""),
            Err(PlanParseError::MalformedLine { .. })
        ));
        assert!(matches!(parse_plan("handover a | no quotes"), Err(PlanParseError::MalformedLine { .. })));
        assert!(matches!(parse_plan("handover a"), Err(PlanParseError::MalformedLine { .. })));
    }

    #[test]
    fn repeated_objects_allowed() {
        let plan = parse_plan("handover a | \"1\"\nhandover a | \"2\"").unwrap();
        assert_eq!(plan.len(), 2);
    }

    #[test]
    fn bundled_plan_has_ten_steps() {
        let plan = Plan::sample();
        assert_eq!(plan.len(), 10);
        assert!(plan.actions.iter().enumerate().all(|(i, a)| a.step_index as usize == i + 1));
    }

    fn three_step() -> PlanState {
        PlanState::new(parse_plan("handover a | \"1\"\nhandover b | \"2\"\nhandover c | \"3\"").unwrap())
    }

    #[test]
    fn advance_gating() {
        let mut s = three_step();
        let d = s.advance(UserInput(true), 1.0).unwrap();
        assert_eq!(d.action.object_id, "a");
        assert_eq!(s.phase(), PlanPhase::Planning);
        assert!(s.advance(UserInput(true), 1.1).is_none());
        s.on_dispatched(7);
        assert_eq!(s.phase(), PlanPhase::Executing);
        assert!(s.advance(UserInput(true), 1.2).is_none());
        s.on_act_completed(7, 5.0).unwrap();
        assert_eq!((s.cursor(), s.phase()), (2, PlanPhase::AwaitingInput));
        assert!(s.advance(UserInput(false), 6.0).is_none());
    }

    #[test]
    fn completion_rules() {
        let mut s = three_step();
        assert_eq!(
            s.on_act_completed(1, 0.0),
            Err(PlanStateError::PhaseViolation { phase: PlanPhase::AwaitingInput })
        );
        for (i, act) in [10u64, 11, 12].into_iter().enumerate() {
            s.advance(UserInput(true), i as f64 * 10.0).unwrap();
            s.on_dispatched(act);
            s.on_act_completed(act, i as f64 * 10.0 + 4.0).unwrap();
        }
        assert_eq!((s.cursor(), s.phase()), (4, PlanPhase::Done));
        assert!(s.advance(UserInput(true), 99.0).is_none());
        assert_eq!(s.phase(), PlanPhase::Done);
        assert_eq!(s.timings().len(), 3);
        assert!(s.timings().iter().all(|t| t.ended_at >= t.started_at));
    }

    #[test]
    fn middle_step_completion() {
        let mut s = PlanState::new(Plan::sample());
        for step in 1..=3u64 {
            s.advance(UserInput(true), 0.0).unwrap();
            s.on_dispatched(step);
            s.on_act_completed(step, 1.0).unwrap();
        }
        assert_eq!((s.cursor(), s.phase()), (4, PlanPhase::AwaitingInput));
    }

    #[test]
    fn planning_failure_returns_to_awaiting() {
        let mut s = three_step();
        s.advance(UserInput(true), 0.0).unwrap();
        s.on_planning_failed();
        assert_eq!((s.cursor(), s.phase()), (1, PlanPhase::AwaitingInput));
    }
}

//! Bundled sample scenario: robot model, desk scene and chair-assembly plan.

use crate::kinematics::{JointConfiguration, RobotModel};

pub const ROBOT_MODEL: &str = include_str!("../assets/desk_arm_7dof.robot.json");
pub const SAMPLE_SCENE: &str = include_str!("../assets/chair_assembly.world.json");
pub const SAMPLE_PLAN: &str = include_str!("../assets/chair_assembly.plan");

/// Tool-down ready pose above the front of the table for the bundled arm.
const BUNDLED_HOME: [f64; 7] = [0.0, 0.1832, 0.0, 1.7274, 0.0, 1.2310, 0.0];

/// Starting configuration: the bundled ready pose, or the model's neutral configuration.
pub fn home_configuration(model: &RobotModel) -> JointConfiguration {
    if model.name == "desk_arm_7dof" && model.dof() == BUNDLED_HOME.len() {
        JointConfiguration(BUNDLED_HOME.to_vec())
    } else {
        model.neutral()
    }
}

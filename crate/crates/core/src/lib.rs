pub mod assets;
pub mod collision;
pub mod geometry;
pub mod kinematics;
pub mod planner;
pub mod world;
pub mod plan;
pub mod events;
pub mod scheduler;
pub mod comm;
pub mod metrics;
pub mod app;

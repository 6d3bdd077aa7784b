//! Simulation core for repeated human–robot interaction games: dynamics,
//! rewards, a Stackelberg planner, belief tracking, influence-seeking robot
//! controllers, human models and the experiment harness.

pub mod belief;
pub mod harness;
pub mod humans;
pub mod influence;
pub mod planner;
pub mod rewards;
pub mod world;

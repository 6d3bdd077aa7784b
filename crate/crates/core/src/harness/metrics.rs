//! Per-interaction outcome metrics, all recomputable from the realized states.

use serde::{Deserialize, Serialize};

use crate::world::{Agent, Environment, StateTrajectory, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Net human displacement along its road axis, meters.
    pub lane_progress: f64,
    /// Time the robot spent moving backwards along its axis, seconds.
    pub reverse_time: f64,
    pub yielded: bool,
    /// Agent distance when the robot first started reversing.
    pub yield_onset_radius: Option<f64>,
}

impl Metrics {
    pub fn compute(env: &Environment, states: &StateTrajectory, yield_threshold: f64) -> Metrics {
        let s = states.states();
        Metrics {
            lane_progress: lane_progress(env, s),
            reverse_time: reverse_time(env, s),
            yielded: yielded(env, s, yield_threshold),
            yield_onset_radius: yield_onset_radius(env, s),
        }
    }
}

pub fn lane_progress(env: &Environment, states: &[WorldState]) -> f64 {
    match (states.first(), states.last()) {
        (Some(a), Some(b)) => {
            env.progress_coordinate(&b.human, Agent::Human) - env.progress_coordinate(&a.human, Agent::Human)
        }
        _ => 0.0,
    }
}

pub fn reverse_time(env: &Environment, states: &[WorldState]) -> f64 {
    let n = states
        .iter()
        .filter(|s| env.progress_rate(&s.robot, Agent::Robot) < 0.0)
        .count();
    env.dt * n as f64
}

/// The human yielded if, while the agents were within the conflict
/// distance, its progress rate dropped below `threshold` times its initial
/// rate and the robot was ahead of it along the human's axis when the
/// conflict window closed.
pub fn yielded(env: &Environment, states: &[WorldState], threshold: f64) -> bool {
    let Some(first) = states.first() else {
        return false;
    };
    let initial = env.progress_rate(&first.human, Agent::Human);
    if initial <= 0.0 {
        return false;
    }
    let window: Vec<&WorldState> = states
        .iter()
        .filter(|s| s.robot.distance(&s.human) <= env.conflict_distance)
        .collect();
    let Some(last) = window.last() else {
        return false;
    };
    let slowest = window
        .iter()
        .map(|s| env.progress_rate(&s.human, Agent::Human))
        .fold(f64::INFINITY, f64::min);
    let robot_first =
        env.progress_coordinate(&last.robot, Agent::Human) > env.progress_coordinate(&last.human, Agent::Human);
    slowest < threshold * initial && robot_first
}

pub fn yield_onset_radius(env: &Environment, states: &[WorldState]) -> Option<f64> {
    states
        .iter()
        .find(|s| env.progress_rate(&s.robot, Agent::Robot) < 0.0)
        .map(|s| s.robot.distance(&s.human))
}

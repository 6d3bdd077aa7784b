//! Per-step and cumulative rewards for the driving and corridor scenarios.
//!
//! Every reward here has the shape
//! `sign * progress(speed_agent) - offroad_weight * [off road] - collision_weight * [collision]`,
//! where the collision term is the coordination part of the reward and the
//! rest is the task part.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Action, ActionTrajectory, Agent, EnvKind, Environment, StateTrajectory, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("length mismatch: {states} states, {robot} robot actions, {human} human actions")]
    LengthMismatch {
        states: usize,
        robot: usize,
        human: usize,
    },
    #[error("invalid reward spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub role: Agent,
    pub speed_agent: Agent,
    /// +1 rewards the speed agent's progress, -1 penalises it.
    pub speed_sign: f64,
    pub collision_weight: f64,
    pub offroad_weight: f64,
}

impl RewardSpec {
    /// `-s_H - 10 [collision]`: the robot wants the human slow.
    pub fn driving_robot() -> RewardSpec {
        RewardSpec {
            role: Agent::Robot,
            speed_agent: Agent::Human,
            speed_sign: -1.0,
            collision_weight: 10.0,
            offroad_weight: 0.0,
        }
    }

    /// `s_H - 10 [off road] - 100 [collision]`.
    pub fn driving_human() -> RewardSpec {
        RewardSpec {
            role: Agent::Human,
            speed_agent: Agent::Human,
            speed_sign: 1.0,
            collision_weight: 100.0,
            offroad_weight: 10.0,
        }
    }

    /// `s_R - 10 [collision]`: the drone wants to cross quickly.
    pub fn corridor_robot() -> RewardSpec {
        RewardSpec {
            role: Agent::Robot,
            speed_agent: Agent::Robot,
            speed_sign: 1.0,
            collision_weight: 10.0,
            offroad_weight: 0.0,
        }
    }

    /// `s_H - 100 [collision]`.
    pub fn corridor_human() -> RewardSpec {
        RewardSpec {
            role: Agent::Human,
            speed_agent: Agent::Human,
            speed_sign: 1.0,
            collision_weight: 100.0,
            offroad_weight: 0.0,
        }
    }

    pub fn robot_default(kind: EnvKind) -> RewardSpec {
        match kind {
            EnvKind::Corridor => RewardSpec::corridor_robot(),
            _ => RewardSpec::driving_robot(),
        }
    }

    pub fn human_default(kind: EnvKind) -> RewardSpec {
        match kind {
            EnvKind::Corridor => RewardSpec::corridor_human(),
            _ => RewardSpec::driving_human(),
        }
    }

    pub fn with_collision_weight(self, collision_weight: f64) -> RewardSpec {
        RewardSpec {
            collision_weight,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.speed_sign != 1.0 && self.speed_sign != -1.0 {
            return Err(RewardError::Invalid(format!(
                "speed_sign must be +1 or -1, got {}",
                self.speed_sign
            )));
        }
        for (name, w) in [
            ("collision_weight", self.collision_weight),
            ("offroad_weight", self.offroad_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RewardError::Invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// The per-step reward from its three ingredients. Every evaluation path
    /// in the crate funnels through here so sums agree bit for bit.
    #[inline]
    pub fn step_value(&self, progress: f64, off_road: bool, collision: bool) -> f64 {
        self.speed_sign * progress
            - self.offroad_weight * f64::from(u8::from(off_road))
            - self.collision_weight * f64::from(u8::from(collision))
    }

    pub fn step_reward(&self, env: &Environment, s: &WorldState) -> f64 {
        self.step_value(
            progress_rate(s, env, self.speed_agent),
            env.off_road(s, self.role),
            env.check_collision(s),
        )
    }
}

/// Signed rate of progress along the agent's road axis.
pub fn progress_rate(s: &WorldState, env: &Environment, agent: Agent) -> f64 {
    env.progress_rate(s.agent(agent), agent)
}

pub fn robot_step_reward(
    spec: &RewardSpec,
    env: &Environment,
    s: &WorldState,
    _u_robot: Action,
    _u_human: Action,
) -> f64 {
    debug_assert_eq!(spec.role, Agent::Robot);
    spec.step_reward(env, s)
}

pub fn human_step_reward(
    spec: &RewardSpec,
    env: &Environment,
    s: &WorldState,
    _u_robot: Action,
    _u_human: Action,
) -> f64 {
    debug_assert_eq!(spec.role, Agent::Human);
    spec.step_reward(env, s)
}

/// `sum_{t=0}^{T} r(s^t, u_R^t, u_H^t)`.
pub fn total_reward(
    spec: &RewardSpec,
    env: &Environment,
    xi: &StateTrajectory,
    robot: &ActionTrajectory,
    human: &ActionTrajectory,
) -> Result<f64, RewardError> {
    if xi.len() != robot.len() || xi.len() != human.len() {
        return Err(RewardError::LengthMismatch {
            states: xi.len(),
            robot: robot.len(),
            human: human.len(),
        });
    }
    Ok(xi.states().iter().map(|s| spec.step_reward(env, s)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AgentState;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn highway_state(human_speed: f64, gap: f64, human_x: f64) -> WorldState {
        WorldState {
            robot: AgentState::new(2.0, gap, PI / 2.0, 3.0),
            human: AgentState::new(human_x, 0.0, PI / 2.0, human_speed),
            t: 0,
            env: EnvKind::Highway,
        }
    }

    #[test]
    fn progress_rate_projects_onto_axis() {
        let env = Environment::highway();
        let mut s = highway_state(2.0, 20.0, 2.0);
        assert!((progress_rate(&s, &env, Agent::Human) - 2.0).abs() < 1e-12);
        s.human.heading = -PI / 2.0;
        assert!((progress_rate(&s, &env, Agent::Human) + 2.0).abs() < 1e-12);
        s.human.heading = 0.0;
        assert!(progress_rate(&s, &env, Agent::Human).abs() < 1e-12);
    }

    #[test]
    fn driving_robot_reward_values() {
        let env = Environment::highway();
        let spec = RewardSpec::driving_robot();
        let s = highway_state(2.0, 20.0, 2.0);
        assert!((robot_step_reward(&spec, &env, &s, Action::ZERO, Action::ZERO) + 2.0).abs() < 1e-12);
        let crash = highway_state(0.0, 0.5, 2.0);
        assert_eq!(robot_step_reward(&spec, &env, &crash, Action::ZERO, Action::ZERO), -10.0);
    }

    #[test]
    fn corridor_robot_reward_values() {
        let env = Environment::corridor();
        let spec = RewardSpec::corridor_robot();
        let s = WorldState {
            robot: AgentState::new(-3.0, 0.0, 0.0, 1.5),
            human: AgentState::new(0.0, -4.0, PI / 2.0, 1.0),
            t: 0,
            env: EnvKind::Corridor,
        };
        assert_eq!(spec.step_reward(&env, &s), 1.5);
    }

    #[test]
    fn human_reward_values() {
        let env = Environment::highway();
        let spec = RewardSpec::driving_human();
        let on = highway_state(2.0, 20.0, 2.0);
        assert!((human_step_reward(&spec, &env, &on, Action::ZERO, Action::ZERO) - 2.0).abs() < 1e-12);
        let off = highway_state(2.0, 20.0, 6.0);
        assert!((spec.step_reward(&env, &off) + 8.0).abs() < 1e-12);
        let mut both = off;
        both.robot.x = 6.0;
        both.robot.y = 0.5;
        assert!((spec.step_reward(&env, &both) + 108.0).abs() < 1e-12);
    }

    #[test]
    fn total_reward_edge_cases() {
        let env = Environment::highway();
        let zero = RewardSpec {
            role: Agent::Robot,
            speed_agent: Agent::Human,
            speed_sign: 1.0,
            collision_weight: 0.0,
            offroad_weight: 0.0,
        };
        let s0 = highway_state(0.0, 20.0, 2.0);
        let acts = ActionTrajectory::constant(Action::ZERO, 5);
        let xi = env.rollout(&s0, &acts, &acts).unwrap();
        assert_eq!(total_reward(&zero, &env, &xi, &acts, &acts).unwrap(), 0.0);

        // Constant per-step reward c over T + 1 steps.
        let s0 = highway_state(3.0, 20.0, 2.0);
        let xi = env.rollout(&s0, &acts, &acts).unwrap();
        let r = total_reward(&RewardSpec::driving_robot(), &env, &xi, &acts, &acts).unwrap();
        assert!((r + 3.0 * 5.0).abs() < 1e-12);

        let short = ActionTrajectory::constant(Action::ZERO, 4);
        assert!(total_reward(&zero, &env, &xi, &short, &acts).is_err());
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(RewardSpec::driving_robot().validate().is_ok());
        let mut s = RewardSpec::driving_human();
        s.speed_sign = 0.5;
        assert!(s.validate().is_err());
        let s = RewardSpec::driving_human().with_collision_weight(-1.0);
        assert!(s.validate().is_err());
    }

    fn arb_actions(len: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-2.0f64..2.0, -4.0f64..4.0), len)
    }

    proptest! {
        #[test]
        fn total_matches_loop_and_splits_linearly(
            r in arb_actions(8), h in arb_actions(8), split in 1usize..7,
            gap in 0.0f64..6.0, hx in -6.0f64..6.0,
        ) {
            let env = Environment::highway();
            let ur: ActionTrajectory = r.iter().map(|&(w, a)| env.action(w, a)).collect();
            let uh: ActionTrajectory = h.iter().map(|&(w, a)| env.action(w, a)).collect();
            let s0 = highway_state(4.0, gap, hx);
            let xi = env.rollout(&s0, &ur, &uh).unwrap();
            for spec in [RewardSpec::driving_robot(), RewardSpec::driving_human()] {
                let total = total_reward(&spec, &env, &xi, &ur, &uh).unwrap();
                let mut oracle = 0.0;
                for s in xi.states() {
                    let mut r = spec.speed_sign * s.human.speed * (s.human.heading - PI / 2.0).cos();
                    if s.robot.distance(&s.human) < 2.0 { r -= spec.collision_weight; }
                    if spec.offroad_weight > 0.0 && !(s.human.x.abs() <= 4.0 && s.human.y >= -30.0 && s.human.y <= 150.0) {
                        r -= spec.offroad_weight;
                    }
                    oracle += r;
                }
                prop_assert!((total - oracle).abs() < 1e-12);
                let head: f64 = xi.states()[..split].iter().map(|s| spec.step_reward(&env, s)).sum();
                let tail: f64 = xi.states()[split..].iter().map(|s| spec.step_reward(&env, s)).sum();
                prop_assert!((total - (head + tail)).abs() < 1e-9);
            }
        }

        #[test]
        fn collision_strictly_lowers_reward(progress in -10.0f64..10.0, off in any::<bool>()) {
            for spec in [RewardSpec::driving_robot(), RewardSpec::driving_human(),
                         RewardSpec::corridor_robot(), RewardSpec::corridor_human()] {
                prop_assert!(spec.step_value(progress, off, true) < spec.step_value(progress, off, false));
            }
        }

        #[test]
        fn speed_term_direction(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assume!(a < b);
            let d = RewardSpec::driving_robot();
            prop_assert!(d.step_value(a, false, false) > d.step_value(b, false, false));
            let c = RewardSpec::corridor_robot();
            prop_assert!(c.step_value(a, false, false) < c.step_value(b, false, false));
        }
    }
}

//! Simulated humans. Each one commits to a trajectory from its candidate set
//! at the start of an interaction; they differ in what they assume the robot
//! will do.
//!
//! * Stackelberg — best response to the robot's actual plan.
//! * Memory — best response to the average robot path of the last `k`
//!   interactions, treated as non-reactive.
//! * Belief — for every coordination hypothesis, predicts how a robot with
//!   that reward would react to each of its own candidates and maximizes the
//!   belief-weighted reward.
//! * Yielder / Passer — scripted stand-ins: a best response to a
//!   constant-velocity robot with the collision weight scaled up or down.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, BeliefError, ObservationModel};
use crate::planner::{argmax, AgentPath, CandidateSet, Objective, PlannerError, Scene};
use crate::rewards::RewardSpec;
use crate::world::{ActionTrajectory, Agent, AgentState, Environment, InteractionTrace, WorldState};

#[derive(Debug, Error)]
pub enum HumanError {
    #[error("the stackelberg human needs the robot's committed plan")]
    MissingRobotPlan,
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("invalid human configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, HumanError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanKind {
    Stackelberg,
    Memory,
    Belief,
    Yielder,
    Passer,
    /// A person driving through a live session; never simulated.
    Live,
}

impl HumanKind {
    pub const ALL: [HumanKind; 6] = [
        HumanKind::Stackelberg,
        HumanKind::Memory,
        HumanKind::Belief,
        HumanKind::Yielder,
        HumanKind::Passer,
        HumanKind::Live,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HumanKind::Stackelberg => "stackelberg",
            HumanKind::Memory => "memory",
            HumanKind::Belief => "belief",
            HumanKind::Yielder => "yielder",
            HumanKind::Passer => "passer",
            HumanKind::Live => "live",
        }
    }
}

impl fmt::Display for HumanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HumanKind {
    type Err = HumanError;

    fn from_str(s: &str) -> Result<HumanKind> {
        HumanKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HumanError::Config(format!("unknown human {s:?}")))
    }
}

/// Collision-weight multipliers of the scripted stand-ins.
pub const YIELDER_SCALE: f64 = 10.0;
pub const PASSER_SCALE: f64 = 0.1;

/// Robot paths and actions of past interactions, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionHistory {
    robot_paths: Vec<Vec<AgentState>>,
    robot_actions: Vec<ActionTrajectory>,
}

impl InteractionHistory {
    pub fn new() -> InteractionHistory {
        InteractionHistory::default()
    }

    pub fn push(&mut self, robot_path: Vec<AgentState>, robot_actions: ActionTrajectory) {
        self.robot_paths.push(robot_path);
        self.robot_actions.push(robot_actions);
    }

    pub fn len(&self) -> usize {
        self.robot_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robot_paths.is_empty()
    }

    pub fn robot_paths(&self) -> &[Vec<AgentState>] {
        &self.robot_paths
    }

    pub fn robot_actions(&self) -> &[ActionTrajectory] {
        &self.robot_actions
    }
}

/// The robot path the memory human expects: the element-wise mean of the
/// last `min(k, n)` robot paths (headings averaged as unit vectors), or a
/// constant-velocity extrapolation of `robot_start` with no history. Always
/// `len` states long; a short mean is padded with its final state.
pub fn predict_robot_memory(
    history: &InteractionHistory,
    k: usize,
    env: &Environment,
    robot_start: &AgentState,
    len: usize,
) -> Vec<AgentState> {
    let window = &history.robot_paths[history.len().saturating_sub(k.max(1))..];
    if window.is_empty() {
        let (c, s) = (robot_start.heading.cos(), robot_start.heading.sin());
        return (0..len)
            .map(|t| {
                let d = robot_start.speed * env.dt * t as f64;
                AgentState {
                    x: robot_start.x + d * c,
                    y: robot_start.y + d * s,
                    ..*robot_start
                }
            })
            .collect();
    }
    let common = window.iter().map(Vec::len).min().unwrap_or(0);
    let n = window.len() as f64;
    let mut mean: Vec<AgentState> = (0..common.min(len))
        .map(|t| {
            let (mut x, mut y, mut c, mut s, mut v) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for path in window {
                let a = &path[t];
                x += a.x;
                y += a.y;
                c += a.heading.cos();
                s += a.heading.sin();
                v += a.speed;
            }
            let heading = if c == 0.0 && s == 0.0 { 0.0 } else { s.atan2(c) };
            AgentState {
                x: x / n,
                y: y / n,
                heading,
                speed: v / n,
            }
        })
        .collect();
    if let Some(&last) = mean.last() {
        mean.resize(len, last);
    }
    mean
}

#[derive(Debug, Clone)]
pub struct BeliefState {
    pub belief: Belief,
    pub observation: Arc<ObservationModel>,
}

#[derive(Debug, Clone)]
pub struct HumanModel {
    kind: HumanKind,
    /// The human's own reward (already scaled for the stand-ins).
    spec: RewardSpec,
    memory_window: usize,
    history: InteractionHistory,
    belief: Option<BeliefState>,
}

impl HumanModel {
    fn with(kind: HumanKind, spec: RewardSpec) -> HumanModel {
        HumanModel {
            kind,
            spec,
            memory_window: 3,
            history: InteractionHistory::new(),
            belief: None,
        }
    }

    pub fn stackelberg(spec: RewardSpec) -> HumanModel {
        HumanModel::with(HumanKind::Stackelberg, spec)
    }

    pub fn memory(spec: RewardSpec, window: usize) -> Result<HumanModel> {
        if window == 0 {
            return Err(HumanError::Config("memory window must be at least 1".into()));
        }
        Ok(HumanModel {
            memory_window: window,
            ..HumanModel::with(HumanKind::Memory, spec)
        })
    }

    pub fn belief(spec: RewardSpec, prior: Belief, observation: Arc<ObservationModel>) -> Result<HumanModel> {
        observation.validate()?;
        if prior.len() != observation.hypotheses.len() {
            return Err(BeliefError::SizeMismatch {
                belief: prior.len(),
                hypotheses: observation.hypotheses.len(),
            }
            .into());
        }
        Ok(HumanModel {
            belief: Some(BeliefState {
                belief: prior,
                observation,
            }),
            ..HumanModel::with(HumanKind::Belief, spec)
        })
    }

    pub fn yielder(spec: RewardSpec) -> HumanModel {
        let w = spec.collision_weight * YIELDER_SCALE;
        HumanModel::with(HumanKind::Yielder, spec.with_collision_weight(w))
    }

    pub fn passer(spec: RewardSpec) -> HumanModel {
        let w = spec.collision_weight * PASSER_SCALE;
        HumanModel::with(HumanKind::Passer, spec.with_collision_weight(w))
    }

    pub fn kind(&self) -> HumanKind {
        self.kind
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn history(&self) -> &InteractionHistory {
        &self.history
    }

    pub fn belief_state(&self) -> Option<&Belief> {
        self.belief.as_ref().map(|b| &b.belief)
    }

    pub fn memory_window(&self) -> usize {
        self.memory_window
    }
}

/// The human's trajectory for an interaction starting at `s0`. `robot_plan`
/// is the robot's committed plan and is required for the Stackelberg kind.
pub fn human_act(
    model: &HumanModel,
    env: &Environment,
    s0: &WorldState,
    robot_plan: Option<&ActionTrajectory>,
    candidates: &CandidateSet,
) -> Result<ActionTrajectory> {
    Ok(plan_human(model, env, s0, 0, robot_plan, candidates)?.actions)
}

/// A committed human trajectory and the robot path the human expects
/// alongside it, both starting at the state the plan was made in.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanPlan {
    pub index: usize,
    pub actions: ActionTrajectory,
    pub expected_robot: Vec<AgentState>,
}

/// Plans from state `s`, `k` steps into the interaction. `robot_plan` is the
/// robot's committed plan from `s` on (Stackelberg kind only).
///
/// Past `k = 0` the memory human re-anchors its averaged path at the robot's
/// actual position, keeping the remembered motion from step `k` on.
pub fn plan_human(
    model: &HumanModel,
    env: &Environment,
    s: &WorldState,
    k: usize,
    robot_plan: Option<&ActionTrajectory>,
    candidates: &CandidateSet,
) -> Result<HumanPlan> {
    let len = candidates.horizon_len();
    let respond = |expected: Vec<AgentState>| -> HumanPlan {
        let robot = AgentPath::from_states(env, Agent::Robot, expected);
        let choice = argmax(candidates.trajectories().iter().map(|u| {
            let h = AgentPath::rollout(env, Agent::Human, &s.human, u);
            crate::planner::pair_reward(env, &model.spec, &robot, &h)
        }))
        .expect("candidate sets are nonempty");
        HumanPlan {
            index: choice.index,
            actions: candidates.get(choice.index).clone(),
            expected_robot: robot.states,
        }
    };
    match model.kind {
        HumanKind::Stackelberg => {
            let plan = robot_plan.ok_or(HumanError::MissingRobotPlan)?;
            Ok(respond(env.agent_path(&s.robot, &plan.resized(len))))
        }
        HumanKind::Memory => Ok(respond(memory_expectation(
            &model.history,
            model.memory_window,
            env,
            &s.robot,
            k,
            len,
        ))),
        HumanKind::Yielder | HumanKind::Passer => Ok(respond(predict_robot_memory(
            &InteractionHistory::new(),
            1,
            env,
            &s.robot,
            len,
        ))),
        HumanKind::Belief => {
            let state = model.belief.as_ref().expect("belief kind carries a belief");
            belief_response(env, s, &model.spec, state, candidates)
        }
        HumanKind::Live => Err(HumanError::Config("live humans are not simulated".into())),
    }
}

/// Memory prediction for steps `k..k + len`, shifted to start at `robot_now`
/// when `k > 0`.
fn memory_expectation(
    history: &InteractionHistory,
    window: usize,
    env: &Environment,
    robot_now: &AgentState,
    k: usize,
    len: usize,
) -> Vec<AgentState> {
    if k == 0 || history.is_empty() {
        return predict_robot_memory(history, window, env, robot_now, len);
    }
    let mean = predict_robot_memory(history, window, env, robot_now, k + len);
    let (dx, dy) = (robot_now.x - mean[k].x, robot_now.y - mean[k].y);
    mean[k..]
        .iter()
        .map(|a| AgentState {
            x: a.x + dx,
            y: a.y + dy,
            ..*a
        })
        .collect()
}

/// `resp_θ(j)`: how a robot optimizing hypothesis `θ` would react to human
/// candidate `j`, for every `j`. Ties go to the robot candidate closest to
/// the robot's Stackelberg plan under `θ`, then to the lowest index.
pub fn predicted_reactions(scene: &Scene<'_>, hypothesis: &RewardSpec, human_spec: &RewardSpec) -> Vec<usize> {
    let nominal = scene.stackelberg(&Objective::plain(*hypothesis), human_spec).robot_index;
    let nominal_path = &scene.robot_paths[nominal];
    let closeness: Vec<f64> = scene
        .robot_paths
        .iter()
        .map(|p| p.position_distance(nominal_path))
        .collect();
    (0..scene.human_paths.len())
        .into_par_iter()
        .map(|j| {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..scene.robot_paths.len() {
                let r = scene.reward(hypothesis, i, j);
                best = match best {
                    None => Some((i, r)),
                    Some((b, rb)) if r > rb || (r == rb && closeness[i] < closeness[b]) => Some((i, r)),
                    keep => keep,
                };
            }
            best.expect("candidate sets are nonempty").0
        })
        .collect()
}

fn belief_response(
    env: &Environment,
    s: &WorldState,
    spec: &RewardSpec,
    state: &BeliefState,
    candidates: &CandidateSet,
) -> Result<HumanPlan> {
    let robot_candidates = &state.observation.alternatives;
    let scene = Scene::new(env, *s, robot_candidates, candidates)?;
    let weights = state.belief.weights();
    let mut expected = vec![0.0; candidates.len()];
    let mut reactions = Vec::with_capacity(weights.len());
    for (k, hypothesis) in state.observation.hypotheses.iter().enumerate() {
        if weights[k] == 0.0 {
            reactions.push(None);
            continue;
        }
        let r = predicted_reactions(&scene, hypothesis, spec);
        for (j, e) in expected.iter_mut().enumerate() {
            *e += weights[k] * scene.reward(spec, r[j], j);
        }
        reactions.push(Some(r));
    }
    let choice = argmax(expected).expect("candidate sets are nonempty");
    // The robot path the human deems most likely: the reaction under the
    // most probable hypothesis.
    let likeliest = argmax(weights.iter().copied()).expect("belief is nonempty").index;
    let reaction = reactions[likeliest].as_ref().expect("positive weight")[choice.index];
    Ok(HumanPlan {
        index: choice.index,
        actions: candidates.get(choice.index).clone(),
        expected_robot: scene.robot_paths[reaction].states.clone(),
    })
}

/// Folds a completed interaction into the human's memory or belief.
pub fn observe_interaction(model: &mut HumanModel, env: &Environment, trace: &InteractionTrace) -> Result<()> {
    match model.kind {
        HumanKind::Memory => model
            .history
            .push(trace.states.path(Agent::Robot), trace.robot.clone()),
        HumanKind::Belief => {
            let state = model.belief.as_mut().expect("belief kind carries a belief");
            let len = state.observation.interaction_len;
            let prepared = state.observation.prepare(env, trace.start());
            state.belief = prepared.update_actions(&state.belief, &trace.robot.resized(len), &trace.human.resized(len))?;
        }
        HumanKind::Stackelberg | HumanKind::Yielder | HumanKind::Passer | HumanKind::Live => {}
    }
    Ok(())
}

//! Robot controllers: the Stackelberg baseline and three ways of staying
//! unpredictable — action noise under a reward floor, a state-entropy bonus
//! against a buffer of past trajectories, and a bonus on the entropy of the
//! human's (modeled) belief after the interaction.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, BeliefError, ObservationModel, PreparedObservation};
use crate::planner::{
    AgentPath, CandidatePair, CandidateSet, Objective, Plan, PlanRequest, PlanSource, PlannerError, Scene,
    StackelbergSolution, TrajectoryBonus,
};
use crate::rewards::RewardSpec;
use crate::world::{ActionTrajectory, Agent, AgentState, Environment, InteractionTrace, StateTrajectory, WorldState};

#[derive(Debug, Error)]
pub enum InfluenceError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("invalid controller configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, InfluenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Stackelberg,
    Noise,
    StateEntropy,
    BeliefEntropy,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Stackelberg,
        ControllerKind::Noise,
        ControllerKind::StateEntropy,
        ControllerKind::BeliefEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Stackelberg => "stackelberg",
            ControllerKind::Noise => "noise",
            ControllerKind::StateEntropy => "state_entropy",
            ControllerKind::BeliefEntropy => "belief_entropy",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = InfluenceError;

    fn from_str(s: &str) -> Result<ControllerKind> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| InfluenceError::Config(format!("unknown controller {s:?}")))
    }
}

/// What every controller plans with: the environment, both candidate sets and
/// the reward the robot optimizes and attributes to the human.
#[derive(Debug, Clone)]
pub struct PlanningContext {
    pub env: Environment,
    pub robot_candidates: CandidateSet,
    pub human_candidates: CandidateSet,
    pub robot_spec: RewardSpec,
    pub human_spec: RewardSpec,
    /// Dynamics steps per interaction.
    pub steps: usize,
}

impl PlanningContext {
    pub fn scene(&self, s: WorldState) -> Result<Scene<'_>> {
        Ok(Scene::new(&self.env, s, &self.robot_candidates, &self.human_candidates)?)
    }

    /// Actions (and states) per recorded interaction.
    pub fn interaction_len(&self) -> usize {
        self.steps + 1
    }

    fn plan_for(&self, sol: &StackelbergSolution) -> Plan {
        Plan {
            robot: self.robot_candidates.get(sol.robot_index).clone(),
            predicted_human: self.human_candidates.get(sol.human_index).clone(),
        }
    }
}

pub fn plan_stackelberg(scene: &Scene<'_>, robot_spec: &RewardSpec, human_spec: &RewardSpec) -> StackelbergSolution {
    scene.stackelberg(&Objective::plain(*robot_spec), human_spec)
}

// ---------------------------------------------------------------------------
// State entropy

/// Floor on the nearest-neighbour distance so identical trajectories score
/// `ln(1e-6)` rather than `-inf`.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Robot and human positions `(x_R, y_R, x_H, y_H)` per time index.
pub type JointPositions = Vec<[f64; 4]>;

pub fn joint_positions(states: &StateTrajectory) -> JointPositions {
    states
        .states()
        .iter()
        .map(|s| [s.robot.x, s.robot.y, s.human.x, s.human.y])
        .collect()
}

/// L2 distance over the concatenated positions, aligned by time index over
/// the common length.
pub fn trajectory_distance(a: &[[f64; 4]], b: &[[f64; 4]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Bounded FIFO of realized joint trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    capacity: usize,
    entries: VecDeque<JointPositions>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> TrajectoryBuffer {
        TrajectoryBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &JointPositions> {
        self.entries.iter()
    }

    pub fn insert(&mut self, xi: &StateTrajectory) {
        self.insert_positions(joint_positions(xi));
    }

    /// Evicts the oldest entry when full.
    pub fn insert_positions(&mut self, xi: JointPositions) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(xi);
    }

    pub fn nearest_distance(&self, xi: &[[f64; 4]]) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| trajectory_distance(xi, e))
            .reduce(f64::min)
    }
}

/// `ln ‖ξ_c − ξ‖` for the nearest buffered `ξ_c`; 0 with an empty buffer.
pub fn state_entropy_estimate(xi: &StateTrajectory, buffer: &TrajectoryBuffer) -> f64 {
    positions_entropy(&joint_positions(xi), buffer)
}

pub fn positions_entropy(xi: &[[f64; 4]], buffer: &TrajectoryBuffer) -> f64 {
    match buffer.nearest_distance(xi) {
        Some(d) => d.max(MIN_DISTANCE).ln(),
        None => 0.0,
    }
}

/// Realized states `s^0..s^{k-1}` before the current one.
fn prefix_states(env: &Environment, request: &PlanRequest<'_>) -> Vec<WorldState> {
    let k = request.robot_prefix.len().min(request.human_prefix.len());
    let mut out = Vec::with_capacity(k);
    let mut s = request.interaction_start;
    for t in 0..k {
        out.push(s);
        s = env.step(&s, request.robot_prefix.actions()[t], request.human_prefix.actions()[t]);
    }
    out
}

struct StateEntropyBonus<'a> {
    buffer: &'a TrajectoryBuffer,
    prefix: JointPositions,
    total_len: usize,
}

impl TrajectoryBonus for StateEntropyBonus<'_> {
    fn bonus(&self, pair: &CandidatePair<'_, '_>) -> f64 {
        let mut xi = self.prefix.clone();
        xi.extend(
            pair.robot_path()
                .states
                .iter()
                .zip(&pair.human_path().states)
                .map(|(r, h)| [r.x, r.y, h.x, h.y]),
        );
        xi.truncate(self.total_len);
        positions_entropy(&xi, self.buffer)
    }
}

/// Stackelberg plan with `lambda * ln ‖ξ_c − ξ‖` added to the robot's
/// objective. `prefix` holds the already realized states of the current
/// interaction; candidate rollouts are appended to it before comparison.
pub fn plan_state_entropy(
    scene: &Scene<'_>,
    robot_spec: &RewardSpec,
    human_spec: &RewardSpec,
    lambda: f64,
    buffer: &TrajectoryBuffer,
    prefix: &[WorldState],
    total_len: usize,
) -> StackelbergSolution {
    let bonus = StateEntropyBonus {
        buffer,
        prefix: prefix
            .iter()
            .map(|s| [s.robot.x, s.robot.y, s.human.x, s.human.y])
            .collect(),
        total_len,
    };
    scene.stackelberg(&Objective::with_bonus(*robot_spec, &bonus, lambda), human_spec)
}

// ---------------------------------------------------------------------------
// Noise

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_turn: f64,
    pub sigma_accel: f64,
    /// Reward floor every perturbed step must clear.
    pub delta: f64,
    pub max_resamples: usize,
    /// Fraction of the remaining predicted steps that must clear `delta`.
    pub chance_level: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_turn: 0.5,
            sigma_accel: 1.0,
            delta: -10.0,
            max_resamples: 20,
            chance_level: 0.95,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_turn >= 0.0 && self.sigma_accel >= 0.0)
            || !self.sigma_turn.is_finite()
            || !self.sigma_accel.is_finite()
        {
            return Err(InfluenceError::Config("noise sigmas must be finite and non-negative".into()));
        }
        if self.max_resamples == 0 {
            return Err(InfluenceError::Config("max_resamples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.chance_level) {
            return Err(InfluenceError::Config("chance_level must lie in [0, 1]".into()));
        }
        if self.delta.is_nan() {
            return Err(InfluenceError::Config("delta is NaN".into()));
        }
        Ok(())
    }
}

/// One planned step of a noisy plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseStep {
    pub step: usize,
    /// Applied perturbation after clamping; exactly zero on fallback.
    pub noise_turn: f64,
    pub noise_accel: f64,
    /// Robot reward of the state the action leads to, against the frozen
    /// predicted human response.
    pub predicted_reward: f64,
    pub accepted: bool,
    pub draws: usize,
}

impl NoiseStep {
    pub fn is_zero(&self) -> bool {
        self.noise_turn == 0.0 && self.noise_accel == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct NoisyPlan {
    pub base: StackelbergSolution,
    pub robot: ActionTrajectory,
    pub predicted_human: ActionTrajectory,
    pub log: Vec<NoiseStep>,
}

fn robot_step_rewards(env: &Environment, spec: &RewardSpec, robot: &[AgentState], human: &AgentPath) -> Vec<f64> {
    robot
        .iter()
        .zip(&human.states)
        .enumerate()
        .map(|(t, (r, h))| {
            let progress = match spec.speed_agent {
                Agent::Robot => env.progress_rate(r, Agent::Robot),
                Agent::Human => human.progress[t],
            };
            spec.step_value(progress, !env.on_road_at(r.x, r.y), env.collides(r, h))
        })
        .collect()
}

/// Perturbs the Stackelberg plan step by step. A draw for step `t` is kept
/// only if the reward of the state it leads to is at least `delta` and at
/// least `chance_level` of the remaining predicted steps clear `delta` too;
/// after `max_resamples` rejections the step keeps the unperturbed action.
pub fn plan_noise<R: Rng + ?Sized>(
    scene: &Scene<'_>,
    robot_spec: &RewardSpec,
    human_spec: &RewardSpec,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> NoisyPlan {
    let env = scene.env;
    let base = plan_stackelberg(scene, robot_spec, human_spec);
    let human = &scene.human_paths[base.human_index];
    let base_actions = scene.robot_candidates.get(base.robot_index).actions().to_vec();
    let n = base_actions.len();
    let mut actions = base_actions.clone();
    let mut states = scene.robot_paths[base.robot_index].states.clone();
    let mut log = Vec::with_capacity(n);

    // Reward consequences of action `t`: the states from `t + 1` on (or the
    // state at `t` itself for the final, never-integrated action).
    let judge = |states: &[AgentState], t: usize| -> (f64, bool) {
        let rewards = robot_step_rewards(env, robot_spec, states, human);
        let from = (t + 1).min(n - 1);
        let tail = &rewards[from..];
        let ok = tail.iter().filter(|r| **r >= cfg.delta).count() as f64;
        let next = tail[0];
        (next, next >= cfg.delta && ok >= cfg.chance_level * tail.len() as f64)
    };

    for t in 0..n {
        let b = base_actions[t];
        let mut chosen = None;
        for draw in 1..=cfg.max_resamples {
            let zt: f64 = rng.sample(StandardNormal);
            let za: f64 = rng.sample(StandardNormal);
            let u = env.action(b.turn_rate() + cfg.sigma_turn * zt, b.accel() + cfg.sigma_accel * za);
            let mut trial = states.clone();
            let mut a = trial[t];
            for k in t..n - 1 {
                a = env.advance(&a, if k == t { u } else { actions[k] });
                trial[k + 1] = a;
            }
            let (reward, ok) = judge(&trial, t);
            if ok {
                chosen = Some((u, trial, reward, draw));
                break;
            }
        }
        match chosen {
            Some((u, trial, reward, draws)) => {
                actions[t] = u;
                states = trial;
                log.push(NoiseStep {
                    step: t,
                    noise_turn: u.turn_rate() - b.turn_rate(),
                    noise_accel: u.accel() - b.accel(),
                    predicted_reward: reward,
                    accepted: true,
                    draws,
                });
            }
            None => {
                let (reward, _) = judge(&states, t);
                log.push(NoiseStep {
                    step: t,
                    noise_turn: 0.0,
                    noise_accel: 0.0,
                    predicted_reward: reward,
                    accepted: false,
                    draws: cfg.max_resamples,
                });
            }
        }
    }

    NoisyPlan {
        base,
        robot: ActionTrajectory::new(actions),
        predicted_human: scene.human_candidates.get(base.human_index).clone(),
        log,
    }
}

// ---------------------------------------------------------------------------
// Belief entropy

/// The whole interaction as it would look if the robot switched to
/// `robot_tail` (and the human to `human_tail`) now: prefix plus tail,
/// padded to `len` and rolled out from the interaction start.
pub fn hypothetical_paths(
    env: &Environment,
    start: &WorldState,
    robot_prefix: &ActionTrajectory,
    human_prefix: &ActionTrajectory,
    robot_tail: &ActionTrajectory,
    human_tail: &ActionTrajectory,
    len: usize,
) -> (AgentPath, AgentPath) {
    let robot = robot_prefix.spliced(robot_prefix.len(), robot_tail, len);
    let human = human_prefix.spliced(human_prefix.len(), human_tail, len);
    (
        AgentPath::rollout(env, Agent::Robot, &start.robot, &robot),
        AgentPath::rollout(env, Agent::Human, &start.human, &human),
    )
}

struct BeliefEntropyBonus<'a> {
    prepared: &'a PreparedObservation<'a>,
    belief: &'a Belief,
    robot_prefix: &'a ActionTrajectory,
    human_prefix: &'a ActionTrajectory,
    len: usize,
}

impl BeliefEntropyBonus<'_> {
    fn posterior(&self, pair: &CandidatePair<'_, '_>) -> std::result::Result<Belief, BeliefError> {
        let (r, h) = hypothetical_paths(
            pair.scene.env,
            self.prepared.start(),
            self.robot_prefix,
            self.human_prefix,
            pair.robot_actions(),
            pair.human_actions(),
            self.len,
        );
        self.prepared.update(self.belief, &r, &h)
    }
}

impl TrajectoryBonus for BeliefEntropyBonus<'_> {
    fn bonus(&self, pair: &CandidatePair<'_, '_>) -> f64 {
        // A degenerate posterior carries no information; score it as certain.
        self.posterior(pair).map(|b| b.entropy()).unwrap_or(0.0)
    }
}

/// Stackelberg plan with `lambda * H(b')` added, where `b'` is the human's
/// posterior after the interaction the candidate (with its predicted human
/// response) would complete. Also returns the selected candidate's `b'`.
#[allow(clippy::too_many_arguments)]
pub fn plan_belief_entropy(
    scene: &Scene<'_>,
    robot_spec: &RewardSpec,
    human_spec: &RewardSpec,
    lambda: f64,
    belief: &Belief,
    prepared: &PreparedObservation<'_>,
    robot_prefix: &ActionTrajectory,
    human_prefix: &ActionTrajectory,
    len: usize,
) -> Result<(StackelbergSolution, Belief)> {
    let bonus = BeliefEntropyBonus {
        prepared,
        belief,
        robot_prefix,
        human_prefix,
        len,
    };
    let sol = scene.stackelberg(&Objective::with_bonus(*robot_spec, &bonus, lambda), human_spec);
    let pair = CandidatePair {
        scene,
        robot_index: sol.robot_index,
        human_index: sol.human_index,
    };
    let next = bonus.posterior(&pair)?;
    Ok((sol, next))
}

// ---------------------------------------------------------------------------
// Controllers

#[derive(Debug, Clone)]
pub enum ControllerState {
    Stackelberg,
    Noise {
        cfg: NoiseConfig,
        rng: ChaCha8Rng,
        log: Vec<NoiseStep>,
    },
    StateEntropy {
        lambda: f64,
        buffer: TrajectoryBuffer,
    },
    BeliefEntropy {
        lambda: f64,
        belief: Belief,
        observation: Arc<ObservationModel>,
    },
}

/// A robot controller bound to one simulation. Implements [`PlanSource`] so
/// it can drive a [`crate::planner::ReplanLoop`].
#[derive(Debug, Clone)]
pub struct Controller {
    ctx: Arc<PlanningContext>,
    state: ControllerState,
    last: Option<StackelbergSolution>,
    last_posterior: Option<Belief>,
}

impl Controller {
    pub fn new(ctx: Arc<PlanningContext>, state: ControllerState) -> Result<Controller> {
        match &state {
            ControllerState::Noise { cfg, .. } => cfg.validate()?,
            ControllerState::StateEntropy { lambda, .. } | ControllerState::BeliefEntropy { lambda, .. }
                if !(*lambda >= 0.0 && lambda.is_finite()) =>
            {
                return Err(InfluenceError::Config(format!("lambda must be finite and >= 0, got {lambda}")));
            }
            ControllerState::BeliefEntropy { belief, observation, .. } => {
                observation.validate()?;
                if belief.len() != observation.hypotheses.len() {
                    return Err(BeliefError::SizeMismatch {
                        belief: belief.len(),
                        hypotheses: observation.hypotheses.len(),
                    }
                    .into());
                }
            }
            _ => {}
        }
        Ok(Controller {
            ctx,
            state,
            last: None,
            last_posterior: None,
        })
    }

    pub fn stackelberg(ctx: Arc<PlanningContext>) -> Controller {
        Controller::new(ctx, ControllerState::Stackelberg).expect("stackelberg needs no validation")
    }

    pub fn kind(&self) -> ControllerKind {
        match self.state {
            ControllerState::Stackelberg => ControllerKind::Stackelberg,
            ControllerState::Noise { .. } => ControllerKind::Noise,
            ControllerState::StateEntropy { .. } => ControllerKind::StateEntropy,
            ControllerState::BeliefEntropy { .. } => ControllerKind::BeliefEntropy,
        }
    }

    pub fn context(&self) -> &PlanningContext {
        &self.ctx
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Solution behind the most recent plan.
    pub fn last_solution(&self) -> Option<&StackelbergSolution> {
        self.last.as_ref()
    }

    /// Belief-entropy only: the simulated posterior of the last selected plan.
    pub fn last_posterior(&self) -> Option<&Belief> {
        self.last_posterior.as_ref()
    }

    /// Belief-entropy only: the robot's model of the human's current belief.
    pub fn modeled_belief(&self) -> Option<&Belief> {
        match &self.state {
            ControllerState::BeliefEntropy { belief, .. } => Some(belief),
            _ => None,
        }
    }

    pub fn noise_log(&self) -> &[NoiseStep] {
        match &self.state {
            ControllerState::Noise { log, .. } => log,
            _ => &[],
        }
    }

    pub fn buffer(&self) -> Option<&TrajectoryBuffer> {
        match &self.state {
            ControllerState::StateEntropy { buffer, .. } => Some(buffer),
            _ => None,
        }
    }

    /// Folds a completed interaction into the controller's memory.
    pub fn observe(&mut self, trace: &InteractionTrace) -> Result<()> {
        match &mut self.state {
            ControllerState::StateEntropy { buffer, .. } => buffer.insert(&trace.states),
            ControllerState::BeliefEntropy {
                belief, observation, ..
            } => {
                let len = self.ctx.interaction_len();
                let prepared = observation.prepare(&self.ctx.env, trace.start());
                *belief = prepared.update_actions(belief, &trace.robot.resized(len), &trace.human.resized(len))?;
            }
            ControllerState::Stackelberg | ControllerState::Noise { .. } => {}
        }
        Ok(())
    }
}

impl PlanSource for Controller {
    type Error = InfluenceError;

    fn plan(&mut self, request: &PlanRequest<'_>) -> Result<Plan> {
        let ctx = Arc::clone(&self.ctx);
        let scene = ctx.scene(request.state)?;
        let (rs, hs) = (&ctx.robot_spec, &ctx.human_spec);
        let plan = match &mut self.state {
            ControllerState::Stackelberg => {
                let sol = plan_stackelberg(&scene, rs, hs);
                self.last = Some(sol);
                ctx.plan_for(&sol)
            }
            ControllerState::Noise { cfg, rng, log } => {
                let noisy = plan_noise(&scene, rs, hs, cfg, rng);
                log.extend_from_slice(&noisy.log);
                self.last = Some(noisy.base);
                Plan {
                    robot: noisy.robot,
                    predicted_human: noisy.predicted_human,
                }
            }
            ControllerState::StateEntropy { lambda, buffer } => {
                let prefix = prefix_states(&ctx.env, request);
                let sol = plan_state_entropy(&scene, rs, hs, *lambda, buffer, &prefix, ctx.interaction_len());
                self.last = Some(sol);
                ctx.plan_for(&sol)
            }
            ControllerState::BeliefEntropy {
                lambda,
                belief,
                observation,
            } => {
                let prepared = observation.prepare(&ctx.env, &request.interaction_start);
                let (sol, next) = plan_belief_entropy(
                    &scene,
                    rs,
                    hs,
                    *lambda,
                    belief,
                    &prepared,
                    request.robot_prefix,
                    request.human_prefix,
                    ctx.interaction_len(),
                )?;
                self.last = Some(sol);
                self.last_posterior = Some(next);
                ctx.plan_for(&sol)
            }
        };
        Ok(plan)
    }
}

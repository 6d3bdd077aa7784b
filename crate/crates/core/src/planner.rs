//! Candidate generation, follower best response and the leader's bi-level
//! (Stackelberg) optimisation, solved by exhaustive enumeration.
//!
//! Ties are always broken toward the lowest candidate index. Candidate
//! evaluation may run in parallel; the argmax is taken sequentially afterwards
//! so the result never depends on evaluation order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{RewardError, RewardSpec};
use crate::world::{
    Action, ActionTrajectory, Agent, AgentState, EnvKind, Environment, WorldError, WorldState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("generator config error: {0}")]
    Config(String),
    #[error("candidate lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

pub type Result<T> = std::result::Result<T, PlannerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub segments: usize,
    pub grid_accels: Vec<f64>,
    pub grid_turn_rates: Vec<f64>,
    /// Planning horizon `T`; candidates carry `T + 1` actions.
    pub horizon: usize,
}

impl GeneratorConfig {
    /// Two segments over a 3x3 grid `{-a_max, 0, a_max} x {-w, 0, w}`.
    pub fn for_env(env: &Environment) -> GeneratorConfig {
        let a = env.limits.a_max;
        let w = default_turn_rate(env.kind);
        GeneratorConfig {
            segments: 2,
            grid_accels: vec![-a, 0.0, a],
            grid_turn_rates: vec![-w, 0.0, w],
            horizon: 49,
        }
    }

    pub fn segment_length(&self) -> Result<usize> {
        let total = self.horizon + 1;
        if self.horizon < 1 {
            return Err(PlannerError::Config("horizon must be at least 1".into()));
        }
        if self.segments == 0 || total % self.segments != 0 {
            return Err(PlannerError::Config(format!(
                "{} segments do not evenly divide {} actions",
                self.segments, total
            )));
        }
        if self.grid_accels.is_empty() || self.grid_turn_rates.is_empty() {
            return Err(PlannerError::Config("grids must be nonempty".into()));
        }
        Ok(total / self.segments)
    }
}

/// Mild steering rate used for the turn grid; a lane change's worth of
/// lateral motion over the default horizon.
pub fn default_turn_rate(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::Highway => 0.1,
        EnvKind::Intersection => 0.15,
        EnvKind::Roundabout => 0.3,
        EnvKind::Corridor => 0.8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PrimitiveGrid,
    Sampled,
}

/// Ordered candidate trajectories; index order defines tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    trajectories: Vec<ActionTrajectory>,
    provenance: Provenance,
}

impl CandidateSet {
    pub fn new(trajectories: Vec<ActionTrajectory>, provenance: Provenance) -> Result<CandidateSet> {
        let first = trajectories.first().ok_or(PlannerError::EmptyCandidates)?;
        if first.is_empty() {
            return Err(WorldError::EmptyTrajectory.into());
        }
        if let Some(bad) = trajectories.iter().find(|t| t.len() != first.len()) {
            return Err(PlannerError::LengthMismatch(first.len(), bad.len()));
        }
        Ok(CandidateSet {
            trajectories,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Actions per candidate (`T + 1`).
    pub fn horizon_len(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn get(&self, i: usize) -> &ActionTrajectory {
        &self.trajectories[i]
    }

    pub fn trajectories(&self) -> &[ActionTrajectory] {
        &self.trajectories
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn position(&self, traj: &ActionTrajectory) -> Option<usize> {
        self.trajectories.iter().position(|t| t == traj)
    }
}

/// Piecewise-constant primitives: each of `segments` segments holds one
/// (accel, turn) cell of the grid. Candidates are ordered lexicographically by
/// segment cell indices, cells by (accel index, turn index).
pub fn generate_candidates(env: &Environment, params: &GeneratorConfig) -> Result<CandidateSet> {
    let seg_len = params.segment_length()?;
    let cells: Vec<Action> = params
        .grid_accels
        .iter()
        .flat_map(|&a| params.grid_turn_rates.iter().map(move |&w| (w, a)))
        .map(|(w, a)| env.action(w, a))
        .collect();
    let n = cells.len();
    let count = n
        .checked_pow(params.segments as u32)
        .filter(|&c| c <= 1 << 20)
        .ok_or_else(|| PlannerError::Config("candidate set too large".into()))?;
    let trajectories = (0..count)
        .map(|mut code| {
            let mut digits = vec![0; params.segments];
            for d in digits.iter_mut().rev() {
                *d = code % n;
                code /= n;
            }
            digits
                .iter()
                .flat_map(|&d| std::iter::repeat_n(cells[d], seg_len))
                .collect()
        })
        .collect();
    CandidateSet::new(trajectories, Provenance::PrimitiveGrid)
}

/// One agent's path with the per-step terms rewards need.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPath {
    pub agent: Agent,
    pub states: Vec<AgentState>,
    pub progress: Vec<f64>,
    pub off_road: Vec<bool>,
}

impl AgentPath {
    pub fn from_states(env: &Environment, agent: Agent, states: Vec<AgentState>) -> AgentPath {
        let progress = states.iter().map(|a| env.progress_rate(a, agent)).collect();
        let off_road = states.iter().map(|a| !env.on_road_at(a.x, a.y)).collect();
        AgentPath {
            agent,
            states,
            progress,
            off_road,
        }
    }

    pub fn rollout(env: &Environment, agent: Agent, start: &AgentState, actions: &ActionTrajectory) -> AgentPath {
        AgentPath::from_states(env, agent, env.agent_path(start, actions))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// L2 distance over the concatenated positions.
    pub fn position_distance(&self, other: &AgentPath) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Total reward of a joint path; identical, bit for bit, to
/// [`crate::rewards::total_reward`] over the corresponding rollout.
pub fn pair_reward(env: &Environment, spec: &RewardSpec, robot: &AgentPath, human: &AgentPath) -> f64 {
    let progress = match spec.speed_agent {
        Agent::Robot => &robot.progress,
        Agent::Human => &human.progress,
    };
    let off_road = match spec.role {
        Agent::Robot => &robot.off_road,
        Agent::Human => &human.off_road,
    };
    let mut total = 0.0;
    for t in 0..robot.len().min(human.len()) {
        let hit = env.collides(&robot.states[t], &human.states[t]);
        total += spec.step_value(progress[t], off_road[t], hit);
    }
    total
}

/// Number of colliding steps along a joint path.
pub fn collision_steps(env: &Environment, robot: &AgentPath, human: &AgentPath) -> usize {
    robot
        .states
        .iter()
        .zip(&human.states)
        .filter(|(r, h)| env.collides(r, h))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub index: usize,
    pub value: f64,
}

/// Lowest-index argmax.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> Option<Choice> {
    let mut best: Option<Choice> = None;
    for (index, value) in values.into_iter().enumerate() {
        if best.is_none_or(|b| value > b.value) {
            best = Some(Choice { index, value });
        }
    }
    best
}

/// All robot and human candidate paths from one initial state.
#[derive(Debug, Clone)]
pub struct Scene<'a> {
    pub env: &'a Environment,
    pub s0: WorldState,
    pub robot_candidates: &'a CandidateSet,
    pub human_candidates: &'a CandidateSet,
    pub robot_paths: Vec<AgentPath>,
    pub human_paths: Vec<AgentPath>,
}

impl<'a> Scene<'a> {
    pub fn new(
        env: &'a Environment,
        s0: WorldState,
        robot_candidates: &'a CandidateSet,
        human_candidates: &'a CandidateSet,
    ) -> Result<Scene<'a>> {
        if robot_candidates.horizon_len() != human_candidates.horizon_len() {
            return Err(PlannerError::LengthMismatch(
                robot_candidates.horizon_len(),
                human_candidates.horizon_len(),
            ));
        }
        let paths = |agent: Agent, set: &CandidateSet| -> Vec<AgentPath> {
            let start = s0.agent(agent);
            set.trajectories()
                .iter()
                .map(|u| AgentPath::rollout(env, agent, start, u))
                .collect()
        };
        Ok(Scene {
            env,
            s0,
            robot_candidates,
            human_candidates,
            robot_paths: paths(Agent::Robot, robot_candidates),
            human_paths: paths(Agent::Human, human_candidates),
        })
    }

    pub fn reward(&self, spec: &RewardSpec, robot: usize, human: usize) -> f64 {
        pair_reward(self.env, spec, &self.robot_paths[robot], &self.human_paths[human])
    }

    /// Human best response to robot candidate `robot`.
    pub fn best_response(&self, human_spec: &RewardSpec, robot: usize) -> Choice {
        self.best_response_to_path(human_spec, &self.robot_paths[robot])
    }

    /// Human best response to an arbitrary (possibly non-reactive) robot path.
    pub fn best_response_to_path(&self, human_spec: &RewardSpec, robot: &AgentPath) -> Choice {
        argmax(
            self.human_paths
                .iter()
                .map(|h| pair_reward(self.env, human_spec, robot, h)),
        )
        .expect("candidate sets are nonempty by construction")
    }

    /// Best human responses for every robot candidate, in robot-index order.
    pub fn best_responses(&self, human_spec: &RewardSpec) -> Vec<Choice> {
        (0..self.robot_paths.len())
            .into_par_iter()
            .map(|i| self.best_response(human_spec, i))
            .collect()
    }

    /// Solves the bi-level problem over the scene's candidate sets.
    pub fn stackelberg(&self, objective: &Objective<'_>, human_spec: &RewardSpec) -> StackelbergSolution {
        let responses = self.best_responses(human_spec);
        self.stackelberg_with_responses(objective, &responses)
    }

    pub fn stackelberg_with_responses(
        &self,
        objective: &Objective<'_>,
        responses: &[Choice],
    ) -> StackelbergSolution {
        let evaluated: Vec<(f64, f64)> = responses
            .par_iter()
            .enumerate()
            .map(|(i, br)| {
                let base = self.reward(&objective.base, i, br.index);
                let bonus = match objective.bonus {
                    Some(b) if objective.weight != 0.0 => b.bonus(&CandidatePair {
                        scene: self,
                        robot_index: i,
                        human_index: br.index,
                    }),
                    _ => 0.0,
                };
                (base, bonus)
            })
            .collect();
        let choice = argmax(evaluated.iter().map(|&(base, bonus)| objective.combine(base, bonus)))
            .expect("candidate sets are nonempty by construction");
        let (base, bonus) = evaluated[choice.index];
        StackelbergSolution {
            robot_index: choice.index,
            human_index: responses[choice.index].index,
            base_value: base,
            bonus,
            value: choice.value,
        }
    }
}

/// Context handed to a trajectory-level bonus.
pub struct CandidatePair<'s, 'a> {
    pub scene: &'s Scene<'a>,
    pub robot_index: usize,
    pub human_index: usize,
}

impl CandidatePair<'_, '_> {
    pub fn robot_path(&self) -> &AgentPath {
        &self.scene.robot_paths[self.robot_index]
    }

    pub fn human_path(&self) -> &AgentPath {
        &self.scene.human_paths[self.human_index]
    }

    pub fn robot_actions(&self) -> &ActionTrajectory {
        self.scene.robot_candidates.get(self.robot_index)
    }

    pub fn human_actions(&self) -> &ActionTrajectory {
        self.scene.human_candidates.get(self.human_index)
    }
}

pub trait TrajectoryBonus: Sync {
    fn bonus(&self, pair: &CandidatePair<'_, '_>) -> f64;
}

/// Robot objective: base reward plus an optional weighted bonus.
#[derive(Clone, Copy)]
pub struct Objective<'b> {
    pub base: RewardSpec,
    pub bonus: Option<&'b dyn TrajectoryBonus>,
    pub weight: f64,
}

impl<'b> Objective<'b> {
    pub fn plain(base: RewardSpec) -> Objective<'static> {
        Objective {
            base,
            bonus: None,
            weight: 0.0,
        }
    }

    pub fn with_bonus(base: RewardSpec, bonus: &'b dyn TrajectoryBonus, weight: f64) -> Objective<'b> {
        Objective {
            base,
            bonus: Some(bonus),
            weight,
        }
    }

    fn combine(&self, base: f64, bonus: f64) -> f64 {
        if self.bonus.is_some() && self.weight != 0.0 {
            base + self.weight * bonus
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackelbergSolution {
    pub robot_index: usize,
    pub human_index: usize,
    /// Robot total reward without the bonus.
    pub base_value: f64,
    pub bonus: f64,
    pub value: f64,
}

/// `argmax_{u_H} R_H(s0, u_R, u_H)` over `candidates`.
pub fn best_response(
    env: &Environment,
    s0: &WorldState,
    robot: &ActionTrajectory,
    human_spec: &RewardSpec,
    candidates: &CandidateSet,
) -> Result<Choice> {
    if robot.len() != candidates.horizon_len() {
        return Err(PlannerError::LengthMismatch(robot.len(), candidates.horizon_len()));
    }
    let robot_path = AgentPath::rollout(env, Agent::Robot, &s0.robot, robot);
    Ok(argmax(candidates.trajectories().iter().map(|u| {
        let h = AgentPath::rollout(env, Agent::Human, &s0.human, u);
        pair_reward(env, human_spec, &robot_path, &h)
    }))
    .expect("candidate sets are nonempty by construction"))
}

pub fn stackelberg_plan(
    env: &Environment,
    s0: &WorldState,
    objective: &Objective<'_>,
    human_spec: &RewardSpec,
    robot_candidates: &CandidateSet,
    human_candidates: &CandidateSet,
) -> Result<StackelbergSolution> {
    let scene = Scene::new(env, *s0, robot_candidates, human_candidates)?;
    Ok(scene.stackelberg(objective, human_spec))
}

/// A committed robot plan together with the human response it assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub robot: ActionTrajectory,
    pub predicted_human: ActionTrajectory,
}

/// What a planner sees when asked to (re)plan mid-interaction.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    pub state: WorldState,
    pub interaction_start: WorldState,
    pub robot_prefix: &'a ActionTrajectory,
    pub human_prefix: &'a ActionTrajectory,
}

pub trait PlanSource {
    type Error: From<PlannerError>;

    fn plan(&mut self, request: &PlanRequest<'_>) -> std::result::Result<Plan, Self::Error>;
}

/// Receding-horizon execution: every `period` steps the realized human state
/// is compared with the committed plan's prediction; on deviation (or when the
/// plan runs out) the source re-solves from the realized state.
#[derive(Debug, Clone)]
pub struct ReplanLoop {
    period: usize,
    current: Option<ActivePlan>,
    executed_robot: ActionTrajectory,
    executed_human: ActionTrajectory,
    interaction_start: Option<WorldState>,
    replans: usize,
}

#[derive(Debug, Clone)]
struct ActivePlan {
    plan: Plan,
    predicted_human: Vec<AgentState>,
    cursor: usize,
}

/// Tolerance for "the other agent did what the plan predicted".
pub const DEVIATION_TOL: f64 = 1e-9;

/// Whether a realized state departs from the expected one.
pub fn deviates(expected: &AgentState, actual: &AgentState) -> bool {
    (expected.x - actual.x).abs() > DEVIATION_TOL
        || (expected.y - actual.y).abs() > DEVIATION_TOL
        || (expected.heading - actual.heading).abs() > DEVIATION_TOL
        || (expected.speed - actual.speed).abs() > DEVIATION_TOL
}

impl ReplanLoop {
    pub fn new(period: usize) -> ReplanLoop {
        ReplanLoop {
            period: period.max(1),
            current: None,
            executed_robot: ActionTrajectory::default(),
            executed_human: ActionTrajectory::default(),
            interaction_start: None,
            replans: 0,
        }
    }

    /// Number of solves performed so far, including the first.
    pub fn solves(&self) -> usize {
        self.replans
    }

    pub fn executed_robot(&self) -> &ActionTrajectory {
        &self.executed_robot
    }

    /// The plan currently being executed.
    pub fn current_plan(&self) -> Option<&Plan> {
        self.current.as_ref().map(|a| &a.plan)
    }

    /// The committed robot actions starting with the one issued last.
    pub fn committed_remainder(&self) -> Option<ActionTrajectory> {
        let active = self.current.as_ref()?;
        let from = active.cursor.saturating_sub(1);
        Some(ActionTrajectory::new(active.plan.robot.actions()[from..].to_vec()))
    }

    /// Installs a plan computed at state `s` outside the loop.
    pub fn install(&mut self, env: &Environment, s: &WorldState, plan: Plan) {
        if self.interaction_start.is_none() {
            self.interaction_start = Some(*s);
        }
        let predicted_human = env.agent_path(&s.human, &plan.predicted_human);
        self.current = Some(ActivePlan {
            plan,
            predicted_human,
            cursor: 0,
        });
        self.replans += 1;
    }

    fn needs_replan(&self, s: &WorldState) -> bool {
        let Some(active) = &self.current else {
            return true;
        };
        if active.cursor >= active.plan.robot.len() {
            return true;
        }
        if active.cursor == 0 || active.cursor % self.period != 0 {
            return false;
        }
        match active.predicted_human.get(active.cursor) {
            Some(p) => deviates(p, &s.human),
            None => true,
        }
    }

    /// Robot action at realized state `s`, re-solving if required.
    pub fn next_action<P: PlanSource>(
        &mut self,
        env: &Environment,
        source: &mut P,
        s: &WorldState,
    ) -> std::result::Result<Action, P::Error> {
        if self.interaction_start.is_none() {
            self.interaction_start = Some(*s);
        }
        if self.needs_replan(s) {
            let request = PlanRequest {
                state: *s,
                interaction_start: self.interaction_start.unwrap_or(*s),
                robot_prefix: &self.executed_robot,
                human_prefix: &self.executed_human,
            };
            let plan = source.plan(&request)?;
            if plan.robot.is_empty() {
                return Err(PlannerError::from(WorldError::EmptyTrajectory).into());
            }
            self.install(env, s, plan);
        }
        let active = self.current.as_mut().expect("plan installed above");
        let u = active.plan.robot.actions()[active.cursor];
        active.cursor += 1;
        self.executed_robot.push(u);
        Ok(u)
    }

    /// Records the human action actually applied alongside the last robot action.
    pub fn record_human(&mut self, u: Action) {
        self.executed_human.push(u);
    }
}

/// Runs `steps` dynamics steps under receding-horizon control. Returns the
/// executed robot actions, the applied human actions (both padded to
/// `steps + 1` by repeating the final action) and the realized states.
pub fn replan_loop<P, H>(
    env: &Environment,
    s0: &WorldState,
    period: usize,
    steps: usize,
    source: &mut P,
    mut human: H,
) -> std::result::Result<(ActionTrajectory, ActionTrajectory, crate::world::StateTrajectory), P::Error>
where
    P: PlanSource,
    H: FnMut(usize, &WorldState) -> Action,
{
    let mut exec = ReplanLoop::new(period);
    let mut s = *s0;
    let mut states = crate::world::StateTrajectory::new(vec![s]);
    let mut human_actions = ActionTrajectory::default();
    for k in 0..steps {
        let ur = exec.next_action(env, source, &s)?;
        let uh = human(k, &s);
        exec.record_human(uh);
        human_actions.push(uh);
        s = env.step(&s, ur, uh);
        states.push(s);
    }
    Ok((
        exec.executed_robot.resized(steps + 1),
        human_actions.resized(steps + 1),
        states,
    ))
}

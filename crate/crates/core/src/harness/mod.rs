//! Repeated-interaction experiments: configuration, the per-interaction
//! loop, metrics, statistics and persistence.

pub mod config;
pub mod io;
pub mod metrics;
pub mod stats;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::belief::BeliefError;
use crate::humans::{self, HumanError, HumanKind, HumanModel, HumanPlan};
use crate::influence::{Controller, ControllerKind, InfluenceError};
use crate::planner::{deviates, PlannerError, ReplanLoop};
use crate::rewards::{total_reward, RewardError, RewardSpec};
use crate::world::{ActionTrajectory, EnvKind, InteractionTrace, StateTrajectory, WorldError, WorldState};

pub use config::{Experiment, ExperimentConfig, RewardOverride};
pub use metrics::Metrics;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Human(#[from] HumanError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Environment variable capping how many seeds run in parallel.
pub const THREADS_VAR: &str = "INFLUENCE_BENCH_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionRecord {
    pub experiment_id: String,
    pub seed: u64,
    pub env: EnvKind,
    pub controller: ControllerKind,
    pub human: HumanKind,
    pub interaction: usize,
    pub trace: InteractionTrace,
    pub metrics: Metrics,
    pub robot_return: f64,
    pub human_return: f64,
    /// The human's belief after this interaction (belief human), else the
    /// robot's model of it (belief-entropy robot).
    pub belief: Option<Vec<f64>>,
}

impl InteractionRecord {
    /// Metrics recomputed from the stored trajectory.
    pub fn recompute_metrics(&self, exp: &Experiment) -> Metrics {
        Metrics::compute(exp.env(), &self.trace.states, exp.config.yield_threshold)
    }
}

/// Rollout state of one seed: the controller and human carried across interactions.
#[derive(Debug, Clone)]
pub struct Participants {
    pub controller: Controller,
    pub human: HumanModel,
}

impl Participants {
    pub fn new(exp: &Experiment, seed: u64) -> Result<Participants> {
        Ok(Participants {
            controller: exp.controller(controller_rng(seed))?,
            human: exp.human()?,
        })
    }

    /// Lets both sides learn from a finished interaction, in that order.
    pub fn observe(&mut self, exp: &Experiment, trace: &InteractionTrace) -> Result<()> {
        self.controller.observe(trace)?;
        humans::observe_interaction(&mut self.human, exp.env(), trace)?;
        Ok(())
    }

    pub fn belief_snapshot(&self) -> Option<Vec<f64>> {
        self.human
            .belief_state()
            .or(self.controller.modeled_belief())
            .map(|b| b.weights().to_vec())
    }
}

/// Generator behind every seeded draw in an experiment.
pub type SeedRng = ChaCha8Rng;

/// Initial states are drawn from stream 0 of the seed, controller noise from stream 1.
pub fn spawn_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn controller_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs one interaction from `s0` under receding-horizon control. Both
/// sides re-plan at period boundaries when the other departs from what they
/// expected (the robot also when its plan runs out).
pub fn run_interaction(exp: &Experiment, s0: &WorldState, who: &mut Participants) -> Result<InteractionTrace> {
    let env = exp.env();
    let steps = env.steps;
    let period = exp.config.replan_period;
    let mut exec = ReplanLoop::new(period);
    let mut s = *s0;
    let mut states = StateTrajectory::new(vec![s]);
    let mut human: Option<(usize, HumanPlan)> = None;
    let mut human_actions = ActionTrajectory::default();
    for k in 0..steps {
        let ur = exec.next_action(env, &mut who.controller, &s)?;
        let replan = match &human {
            None => true,
            Some((k0, plan)) => {
                let off = k - k0;
                off >= plan.actions.len()
                    || (off % period == 0 && plan.expected_robot.get(off).is_none_or(|e| deviates(e, &s.robot)))
            }
        };
        if replan {
            let committed = exec.committed_remainder();
            let plan = humans::plan_human(&who.human, env, &s, k, committed.as_ref(), &exp.ctx.human_candidates)?;
            human = Some((k, plan));
        }
        let (k0, plan) = human.as_ref().expect("planned above");
        let uh = plan.actions.actions()[k - k0];
        exec.record_human(uh);
        human_actions.push(uh);
        s = env.step(&s, ur, uh);
        states.push(s);
    }
    Ok(InteractionTrace {
        states,
        robot: exec.executed_robot().resized(steps + 1),
        human: human_actions.resized(steps + 1),
    })
}

/// Scores a finished interaction and packages it as a record.
pub fn make_record(
    exp: &Experiment,
    seed: u64,
    interaction: usize,
    trace: InteractionTrace,
    who: &Participants,
) -> Result<InteractionRecord> {
    score_trace(exp, seed, interaction, trace, who.human.spec(), who.belief_snapshot())
}

/// Record for a trace whose human side was driven by `human_spec`'s owner
/// (a simulated model or a live participant).
pub fn score_trace(
    exp: &Experiment,
    seed: u64,
    interaction: usize,
    trace: InteractionTrace,
    human_spec: &RewardSpec,
    belief: Option<Vec<f64>>,
) -> Result<InteractionRecord> {
    let env = exp.env();
    let metrics = Metrics::compute(env, &trace.states, exp.config.yield_threshold);
    let robot_return = total_reward(&exp.ctx.robot_spec, env, &trace.states, &trace.robot, &trace.human)?;
    let human_return = total_reward(human_spec, env, &trace.states, &trace.robot, &trace.human)?;
    Ok(InteractionRecord {
        experiment_id: exp.config.experiment_id.clone(),
        seed,
        env: env.kind,
        controller: exp.config.controller,
        human: exp.config.human,
        interaction,
        trace,
        metrics,
        robot_return,
        human_return,
        belief,
    })
}

/// All interactions of one seed, in order.
pub fn run_seed(exp: &Experiment, seed: u64) -> Result<Vec<InteractionRecord>> {
    let mut spawn = spawn_rng(seed);
    let mut who = Participants::new(exp, seed)?;
    let mut records = Vec::with_capacity(exp.config.interactions);
    for i in 0..exp.config.interactions {
        let s0 = exp.env().sample_initial_state(&mut spawn);
        let trace = run_interaction(exp, &s0, &mut who)?;
        who.observe(exp, &trace)?;
        records.push(make_record(exp, seed, i, trace, &who)?);
    }
    Ok(records)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_VAR).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs every seed (in parallel, capped by `INFLUENCE_BENCH_THREADS`);
/// records come back ordered by seed-list position, then interaction.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<InteractionRecord>> {
    cfg.validate()?;
    if cfg.human == HumanKind::Live {
        return Err(HarnessError::Config("batch runs need a simulated human".into()));
    }
    let exp = Experiment::new(cfg)?;
    let work = || -> Result<Vec<Vec<InteractionRecord>>> {
        cfg.seeds.par_iter().map(|&seed| run_seed(&exp, seed)).collect()
    };
    let per_seed = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(per_seed.into_iter().flatten().collect())
}

//! One live session: a person drives the human car tick by tick against a
//! configured robot controller.

use std::path::PathBuf;

use influence_core::harness::io::{self, RecordRow};
use influence_core::harness::{
    controller_rng, score_trace, spawn_rng, Experiment, ExperimentConfig, HarnessError, InteractionRecord, SeedRng,
};
use influence_core::humans::HumanKind;
use influence_core::influence::{Controller, ControllerKind, InfluenceError};
use influence_core::planner::ReplanLoop;
use influence_core::world::{
    Action, ActionTrajectory, EnvKind, Environment, InteractionTrace, StateTrajectory, WorldError, WorldState,
};
use thiserror::Error;

use crate::protocol::{ClientMessage, ServerMessage, SessionSummary};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session already active")]
    AlreadyActive,
    #[error("no active session; send `start` first")]
    NotStarted,
    #[error("session closed")]
    Closed,
    #[error("{0}")]
    Protocol(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Everything but env, controller and seed, which come with `start`.
    pub base: ExperimentConfig,
    pub interactions: usize,
    /// Where finished sessions are written as CSV, if anywhere.
    pub log_dir: Option<PathBuf>,
}

impl SessionConfig {
    /// 20 Hz ticks (dt = 0.05 s), 100 steps per interaction, 25 interactions.
    pub fn live() -> SessionConfig {
        SessionConfig {
            base: ExperimentConfig {
                experiment_id: "live".into(),
                human: HumanKind::Live,
                dt: Some(0.05),
                steps: Some(100),
                ..ExperimentConfig::default()
            },
            interactions: 25,
            log_dir: None,
        }
    }

    /// Batch config of a started session.
    pub fn experiment(&self, env: EnvKind, controller: ControllerKind, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            env,
            controller,
            human: HumanKind::Live,
            seeds: vec![seed],
            interactions: self.interactions,
            ..self.base.clone()
        }
    }
}

/// Maps normalized axes onto a bounded action: steer -1 turns left
/// (counter-clockwise) at the full turn rate, accel +1 is full throttle.
pub fn input_action(env: &Environment, steer: f64, accel: f64) -> Action {
    let l = env.limits;
    env.action(-steer.clamp(-1.0, 1.0) * l.omega_max, accel.clamp(-1.0, 1.0) * l.a_max)
}

/// Axes that reproduce `u` through [`input_action`] (up to rounding).
pub fn input_axes(env: &Environment, u: Action) -> (f64, f64) {
    (-u.turn_rate() / env.limits.omega_max, u.accel() / env.limits.a_max)
}

#[derive(Debug)]
struct Interaction {
    exec: ReplanLoop,
    states: StateTrajectory,
    human: ActionTrajectory,
}

impl Interaction {
    fn new(s0: WorldState, period: usize) -> Interaction {
        Interaction {
            exec: ReplanLoop::new(period),
            states: StateTrajectory::new(vec![s0]),
            human: ActionTrajectory::default(),
        }
    }

    fn now(&self) -> &WorldState {
        self.states.last().expect("interactions hold their initial state")
    }
}

#[derive(Debug)]
struct Active {
    exp: Experiment,
    seed: u64,
    controller: Controller,
    spawn: SeedRng,
    index: usize,
    current: Interaction,
    pending: Action,
    records: Vec<InteractionRecord>,
    score: f64,
}

impl Active {
    /// Draws the next initial state and starts over from it.
    fn begin(&mut self) -> ServerMessage {
        let s0 = self.exp.env().sample_initial_state(&mut self.spawn);
        self.open(s0)
    }

    fn open(&mut self, s0: WorldState) -> ServerMessage {
        let env = self.exp.env();
        self.current = Interaction::new(s0, self.exp.config.replan_period);
        self.pending = Action::ZERO;
        self.score += self.exp.human_spec.step_reward(env, &s0);
        ServerMessage::state(&s0, self.score, env.check_collision(&s0))
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
enum Phase {
    #[default]
    Idle,
    Running,
    Finished,
}

/// Server-side state of one connection. Messages and ticks are applied in
/// the order they are handed in; the caller owns timing.
#[derive(Debug)]
pub struct Session {
    config: SessionConfig,
    phase: Phase,
    active: Option<Active>,
    ticks: u64,
}

impl Session {
    pub fn new(config: SessionConfig) -> Session {
        Session {
            config,
            phase: Phase::Idle,
            active: None,
            ticks: 0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.phase == Phase::Running
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    /// Ticks applied so far.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn records(&self) -> &[InteractionRecord] {
        self.active.as_ref().map_or(&[], |a| &a.records)
    }

    pub fn score(&self) -> f64 {
        self.active.as_ref().map_or(0.0, |a| a.score)
    }

    pub fn experiment(&self) -> Option<&Experiment> {
        self.active.as_ref().map(|a| &a.exp)
    }

    /// Handles one text frame; failures become `error` messages and leave
    /// the session as it was.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::parse(text) {
            Ok(msg) => self.handle(msg).unwrap_or_else(|e| vec![ServerMessage::error(e.to_string())]),
            Err(detail) => vec![ServerMessage::error(detail)],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        match msg {
            ClientMessage::Start { env, controller, seed } => self.start(&env, &controller, seed),
            ClientMessage::Input { steer, accel } => {
                let active = self.running()?;
                if !(steer.is_finite() && accel.is_finite()) {
                    return Err(SessionError::Protocol("input axes must be finite".into()));
                }
                active.pending = input_action(active.exp.env(), steer, accel);
                Ok(Vec::new())
            }
            ClientMessage::Reset => {
                let active = self.running()?;
                Ok(vec![active.begin()])
            }
        }
    }

    fn running(&mut self) -> Result<&mut Active> {
        match self.phase {
            Phase::Idle => Err(SessionError::NotStarted),
            Phase::Finished => Err(SessionError::Closed),
            Phase::Running => Ok(self.active.as_mut().expect("running sessions are active")),
        }
    }

    fn start(&mut self, env: &str, controller: &str, seed: u64) -> Result<Vec<ServerMessage>> {
        if self.phase != Phase::Idle {
            return Err(SessionError::AlreadyActive);
        }
        let env: EnvKind = env.parse().map_err(|e: WorldError| SessionError::Protocol(e.to_string()))?;
        let controller: ControllerKind = controller
            .parse()
            .map_err(|e: InfluenceError| SessionError::Protocol(e.to_string()))?;
        let cfg = self.config.experiment(env, controller, seed);
        cfg.validate()?;
        let exp = Experiment::new(&cfg)?;
        let controller = exp.controller(controller_rng(seed))?;
        let mut spawn = spawn_rng(seed);
        let s0 = exp.env().sample_initial_state(&mut spawn);
        let mut active = Active {
            controller,
            spawn,
            seed,
            index: 0,
            current: Interaction::new(s0, cfg.replan_period),
            pending: Action::ZERO,
            records: Vec::new(),
            score: 0.0,
            exp,
        };
        if self.config.interactions == 0 {
            self.phase = Phase::Finished;
            self.active = Some(active);
            return Ok(vec![self.summary()]);
        }
        let first = active.open(s0);
        self.active = Some(active);
        self.phase = Phase::Running;
        Ok(vec![first])
    }

    /// Advances one step with the latest input (zero if none arrived this
    /// interaction) and reports the new state, plus the interaction and
    /// session endings when they happen.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>> {
        self.running()?;
        self.ticks += 1;
        let interactions = self.config.interactions;
        let active = self.active.as_mut().expect("running sessions are active");
        let env = active.exp.env();
        let now = *active.current.now();
        let ur = active
            .current
            .exec
            .next_action(env, &mut active.controller, &now)
            .map_err(HarnessError::from)?;
        let uh = active.pending;
        active.current.exec.record_human(uh);
        active.current.human.push(uh);
        let s = env.step(&now, ur, uh);
        active.current.states.push(s);
        active.score += active.exp.human_spec.step_reward(env, &s);
        let mut out = vec![ServerMessage::state(&s, active.score, env.check_collision(&s))];

        if active.current.states.len() > env.steps {
            let steps = env.steps;
            let trace = InteractionTrace {
                states: active.current.states.clone(),
                robot: active.current.exec.executed_robot().resized(steps + 1),
                human: active.current.human.resized(steps + 1),
            };
            active.controller.observe(&trace).map_err(HarnessError::from)?;
            let belief = active.controller.modeled_belief().map(|b| b.weights().to_vec());
            let record = score_trace(&active.exp, active.seed, active.index, trace, &active.exp.human_spec, belief)?;
            out.push(ServerMessage::InteractionEnd {
                i: record.interaction,
                lane_progress: record.metrics.lane_progress,
                reverse_time: record.metrics.reverse_time,
                yielded: record.metrics.yielded,
            });
            active.records.push(record);
            active.index += 1;
            if active.index == interactions {
                self.phase = Phase::Finished;
                self.write_log()?;
                out.push(self.summary());
            } else {
                out.push(active.begin());
            }
        }
        Ok(out)
    }

    fn summary(&self) -> ServerMessage {
        let a = self.active.as_ref().expect("summaries follow a start");
        ServerMessage::SessionEnd {
            summary: SessionSummary {
                experiment_id: a.exp.config.experiment_id.clone(),
                env: a.exp.config.env.name().into(),
                controller: a.exp.config.controller.name().into(),
                seed: a.seed,
                interactions: a.records.len(),
                score: a.score,
                records: a.records.iter().map(RecordRow::from).collect(),
            },
        }
    }

    fn write_log(&self) -> Result<()> {
        let (Some(dir), Some(a)) = (&self.config.log_dir, &self.active) else {
            return Ok(());
        };
        let name = format!(
            "{}-{}-{}-{}.csv",
            a.exp.config.experiment_id,
            a.exp.config.env.name(),
            a.exp.config.controller.name(),
            a.seed
        );
        io::export_csv(&a.records, &dir.join(name))?;
        Ok(())
    }
}

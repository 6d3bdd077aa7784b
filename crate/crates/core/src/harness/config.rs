//! Experiment configuration: a flat TOML table plus optional reward tables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::belief::{Belief, EvidenceTerms, HypothesisSet, Likelihood, ObservationModel};
use crate::humans::{HumanKind, HumanModel};
use crate::influence::{Controller, ControllerKind, ControllerState, NoiseConfig, PlanningContext, TrajectoryBuffer};
use crate::planner::{generate_candidates, GeneratorConfig};
use crate::rewards::RewardSpec;
use crate::world::{Agent, EnvKind, Environment};

/// Partial override of a reward spec; unset keys keep the environment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverride {
    pub speed_agent: Option<Agent>,
    pub speed_sign: Option<f64>,
    pub collision_weight: Option<f64>,
    pub offroad_weight: Option<f64>,
}

impl RewardOverride {
    fn apply(&self, mut spec: RewardSpec) -> RewardSpec {
        if let Some(a) = self.speed_agent {
            spec.speed_agent = a;
        }
        if let Some(s) = self.speed_sign {
            spec.speed_sign = s;
        }
        if let Some(w) = self.collision_weight {
            spec.collision_weight = w;
        }
        if let Some(w) = self.offroad_weight {
            spec.offroad_weight = w;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub env: EnvKind,
    pub controller: ControllerKind,
    pub human: HumanKind,
    pub interactions: usize,
    pub seeds: Vec<u64>,

    /// Overrides of the environment preset.
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    /// Replaces the preset entirely (TOML-serialized environment).
    pub env_file: Option<PathBuf>,

    /// Planning horizon; defaults to `steps - 1` so candidates hold one
    /// action per step.
    pub horizon: Option<usize>,
    pub replan_period: usize,
    pub segments: usize,
    pub grid_accels: Option<Vec<f64>>,
    pub grid_turn_rates: Option<Vec<f64>>,

    /// Bonus weight; defaults to 5 (state entropy) or 10 (belief entropy).
    pub lambda: Option<f64>,
    pub sigma_turn: f64,
    pub sigma_accel: f64,
    pub delta: f64,
    pub max_resamples: usize,
    pub chance_level: f64,
    pub buffer_capacity: usize,

    /// Rationality of the modeled belief update (robot side).
    pub beta: f64,
    pub memory_window: usize,
    pub belief_prior: Vec<f64>,
    /// Rationality of the belief human; defaults to `beta`.
    pub beta_human: Option<f64>,
    /// Collision weights of the coordination hypotheses.
    pub hypothesis_weights: Vec<f64>,
    pub belief_likelihood: Likelihood,
    pub belief_terms: EvidenceTerms,

    pub yield_threshold: f64,
    /// Interactions per block in first-vs-last comparisons.
    pub block_size: usize,
    pub output: Option<PathBuf>,

    pub robot_reward: Option<RewardOverride>,
    pub human_reward: Option<RewardOverride>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let noise = NoiseConfig::default();
        ExperimentConfig {
            experiment_id: "experiment".into(),
            env: EnvKind::Highway,
            controller: ControllerKind::Stackelberg,
            human: HumanKind::Stackelberg,
            interactions: 100,
            seeds: vec![0],
            dt: None,
            steps: None,
            env_file: None,
            horizon: None,
            replan_period: 5,
            segments: 2,
            grid_accels: None,
            grid_turn_rates: None,
            lambda: None,
            sigma_turn: noise.sigma_turn,
            sigma_accel: noise.sigma_accel,
            delta: noise.delta,
            max_resamples: noise.max_resamples,
            chance_level: noise.chance_level,
            buffer_capacity: 10,
            beta: 0.5,
            memory_window: 3,
            belief_prior: vec![0.5, 0.5],
            beta_human: None,
            hypothesis_weights: vec![10.0, 0.0],
            belief_likelihood: Likelihood::Boltzmann,
            belief_terms: EvidenceTerms::Full,
            yield_threshold: 0.2,
            block_size: 10,
            output: None,
            robot_reward: None,
            human_reward: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config; a relative `env_file` is resolved against the config's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        if let (Some(f), Some(dir)) = (&cfg.env_file, path.parent()) {
            if f.is_relative() {
                cfg.env_file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.controller {
            ControllerKind::BeliefEntropy => 10.0,
            ControllerKind::StateEntropy => 5.0,
            _ => 0.0,
        })
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            sigma_turn: self.sigma_turn,
            sigma_accel: self.sigma_accel,
            delta: self.delta,
            max_resamples: self.max_resamples,
            chance_level: self.chance_level,
        }
    }

    pub fn environment(&self) -> Result<Environment, HarnessError> {
        let mut env = match &self.env_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                let env: Environment = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
                if env.kind != self.env {
                    return Err(HarnessError::Config(format!(
                        "{} describes {}, config says {}",
                        path.display(),
                        env.kind,
                        self.env
                    )));
                }
                env
            }
            None => Environment::preset(self.env),
        };
        if let Some(dt) = self.dt {
            env.dt = dt;
        }
        if let Some(steps) = self.steps {
            env.steps = steps;
        }
        env.validate()?;
        Ok(env)
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.replan_period == 0 {
            return bad("replan_period must be at least 1");
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !self.beta_human.is_none_or(|b| b > 0.0 && b.is_finite()) {
            return bad("beta_human must be positive");
        }
        if self.belief_prior.len() != self.hypothesis_weights.len() {
            return bad("belief_prior and hypothesis_weights must have the same length");
        }
        if !(0.0..=1.0).contains(&self.yield_threshold) {
            return bad("yield_threshold must lie in [0, 1]");
        }
        Belief::new(self.belief_prior.clone())?;
        self.noise().validate()?;
        if !(self.lambda() >= 0.0 && self.lambda().is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        Experiment::new(self).map(|_| ())
    }
}

/// A validated config with everything shared across seeds prebuilt.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub ctx: Arc<PlanningContext>,
    /// The human's true reward.
    pub human_spec: RewardSpec,
    pub robot_observation: Arc<ObservationModel>,
    pub human_observation: Arc<ObservationModel>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Experiment, HarnessError> {
        let env = config.environment()?;
        let mut gen = GeneratorConfig::for_env(&env);
        gen.segments = config.segments;
        gen.horizon = config.horizon.unwrap_or(env.steps.saturating_sub(1));
        if let Some(a) = &config.grid_accels {
            gen.grid_accels = a.clone();
        }
        if let Some(w) = &config.grid_turn_rates {
            gen.grid_turn_rates = w.clone();
        }
        let candidates = generate_candidates(&env, &gen)?;
        let robot_spec = config
            .robot_reward
            .clone()
            .unwrap_or_default()
            .apply(RewardSpec::robot_default(env.kind));
        let human_spec = config
            .human_reward
            .clone()
            .unwrap_or_default()
            .apply(RewardSpec::human_default(env.kind));
        robot_spec.validate()?;
        human_spec.validate()?;
        let hypotheses = HypothesisSet::from_collision_weights(robot_spec, &config.hypothesis_weights)?;
        let steps = env.steps;
        let observation = |beta: f64| {
            Arc::new(ObservationModel {
                hypotheses: hypotheses.clone(),
                beta,
                likelihood: config.belief_likelihood,
                terms: config.belief_terms,
                alternatives: candidates.clone(),
                interaction_len: steps + 1,
            })
        };
        let robot_observation = observation(config.beta);
        let human_observation = observation(config.beta_human.unwrap_or(config.beta));
        let ctx = Arc::new(PlanningContext {
            env,
            robot_candidates: candidates.clone(),
            human_candidates: candidates,
            robot_spec,
            human_spec,
            steps,
        });
        Ok(Experiment {
            config: config.clone(),
            ctx,
            human_spec,
            robot_observation,
            human_observation,
        })
    }

    pub fn env(&self) -> &Environment {
        &self.ctx.env
    }

    /// Fresh controller for one seed; `rng` is only consumed by the noise controller.
    pub fn controller(&self, rng: ChaCha8Rng) -> Result<Controller, HarnessError> {
        let c = &self.config;
        let state = match c.controller {
            ControllerKind::Stackelberg => ControllerState::Stackelberg,
            ControllerKind::Noise => ControllerState::Noise {
                cfg: c.noise(),
                rng,
                log: Vec::new(),
            },
            ControllerKind::StateEntropy => ControllerState::StateEntropy {
                lambda: c.lambda(),
                buffer: TrajectoryBuffer::new(c.buffer_capacity),
            },
            ControllerKind::BeliefEntropy => ControllerState::BeliefEntropy {
                lambda: c.lambda(),
                belief: Belief::new(c.belief_prior.clone())?,
                observation: Arc::clone(&self.robot_observation),
            },
        };
        Ok(Controller::new(Arc::clone(&self.ctx), state)?)
    }

    /// Fresh human for one seed.
    pub fn human(&self) -> Result<HumanModel, HarnessError> {
        let c = &self.config;
        let spec = self.human_spec;
        Ok(match c.human {
            HumanKind::Stackelberg => HumanModel::stackelberg(spec),
            HumanKind::Memory => HumanModel::memory(spec, c.memory_window)?,
            HumanKind::Belief => HumanModel::belief(
                spec,
                Belief::new(c.belief_prior.clone())?,
                Arc::clone(&self.human_observation),
            )?,
            HumanKind::Yielder => HumanModel::yielder(spec),
            HumanKind::Passer => HumanModel::passer(spec),
            HumanKind::Live => {
                return Err(HarnessError::Config(
                    "a live human is driven through a session, not simulated".into(),
                ))
            }
        })
    }
}

//! The human's belief over the robot's coordination reward.
//!
//! Hypotheses are robot reward specs that differ only in their collision
//! weight. After each completed interaction the belief is reweighted by
//! `exp(beta * evidence)` and renormalised. By default the evidence for a
//! hypothesis is the Boltzmann log-likelihood of the robot's observed
//! trajectory among its alternatives, given what the human actually did; the
//! bare hypothesis-conditioned return is available as
//! [`Likelihood::Unnormalized`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{collision_steps, pair_reward, AgentPath, CandidateSet};
use crate::rewards::RewardSpec;
use crate::world::{ActionTrajectory, Agent, Environment, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("hypothesis set is empty")]
    NoHypotheses,
    #[error("hypotheses {0} and {1} are identical")]
    DuplicateHypothesis(usize, usize),
    #[error("belief has {belief} weights but there are {hypotheses} hypotheses")]
    SizeMismatch { belief: usize, hypotheses: usize },
    #[error("belief is not a distribution: {0}")]
    NotNormalized(String),
    #[error("rationality coefficient must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("posterior degenerated: every weight vanished")]
    Degenerate,
}

pub type Result<T> = std::result::Result<T, BeliefError>;

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    hypotheses: Vec<RewardSpec>,
}

impl HypothesisSet {
    pub fn new(hypotheses: Vec<RewardSpec>) -> Result<HypothesisSet> {
        if hypotheses.is_empty() {
            return Err(BeliefError::NoHypotheses);
        }
        for i in 0..hypotheses.len() {
            for j in i + 1..hypotheses.len() {
                if hypotheses[i] == hypotheses[j] {
                    return Err(BeliefError::DuplicateHypothesis(i, j));
                }
            }
        }
        Ok(HypothesisSet { hypotheses })
    }

    /// Variants of `base` differing only in collision weight.
    pub fn from_collision_weights(base: RewardSpec, weights: &[f64]) -> Result<HypothesisSet> {
        HypothesisSet::new(weights.iter().map(|&w| base.with_collision_weight(w)).collect())
    }

    /// Coordinating (weight 10) and non-coordinating (weight 0).
    pub fn binary(base: RewardSpec) -> HypothesisSet {
        HypothesisSet::from_collision_weights(base, &[10.0, 0.0]).expect("distinct weights")
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn get(&self, k: usize) -> &RewardSpec {
        &self.hypotheses[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RewardSpec> {
        self.hypotheses.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    weights: Vec<f64>,
    /// Number of interactions folded in so far.
    pub interaction: usize,
}

impl Belief {
    pub fn new(weights: Vec<f64>) -> Result<Belief> {
        if weights.is_empty() {
            return Err(BeliefError::NoHypotheses);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BeliefError::NotNormalized(format!("negative or non-finite weight in {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(BeliefError::NotNormalized(format!("weights sum to {sum}")));
        }
        Ok(Belief {
            weights,
            interaction: 0,
        })
    }

    pub fn uniform(n: usize) -> Belief {
        Belief {
            weights: vec![1.0 / n as f64; n],
            interaction: 0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        belief_entropy(self)
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn belief_entropy(b: &Belief) -> f64 {
    -b.weights
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `b'(k) ∝ b(k) exp(beta * evidence[k])`, shift-stabilised.
pub fn posterior(b: &Belief, evidence: &[f64], beta: f64) -> Result<Belief> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(BeliefError::BadBeta(beta));
    }
    if evidence.len() != b.len() {
        return Err(BeliefError::SizeMismatch {
            belief: b.len(),
            hypotheses: evidence.len(),
        });
    }
    let shift = b
        .weights
        .iter()
        .zip(evidence)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, e)| beta * e)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = b
        .weights
        .iter()
        .zip(evidence)
        .map(|(&w, &e)| if w > 0.0 { w * (beta * e - shift).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(BeliefError::Degenerate);
    }
    Ok(Belief {
        weights: raw.into_iter().map(|w| w / total).collect(),
        interaction: b.interaction + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Log-probability of the observed robot trajectory under a softmax over
    /// the robot's alternatives.
    #[default]
    Boltzmann,
    /// The hypothesis-conditioned return itself.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceTerms {
    /// Task plus coordination reward.
    #[default]
    Full,
    /// Only the collision term.
    CoordinationOnly,
}

/// Everything needed to turn an observed interaction into a belief update.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub hypotheses: HypothesisSet,
    pub beta: f64,
    pub likelihood: Likelihood,
    pub terms: EvidenceTerms,
    /// Robot alternatives the observer compares the observed trajectory to.
    pub alternatives: CandidateSet,
    /// Actions per observed interaction.
    pub interaction_len: usize,
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(BeliefError::BadBeta(self.beta));
        }
        Ok(())
    }

    /// Precomputes the alternatives' paths from an interaction's start.
    pub fn prepare<'a>(&'a self, env: &'a Environment, s0: &WorldState) -> PreparedObservation<'a> {
        let alternatives = self
            .alternatives
            .trajectories()
            .iter()
            .map(|u| AgentPath::rollout(env, Agent::Robot, &s0.robot, &u.resized(self.interaction_len)))
            .collect();
        PreparedObservation {
            model: self,
            env,
            s0: *s0,
            alternatives,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedObservation<'a> {
    model: &'a ObservationModel,
    env: &'a Environment,
    s0: WorldState,
    alternatives: Vec<AgentPath>,
}

impl PreparedObservation<'_> {
    pub fn start(&self) -> &WorldState {
        &self.s0
    }

    fn hypothesis_return(&self, spec: &RewardSpec, robot: &AgentPath, human: &AgentPath) -> f64 {
        match self.model.terms {
            EvidenceTerms::Full => pair_reward(self.env, spec, robot, human),
            EvidenceTerms::CoordinationOnly => {
                -spec.collision_weight * collision_steps(self.env, robot, human) as f64
            }
        }
    }

    /// Per-hypothesis evidence for an observed joint path.
    pub fn evidence(&self, robot: &AgentPath, human: &AgentPath) -> Vec<f64> {
        let beta = self.model.beta;
        self.model
            .hypotheses
            .iter()
            .map(|spec| {
                let observed = self.hypothesis_return(spec, robot, human);
                match self.model.likelihood {
                    Likelihood::Unnormalized => observed,
                    Likelihood::Boltzmann => {
                        let alt: Vec<f64> = self
                            .alternatives
                            .iter()
                            .map(|a| self.hypothesis_return(spec, a, human))
                            .collect();
                        let m = alt.iter().copied().fold(observed, f64::max);
                        let z: f64 = std::iter::once(observed)
                            .chain(alt.iter().copied())
                            .map(|r| (beta * (r - m)).exp())
                            .sum();
                        (observed - m) - z.ln() / beta
                    }
                }
            })
            .collect()
    }

    pub fn update(&self, b: &Belief, robot: &AgentPath, human: &AgentPath) -> Result<Belief> {
        if b.len() != self.model.hypotheses.len() {
            return Err(BeliefError::SizeMismatch {
                belief: b.len(),
                hypotheses: self.model.hypotheses.len(),
            });
        }
        posterior(b, &self.evidence(robot, human), self.model.beta)
    }

    /// Update from action trajectories of length `interaction_len`.
    pub fn update_actions(&self, b: &Belief, robot: &ActionTrajectory, human: &ActionTrajectory) -> Result<Belief> {
        let rp = AgentPath::rollout(self.env, Agent::Robot, &self.s0.robot, robot);
        let hp = AgentPath::rollout(self.env, Agent::Human, &self.s0.human, human);
        self.update(b, &rp, &hp)
    }
}

/// Folds one observed interaction into the belief.
pub fn update_belief(
    model: &ObservationModel,
    env: &Environment,
    b: &Belief,
    s0: &WorldState,
    robot: &ActionTrajectory,
    human: &ActionTrajectory,
) -> Result<Belief> {
    model.validate()?;
    model.prepare(env, s0).update_actions(b, robot, human)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{generate_candidates, GeneratorConfig, Provenance};
    use crate::world::{AgentState, EnvKind};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn closed_form_update() {
        let b = Belief::uniform(2);
        let p = posterior(&b, &[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.weights()[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((p.weights()[0] - 0.7311).abs() < 1e-4);
        assert!((p.weights()[1] - 0.2689).abs() < 1e-4);
        assert_eq!(p.interaction, 1);
    }

    #[test]
    fn symmetric_and_degenerate_priors() {
        let b = Belief::uniform(2);
        assert_eq!(posterior(&b, &[3.0, 3.0], 1.0).unwrap().weights(), &[0.5, 0.5]);
        let sure = Belief::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(posterior(&sure, &[-50.0, 80.0], 2.0).unwrap().weights(), &[1.0, 0.0]);
    }

    #[test]
    fn errors() {
        let b = Belief::uniform(2);
        assert_eq!(posterior(&b, &[1.0, 0.0], 0.0).unwrap_err(), BeliefError::BadBeta(0.0));
        assert!(matches!(posterior(&b, &[1.0], 1.0), Err(BeliefError::SizeMismatch { .. })));
        assert!(Belief::new(vec![0.6, 0.6]).is_err());
        assert!(Belief::new(vec![1.5, -0.5]).is_err());
        assert_eq!(HypothesisSet::new(vec![]).unwrap_err(), BeliefError::NoHypotheses);
        let base = RewardSpec::driving_robot();
        assert!(HypothesisSet::from_collision_weights(base, &[10.0, 10.0]).is_err());
    }

    #[test]
    fn entropy_values() {
        assert!((belief_entropy(&Belief::uniform(2)) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(belief_entropy(&Belief::new(vec![1.0, 0.0]).unwrap()), 0.0);
        let b = Belief::new(vec![0.7311, 0.2689]).unwrap();
        // Direct summation.
        let oracle = -(0.7311f64 * 0.7311f64.ln()) - 0.2689f64 * 0.2689f64.ln();
        assert!((belief_entropy(&b) - oracle).abs() < 1e-12);
        assert!((belief_entropy(&b) - 0.5822).abs() < 1e-3);
    }

    fn highway_model(likelihood: Likelihood) -> (Environment, ObservationModel) {
        let env = Environment::highway();
        let g = GeneratorConfig {
            segments: 1,
            horizon: 9,
            ..GeneratorConfig::for_env(&env)
        };
        let alternatives = generate_candidates(&env, &g).unwrap();
        let model = ObservationModel {
            hypotheses: HypothesisSet::binary(RewardSpec::driving_robot()),
            beta: 0.2,
            likelihood,
            terms: EvidenceTerms::Full,
            alternatives,
            interaction_len: 10,
        };
        (env, model)
    }

    fn side_by_side() -> WorldState {
        WorldState {
            robot: AgentState::new(-0.1, 0.5, PI / 2.0, 5.0),
            human: AgentState::new(2.0, 0.0, PI / 2.0, 5.0),
            t: 0,
            env: EnvKind::Highway,
        }
    }

    #[test]
    fn colliding_robot_looks_non_coordinating() {
        for likelihood in [Likelihood::Boltzmann, Likelihood::Unnormalized] {
            let (env, model) = highway_model(likelihood);
            let s0 = side_by_side();
            let human = ActionTrajectory::constant(env.action(0.0, 0.0), 10);
            // Robot swerves right into the human's lane.
            let swerve: ActionTrajectory = (0..10)
                .map(|k| if k < 3 { env.action(-2.0, 0.0) } else { env.action(0.0, 0.0) })
                .collect();
            let rp = AgentPath::rollout(&env, Agent::Robot, &s0.robot, &swerve);
            let hp = AgentPath::rollout(&env, Agent::Human, &s0.human, &human);
            assert!(collision_steps(&env, &rp, &hp) > 0);
            let b = update_belief(&model, &env, &Belief::uniform(2), &s0, &swerve, &human).unwrap();
            assert!(b.weights()[1] > b.weights()[0], "{likelihood:?}: {:?}", b.weights());
        }
    }

    #[test]
    fn avoiding_robot_looks_coordinating_under_boltzmann() {
        let (env, model) = highway_model(Likelihood::Boltzmann);
        let s0 = side_by_side();
        let human = ActionTrajectory::constant(env.action(0.0, 0.0), 10);
        let stay = ActionTrajectory::constant(env.action(0.0, 0.0), 10);
        let b = update_belief(&model, &env, &Belief::uniform(2), &s0, &stay, &human).unwrap();
        assert!(b.weights()[0] > 0.5, "{:?}", b.weights());
        // The unnormalized reading cannot tell the hypotheses apart here.
        let (_, plain) = highway_model(Likelihood::Unnormalized);
        let b = update_belief(&plain, &env, &Belief::uniform(2), &s0, &stay, &human).unwrap();
        assert!((b.weights()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alternatives_set_must_be_nonempty() {
        assert!(CandidateSet::new(vec![], Provenance::Sampled).is_err());
    }

    fn arb_belief(n: usize) -> impl Strategy<Value = Belief> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| Belief::new(w.iter().map(|x| x / s).collect()).ok()).flatten()
        })
    }

    proptest! {
        #[test]
        fn update_properties(
            n in 2usize..6,
            seq in prop::collection::vec((prop::collection::vec(-50.0f64..50.0, 6), 0.01f64..3.0), 1..8),
            shift in -100.0f64..100.0,
        ) {
            let mut b = Belief::uniform(n);
            for (ev, beta) in &seq {
                let ev = &ev[..n];
                let next = posterior(&b, ev, *beta).unwrap();
                let shifted: Vec<f64> = ev.iter().map(|e| e + shift).collect();
                let next2 = posterior(&b, &shifted, *beta).unwrap();
                let sum: f64 = next.weights().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(next.weights().iter().all(|w| *w >= 0.0));
                for (a, c) in next.weights().iter().zip(next2.weights()) {
                    prop_assert!((a - c).abs() < 1e-9);
                }
                let h = belief_entropy(&next);
                prop_assert!(h >= 0.0 && h <= (n as f64).ln() + 1e-12);
                b = next;
            }
        }

        #[test]
        fn order_preservation(b in arb_belief(2), hi in -20.0f64..20.0, gap in 0.001f64..20.0, beta in 0.01f64..3.0) {
            let equal = Belief::uniform(2);
            let p = posterior(&equal, &[hi, hi - gap], beta).unwrap();
            prop_assert!(p.weights()[0] > p.weights()[1]);
            // From any interior prior the odds move toward the better-supported hypothesis.
            let (w0, w1) = (b.weights()[0], b.weights()[1]);
            prop_assume!(w0 > 1e-6 && w1 > 1e-6);
            let q = posterior(&b, &[hi, hi - gap], beta).unwrap();
            prop_assert!(q.weights()[0] / q.weights()[1] >= w0 / w1);
        }
    }
}

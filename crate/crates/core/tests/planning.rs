//! Baseline plans on preset fixtures.

use influence_core::harness::{spawn_rng, Experiment, ExperimentConfig};
use influence_core::influence::plan_stackelberg;
use influence_core::planner::AgentPath;
use influence_core::world::{Agent, EnvKind, WorldState};
use serde::Deserialize;

#[derive(Debug, Deserialize, PartialEq)]
struct Golden {
    robot_index: usize,
    human_index: usize,
}

fn experiment(env: EnvKind) -> Experiment {
    Experiment::new(&ExperimentConfig {
        env,
        ..ExperimentConfig::default()
    })
    .unwrap()
}

#[test]
fn highway_seed_zero_matches_golden_index() {
    let exp = experiment(EnvKind::Highway);
    let s0 = exp.env().sample_initial_state(&mut spawn_rng(0));
    let scene = exp.ctx.scene(s0).unwrap();
    let sol = plan_stackelberg(&scene, &exp.ctx.robot_spec, &exp.ctx.human_spec);
    let golden: Golden = serde_json::from_str(include_str!("golden/highway_seed0.json")).unwrap();
    let got = Golden {
        robot_index: sol.robot_index,
        human_index: sol.human_index,
    };
    assert_eq!(got, golden);
}

#[test]
fn corridor_robot_advances_when_human_is_distant() {
    let exp = experiment(EnvKind::Corridor);
    let mut s0: WorldState = exp.env().sample_initial_state(&mut spawn_rng(0));
    s0.human.y = -9.5;
    s0.human.speed = 0.0;
    let scene = exp.ctx.scene(s0).unwrap();
    let sol = plan_stackelberg(&scene, &exp.ctx.robot_spec, &exp.ctx.human_spec);
    let path = AgentPath::rollout(
        exp.env(),
        Agent::Robot,
        &s0.robot,
        exp.ctx.robot_candidates.get(sol.robot_index),
    );
    let (ax, ay) = exp.env().axis(Agent::Robot);
    let last = path.states.last().unwrap();
    let advance = (last.x - s0.robot.x) * ax + (last.y - s0.robot.y) * ay;
    assert!(advance > 0.0, "advance {advance}");
    assert!(path.progress.iter().all(|&p| p > 0.0));
}

//! Two-agent kinematic world: unicycle dynamics, road geometry and spawn sampling.
//!
//! Both agents follow the same explicit-Euler unicycle model and never push
//! each other around; a collision is a predicate on the joint state, not a
//! physical event. Because the agents are dynamically decoupled, a joint
//! rollout is the zip of two independent single-agent paths, which the planner
//! exploits heavily.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("trajectory length mismatch: robot has {robot} actions, human has {human}")]
    LengthMismatch { robot: usize, human: usize },
    #[error("action trajectory is empty")]
    EmptyTrajectory,
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
}

pub type Result<T> = std::result::Result<T, WorldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Robot,
    Human,
}

impl Agent {
    pub fn other(self) -> Agent {
        match self {
            Agent::Robot => Agent::Human,
            Agent::Human => Agent::Robot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Highway,
    Intersection,
    Roundabout,
    Corridor,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [
        EnvKind::Highway,
        EnvKind::Intersection,
        EnvKind::Roundabout,
        EnvKind::Corridor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Highway => "highway",
            EnvKind::Intersection => "intersection",
            EnvKind::Roundabout => "roundabout",
            EnvKind::Corridor => "corridor",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorldError::UnknownEnvironment(s.to_string()))
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(h: f64) -> f64 {
    let w = h.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Actuation and speed bounds shared by both agents of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
}

impl Limits {
    pub const CAR: Limits = Limits {
        v_max: 10.0,
        a_max: 4.0,
        omega_max: 2.0,
    };
    pub const PEDESTRIAN: Limits = Limits {
        v_max: 2.0,
        a_max: 4.0,
        omega_max: 2.0,
    };
}

/// One control input. Fields are private so every value in circulation is
/// finite and inside the clamps it was built with.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Action {
    turn_rate: f64,
    accel: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        turn_rate: 0.0,
        accel: 0.0,
    };

    pub fn new(turn_rate: f64, accel: f64, limits: &Limits) -> Action {
        Action {
            turn_rate: clamp_finite(turn_rate, limits.omega_max),
            accel: clamp_finite(accel, limits.a_max),
        }
    }

    pub fn turn_rate(&self) -> f64 {
        self.turn_rate
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }
}

fn clamp_finite(v: f64, bound: f64) -> f64 {
    if v.is_finite() {
        v.clamp(-bound, bound)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
    /// Signed; negative means reversing.
    pub speed: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
        AgentState {
            x,
            y,
            heading: wrap_angle(heading),
            speed,
        }
    }

    /// One explicit-Euler unicycle step.
    pub fn advance(&self, u: Action, dt: f64, v_max: f64) -> AgentState {
        AgentState {
            x: self.x + self.speed * self.heading.cos() * dt,
            y: self.y + self.speed * self.heading.sin() * dt,
            heading: wrap_angle(self.heading + u.turn_rate * dt),
            speed: (self.speed + u.accel * dt).clamp(-v_max, v_max),
        }
    }

    pub fn distance(&self, other: &AgentState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: AgentState,
    pub human: AgentState,
    pub t: usize,
    pub env: EnvKind,
}

impl WorldState {
    pub fn agent(&self, agent: Agent) -> &AgentState {
        match agent {
            Agent::Robot => &self.robot,
            Agent::Human => &self.human,
        }
    }
}

/// Open-loop control sequence `(u^0, ..., u^T)` for one agent.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ActionTrajectory(Vec<Action>);

impl ActionTrajectory {
    pub fn new(actions: Vec<Action>) -> ActionTrajectory {
        ActionTrajectory(actions)
    }

    pub fn constant(action: Action, len: usize) -> ActionTrajectory {
        ActionTrajectory(vec![action; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn get(&self, k: usize) -> Option<Action> {
        self.0.get(k).copied()
    }

    pub fn push(&mut self, action: Action) {
        self.0.push(action);
    }

    /// Truncates, or extends by repeating the last action (zero if empty).
    pub fn resized(&self, len: usize) -> ActionTrajectory {
        let mut out: Vec<Action> = self.0.iter().copied().take(len).collect();
        let fill = self.0.last().copied().unwrap_or(Action::ZERO);
        out.resize(len, fill);
        ActionTrajectory(out)
    }

    /// `self[..k]` followed by `tail`, resized to `len`.
    pub fn spliced(&self, k: usize, tail: &ActionTrajectory, len: usize) -> ActionTrajectory {
        let mut out: Vec<Action> = self.0.iter().copied().take(k).collect();
        out.extend_from_slice(&tail.0);
        ActionTrajectory(out).resized(len)
    }
}

impl FromIterator<Action> for ActionTrajectory {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        ActionTrajectory(iter.into_iter().collect())
    }
}

/// One completed interaction: realized states and the actions both agents
/// applied (padded to `states.len()`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionTrace {
    pub states: StateTrajectory,
    pub robot: ActionTrajectory,
    pub human: ActionTrajectory,
}

impl InteractionTrace {
    pub fn start(&self) -> &WorldState {
        self.states.first().expect("traces always hold the initial state")
    }
}

/// Rollout `(s^0, ..., s^T)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateTrajectory(Vec<WorldState>);

impl StateTrajectory {
    pub fn new(states: Vec<WorldState>) -> StateTrajectory {
        StateTrajectory(states)
    }

    pub fn states(&self) -> &[WorldState] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&WorldState> {
        self.0.first()
    }

    pub fn last(&self) -> Option<&WorldState> {
        self.0.last()
    }

    pub fn path(&self, agent: Agent) -> Vec<AgentState> {
        self.0.iter().map(|s| *s.agent(agent)).collect()
    }

    pub fn push(&mut self, s: WorldState) {
        self.0.push(s);
    }
}

/// Closed axis-aligned lane rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneRect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl LaneRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Closed annular sector; `sweep` is measured counter-clockwise from `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub cx: f64,
    pub cy: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub start: f64,
    pub sweep: f64,
}

impl ArcSegment {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let r = (x - self.cx).hypot(y - self.cy);
        if r < self.r_inner || r > self.r_outer {
            return false;
        }
        if self.sweep >= 2.0 * PI {
            return true;
        }
        let rel = ((y - self.cy).atan2(x - self.cx) - self.start).rem_euclid(2.0 * PI);
        rel <= self.sweep
    }
}

/// Uniform spawn box with a fixed heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub heading: f64,
}

impl SpawnRegion {
    pub fn point(x: f64, y: f64, heading: f64) -> SpawnRegion {
        SpawnRegion {
            x: [x, x],
            y: [y, y],
            heading,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        (sample_range(rng, self.x), sample_range(rng, self.y))
    }

    fn grid(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let lerp = move |r: [f64; 2], i: usize| r[0] + (r[1] - r[0]) * i as f64 / n as f64;
        (0..=n).flat_map(move |i| (0..=n).map(move |j| (lerp(self.x, i), lerp(self.y, j))))
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Scenario geometry plus integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub kind: EnvKind,
    #[serde(default)]
    pub lanes: Vec<LaneRect>,
    #[serde(default)]
    pub arcs: Vec<ArcSegment>,
    /// Direction of "forward along the road" for the robot, radians.
    pub robot_axis: f64,
    pub human_axis: f64,
    pub robot_spawn: SpawnRegion,
    pub human_spawn: SpawnRegion,
    pub robot_speed: f64,
    pub human_speed: f64,
    pub robot_radius: f64,
    pub human_radius: f64,
    pub dt: f64,
    /// Steps per interaction.
    pub steps: usize,
    pub limits: Limits,
    /// Agents closer than this are in each other's conflict window.
    pub conflict_distance: f64,
}

impl Environment {
    pub fn preset(kind: EnvKind) -> Environment {
        match kind {
            EnvKind::Highway => Environment::highway(),
            EnvKind::Intersection => Environment::intersection(),
            EnvKind::Roundabout => Environment::roundabout(),
            EnvKind::Corridor => Environment::corridor(),
        }
    }

    /// Two northbound lanes; the human starts in the right lane behind the robot.
    pub fn highway() -> Environment {
        Environment {
            kind: EnvKind::Highway,
            lanes: vec![LaneRect {
                x_min: -4.0,
                x_max: 4.0,
                y_min: -30.0,
                y_max: 150.0,
            }],
            arcs: vec![],
            robot_axis: PI / 2.0,
            human_axis: PI / 2.0,
            robot_spawn: SpawnRegion {
                x: [-2.0, 2.0],
                y: [8.0, 14.0],
                heading: PI / 2.0,
            },
            human_spawn: SpawnRegion {
                x: [2.0, 2.0],
                y: [-2.0, 2.0],
                heading: PI / 2.0,
            },
            robot_speed: 5.0,
            human_speed: 6.0,
            robot_radius: 1.0,
            human_radius: 1.0,
            dt: 0.1,
            steps: 50,
            limits: Limits::CAR,
            conflict_distance: 8.0,
        }
    }

    /// Four-way crossing; the human drives north, the robot east.
    pub fn intersection() -> Environment {
        Environment {
            kind: EnvKind::Intersection,
            lanes: vec![
                LaneRect {
                    x_min: -4.0,
                    x_max: 4.0,
                    y_min: -60.0,
                    y_max: 60.0,
                },
                LaneRect {
                    x_min: -60.0,
                    x_max: 60.0,
                    y_min: -4.0,
                    y_max: 4.0,
                },
            ],
            arcs: vec![],
            robot_axis: 0.0,
            human_axis: PI / 2.0,
            robot_spawn: SpawnRegion {
                x: [-28.0, -22.0],
                y: [-2.0, -2.0],
                heading: 0.0,
            },
            human_spawn: SpawnRegion {
                x: [2.0, 2.0],
                y: [-28.0, -22.0],
                heading: PI / 2.0,
            },
            robot_speed: 6.0,
            human_speed: 6.0,
            robot_radius: 1.0,
            human_radius: 1.0,
            dt: 0.1,
            steps: 50,
            limits: Limits::CAR,
            conflict_distance: 8.0,
        }
    }

    /// Ring road with north and south approaches; the robot circulates
    /// counter-clockwise from the west side of the ring.
    pub fn roundabout() -> Environment {
        Environment {
            kind: EnvKind::Roundabout,
            lanes: vec![
                LaneRect {
                    x_min: -4.0,
                    x_max: 4.0,
                    y_min: -60.0,
                    y_max: -10.0,
                },
                LaneRect {
                    x_min: -4.0,
                    x_max: 4.0,
                    y_min: 10.0,
                    y_max: 60.0,
                },
            ],
            arcs: vec![ArcSegment {
                cx: 0.0,
                cy: 0.0,
                r_inner: 6.0,
                r_outer: 14.0,
                start: 0.0,
                sweep: 2.0 * PI,
            }],
            robot_axis: -PI / 2.0,
            human_axis: PI / 2.0,
            robot_spawn: SpawnRegion {
                x: [-10.0, -10.0],
                y: [-1.0, 1.0],
                heading: -PI / 2.0,
            },
            human_spawn: SpawnRegion {
                x: [2.0, 2.0],
                y: [-30.0, -25.0],
                heading: PI / 2.0,
            },
            robot_speed: 5.0,
            human_speed: 6.0,
            robot_radius: 1.0,
            human_radius: 1.0,
            dt: 0.1,
            steps: 50,
            limits: Limits::CAR,
            conflict_distance: 8.0,
        }
    }

    /// Open room; the drone flies east and the human walks north, crossing at
    /// the room centre.
    pub fn corridor() -> Environment {
        Environment {
            kind: EnvKind::Corridor,
            lanes: vec![LaneRect {
                x_min: -10.0,
                x_max: 10.0,
                y_min: -10.0,
                y_max: 10.0,
            }],
            arcs: vec![],
            robot_axis: 0.0,
            human_axis: PI / 2.0,
            robot_spawn: SpawnRegion {
                x: [-5.0, -4.0],
                y: [0.0, 0.0],
                heading: 0.0,
            },
            human_spawn: SpawnRegion {
                x: [0.0, 0.0],
                y: [-5.0, -4.0],
                heading: PI / 2.0,
            },
            robot_speed: 1.0,
            human_speed: 1.0,
            robot_radius: 0.5,
            human_radius: 0.5,
            dt: 0.1,
            steps: 50,
            limits: Limits::PEDESTRIAN,
            conflict_distance: 3.0,
        }
    }

    pub fn radius(&self, agent: Agent) -> f64 {
        match agent {
            Agent::Robot => self.robot_radius,
            Agent::Human => self.human_radius,
        }
    }

    pub fn axis(&self, agent: Agent) -> (f64, f64) {
        let a = match agent {
            Agent::Robot => self.robot_axis,
            Agent::Human => self.human_axis,
        };
        (a.cos(), a.sin())
    }

    pub fn action(&self, turn_rate: f64, accel: f64) -> Action {
        Action::new(turn_rate, accel, &self.limits)
    }

    pub fn advance(&self, a: &AgentState, u: Action) -> AgentState {
        a.advance(u, self.dt, self.limits.v_max)
    }

    /// The dynamics `s' = f(s, u_R, u_H)`.
    pub fn step(&self, s: &WorldState, u_robot: Action, u_human: Action) -> WorldState {
        WorldState {
            robot: self.advance(&s.robot, u_robot),
            human: self.advance(&s.human, u_human),
            t: s.t + 1,
            env: s.env,
        }
    }

    /// States `s^0..s^T` for `T + 1` actions; the final action is never
    /// integrated, it only pairs with `s^T` in a reward sum.
    pub fn rollout(
        &self,
        s0: &WorldState,
        robot: &ActionTrajectory,
        human: &ActionTrajectory,
    ) -> Result<StateTrajectory> {
        if robot.len() != human.len() {
            return Err(WorldError::LengthMismatch {
                robot: robot.len(),
                human: human.len(),
            });
        }
        if robot.is_empty() {
            return Err(WorldError::EmptyTrajectory);
        }
        let mut states = Vec::with_capacity(robot.len());
        let mut s = *s0;
        states.push(s);
        for (ur, uh) in robot.actions().iter().zip(human.actions()).take(robot.len() - 1) {
            s = self.step(&s, *ur, *uh);
            states.push(s);
        }
        Ok(StateTrajectory(states))
    }

    /// Single-agent counterpart of [`Environment::rollout`].
    pub fn agent_path(&self, start: &AgentState, actions: &ActionTrajectory) -> Vec<AgentState> {
        let mut path = Vec::with_capacity(actions.len());
        if actions.is_empty() {
            return path;
        }
        let mut a = *start;
        path.push(a);
        for u in &actions.actions()[..actions.len() - 1] {
            a = self.advance(&a, *u);
            path.push(a);
        }
        path
    }

    /// Strict: agents exactly touching do not collide.
    #[inline]
    pub fn collides(&self, robot: &AgentState, human: &AgentState) -> bool {
        let (dx, dy) = (robot.x - human.x, robot.y - human.y);
        let reach = self.robot_radius + self.human_radius;
        dx * dx + dy * dy < reach * reach
    }

    pub fn check_collision(&self, s: &WorldState) -> bool {
        self.collides(&s.robot, &s.human)
    }

    pub fn on_road_at(&self, x: f64, y: f64) -> bool {
        self.lanes.iter().any(|l| l.contains(x, y)) || self.arcs.iter().any(|a| a.contains(x, y))
    }

    pub fn off_road(&self, s: &WorldState, agent: Agent) -> bool {
        let a = s.agent(agent);
        !self.on_road_at(a.x, a.y)
    }

    /// Signed speed along the agent's progress axis.
    pub fn progress_rate(&self, a: &AgentState, agent: Agent) -> f64 {
        let axis = match agent {
            Agent::Robot => self.robot_axis,
            Agent::Human => self.human_axis,
        };
        a.speed * (a.heading - axis).cos()
    }

    /// Position along the agent's progress axis.
    pub fn progress_coordinate(&self, a: &AgentState, agent: Agent) -> f64 {
        let (cx, cy) = self.axis(agent);
        a.x * cx + a.y * cy
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldState {
        let (rx, ry) = self.robot_spawn.sample(rng);
        let (hx, hy) = self.human_spawn.sample(rng);
        WorldState {
            robot: AgentState::new(rx, ry, self.robot_spawn.heading, self.robot_speed),
            human: AgentState::new(hx, hy, self.human_spawn.heading, self.human_speed),
            t: 0,
            env: self.kind,
        }
    }

    /// Checks spawn and parameter invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WorldError::InvalidEnvironment(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        let l = self.limits;
        if !(l.v_max > 0.0 && l.a_max >= 0.0 && l.omega_max >= 0.0) {
            return bad("limits must be nonnegative with v_max > 0".into());
        }
        if self.robot_radius < 0.0 || self.human_radius < 0.0 {
            return bad("footprint radii must be nonnegative".into());
        }
        if self.robot_speed.abs() > l.v_max || self.human_speed.abs() > l.v_max {
            return bad("initial speeds exceed v_max".into());
        }
        for (name, region) in [("robot", &self.robot_spawn), ("human", &self.human_spawn)] {
            if region.x[0] > region.x[1] || region.y[0] > region.y[1] {
                return bad(format!("{name} spawn region has inverted bounds"));
            }
            if let Some((x, y)) = region.grid(8).find(|&(x, y)| !self.on_road_at(x, y)) {
                return bad(format!("{name} spawn point ({x}, {y}) is off road"));
            }
        }
        let (cx, cy) = self.axis(Agent::Human);
        let proj = |r: &SpawnRegion| {
            r.grid(1)
                .map(|(x, y)| x * cx + y * cy)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p), hi.max(p))
                })
        };
        let (robot_lo, _) = proj(&self.robot_spawn);
        let (_, human_hi) = proj(&self.human_spawn);
        if robot_lo <= human_hi {
            return bad("robot spawn must lie strictly ahead of the human spawn".into());
        }
        Ok(())
    }
}

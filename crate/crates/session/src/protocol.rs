//! Wire messages. Every frame is a JSON object tagged by `type`.

use influence_core::harness::io::RecordRow;
use influence_core::world::{AgentState, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start { env: String, controller: String, seed: u64 },
    /// Normalized axes in [-1, 1]; steer -1 is full left, accel +1 full throttle.
    Input { steer: f64, accel: f64 },
    Reset,
}

const CLIENT_TYPES: [&str; 3] = ["start", "input", "reset"];

impl ClientMessage {
    /// Parses a text frame; the error string is sent back verbatim.
    pub fn parse(text: &str) -> Result<ClientMessage, String> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        let kind = value
            .get("type")
            .and_then(|t| t.as_str())
            .map(str::to_owned)
            .ok_or_else(|| "malformed message: missing string field `type`".to_string())?;
        if !CLIENT_TYPES.contains(&kind.as_str()) {
            return Err(format!("unknown message type `{kind}`"));
        }
        serde_json::from_value(value).map_err(|e| format!("malformed `{kind}` message: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub v: f64,
}

impl From<&AgentState> for Pose {
    fn from(a: &AgentState) -> Pose {
        Pose {
            x: a.x,
            y: a.y,
            h: a.heading,
            v: a.speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSummary {
    pub experiment_id: String,
    pub env: String,
    pub controller: String,
    pub seed: u64,
    pub interactions: usize,
    pub score: f64,
    pub records: Vec<RecordRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    State {
        t: usize,
        robot: Pose,
        human: Pose,
        score: f64,
        collision: bool,
    },
    InteractionEnd {
        i: usize,
        lane_progress: f64,
        reverse_time: f64,
        yielded: bool,
    },
    SessionEnd {
        summary: SessionSummary,
    },
    Error {
        detail: String,
    },
}

impl ServerMessage {
    pub fn state(s: &WorldState, score: f64, collision: bool) -> ServerMessage {
        ServerMessage::State {
            t: s.t,
            robot: Pose::from(&s.robot),
            human: Pose::from(&s.human),
            score,
            collision,
        }
    }

    pub fn error(detail: impl Into<String>) -> ServerMessage {
        ServerMessage::Error { detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

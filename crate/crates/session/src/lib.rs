//! Live sessions: a person steers the human car in real time against any
//! robot controller, over a JSON-over-websocket protocol. Finished sessions
//! produce the same records and CSV as batch experiments.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Pose, ServerMessage, SessionSummary};
pub use server::{router, serve, ServerConfig};
pub use session::{input_action, input_axes, Session, SessionConfig, SessionError};

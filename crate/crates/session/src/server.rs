//! Websocket front end: one [`Session`] per connection, driven by a fixed
//! tick. Inbound frames wait in a mailbox and are applied at the next tick
//! boundary, so an input that arrives before a tick is used by that tick.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::time::{interval, MissedTickBehavior};

use crate::protocol::ServerMessage;
use crate::session::{Session, SessionConfig};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session: SessionConfig,
    /// Wall-clock tick period; `None` ticks at the simulation's dt.
    pub tick: Option<Duration>,
}

impl ServerConfig {
    pub fn live() -> ServerConfig {
        ServerConfig {
            session: SessionConfig::live(),
            tick: None,
        }
    }

    pub fn tick_period(&self) -> Duration {
        self.tick.unwrap_or_else(|| {
            let dt = self.session.base.dt.unwrap_or(0.05);
            Duration::from_secs_f64(dt)
        })
    }
}

/// Routes: `GET /ws` upgrades to a session socket.
pub fn router(config: Arc<ServerConfig>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(config)
}

pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(config))).await
}

async fn upgrade(ws: WebSocketUpgrade, State(config): State<Arc<ServerConfig>>) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, config))
}

async fn run_socket(mut socket: WebSocket, config: Arc<ServerConfig>) {
    let mut session = Session::new(config.session.clone());
    let mut mailbox: Vec<String> = Vec::new();
    let mut ticker = interval(config.tick_period());
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            frame = socket.recv() => match frame {
                Some(Ok(Message::Text(text))) => mailbox.push(text.to_string()),
                Some(Ok(Message::Binary(_))) => mailbox.push(String::new()),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
                Some(Ok(_)) => {}
            },
            _ = ticker.tick() => {
                let mut out = Vec::new();
                for text in mailbox.drain(..) {
                    out.extend(session.handle_text(&text));
                }
                // A fresh initial state (start or reset) is shown for a full
                // tick before anything moves.
                let fresh = out.iter().any(|m| matches!(m, ServerMessage::State { t: 0, .. }));
                if session.is_running() && !fresh {
                    match tokio::task::block_in_place(|| session.tick()) {
                        Ok(msgs) => out.extend(msgs),
                        Err(e) => out.push(ServerMessage::error(e.to_string())),
                    }
                }
                for msg in out {
                    if socket.send(Message::Text(msg.to_json().into())).await.is_err() {
                        return;
                    }
                }
                if session.is_finished() {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            }
        }
    }
}

//! Websocket session server for live shared control.
//!
//! `GET /healthz` reports the loaded model. `GET /session` upgrades to a
//! websocket carrying one JSON message per text frame:
//!
//! ```text
//! client → server  {"type":"start","policy":"adaptive","context":[]}
//!                  {"type":"human_cmd","dx":0.1,"dy":0.0}
//!                  {"type":"stop"}
//! server → client  {"type":"tick","t":0,"pos":[x,y],"u_robot":[x,y],"omega":1.0,"half_width":0.0,"phase":"pre_checkpoint"}
//!                  {"type":"prediction","mean":[[x,y],...],"half_width":[[hx,hy],...]}
//!                  {"type":"done","effort":12.5,"goal_reached":true,"collided":false}
//!                  {"type":"error","message":"..."}
//! ```
//!
//! In real-time mode the plant advances every tick interval with the most
//! recent human command held. In lockstep mode each `human_cmd` advances
//! exactly one tick, which makes a session replayable against the headless
//! runner.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::control::{
    effort, ArbitrationPolicy, Observation, Operator, Phase, TrialRunner, TrialSetup, Vec2,
};
use crate::model::CesnModel;

/// Outgoing frames buffered per client before new ones are dropped.
const OUTBOX_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start {
        policy: String,
        #[serde(default)]
        context: Vec<f64>,
        /// Human share for the fixed policy; defaults to 0.5.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixed_omega: Option<f64>,
    },
    HumanCmd {
        dx: f64,
        dy: f64,
    },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Tick {
        t: usize,
        pos: Vec2,
        u_robot: Vec2,
        omega: f64,
        half_width: f64,
        phase: Phase,
    },
    Prediction {
        mean: Vec<Vec<f64>>,
        half_width: Vec<Vec<f64>>,
    },
    Done {
        effort: f64,
        goal_reached: bool,
        collided: bool,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickMode {
    /// Fixed-rate ticks with zero-order hold on human commands.
    RealTime(Duration),
    /// One tick per received `human_cmd`.
    Lockstep,
}

#[derive(Debug)]
pub struct AppState {
    pub model: Arc<CesnModel>,
    pub model_id: String,
    pub setup: TrialSetup,
    pub mode: TickMode,
}

impl AppState {
    /// Real-time pacing at the plant's tick rate.
    pub fn new(model: Arc<CesnModel>, model_id: String, setup: TrialSetup) -> Self {
        let period = Duration::from_secs_f64(1.0 / setup.plant.tick_hz);
        Self {
            model,
            model_id,
            setup,
            mode: TickMode::RealTime(period),
        }
    }

    pub fn with_mode(mut self, mode: TickMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub model_id: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", get(session))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_id: state.model_id.clone(),
    })
}

async fn session(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

/// The latest human command, held until replaced.
struct Held(Vec2);

impl Operator for Held {
    fn command(&mut self, _: &Observation) -> Vec2 {
        self.0
    }
}

struct Outbox(mpsc::Sender<String>);

impl Outbox {
    /// Queues a frame; drops it if the client is not keeping up.
    fn send(&self, msg: &ServerMessage) {
        let text = serde_json::to_string(msg).expect("server messages serialize");
        if self.0.try_send(text).is_err() {
            log::debug!("dropping frame for slow or closed client");
        }
    }

    fn error(&self, message: impl Into<String>) {
        self.send(&ServerMessage::Error {
            message: message.into(),
        });
    }
}

fn start_runner<'a>(
    state: &AppState,
    model: &'a CesnModel,
    policy: &str,
    context: &[f64],
    fixed_omega: Option<f64>,
) -> Result<TrialRunner<'a>, String> {
    let policy = ArbitrationPolicy::parse(
        policy,
        fixed_omega.unwrap_or(ArbitrationPolicy::DEFAULT_FIXED_OMEGA),
    )
    .map_err(|e| e.to_string())?;
    let mut setup = state.setup.clone();
    match context {
        [] => {}
        [gx, gy] => setup.plant.goal = Vec2::new(*gx, *gy),
        _ => {
            return Err(format!(
                "context must be empty or a 2-D goal, got {} values",
                context.len()
            ))
        }
    }
    TrialRunner::new(model, setup, policy).map_err(|e| e.to_string())
}

/// Advances one tick and reports it. Returns true once the trial is over.
fn tick(runner: &mut TrialRunner<'_>, held: &mut Held, out: &Outbox) -> bool {
    let had_prediction = runner.prediction().is_some();
    match runner.step(held) {
        Ok(Some(rec)) => out.send(&ServerMessage::Tick {
            t: rec.t,
            pos: rec.position,
            u_robot: rec.u_robot,
            omega: rec.omega,
            half_width: rec.half_width,
            phase: rec.phase,
        }),
        Ok(None) => {}
        Err(e) => {
            out.error(e.to_string());
            runner.stop();
        }
    }
    if !had_prediction {
        if let Some(p) = runner.prediction() {
            out.send(&ServerMessage::Prediction {
                mean: p.mean.clone(),
                half_width: p.half_width.clone(),
            });
        }
    }
    runner.is_done()
}

fn done_message(runner: &TrialRunner<'_>) -> ServerMessage {
    let log = runner.log();
    ServerMessage::Done {
        effort: effort(log).unwrap_or(0.0),
        goal_reached: log.goal_reached,
        collided: log.collided,
    }
}

async fn run_session(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::channel::<String>(OUTBOX_CAPACITY);
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let out = Outbox(tx);
    let model = Arc::clone(&state.model);
    let mut runner: Option<TrialRunner<'_>> = None;
    let mut held = Held(Vec2::ZERO);
    let mut finished: Option<ServerMessage> = None;

    let mut pacer = match state.mode {
        TickMode::RealTime(period) => {
            let mut iv = tokio::time::interval(period);
            iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            Some(iv)
        }
        TickMode::Lockstep => None,
    };

    loop {
        let ticking = runner.is_some() && finished.is_none();
        let incoming = tokio::select! {
            msg = stream.next() => msg,
            _ = async {
                match pacer.as_mut() {
                    Some(iv) if ticking => { iv.tick().await; }
                    _ => std::future::pending::<()>().await,
                }
            } => {
                let r = runner.as_mut().expect("ticking implies a runner");
                if tick(r, &mut held, &out) {
                    let done = done_message(r);
                    out.send(&done);
                    finished = Some(done);
                }
                continue;
            }
        };
        let text = match incoming {
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        let msg: ClientMessage = match serde_json::from_str(text.as_str()) {
            Ok(m) => m,
            Err(e) => {
                out.error(format!("bad message: {e}"));
                continue;
            }
        };
        match msg {
            ClientMessage::Start {
                policy,
                context,
                fixed_omega,
            } => {
                if runner.is_some() {
                    out.error("session already started");
                    continue;
                }
                match start_runner(&state, &model, &policy, &context, fixed_omega) {
                    Ok(r) => {
                        runner = Some(r);
                        if let Some(iv) = pacer.as_mut() {
                            iv.reset_immediately();
                        }
                    }
                    Err(e) => out.error(e),
                }
            }
            ClientMessage::HumanCmd { dx, dy } => {
                if !(dx.is_finite() && dy.is_finite()) {
                    out.error("human_cmd must be finite");
                    continue;
                }
                held.0 = Vec2::new(dx, dy);
                if state.mode == TickMode::Lockstep && finished.is_none() {
                    match runner.as_mut() {
                        Some(r) => {
                            if tick(r, &mut held, &out) {
                                let done = done_message(r);
                                out.send(&done);
                                finished = Some(done);
                            }
                        }
                        None => out.error("send start first"),
                    }
                }
            }
            ClientMessage::Stop => match (&finished, runner.as_mut()) {
                (Some(done), _) => out.send(done),
                (None, Some(r)) => {
                    r.stop();
                    let done = done_message(r);
                    out.send(&done);
                    finished = Some(done);
                }
                (None, None) => out.error("no session to stop"),
            },
        }
    }
    drop(out);
    let _ = writer.await;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_field_names() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"human_cmd","dx":0.5,"dy":-1}"#).unwrap();
        assert_eq!(m, ClientMessage::HumanCmd { dx: 0.5, dy: -1.0 });
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"start","policy":"fixed","context":[0.9,0.5]}"#).unwrap();
        assert!(matches!(m, ClientMessage::Start { fixed_omega: None, .. }));
        let tick = ServerMessage::Tick {
            t: 3,
            pos: Vec2::new(0.1, 0.5),
            u_robot: Vec2::ZERO,
            omega: 1.0,
            half_width: 0.0,
            phase: Phase::PreCheckpoint,
        };
        let v: serde_json::Value = serde_json::to_value(&tick).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["half_width", "omega", "phase", "pos", "t", "type", "u_robot"]);
        assert_eq!(v["type"], "tick");
        assert_eq!(v["phase"], "pre_checkpoint");
        let done = serde_json::to_value(ServerMessage::Done {
            effort: 1.0,
            goal_reached: true,
            collided: false,
        })
        .unwrap();
        assert_eq!(done["type"], "done");
        assert!(done.get("goal_reached").is_some() && done.get("collided").is_some());
    }
}

//! WebSocket front end and render worker.
//!
//! One network reader per connection parses and validates messages and
//! forwards them to a single render worker thread, which owns the
//! [`Session`]. The worker drains everything queued, applies it in order,
//! acknowledges each message, then renders at most one frame. With
//! [`MAX_IN_FLIGHT`] frames unacknowledged it skips rendering until a
//! `frame_ack` arrives, so the client always receives the latest state.

use std::collections::VecDeque;
use std::future::Future;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};

use crate::protocol::{parse_message, ClientMessage, ServerMessage};
use crate::session::Session;

pub const MAX_IN_FLIGHT: usize = 2;
pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug)]
pub enum Outgoing {
    Text(String),
    Binary(Vec<u8>),
}

enum WorkerCmd {
    Attach(UnboundedSender<Outgoing>),
    Detach,
    Message(Option<u64>, ClientMessage),
}

#[derive(Clone)]
struct AppState {
    worker: mpsc::Sender<WorkerCmd>,
    busy: Arc<AtomicBool>,
}

fn worker_loop(mut session: Session, rx: mpsc::Receiver<WorkerCmd>) {
    let mut out: Option<UnboundedSender<Outgoing>> = None;
    let mut in_flight: VecDeque<u32> = VecDeque::new();
    let send = |out: &Option<UnboundedSender<Outgoing>>, m: Outgoing| {
        if let Some(tx) = out {
            let _ = tx.send(m);
        }
    };
    while let Ok(first) = rx.recv() {
        let mut next = Some(first);
        while let Some(cmd) = next.take() {
            match cmd {
                WorkerCmd::Attach(tx) => {
                    out = Some(tx);
                    in_flight.clear();
                    session.dirty = true;
                }
                WorkerCmd::Detach => out = None,
                WorkerCmd::Message(seq, msg) => {
                    if let ClientMessage::FrameAck(a) = &msg {
                        in_flight.retain(|&id| id > a.frame_id);
                    }
                    let reply = match session.apply(&msg) {
                        Ok(()) => ServerMessage::Ack { seq },
                        Err(reason) => ServerMessage::Err { seq, reason, frame_id: None },
                    };
                    send(&out, Outgoing::Text(reply.to_json()));
                }
            }
            next = rx.try_recv().ok();
        }
        if out.is_some() && session.dirty && in_flight.len() < MAX_IN_FLIGHT {
            match session.render() {
                Ok(f) => {
                    in_flight.push_back(f.frame_id);
                    send(&out, Outgoing::Binary(f.packet));
                    send(&out, Outgoing::Text(f.stats_message.to_json()));
                }
                Err((id, reason)) => {
                    let m = ServerMessage::Err { seq: None, reason, frame_id: Some(id) };
                    send(&out, Outgoing::Text(m.to_json()));
                }
            }
        }
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    if state.busy.swap(true, Ordering::SeqCst) {
        let m = ServerMessage::Err {
            seq: None,
            reason: "session busy: one client at a time".into(),
            frame_id: None,
        };
        let _ = sink.send(Message::Text(m.to_json().into())).await;
        let _ = sink.close().await;
        return;
    }
    let (tx, mut rx) = unbounded_channel::<Outgoing>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            let msg = match m {
                Outgoing::Text(t) => Message::Text(t.into()),
                Outgoing::Binary(b) => Message::Binary(b.into()),
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });
    let _ = state.worker.send(WorkerCmd::Attach(tx.clone()));
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => match parse_message(text.as_str()) {
                Ok((seq, m)) => {
                    let _ = state.worker.send(WorkerCmd::Message(seq, m));
                }
                Err(r) => {
                    let m = ServerMessage::Err { seq: r.seq, reason: r.reason, frame_id: None };
                    let _ = tx.send(Outgoing::Text(m.to_json()));
                }
            },
            Message::Binary(_) => {
                let m = ServerMessage::Err {
                    seq: None,
                    reason: "binary messages are not accepted".into(),
                    frame_id: None,
                };
                let _ = tx.send(Outgoing::Text(m.to_json()));
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = state.worker.send(WorkerCmd::Detach);
    drop(tx);
    writer.abort();
    state.busy.store(false, Ordering::SeqCst);
}

/// Serves `/stream` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    session: Session,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (tx, rx) = mpsc::channel();
    let worker = std::thread::Builder::new()
        .name("render-worker".into())
        .spawn(move || worker_loop(session, rx))?;
    let state = AppState {
        worker: tx,
        busy: Arc::new(AtomicBool::new(false)),
    };
    let app = Router::new().route("/stream", get(ws_handler)).with_state(state);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    // The router (and with it the worker's sender) is gone once serve
    // returns, which ends the worker loop.
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
    result
}

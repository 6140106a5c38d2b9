//! HTTP side of `run` for the operator console: static files, the endpoint
//! list and a WebSocket that mirrors drone/telemetry verbatim.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::{Json, Router};
use log::{debug, info, warn};
use mindbus_mqtt::{Client, ClientOptions, QoS, TOPIC_DRONE_TELEMETRY};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

/// Frames a slow browser may fall behind before it skips ahead.
const RELAY_BACKLOG: usize = 256;

#[derive(Clone, Debug)]
pub struct ConsoleOptions {
    pub broker_addr: String,
    pub cortex_url: String,
    /// Built console files; without them `/` serves a placeholder page.
    pub static_dir: Option<PathBuf>,
}

struct Shared {
    telemetry: broadcast::Sender<String>,
    cortex_url: String,
}

pub struct ConsoleHandle {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    server: JoinHandle<()>,
    relay: JoinHandle<()>,
}

impl ConsoleHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(());
        let _ = self.server.await;
        self.relay.abort();
    }
}

pub fn router(telemetry: broadcast::Sender<String>, opts: &ConsoleOptions) -> Router {
    let shared = Arc::new(Shared { telemetry, cortex_url: opts.cortex_url.clone() });
    let app = Router::new().route("/telemetry", get(telemetry_ws)).route("/endpoints", get(endpoints));
    let app = match &opts.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(placeholder)),
    };
    app.with_state(shared)
}

/// Binds `listener` and starts relaying the broker's telemetry.
pub async fn serve(listener: TcpListener, opts: ConsoleOptions) -> Result<ConsoleHandle> {
    let addr = listener.local_addr()?;
    let (tx, _) = broadcast::channel(RELAY_BACKLOG);
    let relay = tokio::spawn(relay(opts.broker_addr.clone(), tx.clone()));
    let app = router(tx, &opts);
    let (stop, stop_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let shutdown = async {
            let _ = stop_rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            warn!("console server failed: {e}");
        }
    });
    info!("console on http://{addr}/ (telemetry relay at ws://{addr}/telemetry)");
    Ok(ConsoleHandle { addr, stop, server, relay })
}

async fn relay(broker_addr: String, tx: broadcast::Sender<String>) {
    let mut o = ClientOptions::new(broker_addr.clone(), "mindbus-console-relay");
    o.backoff_initial = Duration::from_millis(250);
    o.backoff_max = Duration::from_secs(2);
    let (client, mut messages) = loop {
        match Client::connect(o.clone()).await {
            Ok(c) => break c,
            Err(e) => debug!("relay: broker {broker_addr} unreachable: {e}"),
        }
        tokio::time::sleep(Duration::from_millis(500)).await;
    };
    if let Err(e) = client.subscribe(TOPIC_DRONE_TELEMETRY, QoS::AtMostOnce).await {
        warn!("relay: subscribe failed: {e}");
        return;
    }
    while let Some(m) = messages.recv().await {
        match String::from_utf8(m.payload) {
            // no receivers is fine
            Ok(text) => drop(tx.send(text)),
            Err(_) => warn!("relay: non-UTF-8 telemetry dropped"),
        }
    }
}

async fn telemetry_ws(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    let rx = shared.telemetry.subscribe();
    ws.on_upgrade(move |socket| forward(socket, rx))
}

async fn forward(mut socket: WebSocket, mut rx: broadcast::Receiver<String>) {
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("relay client skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn endpoints(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(json!({ "cortex": shared.cortex_url, "telemetry": "/telemetry" }))
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>mindbus</title><p>mindbus is running. Console files were not configured (--static-dir); \
          telemetry is at <code>/telemetry</code>, endpoints at <code>/endpoints</code>.</p>")
}

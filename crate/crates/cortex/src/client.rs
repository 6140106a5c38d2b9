//! Minimal JSON-RPC client for the service, used by the bridge and tests.

use std::collections::BTreeMap;

use futures_util::{SinkExt, StreamExt};
use mindbus_core::classifier::Detection;
use mindbus_core::pipeline::StreamName;
use mindbus_core::vocab::{FacialExpression, MentalCommand};
use mindbus_core::Profile64;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

use crate::auth::Credentials;
use crate::rpc::RpcError;

#[derive(Debug, Error)]
pub enum CallError {
    #[error("{0}")]
    Rpc(RpcError),
    #[error("connection closed")]
    Closed,
    #[error("websocket: {0}")]
    Ws(String),
    #[error("unexpected reply: {0}")]
    Reply(String),
}

impl CallError {
    pub fn code(&self) -> Option<i64> {
        match self {
            CallError::Rpc(e) => Some(e.code),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Notification {
    pub method: String,
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub stream: StreamName,
    pub time: f64,
    pub data: Value,
}

impl Notification {
    pub fn event(&self) -> Option<Event> {
        if self.method != "event" {
            return None;
        }
        Some(Event {
            stream: self.params.get("stream")?.as_str()?.parse().ok()?,
            time: self.params.get("time")?.as_f64()?,
            data: self.params.get("data")?.clone(),
        })
    }
}

impl Event {
    /// Parses a com/fac payload `[label, power]`. Event times mark the end
    /// of the window; `window_s` recovers its start.
    pub fn detection(&self, window_s: f64) -> Option<Detection> {
        let start = self.time - window_s;
        let arr = self.data.as_array()?;
        let label = arr.first()?.as_str()?;
        let power = arr.get(1)?.as_f64()?;
        match self.stream {
            StreamName::Com => Some(Detection::com(label.parse::<MentalCommand>().ok()?, power, start)),
            StreamName::Fac => Some(Detection::fac(label.parse::<FacialExpression>().ok()?, power, start)),
            _ => None,
        }
    }
}

type Pending = oneshot::Sender<Result<Value, CallError>>;

pub struct CortexClient {
    calls: mpsc::UnboundedSender<(String, Value, Pending)>,
}

impl CortexClient {
    /// Connects to `ws://host:port/`. Notifications arrive on the returned
    /// receiver, which closes when the connection does.
    pub async fn connect(url: &str) -> Result<(CortexClient, mpsc::UnboundedReceiver<Notification>), CallError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| CallError::Ws(e.to_string()))?;
        let (calls, mut call_rx) = mpsc::unbounded_channel::<(String, Value, Pending)>();
        let (note_tx, note_rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            let (mut sink, mut source) = ws.split();
            let mut pending: BTreeMap<u64, Pending> = BTreeMap::new();
            let mut next_id = 0u64;
            loop {
                tokio::select! {
                    call = call_rx.recv() => {
                        let Some((method, params, reply)) = call else { break };
                        next_id += 1;
                        let req = json!({ "jsonrpc": "2.0", "id": next_id, "method": method, "params": params });
                        if sink.send(Message::Text(req.to_string().into())).await.is_err() {
                            let _ = reply.send(Err(CallError::Closed));
                            break;
                        }
                        pending.insert(next_id, reply);
                    }
                    msg = source.next() => {
                        let text = match msg {
                            Some(Ok(Message::Text(t))) => t,
                            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                            Some(Ok(_)) => continue,
                        };
                        let Ok(v) = serde_json::from_str::<Value>(&text) else { continue };
                        if let Some(id) = v.get("id").and_then(Value::as_u64) {
                            if let Some(reply) = pending.remove(&id) {
                                let r = match (v.get("result"), v.get("error")) {
                                    (Some(r), _) => Ok(r.clone()),
                                    (_, Some(e)) => Err(CallError::Rpc(RpcError::new(
                                        e.get("code").and_then(Value::as_i64).unwrap_or(0),
                                        e.get("message").and_then(Value::as_str).unwrap_or(""),
                                    ))),
                                    _ => Err(CallError::Reply(text.to_string())),
                                };
                                let _ = reply.send(r);
                            }
                        } else if let Some(method) = v.get("method").and_then(Value::as_str) {
                            let params = v.get("params").cloned().unwrap_or(Value::Null);
                            let _ = note_tx.send(Notification { method: method.to_string(), params });
                        }
                    }
                }
            }
            for (_, reply) in pending {
                let _ = reply.send(Err(CallError::Closed));
            }
        });
        Ok((CortexClient { calls }, note_rx))
    }

    pub async fn call(&self, method: &str, params: Value) -> Result<Value, CallError> {
        let (tx, rx) = oneshot::channel();
        self.calls.send((method.to_string(), params, tx)).map_err(|_| CallError::Closed)?;
        rx.await.map_err(|_| CallError::Closed)?
    }

    pub async fn authorize(&self, c: &Credentials) -> Result<String, CallError> {
        let r = self.call("authorize", serde_json::to_value(c).expect("credentials serialize")).await?;
        r.get("cortexToken").and_then(Value::as_str).map(str::to_string).ok_or_else(|| CallError::Reply(r.to_string()))
    }

    pub async fn create_session(&self, token: &str) -> Result<String, CallError> {
        let r = self.call("createSession", json!({ "cortexToken": token })).await?;
        r.get("id").and_then(Value::as_str).map(str::to_string).ok_or_else(|| CallError::Reply(r.to_string()))
    }

    pub async fn subscribe(&self, token: &str, session: &str, streams: &[&str]) -> Result<Value, CallError> {
        self.call("subscribe", json!({ "cortexToken": token, "session": session, "streams": streams })).await
    }

    pub async fn load_profile(&self, token: &str, session: &str, profile: &Profile64) -> Result<Value, CallError> {
        let data = serde_json::to_value(profile).expect("profiles serialize");
        self.call(
            "setupProfile",
            json!({ "cortexToken": token, "session": session, "status": "load", "profile": profile.name, "data": data }),
        )
        .await
    }

    pub async fn training(&self, token: &str, session: &str, action: &str, label: &str) -> Result<Value, CallError> {
        self.call("training", json!({ "cortexToken": token, "session": session, "action": action, "label": label })).await
    }

    pub async fn inject(&self, token: &str, session: &str, kind: &str, label: &str, length: f64) -> Result<Value, CallError> {
        self.call(
            "injectEpisode",
            json!({ "cortexToken": token, "session": session, "kind": kind, "label": label, "length": length }),
        )
        .await
    }
}

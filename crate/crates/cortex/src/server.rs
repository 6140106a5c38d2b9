//! WebSocket transport around [`Service`]. One task owns the service and
//! paces the source; each connection gets a reader, a writer and a
//! shedding outbound queue.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message;

use crate::queue::{OutboundQueue, Outgoing};
use crate::service::{ConnId, Service};

const TICK: Duration = Duration::from_millis(20);

struct ConnQueue {
    queue: Mutex<OutboundQueue>,
    ready: Notify,
}

impl ConnQueue {
    fn push(&self, item: Outgoing) {
        self.queue.lock().expect("queue lock").push(item);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Outgoing> {
        self.queue.lock().expect("queue lock").pop()
    }
}

enum ConnEvent {
    Opened(ConnId, Arc<ConnQueue>),
    Text(ConnId, String),
    Closed(ConnId),
}

pub struct CortexHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    ended: watch::Receiver<bool>,
    task: JoinHandle<()>,
}

impl CortexHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}/", self.addr)
    }

    /// Resolves once a finite source has been played out.
    pub async fn wait_ended(&self) {
        let mut e = self.ended.clone();
        let _ = e.wait_for(|done| *done).await;
    }

    /// Stops the service and closes every connection.
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = (&mut self.task).await;
    }
}

pub async fn serve(addr: impl ToSocketAddrs, service: Service) -> io::Result<CortexHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stop_rx) = oneshot::channel();
    let (ended_tx, ended) = watch::channel(false);
    let task = tokio::spawn(run(listener, service, stop_rx, ended_tx));
    info!("cortex service listening on ws://{addr}/");
    Ok(CortexHandle { addr, stop: Some(stop), ended, task })
}

async fn run(listener: TcpListener, mut service: Service, mut stop: oneshot::Receiver<()>, ended: watch::Sender<bool>) {
    let start = Instant::now();
    let fs = service.sample_rate().as_f64();
    let speed = service.config().speed;
    let capacity = service.config().queue_capacity;
    let mut produced: u64 = 0;
    let mut queues: BTreeMap<ConnId, Arc<ConnQueue>> = BTreeMap::new();
    let (ev_tx, mut ev_rx) = mpsc::unbounded_channel();
    let (kill_tx, kill_rx) = watch::channel(false);
    let mut next_conn: ConnId = 0;
    let mut tick = tokio::time::interval(TICK);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        let out: Vec<(ConnId, Outgoing)> = tokio::select! {
            accepted = listener.accept() => {
                match accepted {
                    Ok((stream, peer)) => {
                        next_conn += 1;
                        debug!("connection {next_conn} from {peer}");
                        tokio::spawn(connection(next_conn, stream, capacity, ev_tx.clone(), kill_rx.clone()));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
                Vec::new()
            }
            Some(ev) = ev_rx.recv() => match ev {
                ConnEvent::Opened(conn, q) => {
                    queues.insert(conn, q);
                    Vec::new()
                }
                ConnEvent::Text(conn, text) => {
                    let now = start.elapsed().as_secs_f64();
                    service.handle_text(conn, &text, now).map(|r| (conn, Outgoing::control(r))).into_iter().collect()
                }
                ConnEvent::Closed(conn) => {
                    service.close(conn);
                    queues.remove(&conn);
                    Vec::new()
                }
            },
            _ = tick.tick() => {
                let due = (start.elapsed().as_secs_f64() * speed * fs) as u64;
                let n = due.saturating_sub(produced);
                produced += n;
                let out = service.advance(n as usize);
                if service.is_finished() {
                    let _ = ended.send(true);
                }
                out
            }
            _ = &mut stop => break,
        };
        for (conn, item) in out {
            if let Some(q) = queues.get(&conn) {
                q.push(item);
            }
        }
    }
    let _ = kill_tx.send(true);
    info!("cortex service stopped");
}

async fn connection(
    conn: ConnId,
    stream: TcpStream,
    capacity: usize,
    events: mpsc::UnboundedSender<ConnEvent>,
    mut kill: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == "/" {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some("not found".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let ws = match tokio_tungstenite::accept_hdr_async(stream, check_path).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("connection {conn}: handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let q = Arc::new(ConnQueue { queue: Mutex::new(OutboundQueue::new(capacity)), ready: Notify::new() });
    let _ = events.send(ConnEvent::Opened(conn, q.clone()));

    let mut writer_kill = kill.clone();
    let writer = tokio::spawn(async move {
        loop {
            match q.pop() {
                Some(item) => {
                    if sink.send(Message::Text(item.text.into())).await.is_err() {
                        break;
                    }
                }
                None => tokio::select! {
                    _ = q.ready.notified() => {}
                    _ = writer_kill.changed() => break,
                },
            }
        }
        let _ = sink.close().await;
    });

    loop {
        tokio::select! {
            msg = source.next() => match msg {
                Some(Ok(Message::Text(t))) => {
                    let _ = events.send(ConnEvent::Text(conn, t.to_string()));
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = kill.changed() => break,
        }
    }
    writer.abort();
    let _ = events.send(ConnEvent::Closed(conn));
}

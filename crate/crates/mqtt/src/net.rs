//! TCP transport: a tokio broker around [`BrokerState`] and a reconnecting
//! client around [`ClientSession`].

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::broker::{Action, BrokerState, ConnId};
use crate::client::{ClientSession, Message, Output, DEFAULT_KEEP_ALIVE};
use crate::codec::{decode, encode, Decoded, Packet, ProtocolError, QoS};

pub const DEFAULT_PORT: u16 = 1883;
const TICK: Duration = Duration::from_millis(100);

/// Pulls every complete packet off the front of `buf`.
fn drain_packets(buf: &mut Vec<u8>) -> Result<Vec<Packet>, ProtocolError> {
    let mut out = Vec::new();
    let mut used = 0;
    while let Decoded::Packet(p, n) = decode(&buf[used..])? {
        out.push(p);
        used += n;
    }
    buf.drain(..used);
    Ok(out)
}

async fn write_packet(wr: &mut OwnedWriteHalf, p: &Packet) -> io::Result<()> {
    let bytes = encode(p).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    wr.write_all(&bytes).await
}

enum BrokerEvent {
    Packet(ConnId, Packet),
    Closed(ConnId),
}

enum Outbound {
    Packet(Packet),
    Close,
}

/// A running broker. Dropping the handle leaves it running; call
/// [`BrokerHandle::shutdown`] to stop it and drop every connection.
pub struct BrokerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = (&mut self.task).await;
    }
}

/// Binds and starts a broker.
pub async fn start_broker(addr: impl ToSocketAddrs) -> io::Result<BrokerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stop_rx) = oneshot::channel();
    let task = tokio::spawn(run_broker(listener, stop_rx));
    info!("mqtt broker listening on {addr}");
    Ok(BrokerHandle { addr, stop: Some(stop), task })
}

async fn run_broker(listener: TcpListener, mut stop: oneshot::Receiver<()>) {
    let start = Instant::now();
    let mut state = BrokerState::new();
    let mut writers: BTreeMap<ConnId, mpsc::UnboundedSender<Outbound>> = BTreeMap::new();
    let (ev_tx, mut ev_rx) = mpsc::unbounded_channel();
    let (kill_tx, kill_rx) = watch::channel(false);
    let mut next_conn: ConnId = 0;
    let mut tick = tokio::time::interval(TICK);
    loop {
        let now = start.elapsed().as_secs_f64();
        let actions = tokio::select! {
            accepted = listener.accept() => {
                match accepted {
                    Ok((stream, peer)) => {
                        next_conn += 1;
                        debug!("connection {next_conn} from {peer}");
                        let (tx, rx) = mpsc::unbounded_channel();
                        writers.insert(next_conn, tx);
                        tokio::spawn(serve_connection(next_conn, stream, ev_tx.clone(), rx, kill_rx.clone()));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
                Vec::new()
            }
            Some(ev) = ev_rx.recv() => match ev {
                BrokerEvent::Packet(conn, p) => state.on_packet(conn, p, now),
                BrokerEvent::Closed(conn) => {
                    state.on_close(conn);
                    writers.remove(&conn);
                    Vec::new()
                }
            },
            _ = tick.tick() => state.retry(now),
            _ = &mut stop => break,
        };
        for action in actions {
            match action {
                Action::Send(conn, p) => {
                    if let Some(w) = writers.get(&conn) {
                        let _ = w.send(Outbound::Packet(p));
                    }
                }
                Action::Close(conn) => {
                    if let Some(w) = writers.remove(&conn) {
                        let _ = w.send(Outbound::Close);
                    }
                }
            }
        }
    }
    let _ = kill_tx.send(true);
    info!("mqtt broker stopped");
}

async fn serve_connection(
    conn: ConnId,
    stream: TcpStream,
    events: mpsc::UnboundedSender<BrokerEvent>,
    mut outbound: mpsc::UnboundedReceiver<Outbound>,
    mut kill: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        tokio::select! {
            r = rd.read(&mut chunk) => {
                let n = match r {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                buf.extend_from_slice(&chunk[..n]);
                match drain_packets(&mut buf) {
                    Ok(packets) => {
                        for p in packets {
                            let _ = events.send(BrokerEvent::Packet(conn, p));
                        }
                    }
                    Err(e) => {
                        warn!("connection {conn}: {e}; closing");
                        break;
                    }
                }
            }
            out = outbound.recv() => match out {
                Some(Outbound::Packet(p)) => {
                    if write_packet(&mut wr, &p).await.is_err() {
                        break;
                    }
                }
                Some(Outbound::Close) | None => break,
            },
            _ = kill.changed() => break,
        }
    }
    let _ = wr.shutdown().await;
    let _ = events.send(BrokerEvent::Closed(conn));
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach broker: {0}")]
    Io(#[from] io::Error),
    #[error("no CONNACK within {0:?}")]
    Timeout(Duration),
    #[error("broker refused the connection (return code {0})")]
    Refused(u8),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("subscription to {0:?} refused")]
    SubscribeRefused(String),
    #[error("client is shut down")]
    Closed,
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    pub addr: String,
    pub client_id: String,
    pub keep_alive: u16,
    pub clean_session: bool,
    pub connect_timeout: Duration,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
}

impl ClientOptions {
    pub fn new(addr: impl Into<String>, client_id: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            client_id: client_id.into(),
            keep_alive: DEFAULT_KEEP_ALIVE,
            clean_session: true,
            connect_timeout: Duration::from_secs(5),
            backoff_initial: Duration::from_secs(1),
            backoff_max: Duration::from_secs(30),
        }
    }
}

enum Command {
    Publish(String, Vec<u8>, QoS),
    Subscribe(String, QoS, oneshot::Sender<Result<(), ClientError>>),
    Flush(oneshot::Sender<()>),
    Disconnect(oneshot::Sender<()>),
}

/// Handle to a background connection. Incoming messages arrive, in order,
/// on the receiver returned by [`Client::connect`].
pub struct Client {
    commands: mpsc::UnboundedSender<Command>,
    status: watch::Receiver<bool>,
}

impl Client {
    /// Connects once (failing after `connect_timeout` at the latest), then
    /// keeps the connection up in the background, reconnecting with
    /// exponential backoff and resubscribing after every drop.
    pub async fn connect(opts: ClientOptions) -> Result<(Client, mpsc::UnboundedReceiver<Message>), ClientError> {
        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let (msg_tx, msg_rx) = mpsc::unbounded_channel();
        let (status_tx, status_rx) = watch::channel(false);
        let (first_tx, first_rx) = oneshot::channel();
        let runner = Runner {
            session: ClientSession::new(opts.client_id.clone(), opts.keep_alive, opts.clean_session),
            opts,
            start: Instant::now(),
            commands: cmd_rx,
            messages: msg_tx,
            status: status_tx,
            flush_waiters: Vec::new(),
            sub_waiters: Vec::new(),
        };
        tokio::spawn(runner.run(first_tx));
        first_rx.await.map_err(|_| ClientError::Closed)??;
        Ok((Client { commands: cmd_tx, status: status_rx }, msg_rx))
    }

    pub fn publish(&self, topic: impl Into<String>, payload: impl Into<Vec<u8>>, qos: QoS) -> Result<(), ClientError> {
        self.commands.send(Command::Publish(topic.into(), payload.into(), qos)).map_err(|_| ClientError::Closed)
    }

    /// Subscribes and waits for the broker's SUBACK.
    pub async fn subscribe(&self, topic: impl Into<String>, qos: QoS) -> Result<(), ClientError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Subscribe(topic.into(), qos, tx)).map_err(|_| ClientError::Closed)?;
        rx.await.map_err(|_| ClientError::Closed)?
    }

    /// Resolves once every QoS 1 publish so far has been acknowledged.
    pub async fn flush(&self) -> Result<(), ClientError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Flush(tx)).map_err(|_| ClientError::Closed)?;
        rx.await.map_err(|_| ClientError::Closed)
    }

    pub fn is_connected(&self) -> bool {
        *self.status.borrow()
    }

    /// Waits until the connection is up (or the client is gone).
    pub async fn wait_connected(&self) {
        let mut s = self.status.clone();
        let _ = s.wait_for(|up| *up).await;
    }

    pub async fn disconnect(self) {
        let (tx, rx) = oneshot::channel();
        if self.commands.send(Command::Disconnect(tx)).is_ok() {
            let _ = rx.await;
        }
    }
}

enum Ended {
    Lost(String),
    Stopped,
}

struct Runner {
    opts: ClientOptions,
    session: ClientSession,
    start: Instant,
    commands: mpsc::UnboundedReceiver<Command>,
    messages: mpsc::UnboundedSender<Message>,
    status: watch::Sender<bool>,
    flush_waiters: Vec<oneshot::Sender<()>>,
    sub_waiters: Vec<(String, oneshot::Sender<Result<(), ClientError>>)>,
}

impl Runner {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    async fn run(mut self, first: oneshot::Sender<Result<(), ClientError>>) {
        let mut first = Some(first);
        let mut backoff = self.opts.backoff_initial;
        loop {
            match self.connect_once().await {
                Ok((rd, wr, buf, outputs)) => {
                    if let Some(f) = first.take() {
                        let _ = f.send(Ok(()));
                    }
                    backoff = self.opts.backoff_initial;
                    let _ = self.status.send(true);
                    info!("mqtt client {} connected to {}", self.opts.client_id, self.opts.addr);
                    let ended = self.connected(rd, wr, buf, outputs).await;
                    self.session.disconnected();
                    let _ = self.status.send(false);
                    match ended {
                        Ended::Stopped => return,
                        Ended::Lost(why) => warn!("mqtt client {} lost connection: {why}", self.opts.client_id),
                    }
                }
                Err(e) => {
                    self.session.disconnected();
                    if let Some(f) = first.take() {
                        let _ = f.send(Err(e));
                        return;
                    }
                    warn!("mqtt client {} reconnect failed: {e}", self.opts.client_id);
                }
            }
            if self.wait(backoff).await {
                return;
            }
            backoff = (backoff * 2).min(self.opts.backoff_max);
        }
    }

    /// Sleeps while still accepting commands; true when asked to stop.
    async fn wait(&mut self, d: Duration) -> bool {
        let sleep = tokio::time::sleep(d);
        tokio::pin!(sleep);
        loop {
            tokio::select! {
                _ = &mut sleep => return false,
                cmd = self.commands.recv() => {
                    let now = self.now();
                    match cmd {
                        None => return true,
                        Some(Command::Disconnect(tx)) => {
                            let _ = tx.send(());
                            return true;
                        }
                        Some(Command::Publish(t, p, q)) => {
                            self.session.publish(t, p, q, now);
                        }
                        Some(Command::Subscribe(t, q, tx)) => {
                            self.session.subscribe(t.clone(), q, now);
                            self.sub_waiters.push((t, tx));
                        }
                        Some(Command::Flush(tx)) => self.flush_waiters.push(tx),
                    }
                }
            }
        }
    }

    async fn connect_once(&mut self) -> Result<(OwnedReadHalf, OwnedWriteHalf, Vec<u8>, Vec<Output>), ClientError> {
        let timeout = self.opts.connect_timeout;
        let attempt = async {
            let stream = TcpStream::connect(&self.opts.addr).await?;
            let _ = stream.set_nodelay(true);
            let (mut rd, mut wr) = stream.into_split();
            let connect = self.session.connect(self.start.elapsed().as_secs_f64());
            write_packet(&mut wr, &connect).await?;
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = rd.read(&mut chunk).await?;
                if n == 0 {
                    return Err(ClientError::Io(io::ErrorKind::UnexpectedEof.into()));
                }
                buf.extend_from_slice(&chunk[..n]);
                let (packet, used) = match decode(&buf).map_err(|e| ClientError::Protocol(e.to_string()))? {
                    Decoded::NeedMore(_) => continue,
                    Decoded::Packet(p, used) => (p, used),
                };
                buf.drain(..used);
                let outputs = self.session.on_packet(packet, self.start.elapsed().as_secs_f64());
                return match outputs.first() {
                    Some(Output::Connected { .. }) => Ok((rd, wr, buf, outputs)),
                    Some(Output::Refused(code)) => Err(ClientError::Refused(*code)),
                    _ => Err(ClientError::Protocol("expected CONNACK".into())),
                };
            }
        };
        match tokio::time::timeout(timeout, attempt).await {
            Ok(r) => r,
            Err(_) => Err(ClientError::Timeout(timeout)),
        }
    }

    async fn connected(&mut self, mut rd: OwnedReadHalf, mut wr: OwnedWriteHalf, mut buf: Vec<u8>, outputs: Vec<Output>) -> Ended {
        if let Err(e) = self.handle(&mut wr, outputs).await {
            return e;
        }
        let mut chunk = [0u8; 4096];
        let mut tick = tokio::time::interval(TICK);
        loop {
            let outputs = tokio::select! {
                r = rd.read(&mut chunk) => {
                    let n = match r {
                        Ok(0) => return Ended::Lost("broker closed the connection".into()),
                        Err(e) => return Ended::Lost(e.to_string()),
                        Ok(n) => n,
                    };
                    buf.extend_from_slice(&chunk[..n]);
                    let packets = match drain_packets(&mut buf) {
                        Ok(p) => p,
                        Err(e) => return Ended::Lost(e.to_string()),
                    };
                    let now = self.now();
                    packets.into_iter().flat_map(|p| self.session.on_packet(p, now)).collect()
                }
                cmd = self.commands.recv() => {
                    let now = self.now();
                    match cmd {
                        None => {
                            let _ = write_packet(&mut wr, &self.session.disconnect_packet()).await;
                            return Ended::Stopped;
                        }
                        Some(Command::Disconnect(tx)) => {
                            let _ = write_packet(&mut wr, &self.session.disconnect_packet()).await;
                            let _ = wr.shutdown().await;
                            let _ = tx.send(());
                            return Ended::Stopped;
                        }
                        Some(Command::Publish(t, p, q)) => self.session.publish(t, p, q, now),
                        Some(Command::Subscribe(t, q, tx)) => {
                            self.sub_waiters.push((t.clone(), tx));
                            self.session.subscribe(t, q, now)
                        }
                        Some(Command::Flush(tx)) => {
                            self.flush_waiters.push(tx);
                            Vec::new()
                        }
                    }
                }
                _ = tick.tick() => self.session.poll(self.now()),
            };
            if let Err(e) = self.handle(&mut wr, outputs).await {
                return e;
            }
        }
    }

    async fn handle(&mut self, wr: &mut OwnedWriteHalf, outputs: Vec<Output>) -> Result<(), Ended> {
        for o in outputs {
            match o {
                Output::Send(p) => write_packet(wr, &p).await.map_err(|e| Ended::Lost(e.to_string()))?,
                Output::Message(m) => {
                    let _ = self.messages.send(m);
                }
                Output::Subscribed(topic) => self.resolve_sub(&topic, true),
                Output::SubscribeFailed(topic) => {
                    warn!("subscription to {topic} refused");
                    self.resolve_sub(&topic, false);
                }
                Output::Close(why) => return Err(Ended::Lost(why.into())),
                Output::Connected { .. } | Output::Refused(_) => {}
            }
        }
        if self.session.unacked() == 0 {
            for w in self.flush_waiters.drain(..) {
                let _ = w.send(());
            }
        }
        Ok(())
    }

    fn resolve_sub(&mut self, topic: &str, granted: bool) {
        let (done, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.sub_waiters).into_iter().partition(|(t, _)| t == topic);
        self.sub_waiters = rest;
        for (_, tx) in done {
            let _ = tx.send(if granted { Ok(()) } else { Err(ClientError::SubscribeRefused(topic.to_string())) });
        }
    }
}

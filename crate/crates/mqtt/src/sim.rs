//! Deterministic network simulation: the broker and client state machines
//! exchange real encoded packets over links that drop and delay them.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::broker::{Action, BrokerState, ConnId};
use crate::client::{ClientSession, Output};
use crate::codec::{decode, encode, Decoded, Packet, QoS};

/// Simulation step, seconds.
pub const DT: f64 = 0.05;
/// Delay before a client whose link dropped connects again.
pub const RECONNECT_S: f64 = 1.0;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Dir {
    ToBroker,
    ToClient,
}

struct InFlight {
    at: f64,
    seq: u64,
    conn: ConnId,
    dir: Dir,
    bytes: Vec<u8>,
}

struct Node {
    session: ClientSession,
    conn: Option<ConnId>,
    reconnect_at: Option<f64>,
    received: Vec<Vec<u8>>,
}


struct Net {
    rng: ChaCha8Rng,
    loss: f64,
    max_delay: f64,
    seq: u64,
    flight: Vec<InFlight>,
    open: BTreeSet<ConnId>,
    dropped: u64,
    sent: u64,
}

impl Net {
    fn send(&mut self, now: f64, conn: ConnId, dir: Dir, p: &Packet) {
        self.sent += 1;
        if self.rng.random_bool(self.loss) {
            self.dropped += 1;
            return;
        }
        // every packet goes through the real codec
        let bytes = encode(p).unwrap();
        let at = now + self.rng.random_range(0.0..self.max_delay);
        self.seq += 1;
        self.flight.push(InFlight { at, seq: self.seq, conn, dir, bytes });
    }
}

pub struct Sim {
    now: f64,
    pub broker: BrokerState,
    nodes: Vec<Node>,
    net: Net,
    next_conn: ConnId,
}

impl Sim {
    /// `clients` are `(client_id, clean_session)`; all connect at t = 0.
    pub fn new(seed: u64, loss: f64, max_delay: f64, clients: &[(&str, bool)]) -> Self {
        let nodes = clients
            .iter()
            .map(|(id, clean)| Node {
                session: ClientSession::new(*id, 10, *clean),
                conn: None,
                reconnect_at: Some(0.0),
                received: Vec::new(),
            })
            .collect();
        Self {
            now: 0.0,
            broker: BrokerState::new(),
            nodes,
            net: Net {
                rng: ChaCha8Rng::seed_from_u64(seed),
                loss,
                max_delay,
                seq: 0,
                flight: Vec::new(),
                open: BTreeSet::new(),
                dropped: 0,
                sent: 0,
            },
            next_conn: 0,
        }
    }

    fn node_of(&self, conn: ConnId) -> Option<usize> {
        self.nodes.iter().position(|n| n.conn == Some(conn))
    }

    fn client_outputs(&mut self, i: usize, outputs: Vec<Output>) {
        for o in outputs {
            match o {
                Output::Send(p) => {
                    if let Some(conn) = self.nodes[i].conn {
                        self.net.send(self.now, conn, Dir::ToBroker, &p);
                    }
                }
                Output::Message(m) => self.nodes[i].received.push(m.payload),
                Output::Close(_) | Output::Refused(_) => self.drop_link(i),
                _ => {}
            }
        }
    }

    /// The client gives up on its connection (the transport close is reliable).
    fn drop_link(&mut self, i: usize) {
        if let Some(conn) = self.nodes[i].conn.take() {
            self.net.open.remove(&conn);
            self.broker.on_close(conn);
        }
        self.nodes[i].session.disconnected();
        self.nodes[i].reconnect_at = Some(self.now + RECONNECT_S);
    }

    fn broker_actions(&mut self, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send(conn, p) => {
                    if self.net.open.contains(&conn) {
                        self.net.send(self.now, conn, Dir::ToClient, &p);
                    }
                }
                Action::Close(conn) => {
                    self.net.open.remove(&conn);
                    if let Some(i) = self.node_of(conn) {
                        self.drop_link(i);
                    }
                }
            }
        }
    }

    pub fn step(&mut self) {
        self.now += DT;
        let now = self.now;
        for i in 0..self.nodes.len() {
            if self.nodes[i].reconnect_at.is_some_and(|t| t <= now) {
                self.nodes[i].reconnect_at = None;
                self.next_conn += 1;
                let conn = self.next_conn;
                self.nodes[i].conn = Some(conn);
                self.net.open.insert(conn);
                let p = self.nodes[i].session.connect(now);
                self.net.send(now, conn, Dir::ToBroker, &p);
            }
        }
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.net.flight).into_iter().partition(|f| f.at <= now);
        self.net.flight = later;
        let mut due = due;
        due.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.seq.cmp(&b.seq)));
        for f in due {
            if !self.net.open.contains(&f.conn) {
                continue;
            }
            let Ok(Decoded::Packet(p, _)) = decode(&f.bytes) else { panic!("codec round trip failed") };
            match f.dir {
                Dir::ToBroker => {
                    let actions = self.broker.on_packet(f.conn, p, now);
                    self.broker_actions(actions);
                }
                Dir::ToClient => {
                    if let Some(i) = self.node_of(f.conn) {
                        let out = self.nodes[i].session.on_packet(p, now);
                        self.client_outputs(i, out);
                    }
                }
            }
        }
        let actions = self.broker.retry(now);
        self.broker_actions(actions);
        for i in 0..self.nodes.len() {
            let out = self.nodes[i].session.poll(now);
            self.client_outputs(i, out);
        }
    }

    pub fn publish(&mut self, i: usize, topic: &str, payload: Vec<u8>, qos: QoS) {
        let out = self.nodes[i].session.publish(topic, payload, qos, self.now);
        self.client_outputs(i, out);
    }

    pub fn subscribe(&mut self, i: usize, topic: &str, qos: QoS) {
        let out = self.nodes[i].session.subscribe(topic, qos, self.now);
        self.client_outputs(i, out);
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Payloads delivered to client `i`, duplicates included.
    pub fn received(&self, i: usize) -> &[Vec<u8>] {
        &self.nodes[i].received
    }

    /// Packets handed to the network and packets it dropped.
    pub fn packet_counts(&self) -> (u64, u64) {
        (self.net.sent, self.net.dropped)
    }

    /// A coin flip from the simulation's own generator.
    pub fn chance(&mut self, p: f64) -> bool {
        self.net.rng.random_bool(p)
    }
}

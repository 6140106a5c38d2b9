//! Broker logic without I/O. Connections are identified by [`ConnId`]; the
//! caller feeds packets and clock ticks in and carries out the returned
//! [`Action`]s in order.

use std::collections::BTreeMap;

use crate::codec::{Connack, Connect, Packet, Publish, QoS, SubackCode};

pub type ConnId = u64;

/// Seconds between QoS 1 retransmissions.
pub const RETRY_INTERVAL_S: f64 = 2.0;
/// Deliveries per message before the connection is given up.
pub const MAX_ATTEMPTS: u32 = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send(ConnId, Packet),
    Close(ConnId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingDelivery {
    pub publish: Publish,
    pub deadline: f64,
    pub attempts: u32,
}

#[derive(Clone, Debug)]
struct Session {
    conn: Option<ConnId>,
    clean: bool,
    subscriptions: BTreeMap<String, QoS>,
    next_packet_id: u16,
    keep_alive: u16,
    last_seen: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BrokerState {
    sessions: BTreeMap<String, Session>,
    conns: BTreeMap<ConnId, String>,
    /// Unacknowledged QoS 1 deliveries keyed by (client id, packet id).
    pub pending_qos1: BTreeMap<(String, u16), PendingDelivery>,
}

impl BrokerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn client_of(&self, conn: ConnId) -> Option<&str> {
        self.conns.get(&conn).map(String::as_str)
    }

    pub fn connected_clients(&self) -> impl Iterator<Item = &str> {
        self.conns.values().map(String::as_str)
    }

    pub fn subscriptions(&self, client_id: &str) -> Option<&BTreeMap<String, QoS>> {
        self.sessions.get(client_id).map(|s| &s.subscriptions)
    }

    pub fn on_packet(&mut self, conn: ConnId, packet: Packet, now: f64) -> Vec<Action> {
        let Some(client_id) = self.conns.get(&conn).cloned() else {
            return match packet {
                Packet::Connect(c) => self.on_connect(conn, c, now),
                _ => self.close(conn),
            };
        };
        if let Some(s) = self.sessions.get_mut(&client_id) {
            s.last_seen = now;
        }
        match packet {
            Packet::Publish(p) => {
                let mut out = Vec::new();
                if let Some(id) = p.packet_id {
                    out.push(Action::Send(conn, Packet::Puback { packet_id: id }));
                }
                for (target, publish) in self.route(&client_id, &p, now) {
                    if let Some(c) = self.sessions.get(&target).and_then(|s| s.conn) {
                        out.push(Action::Send(c, Packet::Publish(publish)));
                    }
                }
                out
            }
            Packet::Puback { packet_id } => {
                self.pending_qos1.remove(&(client_id, packet_id));
                Vec::new()
            }
            Packet::Subscribe { packet_id, filters } => {
                let session = self.sessions.get_mut(&client_id).expect("connected client has a session");
                let codes = filters
                    .into_iter()
                    .map(|(filter, qos)| {
                        if filter.contains(['+', '#']) {
                            SubackCode::Failure
                        } else {
                            session.subscriptions.insert(filter, qos);
                            SubackCode::Granted(qos)
                        }
                    })
                    .collect();
                vec![Action::Send(conn, Packet::Suback { packet_id, codes })]
            }
            Packet::Pingreq => vec![Action::Send(conn, Packet::Pingresp)],
            Packet::Disconnect => self.close(conn),
            // a second CONNECT, or a server-to-client packet
            _ => self.close(conn),
        }
    }

    fn on_connect(&mut self, conn: ConnId, c: Connect, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        let client_id = if c.client_id.is_empty() {
            if !c.clean_session {
                out.push(Action::Send(conn, Packet::Connack(Connack { session_present: false, return_code: 2 })));
                out.push(Action::Close(conn));
                return out;
            }
            format!("auto-{conn}")
        } else {
            c.client_id
        };
        if let Some(old) = self.sessions.get(&client_id).and_then(|s| s.conn) {
            self.conns.remove(&old);
            out.push(Action::Close(old));
        }
        let resumed = !c.clean_session && self.sessions.get(&client_id).is_some_and(|s| !s.clean);
        if resumed {
            let s = self.sessions.get_mut(&client_id).expect("checked above");
            s.conn = Some(conn);
            s.keep_alive = c.keep_alive;
            s.last_seen = now;
        } else {
            self.drop_pending(&client_id);
            self.sessions.insert(
                client_id.clone(),
                Session {
                    conn: Some(conn),
                    clean: c.clean_session,
                    subscriptions: BTreeMap::new(),
                    next_packet_id: 1,
                    keep_alive: c.keep_alive,
                    last_seen: now,
                },
            );
        }
        self.conns.insert(conn, client_id.clone());
        out.push(Action::Send(conn, Packet::Connack(Connack { session_present: resumed, return_code: 0 })));
        for ((_, _), p) in self.pending_qos1.range_mut((client_id.clone(), 0)..=(client_id, u16::MAX)) {
            p.publish.dup = true;
            p.attempts = 1;
            p.deadline = now + RETRY_INTERVAL_S;
            out.push(Action::Send(conn, Packet::Publish(p.publish.clone())));
        }
        out
    }

    /// Exact-match fan-out of `publish` from `from_client`. Outbound qos is
    /// the lower of the publish and the subscription; QoS 1 copies get fresh
    /// packet ids and are tracked until acknowledged.
    pub fn route(&mut self, from_client: &str, publish: &Publish, now: f64) -> Vec<(String, Publish)> {
        let _ = from_client;
        let mut out = Vec::new();
        let targets: Vec<(String, QoS)> = self
            .sessions
            .iter()
            .filter_map(|(id, s)| s.subscriptions.get(&publish.topic).map(|&q| (id.clone(), q.min(publish.qos))))
            .collect();
        for (target, qos) in targets {
            let mut copy = Publish { qos, packet_id: None, dup: false, retain: false, ..publish.clone() };
            if qos == QoS::AtLeastOnce {
                let id = self.next_packet_id(&target);
                copy.packet_id = Some(id);
                let attempts = self.sessions[&target].conn.is_some() as u32;
                self.pending_qos1.insert(
                    (target.clone(), id),
                    PendingDelivery { publish: copy.clone(), deadline: now + RETRY_INTERVAL_S, attempts },
                );
            } else if self.sessions[&target].conn.is_none() {
                continue;
            }
            out.push((target, copy));
        }
        out
    }

    fn next_packet_id(&mut self, client_id: &str) -> u16 {
        let session = self.sessions.get_mut(client_id).expect("routing targets have sessions");
        loop {
            let id = session.next_packet_id;
            session.next_packet_id = session.next_packet_id.checked_add(1).unwrap_or(1);
            if !self.pending_qos1.contains_key(&(client_id.to_string(), id)) {
                return id;
            }
        }
    }

    /// Retransmits overdue QoS 1 deliveries and closes connections that have
    /// used up their attempts or gone silent past 1.5 keep-alive periods.
    pub fn retry(&mut self, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        let mut exhausted = Vec::new();
        for ((client, _), p) in self.pending_qos1.iter_mut() {
            let Some(conn) = self.sessions.get(client).and_then(|s| s.conn) else { continue };
            if p.deadline > now || exhausted.contains(&conn) {
                continue;
            }
            if p.attempts >= MAX_ATTEMPTS {
                exhausted.push(conn);
                continue;
            }
            p.attempts += 1;
            p.publish.dup = true;
            p.deadline = now + RETRY_INTERVAL_S;
            out.push(Action::Send(conn, Packet::Publish(p.publish.clone())));
        }
        let silent: Vec<ConnId> = self
            .sessions
            .values()
            .filter(|s| s.keep_alive > 0 && now - s.last_seen > 1.5 * s.keep_alive as f64)
            .filter_map(|s| s.conn)
            .collect();
        for conn in exhausted.into_iter().chain(silent) {
            out.retain(|a| !matches!(a, Action::Send(c, _) if *c == conn));
            out.extend(self.close(conn));
        }
        out
    }

    /// Forgets the connection; clean sessions go with it.
    pub fn on_close(&mut self, conn: ConnId) {
        let Some(client_id) = self.conns.remove(&conn) else { return };
        let Some(s) = self.sessions.get_mut(&client_id) else { return };
        s.conn = None;
        if s.clean {
            self.sessions.remove(&client_id);
            self.drop_pending(&client_id);
        }
    }

    fn close(&mut self, conn: ConnId) -> Vec<Action> {
        self.on_close(conn);
        vec![Action::Close(conn)]
    }

    fn drop_pending(&mut self, client_id: &str) {
        self.pending_qos1.retain(|(c, _), _| c != client_id);
    }
}

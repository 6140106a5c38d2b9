//! Client session logic without I/O: packet ids, QoS 1 retransmission,
//! resubscription and keep-alive, driven by packets and a clock.

use std::collections::BTreeMap;

use crate::broker::RETRY_INTERVAL_S;
use crate::codec::{Connect, Packet, Publish, QoS, SubackCode};

/// Seconds to wait for CONNACK.
pub const CONNECT_TIMEOUT_S: f64 = 5.0;
pub const DEFAULT_KEEP_ALIVE: u16 = 60;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Send(Packet),
    Message(Message),
    Connected { session_present: bool },
    Refused(u8),
    Subscribed(String),
    SubscribeFailed(String),
    /// The connection should be dropped (timeout or protocol violation).
    Close(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Link {
    Down,
    Connecting { since: f64 },
    Up,
}

#[derive(Clone, Debug)]
struct Outgoing {
    publish: Publish,
    deadline: f64,
}

#[derive(Clone, Debug)]
pub struct ClientSession {
    pub client_id: String,
    pub keep_alive: u16,
    pub clean_session: bool,
    link: Link,
    next_packet_id: u16,
    subscriptions: BTreeMap<String, QoS>,
    awaiting_suback: BTreeMap<u16, Vec<String>>,
    /// Unacknowledged QoS 1 publishes in send order.
    outgoing: Vec<Outgoing>,
    last_sent: f64,
    ping_sent: Option<f64>,
}

impl ClientSession {
    pub fn new(client_id: impl Into<String>, keep_alive: u16, clean_session: bool) -> Self {
        Self {
            client_id: client_id.into(),
            keep_alive,
            clean_session,
            link: Link::Down,
            next_packet_id: 1,
            subscriptions: BTreeMap::new(),
            awaiting_suback: BTreeMap::new(),
            outgoing: Vec::new(),
            last_sent: 0.0,
            ping_sent: None,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.link == Link::Up
    }

    /// QoS 1 publishes not yet acknowledged by the broker.
    pub fn unacked(&self) -> usize {
        self.outgoing.len()
    }

    pub fn subscriptions(&self) -> &BTreeMap<String, QoS> {
        &self.subscriptions
    }

    /// Starts a connection attempt on a fresh transport.
    pub fn connect(&mut self, now: f64) -> Packet {
        self.link = Link::Connecting { since: now };
        self.ping_sent = None;
        self.last_sent = now;
        Packet::Connect(Connect { client_id: self.client_id.clone(), keep_alive: self.keep_alive, clean_session: self.clean_session })
    }

    /// The transport went away.
    pub fn disconnected(&mut self) {
        self.link = Link::Down;
        self.ping_sent = None;
        self.awaiting_suback.clear();
    }

    fn next_id(&mut self) -> u16 {
        loop {
            let id = self.next_packet_id;
            self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
            if !self.outgoing.iter().any(|o| o.publish.packet_id == Some(id)) && !self.awaiting_suback.contains_key(&id) {
                return id;
            }
        }
    }

    fn send(&mut self, p: Packet, now: f64, out: &mut Vec<Output>) {
        self.last_sent = now;
        out.push(Output::Send(p));
    }

    /// Queues a publish. QoS 1 publishes survive disconnects and are resent
    /// after reconnecting; QoS 0 publishes made while down are dropped.
    pub fn publish(&mut self, topic: impl Into<String>, payload: impl Into<Vec<u8>>, qos: QoS, now: f64) -> Vec<Output> {
        let mut p = Publish::new(topic, payload, qos);
        let mut out = Vec::new();
        if qos == QoS::AtLeastOnce {
            p.packet_id = Some(self.next_id());
            self.outgoing.push(Outgoing { publish: p.clone(), deadline: now + RETRY_INTERVAL_S });
        }
        if self.is_connected() {
            self.send(Packet::Publish(p), now, &mut out);
        }
        out
    }

    /// Adds a subscription; it is (re)sent on every connect.
    pub fn subscribe(&mut self, topic: impl Into<String>, qos: QoS, now: f64) -> Vec<Output> {
        let topic = topic.into();
        self.subscriptions.insert(topic.clone(), qos);
        let mut out = Vec::new();
        if self.is_connected() {
            let id = self.next_id();
            self.awaiting_suback.insert(id, vec![topic.clone()]);
            self.send(Packet::Subscribe { packet_id: id, filters: vec![(topic, qos)] }, now, &mut out);
        }
        out
    }

    pub fn disconnect_packet(&mut self) -> Packet {
        self.link = Link::Down;
        Packet::Disconnect
    }

    pub fn on_packet(&mut self, packet: Packet, now: f64) -> Vec<Output> {
        let mut out = Vec::new();
        match (self.link, packet) {
            (Link::Connecting { .. }, Packet::Connack(ack)) => {
                if ack.return_code != 0 {
                    self.link = Link::Down;
                    out.push(Output::Refused(ack.return_code));
                    return out;
                }
                self.link = Link::Up;
                out.push(Output::Connected { session_present: ack.session_present });
                if !self.subscriptions.is_empty() {
                    let id = self.next_id();
                    let filters: Vec<(String, QoS)> = self.subscriptions.iter().map(|(t, q)| (t.clone(), *q)).collect();
                    self.awaiting_suback.insert(id, filters.iter().map(|f| f.0.clone()).collect());
                    self.send(Packet::Subscribe { packet_id: id, filters }, now, &mut out);
                }
                for i in 0..self.outgoing.len() {
                    let o = &mut self.outgoing[i];
                    o.publish.dup = true;
                    o.deadline = now + RETRY_INTERVAL_S;
                    let p = Packet::Publish(o.publish.clone());
                    self.send(p, now, &mut out);
                }
            }
            (Link::Up, Packet::Publish(p)) => {
                if let Some(id) = p.packet_id {
                    self.send(Packet::Puback { packet_id: id }, now, &mut out);
                }
                out.push(Output::Message(Message { topic: p.topic, payload: p.payload }));
            }
            (Link::Up, Packet::Puback { packet_id }) => {
                self.outgoing.retain(|o| o.publish.packet_id != Some(packet_id));
            }
            (Link::Up, Packet::Suback { packet_id, codes }) => {
                let topics = self.awaiting_suback.remove(&packet_id).unwrap_or_default();
                for (topic, code) in topics.into_iter().zip(codes) {
                    out.push(match code {
                        SubackCode::Failure => Output::SubscribeFailed(topic),
                        SubackCode::Granted(_) => Output::Subscribed(topic),
                    });
                }
            }
            (Link::Up, Packet::Pingresp) => self.ping_sent = None,
            (_, _) => out.push(Output::Close("unexpected packet from broker")),
        }
        out
    }

    /// Timers: connect timeout, keep-alive pings and QoS 1 retransmission.
    pub fn poll(&mut self, now: f64) -> Vec<Output> {
        let mut out = Vec::new();
        match self.link {
            Link::Down => {}
            Link::Connecting { since } => {
                if now - since > CONNECT_TIMEOUT_S {
                    self.link = Link::Down;
                    out.push(Output::Close("no CONNACK within the connect timeout"));
                }
            }
            Link::Up => {
                let ka = self.keep_alive as f64;
                if let Some(sent) = self.ping_sent {
                    if self.keep_alive > 0 && now - sent > ka {
                        self.disconnected();
                        out.push(Output::Close("no PINGRESP within the keep-alive period"));
                        return out;
                    }
                } else if self.keep_alive > 0 && now - self.last_sent >= ka / 2.0 {
                    self.ping_sent = Some(now);
                    self.send(Packet::Pingreq, now, &mut out);
                }
                for i in 0..self.outgoing.len() {
                    if self.outgoing[i].deadline <= now {
                        let o = &mut self.outgoing[i];
                        o.publish.dup = true;
                        o.deadline = now + RETRY_INTERVAL_S;
                        let p = Packet::Publish(o.publish.clone());
                        self.send(p, now, &mut out);
                    }
                }
            }
        }
        out
    }
}

//! Minimal MQTT 3.1.1: packet codec, broker and client, QoS 0 and 1 with
//! exact-match topics.

pub mod broker;
pub mod client;
pub mod codec;
pub mod net;
pub mod sim;

pub use client::Message;
pub use codec::{Packet, Publish, QoS};
pub use net::{start_broker, BrokerHandle, Client, ClientError, ClientOptions, DEFAULT_PORT};

/// Topic carrying drone commands.
pub const TOPIC_DRONE_CMD: &str = "drone/cmd";
/// Topic carrying drone telemetry.
pub const TOPIC_DRONE_TELEMETRY: &str = "drone/telemetry";

//! Headset API service: JSON-RPC 2.0 over WebSocket with a credential
//! handshake, sessions, training control and live com/fac/eeg/pow streams.
//!
//! ```text
//! -> {"jsonrpc":"2.0","id":1,"method":"authorize","params":{"appName":"mindbus","clientId":"mindbus-local","clientSecret":"..."}}
//! <- {"jsonrpc":"2.0","id":1,"result":{"cortexToken":"9f2c...","expiresIn":3600.0}}
//! <- {"jsonrpc":"2.0","method":"event","params":{"stream":"com","time":12.0,"data":["push",0.92]}}
//! ```

pub mod auth;
pub mod client;
pub mod config;
pub mod queue;
pub mod rpc;
pub mod server;
pub mod service;

pub use auth::Credentials;
pub use client::{CallError, CortexClient, Event, Notification};
pub use config::{CortexConfig, DEFAULT_PORT};
pub use server::{serve, CortexHandle};
pub use service::{ConnId, Service, Source};

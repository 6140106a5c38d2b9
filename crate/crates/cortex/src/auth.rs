//! Credential registry and bearer tokens.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rpc::{RpcError, INVALID_TOKEN, UNKNOWN_CLIENT, WRONG_SECRET};

pub const DEFAULT_TOKEN_TTL_S: f64 = 3600.0;
const TOKEN_BYTES: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Credentials {
    pub app_name: String,
    pub client_id: String,
    pub client_secret: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthToken {
    pub token: String,
    pub client_id: String,
    pub issued_at: f64,
    pub ttl: f64,
}

impl AuthToken {
    pub fn valid_at(&self, now: f64) -> bool {
        now >= self.issued_at && now - self.issued_at < self.ttl
    }
}

/// Random hex string from the thread-local CSPRNG.
pub fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

#[derive(Debug)]
pub struct TokenStore {
    registry: Vec<Credentials>,
    ttl: f64,
    tokens: BTreeMap<String, AuthToken>,
}

impl TokenStore {
    pub fn new(registry: Vec<Credentials>, ttl: f64) -> Self {
        Self { registry, ttl, tokens: BTreeMap::new() }
    }

    /// Checks the credentials and issues a fresh token. `now` is the
    /// service clock in seconds.
    pub fn authorize(&mut self, c: &Credentials, now: f64) -> Result<AuthToken, RpcError> {
        if c.app_name.is_empty() || c.client_id.is_empty() || c.client_secret.is_empty() {
            return Err(RpcError::invalid_params("appName, clientId and clientSecret must be non-empty"));
        }
        let known: Vec<&Credentials> = self.registry.iter().filter(|r| r.client_id == c.client_id).collect();
        if known.is_empty() {
            return Err(RpcError::new(UNKNOWN_CLIENT, format!("unknown client id {:?}", c.client_id)));
        }
        if !known.iter().any(|r| r.client_secret == c.client_secret && r.app_name == c.app_name) {
            return Err(RpcError::new(WRONG_SECRET, "client secret or app name does not match"));
        }
        self.tokens.retain(|_, t| t.valid_at(now));
        let token = AuthToken { token: random_hex(TOKEN_BYTES), client_id: c.client_id.clone(), issued_at: now, ttl: self.ttl };
        self.tokens.insert(token.token.clone(), token.clone());
        Ok(token)
    }

    pub fn check(&self, token: &str, now: f64) -> Result<&AuthToken, RpcError> {
        match self.tokens.get(token) {
            Some(t) if t.valid_at(now) => Ok(t),
            Some(_) => Err(RpcError::new(INVALID_TOKEN, "token expired")),
            None => Err(RpcError::new(INVALID_TOKEN, "unknown token")),
        }
    }
}

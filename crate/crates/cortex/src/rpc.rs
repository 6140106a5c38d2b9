//! JSON-RPC 2.0 framing: request validation, responses and notifications.

use serde_json::{json, Map, Value};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

pub const UNKNOWN_CLIENT: i64 = -32001;
pub const WRONG_SECRET: i64 = -32002;
pub const INVALID_TOKEN: i64 = -32003;
pub const ORDERING: i64 = -32004;
pub const INJECTION_DISABLED: i64 = -32005;
pub const UNKNOWN_SESSION: i64 = -32006;
pub const PROFILE_ERROR: i64 = -32007;

#[derive(Clone, Debug, PartialEq)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn invalid_params(message: impl Into<String>) -> Self {
        Self::new(INVALID_PARAMS, message)
    }

    pub fn to_json(&self) -> Value {
        json!({ "code": self.code, "message": self.message })
    }
}

impl std::fmt::Display for RpcError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.message, self.code)
    }
}

impl std::error::Error for RpcError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    /// `None` for notifications, which get no response.
    pub id: Option<Value>,
    pub method: String,
    pub params: Map<String, Value>,
}

fn valid_id(id: &Value) -> bool {
    matches!(id, Value::Null | Value::String(_) | Value::Number(_))
}

/// Validates one request object. On failure returns the id to answer with
/// (null when it cannot be recovered) and the error.
pub fn parse_request(v: Value) -> Result<Request, (Value, RpcError)> {
    let Value::Object(mut obj) = v else {
        return Err((Value::Null, RpcError::new(INVALID_REQUEST, "request must be an object")));
    };
    let id = match obj.remove("id") {
        None => None,
        Some(id) if valid_id(&id) => Some(id),
        Some(_) => return Err((Value::Null, RpcError::new(INVALID_REQUEST, "id must be a string, number or null"))),
    };
    let answer_id = id.clone().unwrap_or(Value::Null);
    if obj.get("jsonrpc") != Some(&Value::String("2.0".into())) {
        return Err((answer_id, RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\"")));
    }
    let method = match obj.remove("method") {
        Some(Value::String(m)) => m,
        _ => return Err((answer_id, RpcError::new(INVALID_REQUEST, "method must be a string"))),
    };
    let params = match obj.remove("params") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(p)) => p,
        // positional parameters are valid JSON-RPC but no method here takes them
        Some(Value::Array(_)) => return Err((answer_id, RpcError::invalid_params("params must be an object"))),
        Some(_) => return Err((answer_id, RpcError::new(INVALID_REQUEST, "params must be an object or array"))),
    };
    Ok(Request { id, method, params })
}

pub fn response(id: Value, result: Result<Value, RpcError>) -> Value {
    match result {
        Ok(r) => json!({ "jsonrpc": "2.0", "id": id, "result": r }),
        Err(e) => json!({ "jsonrpc": "2.0", "id": id, "error": e.to_json() }),
    }
}

pub fn notification(method: &str, params: Value) -> Value {
    json!({ "jsonrpc": "2.0", "method": method, "params": params })
}

/// Typed access to request parameters.
pub struct Params<'a>(pub &'a Map<String, Value>);

impl Params<'_> {
    pub fn str(&self, key: &str) -> Result<&str, RpcError> {
        match self.0.get(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(RpcError::invalid_params(format!("{key} must be a string"))),
            None => Err(RpcError::invalid_params(format!("missing {key}"))),
        }
    }

    pub fn non_empty(&self, key: &str) -> Result<&str, RpcError> {
        let s = self.str(key)?;
        if s.is_empty() {
            return Err(RpcError::invalid_params(format!("{key} must not be empty")));
        }
        Ok(s)
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<&str>, RpcError> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.str(key).map(Some),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, RpcError> {
        self.0
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| RpcError::invalid_params(format!("{key} must be a number")))
    }

    pub fn str_list(&self, key: &str) -> Result<Vec<&str>, RpcError> {
        let err = || RpcError::invalid_params(format!("{key} must be a list of strings"));
        self.0.get(key).and_then(Value::as_array).ok_or_else(err)?.iter().map(|v| v.as_str().ok_or_else(err)).collect()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }
}

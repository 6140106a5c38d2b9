//! The headset service without I/O: JSON-RPC dispatch, sessions, training
//! and per-session pipelines fed from one shared source.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use mindbus_core::classifier::{load_profile, save_profile, ClassifierError, Detection, TrainingSession, TrainingState, PROFILE_VERSION};
use mindbus_core::pipeline::{EventData, StreamEvent, StreamName};
use mindbus_core::signal::{BandId, ChannelId, EegFrame, SampleRate};
use mindbus_core::synth::{Episode, EpisodeKind, ScenarioScript, SynthError, SyntheticHeadset};
use mindbus_core::vocab::MentalCommand;
use mindbus_core::{Pipeline64, Profile64};
use serde_json::{json, Map, Value};

use crate::auth::{random_hex, Credentials, TokenStore};
use crate::config::CortexConfig;
use crate::queue::Outgoing;
use crate::rpc::{
    self, notification, parse_request, Params, RpcError, INJECTION_DISABLED, INVALID_PARAMS, INVALID_REQUEST,
    METHOD_NOT_FOUND, ORDERING, PARSE_ERROR, PROFILE_ERROR, UNKNOWN_SESSION,
};

pub type ConnId = u64;

/// Every method. All but authorize need a valid token.
pub const METHODS: [&str; 7] =
    ["authorize", "createSession", "subscribe", "unsubscribe", "setupProfile", "training", "injectEpisode"];

/// Where frames come from.
pub enum Source {
    Synthetic { headset: SyntheticHeadset, end_s: Option<f64> },
    Replay { frames: Vec<EegFrame<f64>>, pos: usize, rate: SampleRate },
}

impl Source {
    /// Endless synthetic stream; episodes arrive by injection.
    pub fn live(config: &CortexConfig) -> Result<Self, SynthError> {
        let headset = SyntheticHeadset::new(config.sample_rate, config.signatures.clone(), config.noise.clone())?;
        Ok(Source::Synthetic { headset, end_s: None })
    }

    /// Plays a script once, then ends.
    pub fn scripted(config: &CortexConfig, script: &ScenarioScript) -> Result<Self, SynthError> {
        script.validate()?;
        let mut headset = SyntheticHeadset::new(script.sample_rate, config.signatures.clone(), config.noise.clone())?;
        for ep in &script.episodes {
            headset.schedule(ep.clone())?;
        }
        Ok(Source::Synthetic { headset, end_s: Some(script.duration) })
    }

    pub fn replay(frames: Vec<EegFrame<f64>>, rate: SampleRate) -> Self {
        Source::Replay { frames, pos: 0, rate }
    }

    pub fn sample_rate(&self) -> SampleRate {
        match self {
            Source::Synthetic { headset, .. } => headset.sample_rate(),
            Source::Replay { rate, .. } => *rate,
        }
    }

    /// Timestamp of the next frame.
    pub fn now(&self) -> f64 {
        match self {
            Source::Synthetic { headset, .. } => headset.now(),
            Source::Replay { frames, pos, rate } => match frames.get(*pos) {
                Some(f) => f.timestamp,
                None => frames.last().map_or(0.0, |f| f.timestamp + 1.0 / rate.as_f64()),
            },
        }
    }

    fn next(&mut self) -> Option<EegFrame<f64>> {
        match self {
            Source::Synthetic { headset, end_s } => {
                let rate = headset.sample_rate();
                let done = |end: &f64| (headset.now() * rate.as_f64()).round() as usize >= rate.samples_for(*end);
                if end_s.as_ref().is_some_and(done) {
                    return None;
                }
                Some(headset.next_frame())
            }
            Source::Replay { frames, pos, .. } => {
                let f = frames.get(*pos).cloned();
                *pos += 1;
                f
            }
        }
    }

    fn inject(&mut self, episode: Episode) -> Result<(), RpcError> {
        match self {
            Source::Synthetic { headset, .. } => headset.schedule(episode).map_err(|e| RpcError::invalid_params(e.to_string())),
            Source::Replay { .. } => Err(RpcError::new(INJECTION_DISABLED, "a replayed recording cannot take injected episodes")),
        }
    }
}

struct Training {
    session: TrainingSession<f64>,
    /// Only windows starting at or after this time are recorded.
    since: f64,
}

struct Session {
    conn: ConnId,
    subscriptions: BTreeSet<StreamName>,
    pipeline: Pipeline64,
    training: Option<Training>,
}

pub struct Service {
    config: CortexConfig,
    tokens: TokenStore,
    source: Source,
    sessions: BTreeMap<String, Session>,
    ended: bool,
}

fn ordering(e: ClassifierError) -> RpcError {
    match e {
        ClassifierError::Ordering(_) | ClassifierError::InsufficientData { .. } => RpcError::new(ORDERING, e.to_string()),
        ClassifierError::Vocabulary(_) => RpcError::invalid_params(e.to_string()),
        other => RpcError::new(PROFILE_ERROR, other.to_string()),
    }
}

fn valid_profile_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Column names advertised for each stream.
pub fn stream_cols(s: StreamName) -> Vec<String> {
    match s {
        StreamName::Com | StreamName::Fac => vec!["act".into(), "pow".into()],
        StreamName::Eeg => ChannelId::ALL.iter().map(|c| c.name().to_string()).collect(),
        StreamName::Pow => ChannelId::ALL
            .iter()
            .flat_map(|c| BandId::ALL.iter().map(move |b| format!("{}/{}", c.name(), b.name())))
            .collect(),
    }
}

pub fn event_json(e: &StreamEvent) -> Value {
    notification("event", json!({ "stream": e.stream.as_str(), "time": e.time, "data": e.data_json() }))
}

impl Service {
    pub fn new(config: CortexConfig, source: Source) -> Result<Self, String> {
        config.validate()?;
        Ok(Self {
            tokens: TokenStore::new(config.credentials.clone(), config.token_ttl_s),
            config,
            source,
            sessions: BTreeMap::new(),
            ended: false,
        })
    }

    pub fn config(&self) -> &CortexConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> SampleRate {
        self.source.sample_rate()
    }

    /// Stream time of the next frame.
    pub fn stream_time(&self) -> f64 {
        self.source.now()
    }

    /// True once a finite source has run out.
    pub fn is_finished(&self) -> bool {
        self.ended
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Drops every session owned by a closed connection.
    pub fn close(&mut self, conn: ConnId) {
        self.sessions.retain(|_, s| s.conn != conn);
    }

    /// Handles one WebSocket text message. `now` is the service clock in
    /// seconds, used for token expiry. Returns the response text, if any.
    pub fn handle_text(&mut self, conn: ConnId, text: &str, now: f64) -> Option<String> {
        let v: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return Some(rpc::response(Value::Null, Err(RpcError::new(PARSE_ERROR, e.to_string()))).to_string()),
        };
        self.handle_value(conn, v, now).map(|v| v.to_string())
    }

    pub fn handle_value(&mut self, conn: ConnId, v: Value, now: f64) -> Option<Value> {
        match v {
            Value::Array(batch) if batch.is_empty() => {
                Some(rpc::response(Value::Null, Err(RpcError::new(INVALID_REQUEST, "empty batch"))))
            }
            Value::Array(batch) => {
                let out: Vec<Value> = batch.into_iter().filter_map(|r| self.handle_one(conn, r, now)).collect();
                (!out.is_empty()).then_some(Value::Array(out))
            }
            single => self.handle_one(conn, single, now),
        }
    }

    fn handle_one(&mut self, conn: ConnId, v: Value, now: f64) -> Option<Value> {
        match parse_request(v) {
            Err((id, e)) => Some(rpc::response(id, Err(e))),
            Ok(req) => {
                let result = self.call(conn, &req.method, &req.params, now);
                req.id.map(|id| rpc::response(id, result))
            }
        }
    }

    fn call(&mut self, conn: ConnId, method: &str, params: &Map<String, Value>, now: f64) -> Result<Value, RpcError> {
        let p = Params(params);
        if method == "authorize" {
            let creds = Credentials {
                app_name: p.str("appName")?.into(),
                client_id: p.str("clientId")?.into(),
                client_secret: p.str("clientSecret")?.into(),
            };
            let t = self.tokens.authorize(&creds, now)?;
            return Ok(json!({ "cortexToken": t.token, "expiresIn": t.ttl }));
        }
        if !METHODS.contains(&method) {
            return Err(RpcError::new(METHOD_NOT_FOUND, format!("no method {method:?}")));
        }
        self.tokens.check(p.str("cortexToken")?, now)?;
        if method == "createSession" {
            return Ok(self.create_session(conn));
        }
        let id = p.str("session")?.to_string();
        match self.sessions.get(&id) {
            Some(s) if s.conn == conn => {}
            _ => return Err(RpcError::new(UNKNOWN_SESSION, format!("no session {id:?} on this connection"))),
        }
        match method {
            "subscribe" => Ok(self.subscribe(&id, &p, true)?),
            "unsubscribe" => Ok(self.subscribe(&id, &p, false)?),
            "setupProfile" => self.setup_profile(&id, &p),
            "training" => self.training(&id, &p),
            "injectEpisode" => self.inject(&p),
            _ => unreachable!("method list checked above"),
        }
    }

    fn create_session(&mut self, conn: ConnId) -> Value {
        let id = random_hex(16);
        let pipeline = Pipeline64::new(self.source.sample_rate(), self.config.pipeline.clone(), None)
            .expect("pipeline config validated at startup");
        self.sessions.insert(id.clone(), Session { conn, subscriptions: BTreeSet::new(), pipeline, training: None });
        json!({ "id": id, "status": "opened", "subscriptions": [] })
    }

    fn subscribe(&mut self, id: &str, p: &Params, add: bool) -> Result<Value, RpcError> {
        let names = p.str_list("streams")?;
        let s = self.sessions.get_mut(id).expect("session checked");
        let mut success = Vec::new();
        let mut failure = Vec::new();
        for name in names {
            match name.parse::<StreamName>() {
                Ok(stream) => {
                    if add {
                        s.subscriptions.insert(stream);
                    } else {
                        s.subscriptions.remove(&stream);
                    }
                    success.push(json!({ "streamName": name, "cols": stream_cols(stream) }));
                }
                Err(e) => failure.push(json!({ "streamName": name, "code": INVALID_PARAMS, "message": e })),
            }
        }
        Ok(json!({ "success": success, "failure": failure }))
    }

    fn profile_path(&self, name: &str) -> Option<PathBuf> {
        self.config.profiles_dir.as_ref().map(|d| d.join(format!("{name}.json")))
    }

    fn setup_profile(&mut self, id: &str, p: &Params) -> Result<Value, RpcError> {
        let status = p.str("status")?;
        let name = p.str("profile")?.to_string();
        if !valid_profile_name(&name) {
            return Err(RpcError::invalid_params("profile names use letters, digits, '-' and '_' (at most 64)"));
        }
        let path = self.profile_path(&name);
        let session = self.sessions.get_mut(id).expect("session checked");
        match status {
            "create" => session.pipeline.set_profile(Some(Profile64::new(name.clone()))),
            "load" => {
                let profile: Profile64 = match (p.get("data"), &path) {
                    (Some(data), _) => {
                        let profile: Profile64 = serde_json::from_value(data.clone())
                            .map_err(|e| RpcError::new(PROFILE_ERROR, format!("malformed profile: {e}")))?;
                        if profile.version != PROFILE_VERSION {
                            return Err(RpcError::new(
                                PROFILE_ERROR,
                                format!("profile version {} cannot be migrated to {PROFILE_VERSION}", profile.version),
                            ));
                        }
                        profile
                    }
                    (None, Some(path)) => load_profile(path).map_err(|e| RpcError::new(PROFILE_ERROR, e.to_string()))?,
                    (None, None) => return Err(RpcError::new(PROFILE_ERROR, "no profile data given and no profile directory configured")),
                };
                session.pipeline.set_profile(Some(profile));
            }
            "save" => {
                let profile = session.pipeline.profile().ok_or_else(|| RpcError::new(PROFILE_ERROR, "no profile loaded"))?;
                if let Some(path) = &path {
                    save_profile(profile, path).map_err(|e| RpcError::new(PROFILE_ERROR, e.to_string()))?;
                }
            }
            "unload" => session.pipeline.set_profile(None),
            other => return Err(RpcError::invalid_params(format!("unknown status {other:?}"))),
        }
        if status != "save" {
            session.training = None;
        }
        let profile = session.pipeline.profile();
        Ok(json!({
            "action": status,
            "profile": name,
            "trainedLabels": profile.map(|p| p.trained_labels.iter().map(|l| l.as_str()).collect::<Vec<_>>()),
            "neutralTrained": profile.map(|p| p.neutral_trained()),
            "data": if status == "save" { profile.map(|p| serde_json::to_value(p).expect("profiles serialize")) } else { None },
        }))
    }

    fn training(&mut self, id: &str, p: &Params) -> Result<Value, RpcError> {
        let action = p.str("action")?;
        let label: MentalCommand = p.str("label")?.parse().map_err(|e: mindbus_core::vocab::UnknownLabel| RpcError::invalid_params(e.to_string()))?;
        let since = self.source.now();
        let session = self.sessions.get_mut(id).expect("session checked");
        let Some(profile) = session.pipeline.profile().cloned() else {
            return Err(RpcError::new(PROFILE_ERROR, "load or create a profile before training"));
        };
        let current = |s: &Session| s.training.as_ref().filter(|t| t.session.label == label).is_some();
        match action {
            "start" => {
                session.training = Some(Training { session: TrainingSession::start(profile.name.clone(), label), since });
            }
            "accept" => {
                if !current(session) {
                    return Err(RpcError::new(ORDERING, format!("no {label} recording to accept")));
                }
                let t = session.training.as_mut().expect("checked");
                let updated = t.session.accept(&profile).map_err(ordering)?;
                session.pipeline.set_profile(Some(updated));
            }
            "reject" => {
                if !current(session) {
                    return Err(RpcError::new(ORDERING, format!("no {label} recording to reject")));
                }
                session.training.as_mut().expect("checked").session.reject().map_err(ordering)?;
            }
            other => return Err(RpcError::invalid_params(format!("unknown action {other:?}"))),
        }
        let t = session.training.as_ref().expect("set above");
        Ok(json!({
            "action": action,
            "label": label.as_str(),
            "state": t.session.state(),
            "windows": t.session.windows().len(),
            "required": t.session.required(),
            "since": t.since,
        }))
    }

    fn inject(&mut self, p: &Params) -> Result<Value, RpcError> {
        if self.config.eval_mode {
            return Err(RpcError::new(INJECTION_DISABLED, "episode injection is disabled in eval mode"));
        }
        let kind = match p.str("kind")? {
            "mental" => EpisodeKind::Mental,
            "facial" => EpisodeKind::Facial,
            other => return Err(RpcError::invalid_params(format!("kind must be mental or facial, not {other:?}"))),
        };
        let length = p.f64("length")?;
        if !(length > 0.0 && length <= 60.0) {
            return Err(RpcError::invalid_params("length must be in (0, 60] seconds"));
        }
        let start = self.source.now();
        let episode = Episode { start_s: start, length_s: length, kind, label: p.str("label")?.to_string() };
        self.source.inject(episode)?;
        Ok(json!({ "start": start, "end": start + length }))
    }

    /// Pulls up to `frames` frames through every session's pipeline and
    /// returns the notifications to send.
    pub fn advance(&mut self, frames: usize) -> Vec<(ConnId, Outgoing)> {
        let mut out = Vec::new();
        for _ in 0..frames {
            if self.ended {
                break;
            }
            let Some(frame) = self.source.next() else {
                self.ended = true;
                let end = notification("streamEnd", json!({ "time": self.source.now() })).to_string();
                let mut conns: Vec<ConnId> = self.sessions.values().map(|s| s.conn).collect();
                conns.dedup();
                out.extend(conns.into_iter().map(|c| (c, Outgoing::control(end.clone()))));
                break;
            };
            for (id, s) in self.sessions.iter_mut() {
                Self::feed(id, s, &frame, &mut out);
            }
        }
        out
    }

    fn feed(id: &str, s: &mut Session, frame: &EegFrame<f64>, out: &mut Vec<(ConnId, Outgoing)>) {
        let result = s.pipeline.push(frame);
        let mut emit = |e: &StreamEvent| {
            if s.subscriptions.contains(&e.stream) {
                out.push((s.conn, Outgoing { stream: Some(e.stream), text: event_json(e).to_string() }));
            }
        };
        if let Some(e) = &result.eeg {
            emit(e);
        }
        let Some(w) = result.window else { return };
        let mut events = w.events();
        // a profile with only the neutral baseline reports "no command"
        if w.com.is_none() && s.pipeline.profile().is_some_and(|p| p.neutral_trained()) {
            let neutral = Detection::com(MentalCommand::Neutral, 0.0, w.start);
            events.push(StreamEvent { stream: StreamName::Com, time: w.time, data: EventData::Detection(neutral) });
        }
        for e in &events {
            emit(e);
        }
        if let Some(t) = s.training.as_mut() {
            if t.session.state() == TrainingState::Recording && w.start >= t.since - 1e-9 {
                if t.session.push(w.features) == TrainingState::Ready {
                    let msg = notification(
                        "training",
                        json!({ "session": id, "label": t.session.label.as_str(), "state": "ready", "time": w.time }),
                    );
                    out.push((s.conn, Outgoing::control(msg.to_string())));
                }
            }
        }
    }
}

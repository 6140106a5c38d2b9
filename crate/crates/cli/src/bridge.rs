//! Bridge runtime: cortex com/fac events in, drone messages out on MQTT.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use log::{debug, info, warn};
use mindbus_core::bridge::{BridgeState, MappingConfig};
use mindbus_core::vocab::DroneMessage;
use mindbus_core::Profile64;
use mindbus_cortex::{CallError, CortexClient, Credentials, Notification};
use mindbus_mqtt::{Client, ClientOptions, QoS, TOPIC_DRONE_CMD};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::logging::JsonlWriter;

const BACKOFF_MIN: Duration = Duration::from_millis(250);
const BACKOFF_MAX: Duration = Duration::from_secs(5);
const FLUSH_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone, Debug)]
pub struct BridgeOptions {
    /// `ws://host:port/`
    pub cortex_url: String,
    pub broker_addr: String,
    pub client_id: String,
    pub credentials: Credentials,
    pub profile: Profile64,
    pub mapping: MappingConfig,
    /// Length of a cortex window; event times mark window ends.
    pub window_s: f64,
    pub decision_log: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BridgeReport {
    pub events: u64,
    pub published: Vec<DroneMessage>,
    pub cortex_losses: u64,
}

pub struct BridgeHandle {
    stop: watch::Sender<bool>,
    task: JoinHandle<Result<BridgeReport>>,
}

impl BridgeHandle {
    /// Publishes "stop", waits for it to be acknowledged (briefly) and ends.
    pub async fn shutdown(self) -> Result<BridgeReport> {
        let _ = self.stop.send(true);
        self.task.await?
    }

    pub fn is_finished(&self) -> bool {
        self.task.is_finished()
    }
}

/// Checks the configuration and starts the bridge. A profile that is not
/// ready is a configuration error and nothing is started.
pub fn spawn(opts: BridgeOptions) -> Result<BridgeHandle> {
    if !opts.profile.is_ready() {
        bail!(
            "configuration error: profile {:?} is not ready (it needs neutral and at least one command)",
            opts.profile.name
        );
    }
    if let Err(e) = opts.mapping.validate() {
        bail!("configuration error: {e}");
    }
    let decisions = opts.decision_log.as_deref().map(JsonlWriter::create).transpose()?;
    let (stop, stop_rx) = watch::channel(false);
    let task = tokio::spawn(run(opts, decisions, stop_rx));
    Ok(BridgeHandle { stop, task })
}

enum Outcome {
    Lost,
    Stopped,
}

struct Bridge {
    opts: BridgeOptions,
    mqtt: Client,
    decisions: Option<JsonlWriter>,
    report: BridgeReport,
}

async fn run(opts: BridgeOptions, decisions: Option<JsonlWriter>, mut stop: watch::Receiver<bool>) -> Result<BridgeReport> {
    let Some(mqtt) = connect_mqtt(&opts, &mut stop).await else {
        return Ok(BridgeReport::default());
    };
    let mut b = Bridge { opts, mqtt, decisions, report: BridgeReport::default() };
    let mut backoff = BACKOFF_MIN;
    loop {
        match CortexClient::connect(&b.opts.cortex_url).await {
            Ok((client, notes)) => match b.session(client, notes, &mut stop).await {
                Ok(Outcome::Stopped) => break,
                Ok(Outcome::Lost) => {
                    b.report.cortex_losses += 1;
                    warn!("cortex connection lost: publishing stop");
                    b.publish(DroneMessage::Stop);
                    backoff = BACKOFF_MIN;
                }
                Err(CallError::Rpc(e)) => {
                    b.publish(DroneMessage::Stop);
                    bail!("cortex refused the bridge: {e}");
                }
                Err(e) => warn!("cortex setup failed: {e}"),
            },
            Err(e) => debug!("cortex unreachable at {}: {e}", b.opts.cortex_url),
        }
        tokio::select! {
            _ = tokio::time::sleep(backoff) => {}
            _ = stop.wait_for(|s| *s) => break,
        }
        backoff = (backoff * 2).min(BACKOFF_MAX);
    }
    b.publish(DroneMessage::Stop);
    if tokio::time::timeout(FLUSH_TIMEOUT, b.mqtt.flush()).await.is_err() {
        warn!("final stop not acknowledged within {FLUSH_TIMEOUT:?}");
    }
    b.mqtt.disconnect().await;
    info!("bridge stopped");
    Ok(b.report)
}

async fn connect_mqtt(opts: &BridgeOptions, stop: &mut watch::Receiver<bool>) -> Option<Client> {
    let mut backoff = BACKOFF_MIN;
    loop {
        let mut o = ClientOptions::new(opts.broker_addr.clone(), opts.client_id.clone());
        o.backoff_initial = BACKOFF_MIN;
        o.backoff_max = BACKOFF_MAX;
        match Client::connect(o).await {
            Ok((client, _)) => return Some(client),
            Err(e) => warn!("broker {} unreachable: {e}", opts.broker_addr),
        }
        tokio::select! {
            _ = tokio::time::sleep(backoff) => {}
            _ = stop.wait_for(|s| *s) => return None,
        }
        backoff = (backoff * 2).min(BACKOFF_MAX);
    }
}

impl Bridge {
    fn publish(&mut self, msg: DroneMessage) {
        info!("publishing {msg} on {TOPIC_DRONE_CMD}");
        if self.mqtt.publish(TOPIC_DRONE_CMD, msg.as_str(), QoS::AtLeastOnce).is_err() {
            warn!("mqtt client is gone; {msg} not published");
        }
        self.report.published.push(msg);
    }

    async fn session(
        &mut self,
        client: CortexClient,
        mut notes: mpsc::UnboundedReceiver<Notification>,
        stop: &mut watch::Receiver<bool>,
    ) -> Result<Outcome, CallError> {
        let token = client.authorize(&self.opts.credentials).await?;
        let session = client.create_session(&token).await?;
        client.load_profile(&token, &session, &self.opts.profile).await?;
        client.subscribe(&token, &session, &["com", "fac"]).await?;
        info!("bridge subscribed to com and fac on {} with profile {:?}", self.opts.cortex_url, self.opts.profile.name);
        let mut state = BridgeState::new();
        loop {
            tokio::select! {
                note = notes.recv() => {
                    let Some(note) = note else { return Ok(Outcome::Lost) };
                    if note.method == "streamEnd" {
                        info!("cortex stream ended");
                        continue;
                    }
                    let Some(d) = note.event().and_then(|e| Some((e.time, e.detection(self.opts.window_s)?))) else { continue };
                    self.report.events += 1;
                    let decision = state.on_event(&d.1, d.0, &self.opts.mapping);
                    if let Some(w) = self.decisions.as_mut() {
                        w.write(&decision);
                    }
                    if let Some(msg) = decision.message {
                        self.publish(msg);
                    }
                }
                _ = stop.wait_for(|s| *s) => return Ok(Outcome::Stopped),
            }
        }
    }
}

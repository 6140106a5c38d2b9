//! Drone runner: drone/cmd in, simulated flight, drone/telemetry out.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use log::{info, warn};
use mindbus_core::drone::{DroneState, FlightMode, KinematicsConfig, Telemetry};
use mindbus_mqtt::{Client, ClientOptions, QoS, TOPIC_DRONE_CMD, TOPIC_DRONE_TELEMETRY};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::logging::JsonlWriter;

#[derive(Clone, Debug)]
pub struct DroneOptions {
    pub broker_addr: String,
    pub client_id: String,
    pub kinematics: KinematicsConfig,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub telemetry_log: Option<PathBuf>,
}

pub struct DroneHandle {
    stop: watch::Sender<bool>,
    state: watch::Receiver<Telemetry>,
    task: JoinHandle<DroneState>,
}

impl DroneHandle {
    pub fn telemetry(&self) -> Telemetry {
        self.state.borrow().clone()
    }

    /// Resolves once the drone is on the ground, or after `limit`.
    pub async fn wait_grounded(&self, limit: Duration) -> bool {
        let mut s = self.state.clone();
        tokio::time::timeout(limit, s.wait_for(|t| t.mode == FlightMode::Grounded)).await.is_ok_and(|r| r.is_ok())
    }

    pub async fn shutdown(self) -> Result<DroneState> {
        let _ = self.stop.send(true);
        Ok(self.task.await?)
    }
}

/// Connects to the broker (retrying until it answers) and starts ticking.
pub async fn spawn(opts: DroneOptions) -> Result<DroneHandle> {
    opts.kinematics.validate().map_err(|e| anyhow::anyhow!("configuration error: {e}"))?;
    let (stop, mut stop_rx) = watch::channel(false);
    let mut o = ClientOptions::new(opts.broker_addr.clone(), opts.client_id.clone());
    // the broker keeps commands published while this client is away
    o.clean_session = false;
    o.backoff_initial = Duration::from_millis(250);
    o.backoff_max = Duration::from_secs(2);
    let mut attempt = Duration::from_millis(100);
    let (client, messages) = loop {
        match Client::connect(o.clone()).await {
            Ok(c) => break c,
            Err(e) => warn!("broker {} unreachable: {e}", opts.broker_addr),
        }
        tokio::time::sleep(attempt).await;
        attempt = (attempt * 2).min(Duration::from_secs(2));
    };
    client.subscribe(TOPIC_DRONE_CMD, QoS::AtLeastOnce).await?;
    let log = opts.telemetry_log.as_deref().map(JsonlWriter::create).transpose()?;
    let initial = DroneState::grounded();
    let (state_tx, state) = watch::channel(initial.telemetry());
    let task = tokio::spawn(async move {
        let mut sim = Sim { opts, client, messages, state: initial, state_tx, log, ticks: 0 };
        let period = Duration::from_secs_f64(sim.opts.kinematics.tick / sim.opts.speed);
        let mut clock = tokio::time::interval(period);
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
        loop {
            tokio::select! {
                _ = clock.tick() => sim.step(),
                _ = stop_rx.wait_for(|s| *s) => break,
            }
        }
        sim.emit();
        sim.client.disconnect().await;
        info!("drone stopped in {} at z = {:.2}", sim.state.mode, sim.state.z());
        sim.state
    });
    Ok(DroneHandle { stop, state, task })
}

struct Sim {
    opts: DroneOptions,
    client: Client,
    messages: tokio::sync::mpsc::UnboundedReceiver<mindbus_mqtt::Message>,
    state: DroneState,
    state_tx: watch::Sender<Telemetry>,
    log: Option<JsonlWriter>,
    ticks: u64,
}

impl Sim {
    fn step(&mut self) {
        let cfg = &self.opts.kinematics;
        let before = self.state.mode;
        // everything queued since the last tick applies before integrating
        while let Ok(m) = self.messages.try_recv() {
            match self.state.handle_payload(&m.payload, cfg) {
                Ok(msg) => info!("drone/cmd {msg} at t = {:.2}", self.state.t),
                Err(e) => warn!("{e}"),
            }
        }
        self.state.tick(cfg);
        self.ticks += 1;
        if self.state.mode != before {
            info!("drone {before} -> {} at t = {:.2}, z = {:.2}", self.state.mode, self.state.t, self.state.z());
        }
        if self.ticks % cfg.ticks_per_telemetry() as u64 == 0 {
            self.emit();
        } else {
            let _ = self.state_tx.send(self.state.telemetry());
        }
    }

    fn emit(&mut self) {
        let t = self.state.telemetry();
        let payload = serde_json::to_string(&t).expect("telemetry is plain data");
        if self.client.is_connected() {
            let _ = self.client.publish(TOPIC_DRONE_TELEMETRY, payload, QoS::AtMostOnce);
        }
        if let Some(w) = self.log.as_mut() {
            w.write(&t);
        }
        let _ = self.state_tx.send(t);
    }
}

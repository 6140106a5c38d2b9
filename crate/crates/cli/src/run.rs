//! `run`: the selected roles in one process, wired synthetic source ->
//! cortex -> bridge -> broker -> drone.

use std::collections::BTreeSet;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Result};
use log::{info, warn};
use mindbus_core::drone::{DroneState, Telemetry};
use mindbus_core::synth::ScenarioScript;
use mindbus_core::vocab::DroneMessage;
use mindbus_core::Profile64;
use mindbus_cortex::{serve as serve_cortex, CortexHandle, Service, Source};
use mindbus_mqtt::{start_broker, BrokerHandle, Client, ClientOptions, QoS, TOPIC_DRONE_CMD};
use tokio::net::TcpListener;

use crate::bridge::{self, BridgeHandle, BridgeOptions, BridgeReport};
use crate::console::{self, ConsoleHandle, ConsoleOptions};
use crate::drone::{self, DroneHandle, DroneOptions};
use crate::settings::Settings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Role {
    Broker,
    Cortex,
    Bridge,
    Drone,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Broker, Role::Cortex, Role::Bridge, Role::Drone];
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub roles: BTreeSet<Role>,
    pub settings: Settings,
    /// Scripted source for the cortex role; the run ends with it.
    pub scenario: Option<ScenarioScript>,
    pub profile: Option<Profile64>,
    /// Where the broker role listens, or the external broker to use.
    pub broker_addr: String,
    /// Where the cortex role listens, or the external service to use.
    pub cortex_addr: String,
    pub console_addr: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub telemetry_log: Option<PathBuf>,
    pub decision_log: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(settings: Settings) -> Self {
        Self {
            roles: Role::ALL.into_iter().collect(),
            settings,
            scenario: None,
            profile: None,
            broker_addr: format!("127.0.0.1:{}", mindbus_mqtt::DEFAULT_PORT),
            cortex_addr: format!("127.0.0.1:{}", mindbus_cortex::DEFAULT_PORT),
            console_addr: None,
            static_dir: None,
            telemetry_log: None,
            decision_log: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub bridge: Option<BridgeReport>,
    pub drone: Option<DroneState>,
}

/// `ws://host:port/` for a bare `host:port`; URLs pass through.
pub fn ws_url(addr: &str) -> String {
    if addr.starts_with("ws://") || addr.starts_with("wss://") {
        addr.to_string()
    } else {
        format!("ws://{addr}/")
    }
}

/// Listen failures, naming the port when it is taken.
pub fn bind_error(role: &str, addr: &str, e: io::Error) -> anyhow::Error {
    let port = addr.rsplit(':').next().unwrap_or(addr);
    if e.kind() == io::ErrorKind::AddrInUse {
        anyhow!("{role}: port {port} is already in use ({addr})")
    } else {
        anyhow!("{role}: cannot listen on {addr}: {e}")
    }
}

#[derive(Default)]
pub struct System {
    broker: Option<BrokerHandle>,
    cortex: Option<CortexHandle>,
    console: Option<ConsoleHandle>,
    bridge: Option<BridgeHandle>,
    drone: Option<DroneHandle>,
    broker_addr: String,
    cortex_url: String,
    settings: Settings,
}

impl System {
    /// Starts every role or none: on failure whatever started is stopped again.
    pub async fn start(opts: RunOptions) -> Result<System> {
        if opts.roles.is_empty() {
            bail!("nothing to run: select at least one role");
        }
        if opts.scenario.is_some() && !opts.roles.contains(&Role::Cortex) {
            bail!("a scenario drives the cortex role, which is not selected");
        }
        // checked before anything binds a port
        let profile = match (opts.roles.contains(&Role::Bridge), &opts.profile) {
            (true, Some(p)) if p.is_ready() => Some(p.clone()),
            (true, _) => bail!("configuration error: the bridge role needs a trained profile (--profile)"),
            (false, _) => None,
        };
        let mut sys = System { settings: opts.settings.clone(), ..System::default() };
        if let Err(e) = sys.start_roles(&opts, profile).await {
            sys.stop_all().await;
            return Err(e);
        }
        Ok(sys)
    }

    async fn start_roles(&mut self, opts: &RunOptions, profile: Option<Profile64>) -> Result<()> {
        let s = &opts.settings;
        self.broker_addr = opts.broker_addr.clone();
        if opts.roles.contains(&Role::Broker) {
            let b = start_broker(&opts.broker_addr).await.map_err(|e| bind_error("broker", &opts.broker_addr, e))?;
            self.broker_addr = b.local_addr().to_string();
            self.broker = Some(b);
        }
        self.cortex_url = ws_url(&opts.cortex_addr);
        if opts.roles.contains(&Role::Cortex) {
            let cfg = mindbus_cortex::CortexConfig { speed: s.speed, ..s.cortex.clone() };
            let source = match &opts.scenario {
                Some(script) => Source::scripted(&cfg, script),
                None => Source::live(&cfg),
            }
            .map_err(|e| anyhow!("cortex: {e}"))?;
            let service = Service::new(cfg, source).map_err(|e| anyhow!("cortex: {e}"))?;
            let bind = opts.cortex_addr.trim_start_matches("ws://").trim_end_matches('/');
            let c = serve_cortex(bind, service).await.map_err(|e| bind_error("cortex", bind, e))?;
            self.cortex_url = c.url();
            self.cortex = Some(c);
        }
        if let Some(addr) = &opts.console_addr {
            let listener = TcpListener::bind(addr).await.map_err(|e| bind_error("console", addr, e))?;
            let copts = ConsoleOptions {
                broker_addr: self.broker_addr.clone(),
                cortex_url: self.cortex_url.clone(),
                static_dir: opts.static_dir.clone(),
            };
            self.console = Some(console::serve(listener, copts).await?);
        }
        if opts.roles.contains(&Role::Drone) {
            self.drone = Some(
                drone::spawn(DroneOptions {
                    broker_addr: self.broker_addr.clone(),
                    client_id: "mindbus-drone".into(),
                    kinematics: s.kinematics.clone(),
                    speed: s.speed,
                    telemetry_log: opts.telemetry_log.clone(),
                })
                .await?,
            );
        }
        if let Some(profile) = profile {
            let credentials = s.cortex.credentials.first().cloned().ok_or_else(|| anyhow!("no cortex credentials configured"))?;
            self.bridge = Some(bridge::spawn(BridgeOptions {
                cortex_url: self.cortex_url.clone(),
                broker_addr: self.broker_addr.clone(),
                client_id: "mindbus-bridge".into(),
                credentials,
                profile,
                mapping: s.mapping.clone(),
                window_s: s.cortex.pipeline.window.window_s,
                decision_log: opts.decision_log.clone(),
            })?);
        }
        info!("running: broker {} cortex {}", self.broker_addr, self.cortex_url);
        Ok(())
    }

    pub fn broker_addr(&self) -> &str {
        &self.broker_addr
    }

    pub fn cortex_url(&self) -> &str {
        &self.cortex_url
    }

    pub fn console_addr(&self) -> Option<SocketAddr> {
        self.console.as_ref().map(ConsoleHandle::local_addr)
    }

    pub fn drone_telemetry(&self) -> Option<Telemetry> {
        self.drone.as_ref().map(DroneHandle::telemetry)
    }

    /// Resolves when a scripted cortex source has played out; never otherwise.
    pub async fn scenario_ended(&self) {
        match &self.cortex {
            Some(c) => c.wait_ended().await,
            None => std::future::pending().await,
        }
    }

    /// Ordered shutdown: "stop" goes out first, the drone gets time to land,
    /// then the services go down.
    pub async fn shutdown(mut self) -> Result<RunSummary> {
        let mut summary = RunSummary::default();
        if let Some(b) = self.bridge.take() {
            summary.bridge = Some(b.shutdown().await?);
        } else if self.drone.is_some() {
            publish_stop(&self.broker_addr).await;
        }
        if let Some(d) = self.drone.take() {
            let t = d.telemetry();
            let k = &self.settings.kinematics;
            let sim_s = t.z / k.descent_speed + 2.0 * k.tick + 1.0;
            let limit = Duration::from_secs_f64(sim_s / self.settings.speed + 1.0);
            if !d.wait_grounded(limit).await {
                warn!("drone still airborne after {limit:?}; stopping it anyway");
            }
            summary.drone = Some(d.shutdown().await?);
        }
        self.stop_all().await;
        Ok(summary)
    }

    async fn stop_all(&mut self) {
        if let Some(b) = self.bridge.take() {
            let _ = b.shutdown().await;
        }
        if let Some(d) = self.drone.take() {
            let _ = d.shutdown().await;
        }
        if let Some(c) = self.console.take() {
            c.shutdown().await;
        }
        if let Some(c) = self.cortex.take() {
            c.shutdown().await;
        }
        if let Some(b) = self.broker.take() {
            b.shutdown().await;
        }
    }
}

/// "stop" on behalf of a bridge that is not part of this process.
async fn publish_stop(broker_addr: &str) {
    let mut o = ClientOptions::new(broker_addr, "mindbus-run");
    o.connect_timeout = Duration::from_secs(2);
    match Client::connect(o).await {
        Ok((c, _)) => {
            let _ = c.publish(TOPIC_DRONE_CMD, DroneMessage::Stop.as_str(), QoS::AtLeastOnce);
            let _ = tokio::time::timeout(Duration::from_secs(2), c.flush()).await;
            c.disconnect().await;
        }
        Err(e) => warn!("could not publish stop: {e}"),
    }
}

/// Starts the roles and runs until `interrupt` resolves or the scenario ends.
pub async fn run(opts: RunOptions, interrupt: impl Future<Output = ()>) -> Result<RunSummary> {
    let sys = System::start(opts).await?;
    tokio::select! {
        _ = interrupt => info!("interrupted: shutting down"),
        _ = sys.scenario_ended() => info!("scenario finished: shutting down"),
    }
    sys.shutdown().await
}

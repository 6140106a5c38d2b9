use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use mindbus_cli::bridge::{self, BridgeOptions};
use mindbus_cli::drone::{self, DroneOptions};
use mindbus_cli::offline;
use mindbus_cli::run::{self, ws_url, Role, RunOptions};
use mindbus_cli::settings::{load_ready_profile, load_scenario, Settings, DEFAULT_SEED};
use mindbus_core::classifier::load_profile;
use mindbus_core::vocab::MentalCommand;
use mindbus_core::Profile64;
use mindbus_cortex::{serve, Service, Source};

/// Brain-computer-interface drone control on synthetic EEG.
///
/// Every flag can also be set through the environment variable named in
/// its help text (MB_ prefix).
#[derive(Debug, Parser)]
#[command(name = "mindbus", version)]
struct Cli {
    /// Seed for every random source.
    #[arg(long, global = true, env = "MB_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// JSON settings file.
    #[arg(long, global = true, env = "MB_CONFIG")]
    config: Option<PathBuf>,
    /// Profile JSON: written by train, read by eval, run and bridge.
    #[arg(long, global = true, env = "MB_PROFILE")]
    profile: Option<PathBuf>,
    /// Scenario script JSON; the benchmark session when absent.
    #[arg(long, global = true, env = "MB_SCENARIO")]
    scenario: Option<PathBuf>,
    /// MQTT broker host:port (listen address of the broker role).
    #[arg(long, global = true, env = "MB_BROKER_ADDR", default_value = "127.0.0.1:1883")]
    broker_addr: String,
    /// Cortex host:port or ws:// URL (listen address of the cortex role).
    #[arg(long, global = true, env = "MB_CORTEX_ADDR", default_value = "127.0.0.1:6868")]
    cortex_addr: String,
    /// Where eval writes its JSON report.
    #[arg(long, global = true, env = "MB_REPORT")]
    report: Option<PathBuf>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, env = "MB_LOG", default_value = "info")]
    log_level: LevelFilter,
    /// JSONL log file instead of stderr.
    #[arg(long, global = true, env = "MB_LOG_FILE")]
    log_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train neutral, then each command, from a scripted recording.
    Train {
        /// Commands to train (comma separated); all in the scenario by default.
        #[arg(long, env = "MB_LABELS", value_delimiter = ',', value_parser = parse_label)]
        labels: Vec<MentalCommand>,
        /// Start from an empty profile even if --profile exists.
        #[arg(long)]
        fresh: bool,
    },
    /// Score a profile offline; exits 1 below the accuracy floor.
    Eval {
        #[arg(long, env = "MB_FLOOR")]
        floor: Option<f64>,
    },
    /// Run several roles in one process.
    Run {
        #[arg(long, env = "MB_ROLES", value_delimiter = ',', default_value = "broker,cortex,bridge,drone")]
        roles: Vec<Role>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, env = "MB_SPEED")]
        speed: Option<f64>,
        /// Serve the operator console and telemetry relay here.
        #[arg(long, env = "MB_CONSOLE_ADDR")]
        console_addr: Option<String>,
        /// Built console files.
        #[arg(long, env = "MB_STATIC_DIR")]
        static_dir: Option<PathBuf>,
        #[arg(long, env = "MB_TELEMETRY_LOG")]
        telemetry_log: Option<PathBuf>,
        #[arg(long, env = "MB_DECISION_LOG")]
        decision_log: Option<PathBuf>,
    },
    /// MQTT broker.
    Broker,
    /// Headset API service over the synthetic source.
    Cortex {
        /// Refuse episode injection.
        #[arg(long, env = "MB_EVAL_MODE")]
        eval_mode: bool,
        #[arg(long, env = "MB_SPEED")]
        speed: Option<f64>,
    },
    /// Cortex detections to drone/cmd.
    Bridge {
        #[arg(long, env = "MB_DECISION_LOG")]
        decision_log: Option<PathBuf>,
    },
    /// Drone simulator on drone/cmd and drone/telemetry.
    Drone {
        #[arg(long, env = "MB_SPEED")]
        speed: Option<f64>,
        #[arg(long, env = "MB_TELEMETRY_LOG")]
        telemetry_log: Option<PathBuf>,
    },
}

fn parse_label(s: &str) -> Result<MentalCommand, String> {
    s.trim().parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = mindbus_cli::logging::init(cli.log_level, cli.log_file.as_deref()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

async fn interrupted() {
    let _ = tokio::signal::ctrl_c().await;
}

fn scenario(cli: &Cli) -> Result<Option<mindbus_core::synth::ScenarioScript>> {
    cli.scenario.as_deref().map(load_scenario).transpose()
}

fn profile_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "profile".into(), |s| s.to_string_lossy().into_owned())
}

async fn dispatch(cli: Cli) -> Result<ExitCode> {
    let settings = Settings::resolve(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Train { labels, fresh } => {
            let out = cli.profile.as_deref().ok_or_else(|| anyhow!("train needs --profile for its output"))?;
            let base: Option<Profile64> = match (out.exists(), fresh) {
                (true, false) => Some(load_profile(out).with_context(|| format!("loading {}", out.display()))?),
                _ => None,
            };
            let script = scenario(&cli)?;
            let labels = (!labels.is_empty()).then_some(labels.as_slice());
            let t = offline::train(&settings, script.as_ref(), base, &profile_name(out), labels)?;
            offline::save(&t.profile, out)?;
            for (label, n) in &t.windows {
                println!("{label:>8}: {n} windows");
            }
            let trained: Vec<&str> = t.profile.trained_labels.iter().map(|l| l.as_str()).collect();
            println!("saved {} (trained: neutral, {})", out.display(), trained.join(", "));
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { floor } => {
            let profile: Option<Profile64> = match cli.profile.as_deref() {
                Some(p) => Some(load_profile(p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            let report = offline::evaluate(&settings, profile.as_ref(), scenario(&cli)?.as_ref())?;
            if let Some(path) = &cli.report {
                offline::write_report(&report, path)?;
            }
            print!("{}", report.render_table());
            let floor = floor.unwrap_or(settings.accuracy_floor);
            if report.accuracy >= floor {
                println!("accuracy {:.3} >= floor {floor:.3}", report.accuracy);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("accuracy {:.3} is below the floor {floor:.3}", report.accuracy);
                Ok(ExitCode::from(1))
            }
        }
        Command::Run { roles, speed, console_addr, static_dir, telemetry_log, decision_log } => {
            let settings = match speed {
                Some(s) => settings.with_speed(*s),
                None => settings.clone().with_speed(settings.speed),
            };
            settings.validate()?;
            let roles: BTreeSet<Role> = roles.iter().copied().collect();
            let profile = match roles.contains(&Role::Bridge) {
                true => Some(load_ready_profile(cli.profile.as_deref())?),
                false => None,
            };
            let opts = RunOptions {
                roles,
                scenario: scenario(&cli)?,
                profile,
                broker_addr: cli.broker_addr.clone(),
                cortex_addr: cli.cortex_addr.clone(),
                console_addr: console_addr.clone(),
                static_dir: static_dir.clone(),
                telemetry_log: telemetry_log.clone(),
                decision_log: decision_log.clone(),
                ..RunOptions::new(settings)
            };
            let summary = run::run(opts, interrupted()).await?;
            if let Some(d) = summary.drone {
                info!("final drone mode {}", d.mode);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Broker => {
            let b = mindbus_mqtt::start_broker(&cli.broker_addr)
                .await
                .map_err(|e| run::bind_error("broker", &cli.broker_addr, e))?;
            interrupted().await;
            b.shutdown().await;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cortex { eval_mode, speed } => {
            let mut cfg = settings.cortex.clone();
            cfg.speed = speed.unwrap_or(settings.speed);
            cfg.eval_mode |= *eval_mode;
            cfg.validate().map_err(anyhow::Error::msg)?;
            let source = match scenario(&cli)? {
                Some(s) => Source::scripted(&cfg, &s),
                None => Source::live(&cfg),
            }
            .map_err(anyhow::Error::msg)?;
            let service = Service::new(cfg, source).map_err(anyhow::Error::msg)?;
            let bind = cli.cortex_addr.trim_start_matches("ws://").trim_end_matches('/').to_string();
            let h = serve(bind.as_str(), service).await.map_err(|e| run::bind_error("cortex", &bind, e))?;
            interrupted().await;
            h.shutdown().await;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bridge { decision_log } => {
            let profile = load_ready_profile(cli.profile.as_deref())?;
            let credentials = settings.cortex.credentials.first().cloned().ok_or_else(|| anyhow!("no credentials"))?;
            let h = bridge::spawn(BridgeOptions {
                cortex_url: ws_url(&cli.cortex_addr),
                broker_addr: cli.broker_addr.clone(),
                client_id: "mindbus-bridge".into(),
                credentials,
                profile,
                mapping: settings.mapping.clone(),
                window_s: settings.cortex.pipeline.window.window_s,
                decision_log: decision_log.clone(),
            })?;
            interrupted().await;
            h.shutdown().await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Drone { speed, telemetry_log } => {
            let h = drone::spawn(DroneOptions {
                broker_addr: cli.broker_addr.clone(),
                client_id: "mindbus-drone".into(),
                kinematics: settings.kinematics.clone(),
                speed: speed.unwrap_or(settings.speed),
                telemetry_log: telemetry_log.clone(),
            })
            .await?;
            interrupted().await;
            h.shutdown().await?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! The roles running together over real sockets, sped up.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use mindbus_cli::bridge::{self, BridgeOptions};
use mindbus_cli::settings::{load_ready_profile, load_scenario};
use mindbus_cli::{offline, run, Role, RunOptions, Settings, System};
use mindbus_core::classifier::Profile;
use mindbus_core::drone::{FlightMode, Telemetry};
use mindbus_core::Profile64;
use mindbus_cortex::{serve, Service, Source};
use mindbus_mqtt::{start_broker, Client, ClientOptions, Message, QoS, TOPIC_DRONE_CMD, TOPIC_DRONE_TELEMETRY};
use tokio::sync::mpsc::UnboundedReceiver;

const ANY_PORT: &str = "127.0.0.1:0";

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn settings(speed: f64) -> Settings {
    Settings::default().with_speed(speed)
}

fn pilot() -> Profile64 {
    let script = load_scenario(&scenario("training.json")).unwrap();
    offline::train(&Settings::default(), Some(&script), None, "pilot", None).unwrap().profile
}

fn options(speed: f64) -> RunOptions {
    RunOptions {
        profile: Some(pilot()),
        broker_addr: ANY_PORT.into(),
        cortex_addr: ANY_PORT.into(),
        ..RunOptions::new(settings(speed))
    }
}

async fn listen(broker: &str, topic: &str, id: &str) -> (Client, UnboundedReceiver<Message>) {
    let (c, rx) = Client::connect(ClientOptions::new(broker, id)).await.unwrap();
    c.subscribe(topic, QoS::AtLeastOnce).await.unwrap();
    (c, rx)
}

fn text(m: &Message) -> String {
    String::from_utf8_lossy(&m.payload).into_owned()
}

/// Everything already delivered, then whatever arrives within `quiet`.
async fn drain(rx: &mut UnboundedReceiver<Message>, quiet: Duration) -> Vec<String> {
    let mut out = Vec::new();
    while let Ok(Some(m)) = tokio::time::timeout(quiet, rx.recv()).await {
        out.push(text(&m));
    }
    out
}

fn modes(log: &std::path::Path) -> Vec<FlightMode> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Telemetry>(l).unwrap().mode)
        .collect()
}

async fn until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let t0 = Instant::now();
    while t0.elapsed() < limit {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    f()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn a_scripted_minute_takes_off_and_ends_grounded() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("telemetry.jsonl");
    let opts = RunOptions {
        scenario: Some(load_scenario(&scenario("demo.json")).unwrap()),
        telemetry_log: Some(log.clone()),
        decision_log: Some(dir.path().join("decisions.jsonl")),
        ..options(10.0)
    };
    let summary = run(opts, std::future::pending()).await.unwrap();
    let modes = modes(&log);
    assert!(modes.contains(&FlightMode::TakingOff));
    assert_eq!(modes.last(), Some(&FlightMode::Grounded));
    assert_eq!(summary.drone.unwrap().mode, FlightMode::Grounded);
    let decisions = std::fs::read_to_string(dir.path().join("decisions.jsonl")).unwrap();
    assert!(decisions.lines().count() > 50);
    assert!(decisions.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn an_external_broker_replaces_the_broker_role() {
    let broker = start_broker(ANY_PORT).await.unwrap();
    let addr = broker.local_addr().to_string();
    let (_c, mut cmds) = listen(&addr, TOPIC_DRONE_CMD, "observer").await;
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("telemetry.jsonl");
    let opts = RunOptions {
        roles: [Role::Cortex, Role::Bridge, Role::Drone].into(),
        broker_addr: addr.clone(),
        scenario: Some(load_scenario(&scenario("demo.json")).unwrap()),
        telemetry_log: Some(log.clone()),
        ..options(10.0)
    };
    run(opts, std::future::pending()).await.unwrap();
    let modes = modes(&log);
    assert!(modes.contains(&FlightMode::TakingOff));
    assert_eq!(modes.last(), Some(&FlightMode::Grounded));
    let seen = drain(&mut cmds, Duration::from_millis(300)).await;
    assert!(seen.iter().any(|m| m == "Fw"), "{seen:?}");
    assert_eq!(seen.last().map(String::as_str), Some("stop"));
    broker.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn an_interrupt_mid_flight_sends_stop_last_and_lands() {
    let opts = RunOptions { scenario: Some(load_scenario(&scenario("demo.json")).unwrap()), ..options(5.0) };
    let sys = System::start(opts).await.unwrap();
    let (_c, mut cmds) = listen(sys.broker_addr(), TOPIC_DRONE_CMD, "observer").await;
    let airborne = until(Duration::from_secs(10), || sys.drone_telemetry().is_some_and(|t| t.z > 0.5)).await;
    assert!(airborne, "{:?}", sys.drone_telemetry());
    let summary = sys.shutdown().await.unwrap();
    let seen = drain(&mut cmds, Duration::from_millis(300)).await;
    assert_eq!(seen.last().map(String::as_str), Some("stop"), "{seen:?}");
    assert_eq!(summary.bridge.unwrap().published.last(), Some(&mindbus_core::vocab::DroneMessage::Stop));
    assert_eq!(summary.drone.unwrap().mode, FlightMode::Grounded);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn losing_the_cortex_sends_stop_within_a_second_then_reconnects() {
    let broker = start_broker(ANY_PORT).await.unwrap();
    let broker_addr = broker.local_addr().to_string();
    let s = settings(1.0);
    let service = || Service::new(s.cortex.clone(), Source::live(&s.cortex).unwrap()).unwrap();
    let cortex = serve(ANY_PORT, service()).await.unwrap();
    let cortex_addr = cortex.local_addr();
    let (_c, mut cmds) = listen(&broker_addr, TOPIC_DRONE_CMD, "observer").await;
    let dir = tempfile::tempdir().unwrap();
    let decisions = dir.path().join("decisions.jsonl");
    let b = bridge::spawn(BridgeOptions {
        cortex_url: cortex.url(),
        broker_addr: broker_addr.clone(),
        client_id: "bridge".into(),
        credentials: s.cortex.credentials[0].clone(),
        profile: pilot(),
        mapping: s.mapping.clone(),
        window_s: s.cortex.pipeline.window.window_s,
        decision_log: Some(decisions.clone()),
    })
    .unwrap();
    let lines = || std::fs::read_to_string(&decisions).map_or(0, |t| t.lines().count());
    assert!(until(Duration::from_secs(10), || lines() > 0).await, "no events reached the bridge");

    let lost = Instant::now();
    cortex.shutdown().await;
    let stop = tokio::time::timeout(Duration::from_secs(1), async {
        loop {
            let m = cmds.recv().await.unwrap();
            if text(&m) == "stop" {
                return lost.elapsed();
            }
        }
    })
    .await;
    assert!(stop.is_ok(), "no stop within 1 s of losing the cortex");

    let before = lines();
    let cortex = serve(cortex_addr, service()).await.unwrap();
    assert!(until(Duration::from_secs(10), || lines() > before).await, "the bridge did not come back");
    let report = b.shutdown().await.unwrap();
    assert_eq!(report.cortex_losses, 1);
    let stops = drain(&mut cmds, Duration::from_millis(300)).await;
    assert_eq!(stops.iter().filter(|m| *m == "stop").count(), 1, "{stops:?}");
    cortex.shutdown().await;
    broker.shutdown().await;
}

#[tokio::test]
async fn the_bridge_refuses_an_untrained_profile() {
    let s = Settings::default();
    let err = bridge::spawn(BridgeOptions {
        cortex_url: "ws://127.0.0.1:9/".into(),
        broker_addr: "127.0.0.1:9".into(),
        client_id: "bridge".into(),
        credentials: s.cortex.credentials[0].clone(),
        profile: Profile::new("empty"),
        mapping: s.mapping.clone(),
        window_s: 2.0,
        decision_log: None,
    })
    .err()
    .unwrap();
    assert!(err.to_string().contains("configuration error"), "{err}");
    assert!(load_ready_profile(None).unwrap_err().to_string().contains("configuration error"));

    // nothing binds when the bridge cannot start
    let probe = std::net::TcpListener::bind(ANY_PORT).unwrap();
    let port = probe.local_addr().unwrap().to_string();
    drop(probe);
    let opts = RunOptions { profile: None, broker_addr: port.clone(), ..options(1.0) };
    assert!(System::start(opts).await.is_err());
    std::net::TcpListener::bind(&port).unwrap();
}

#[tokio::test]
async fn a_taken_port_is_named_in_the_error() {
    let taken = std::net::TcpListener::bind(ANY_PORT).unwrap();
    let addr = taken.local_addr().unwrap();
    let port = addr.port().to_string();
    for role in [Role::Broker, Role::Cortex] {
        let opts = match role {
            Role::Broker => RunOptions { roles: [Role::Broker].into(), broker_addr: addr.to_string(), ..options(1.0) },
            _ => RunOptions { roles: [Role::Broker, Role::Cortex].into(), cortex_addr: addr.to_string(), ..options(1.0) },
        };
        let err = System::start(opts).await.err().unwrap().to_string();
        assert!(err.contains(&port) && err.contains("in use"), "{err}");
    }
}

mod drone_runner {
    use super::*;
    use mindbus_cli::drone::{self, DroneHandle, DroneOptions};
    use mindbus_mqtt::BrokerHandle;

    async fn rig(speed: f64) -> (BrokerHandle, DroneHandle, Client) {
        let broker = start_broker(ANY_PORT).await.unwrap();
        let addr = broker.local_addr().to_string();
        let d = drone::spawn(DroneOptions {
            broker_addr: addr.clone(),
            client_id: "drone".into(),
            kinematics: Default::default(),
            speed,
            telemetry_log: None,
        })
        .await
        .unwrap();
        let (pilot, _) = Client::connect(ClientOptions::new(addr, "pilot")).await.unwrap();
        (broker, d, pilot)
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn fw_takes_off_and_stop_lands() {
        let (broker, d, pilot) = rig(10.0).await;
        let (_c, mut tel) = listen(&broker.local_addr().to_string(), TOPIC_DRONE_TELEMETRY, "watch").await;
        pilot.publish(TOPIC_DRONE_CMD, "Fw", QoS::AtLeastOnce).unwrap();
        assert!(until(Duration::from_secs(3), || d.telemetry().z > 0.5).await);
        pilot.publish(TOPIC_DRONE_CMD, "stop", QoS::AtLeastOnce).unwrap();
        assert!(d.wait_grounded(Duration::from_secs(3)).await);
        assert_eq!(d.shutdown().await.unwrap().mode, FlightMode::Grounded);
        let seen: Vec<FlightMode> = drain(&mut tel, Duration::from_millis(100))
            .await
            .iter()
            .map(|p| serde_json::from_str::<Telemetry>(p).unwrap().mode)
            .collect();
        let first = |m| seen.iter().position(|&x| x == m);
        assert!(first(FlightMode::TakingOff) < first(FlightMode::Landing), "{seen:?}");
        assert_eq!(seen.last(), Some(&FlightMode::Grounded));
        broker.shutdown().await;
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn garbage_commands_are_ignored() {
        let (broker, d, pilot) = rig(10.0).await;
        pilot.publish(TOPIC_DRONE_CMD, "FLY!!", QoS::AtLeastOnce).unwrap();
        pilot.publish(TOPIC_DRONE_CMD, vec![0xff, 0xfe], QoS::AtLeastOnce).unwrap();
        tokio::time::sleep(Duration::from_millis(300)).await;
        let t = d.telemetry();
        assert_eq!((t.mode, t.z), (FlightMode::Grounded, 0.0));
        assert!(t.t > 0.0, "the simulation stopped ticking");
        pilot.publish(TOPIC_DRONE_CMD, "Fw", QoS::AtLeastOnce).unwrap();
        assert!(until(Duration::from_secs(3), || d.telemetry().mode != FlightMode::Grounded).await);
        d.shutdown().await.unwrap();
        broker.shutdown().await;
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn losing_the_broker_ends_in_a_failsafe_landing() {
        let (broker, d, pilot) = rig(20.0).await;
        pilot.publish(TOPIC_DRONE_CMD, "Fw", QoS::AtLeastOnce).unwrap();
        assert!(until(Duration::from_secs(3), || d.telemetry().z > 0.5).await);
        broker.shutdown().await;
        let t_lost = d.telemetry().t;
        assert!(until(Duration::from_secs(5), || d.telemetry().mode == FlightMode::Landing).await);
        assert!(d.wait_grounded(Duration::from_secs(3)).await);
        assert!(d.telemetry().t > t_lost + 10.0);
        d.shutdown().await.unwrap();
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn telemetry_arrives_at_ten_hertz() {
        let (broker, d, _pilot) = rig(1.0).await;
        let (_c, mut tel) = listen(&broker.local_addr().to_string(), TOPIC_DRONE_TELEMETRY, "watch").await;
        let _ = drain(&mut tel, Duration::from_millis(10)).await;
        tokio::time::sleep(Duration::from_secs(2)).await;
        let frames: Vec<Telemetry> = drain(&mut tel, Duration::from_millis(10))
            .await
            .iter()
            .map(|p| serde_json::from_str(p).unwrap())
            .collect();
        assert!((17..=23).contains(&frames.len()), "{} frames in 2 s", frames.len());
        for w in frames.windows(2) {
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-6, "{} -> {}", w[0].t, w[1].t);
        }
        d.shutdown().await.unwrap();
        broker.shutdown().await;
    }
}

mod console {
    use super::*;
    use futures_util::StreamExt;
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    async fn get(addr: std::net::SocketAddr, path: &str) -> String {
        let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
        s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes()).await.unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).await.unwrap();
        out
    }

    async fn next_frame<S>(ws: &mut S) -> Telemetry
    where
        S: futures_util::Stream<Item = Result<tokio_tungstenite::tungstenite::Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
    {
        loop {
            let m = tokio::time::timeout(Duration::from_secs(3), ws.next()).await.unwrap().unwrap().unwrap();
            if m.is_text() {
                return serde_json::from_str(m.to_text().unwrap()).unwrap();
            }
        }
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn serves_files_endpoints_and_relays_telemetry_that_injection_moves() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("index.html"), "<p>console build</p>").unwrap();
        let opts = RunOptions {
            console_addr: Some(ANY_PORT.into()),
            static_dir: Some(dir.path().to_path_buf()),
            ..options(4.0)
        };
        let sys = System::start(opts).await.unwrap();
        let http = sys.console_addr().unwrap();

        let page = get(http, "/").await;
        assert!(page.starts_with("HTTP/1.1 200") && page.contains("console build"), "{page}");
        let endpoints = get(http, "/endpoints").await;
        let body: serde_json::Value = serde_json::from_str(endpoints.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["cortex"], sys.cortex_url());
        assert_eq!(body["telemetry"], "/telemetry");

        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{http}/telemetry")).await.unwrap();
        let a = next_frame(&mut ws).await;
        let b = next_frame(&mut ws).await;
        assert!(b.t > a.t);

        let (cortex, _notes) = mindbus_cortex::CortexClient::connect(sys.cortex_url()).await.unwrap();
        let token = cortex.authorize(&Settings::default().cortex.credentials[0]).await.unwrap();
        let session = cortex.create_session(&token).await.unwrap();
        cortex.inject(&token, &session, "mental", "push", 8.0).await.unwrap();
        let moved = until(Duration::from_secs(8), || sys.drone_telemetry().is_some_and(|t| t.x.hypot(t.y) > 0.3)).await;
        assert!(moved, "{:?}", sys.drone_telemetry());

        cortex.inject(&token, &session, "facial", "blink", 1.0).await.unwrap();
        let landing = until(Duration::from_secs(6), || {
            sys.drone_telemetry().is_some_and(|t| matches!(t.mode, FlightMode::Landing | FlightMode::Grounded))
        })
        .await;
        assert!(landing, "{:?}", sys.drone_telemetry());
        sys.shutdown().await.unwrap();
    }

    #[tokio::test]
    async fn without_files_a_placeholder_is_served() {
        let opts = RunOptions { roles: [Role::Broker].into(), console_addr: Some(ANY_PORT.into()), ..options(1.0) };
        let sys = System::start(opts).await.unwrap();
        let page = get(sys.console_addr().unwrap(), "/").await;
        assert!(page.starts_with("HTTP/1.1 200") && page.contains("/telemetry"), "{page}");
        sys.shutdown().await.unwrap();
    }
}

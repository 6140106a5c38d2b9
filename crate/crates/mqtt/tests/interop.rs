//! Our client against rumqttd, and rumqttc against our broker.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::time::Duration;

use mindbus_mqtt::{start_broker, Client, ClientOptions, QoS};
use rumqttc::{AsyncClient, Event, Incoming, MqttOptions};
use rumqttd::{Broker, Config, ConnectionSettings, RouterConfig, ServerSettings};
use tokio::time::timeout;

fn free_port() -> SocketAddr {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap()
}

fn spawn_rumqttd() -> SocketAddr {
    let listen = free_port();
    let server = ServerSettings {
        name: "v4".into(),
        listen,
        tls: None,
        next_connection_delay_ms: 1,
        connections: ConnectionSettings {
            connection_timeout_ms: 5000,
            max_payload_size: 262_144,
            max_inflight_count: 100,
            auth: None,
            external_auth: None,
            dynamic_filters: true,
        },
    };
    let config = Config {
        id: 0,
        router: RouterConfig {
            max_connections: 16,
            max_outgoing_packet_count: 200,
            max_segment_size: 1 << 20,
            max_segment_count: 10,
            ..Default::default()
        },
        v4: Some(HashMap::from([("1".to_string(), server)])),
        ..Default::default()
    };
    std::thread::spawn(move || {
        let _ = Broker::new(config).start();
    });
    listen
}

async fn connect_retrying(addr: SocketAddr, id: &str) -> (Client, tokio::sync::mpsc::UnboundedReceiver<mindbus_mqtt::Message>) {
    for _ in 0..50 {
        if let Ok(c) = Client::connect(ClientOptions::new(addr.to_string(), id)).await {
            return c;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("rumqttd did not come up on {addr}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn our_client_talks_to_rumqttd() {
    let addr = spawn_rumqttd();
    let (drone, mut rx) = connect_retrying(addr, "drone").await;
    drone.subscribe("drone/cmd", QoS::AtLeastOnce).await.unwrap();
    let (bridge, _) = connect_retrying(addr, "bridge").await;
    for cmd in ["Fw", "R", "stop"] {
        bridge.publish("drone/cmd", cmd, QoS::AtLeastOnce).unwrap();
    }
    timeout(Duration::from_secs(5), bridge.flush()).await.unwrap().unwrap();
    let mut got = Vec::new();
    while got.len() < 3 {
        let m = timeout(Duration::from_secs(5), rx.recv()).await.unwrap().unwrap();
        got.push(String::from_utf8(m.payload).unwrap());
    }
    assert_eq!(got, ["Fw", "R", "stop"]);
}

#[tokio::test]
async fn rumqttc_talks_to_our_broker() {
    let broker = start_broker("127.0.0.1:0").await.unwrap();
    let port = broker.local_addr().port();

    let mut opts = MqttOptions::new("rumqttc-drone", "127.0.0.1", port);
    opts.set_keep_alive(Duration::from_secs(5));
    let (sub, mut sub_loop) = AsyncClient::new(opts, 16);
    sub.subscribe("drone/telemetry", rumqttc::QoS::AtLeastOnce).await.unwrap();

    let received = tokio::spawn(async move {
        let mut got = Vec::new();
        let mut subacked = false;
        while got.len() < 3 {
            match sub_loop.poll().await.unwrap() {
                Event::Incoming(Incoming::SubAck(ack)) => {
                    assert_eq!(ack.return_codes, vec![rumqttc::SubscribeReasonCode::Success(rumqttc::QoS::AtLeastOnce)]);
                    subacked = true;
                }
                Event::Incoming(Incoming::Publish(p)) => {
                    assert!(subacked);
                    got.push(String::from_utf8(p.payload.to_vec()).unwrap());
                }
                _ => {}
            }
        }
        got
    });

    // give the SUBSCRIBE time to land, then publish from our client
    let (ours, _) = Client::connect(ClientOptions::new(broker.local_addr().to_string(), "pub")).await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    for i in 0..3 {
        ours.publish("drone/telemetry", format!("{{\"t\":{i}}}"), QoS::AtLeastOnce).unwrap();
    }
    timeout(Duration::from_secs(5), ours.flush()).await.unwrap().unwrap();
    let got = timeout(Duration::from_secs(5), received).await.unwrap().unwrap();
    assert_eq!(got, ["{\"t\":0}", "{\"t\":1}", "{\"t\":2}"]);
    broker.shutdown().await;
}

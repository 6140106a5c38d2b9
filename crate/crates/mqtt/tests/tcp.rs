use std::time::Duration;

use mindbus_mqtt::{start_broker, Client, ClientError, ClientOptions, QoS};
use tokio::net::TcpListener;
use tokio::time::timeout;

fn opts(addr: std::net::SocketAddr, id: &str) -> ClientOptions {
    let mut o = ClientOptions::new(addr.to_string(), id);
    o.backoff_initial = Duration::from_millis(100);
    o.backoff_max = Duration::from_millis(400);
    o
}

#[tokio::test]
async fn publish_reaches_subscriber_in_order() {
    let broker = start_broker("127.0.0.1:0").await.unwrap();
    let addr = broker.local_addr();
    let (drone, mut rx) = Client::connect(opts(addr, "drone")).await.unwrap();
    drone.subscribe("drone/cmd", QoS::AtLeastOnce).await.unwrap();
    let (bridge, _) = Client::connect(opts(addr, "bridge")).await.unwrap();
    for cmd in ["Fw", "L", "Up", "stop"] {
        bridge.publish("drone/cmd", cmd, QoS::AtLeastOnce).unwrap();
    }
    timeout(Duration::from_secs(5), bridge.flush()).await.unwrap().unwrap();
    let mut got = Vec::new();
    while got.len() < 4 {
        let m = timeout(Duration::from_secs(5), rx.recv()).await.unwrap().unwrap();
        assert_eq!(m.topic, "drone/cmd");
        got.push(String::from_utf8(m.payload).unwrap());
    }
    assert_eq!(got, ["Fw", "L", "Up", "stop"]);
    bridge.disconnect().await;
    drone.disconnect().await;
    broker.shutdown().await;
}

#[tokio::test]
async fn wildcard_subscription_is_refused() {
    let broker = start_broker("127.0.0.1:0").await.unwrap();
    let (c, _) = Client::connect(opts(broker.local_addr(), "c")).await.unwrap();
    assert!(matches!(c.subscribe("drone/#", QoS::AtMostOnce).await, Err(ClientError::SubscribeRefused(t)) if t == "drone/#"));
    broker.shutdown().await;
}

#[tokio::test]
async fn connect_fails_fast_without_a_broker() {
    // bind then drop to get a port nobody listens on
    let addr = TcpListener::bind("127.0.0.1:0").await.unwrap().local_addr().unwrap();
    let r = timeout(Duration::from_secs(2), Client::connect(opts(addr, "c"))).await.unwrap();
    assert!(matches!(r, Err(ClientError::Io(_))), "{:?}", r.err());
}

#[tokio::test]
async fn connect_times_out_on_a_silent_listener() {
    let silent = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let mut o = opts(silent.local_addr().unwrap(), "c");
    o.connect_timeout = Duration::from_millis(300);
    let t0 = std::time::Instant::now();
    let r = Client::connect(o).await;
    assert!(matches!(r, Err(ClientError::Timeout(_))), "{:?}", r.err());
    assert!(t0.elapsed() < Duration::from_secs(2));
}

#[tokio::test]
async fn client_reconnects_and_resubscribes_after_broker_restart() {
    let broker = start_broker("127.0.0.1:0").await.unwrap();
    let addr = broker.local_addr();
    let (drone, mut rx) = Client::connect(opts(addr, "drone")).await.unwrap();
    drone.subscribe("drone/cmd", QoS::AtLeastOnce).await.unwrap();
    broker.shutdown().await;

    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while drone.is_connected() {
        assert!(tokio::time::Instant::now() < deadline, "drop not noticed");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }

    let broker = start_broker(addr).await.unwrap();
    timeout(Duration::from_secs(5), drone.wait_connected()).await.unwrap();

    // the subscription is restored asynchronously; retry until it lands
    let (bridge, _) = Client::connect(opts(addr, "bridge")).await.unwrap();
    let got = timeout(Duration::from_secs(10), async {
        loop {
            bridge.publish("drone/cmd", "Up", QoS::AtLeastOnce).unwrap();
            if let Ok(Some(m)) = timeout(Duration::from_millis(200), rx.recv()).await {
                return m;
            }
        }
    })
    .await
    .unwrap();
    assert_eq!(got.payload, b"Up");
    bridge.disconnect().await;
    drone.disconnect().await;
    broker.shutdown().await;
}

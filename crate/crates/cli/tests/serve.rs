use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fleetstation_cli::serve::{bind, serve};
use fleetstation_cli::{load_scenario, CliError};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

fn scenario() -> fleetstation_core::scenario::Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/corridor.scn");
    load_scenario(&path).unwrap()
}

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn send(ws: &mut Client, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

/// Read frames until one matches, or give up after a few seconds.
fn wait_for(ws: &mut Client, pred: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(10);
    while Instant::now() < deadline {
        if let Message::Text(t) = ws.read().unwrap() {
            let v: Value = serde_json::from_str(&t).unwrap();
            if pred(&v) {
                return v;
            }
        }
    }
    panic!("no matching frame");
}

#[test]
fn lists_robots_and_streams_status_then_stops_cleanly() {
    let listener = bind("127.0.0.1", 0).unwrap();
    let port = listener.local_addr().unwrap().port();
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let sc = scenario();
    let server = thread::spawn(move || serve(listener, &sc, 1, flag, 4.0));

    let (mut ws, _) = connect(format!("ws://127.0.0.1:{port}")).unwrap();
    send(&mut ws, json!({"type": "list_robots", "id": 5}));
    let list = wait_for(&mut ws, |v| v["type"] == "robot_list");
    assert_eq!(list["re"], 5);
    let ids: Vec<&str> = list["robots"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r1", "r2"]);
    let status = wait_for(&mut ws, |v| v["type"] == "status");
    assert!(status["pose"].as_array().unwrap().len() == 3);

    send(&mut ws, json!({"type": "teleop_claim", "robot": "r1"}));
    wait_for(&mut ws, |v| v["type"] == "ack" && v["of"] == "teleop_claim");
    send(&mut ws, json!({"type": "teleop_event", "robot": "r1", "event": "speed_up_linear"}));
    send(&mut ws, json!({"type": "teleop_event", "robot": "r1", "event": "engage_linear", "engaged": true}));
    wait_for(&mut ws, |v| v["type"] == "ack" && v["of"] == "teleop_event" && v["teleop"]["linear_engaged"] == true);

    shutdown.store(true, Ordering::SeqCst);
    let summary = server.join().unwrap().unwrap();
    assert_eq!(summary.released, ["r1"]);
    assert_eq!(summary.sessions_served, 1);
    assert_eq!(summary.final_commands.len(), 2);
    for (_, twist) in &summary.final_commands {
        assert_eq!((twist.linear, twist.angular), (0.0, 0.0));
    }
}

#[test]
fn disconnect_releases_teleop() {
    let listener = bind("127.0.0.1", 0).unwrap();
    let port = listener.local_addr().unwrap().port();
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let sc = scenario();
    let server = thread::spawn(move || serve(listener, &sc, 1, flag, 4.0));

    let (mut a, _) = connect(format!("ws://127.0.0.1:{port}")).unwrap();
    send(&mut a, json!({"type": "teleop_claim", "robot": "r2"}));
    wait_for(&mut a, |v| v["type"] == "ack" && v["of"] == "teleop_claim");
    a.close(None).unwrap();
    while a.read().is_ok() {}

    let (mut b, _) = connect(format!("ws://127.0.0.1:{port}")).unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        send(&mut b, json!({"type": "teleop_claim", "robot": "r2", "id": 1}));
        let r = wait_for(&mut b, |v| v["re"] == 1);
        if r["type"] == "ack" {
            break;
        }
        assert!(Instant::now() < deadline, "lease never released: {r}");
        thread::sleep(Duration::from_millis(20));
    }
    shutdown.store(true, Ordering::SeqCst);
    let summary = server.join().unwrap().unwrap();
    assert_eq!(summary.sessions_served, 2);
    assert_eq!(summary.released, ["r2"]);
}

#[test]
fn occupied_port_is_reported() {
    let held = bind("127.0.0.1", 0).unwrap();
    let port = held.local_addr().unwrap().port();
    match bind("127.0.0.1", port) {
        Err(CliError::PortInUse(p)) => assert_eq!(p, port),
        other => panic!("expected PortInUse, got {other:?}"),
    }
}

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use vigil_gcs::protocol::{TelemetryKind, TelemetryMessage};
use vigil_gcs::server::{bind, router, AppState};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start_server() -> SocketAddr {
    serve_state(AppState::new()).await
}

async fn serve_state(state: std::sync::Arc<AppState>) -> SocketAddr {
    let (listener, addr) = bind("127.0.0.1:0").await.unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state)).await.unwrap();
    });
    addr
}

async fn create(addr: SocketAddr, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/session"))
        .json(&body)
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

/// Calm lead-in, then the whole herd alert long enough to go red.
fn alert_mission(speed: Value) -> Value {
    json!({
        "synthetic": {
            "herd_size": 5,
            "phases": [
                {"duration_ms": 1000, "vigilant_fraction": 0.0},
                {"duration_ms": 4000, "vigilant_fraction": 1.0},
                {"duration_ms": 1000, "vigilant_fraction": 0.0},
            ],
            "seed": 3,
        },
        "speed": speed,
    })
}

async fn ws(addr: SocketAddr, id: &str, channel: &str) -> Ws {
    connect_async(format!("ws://{addr}/session/{id}/{channel}")).await.unwrap().0
}

async fn next_msg(ws: &mut Ws) -> Option<TelemetryMessage> {
    loop {
        match timeout(Duration::from_secs(20), ws.next()).await.expect("telemetry stalled")? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

async fn send(ws: &mut Ws, cmd: Value) {
    ws.send(Message::Text(cmd.to_string().into())).await.unwrap();
}

async fn read_all(mut ws: Ws) -> Vec<TelemetryMessage> {
    let mut out = Vec::new();
    while let Some(m) = next_msg(&mut ws).await {
        out.push(m);
    }
    out
}

fn assert_gapless(msgs: &[TelemetryMessage]) {
    assert_eq!(msgs[0].kind, TelemetryKind::State);
    for w in msgs.windows(2) {
        let step = match w[1].kind {
            TelemetryKind::Gap => w[1].payload["missed"].as_u64().unwrap(),
            _ => 1,
        };
        assert_eq!(w[1].seq, w[0].seq + step, "{:?} -> {:?}", w[0].kind, w[1].kind);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_errors() {
    let addr = start_server().await;
    let c = reqwest::Client::new();
    let h: Value = c.get(format!("http://{addr}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(h["ok"], true);
    assert_eq!(c.get(format!("http://{addr}/session/nope")).send().await.unwrap().status(), 404);
    let (code, body) = create(addr, json!({"trace_path": "/nonexistent.vtrace.jsonl"})).await;
    assert_eq!(code, 400);
    assert!(body["error"].as_str().unwrap().contains("nonexistent"));
    let (code, _) = create(addr, json!({"synthetic": {"herd_size": 2, "phases": []}, "theta_s": 0.95})).await;
    assert_eq!(code, 400);
    let (code, _) = create(addr, json!({"bogus": 1})).await;
    assert_eq!(code, 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_is_gapless_and_late_joiners_start_with_state() {
    let addr = start_server().await;
    let mut req = alert_mission(json!("4x"));
    req["autostart"] = json!(false);
    let (code, body) = create(addr, req).await;
    assert_eq!(code, 201);
    let id = body["id"].as_str().unwrap().to_string();
    assert_eq!(body["state"]["status"], "IDLE");

    let early = ws(addr, &id, "telemetry").await;
    let reader = tokio::spawn(read_all(early));

    let mut cmd = ws(addr, &id, "command").await;
    send(&mut cmd, json!({"kind": "START_REPLAY", "id": "go"})).await;
    let ack = next_msg(&mut cmd).await.unwrap();
    assert_eq!(ack.kind, TelemetryKind::Ack);
    assert_eq!(ack.payload["id"], "go");
    send(&mut cmd, json!({"kind": "START_REPLAY"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().kind, TelemetryKind::Reject);

    tokio::time::sleep(Duration::from_millis(400)).await;
    let mut late = ws(addr, &id, "telemetry").await;
    let first = next_msg(&mut late).await.unwrap();
    assert_eq!(first.kind, TelemetryKind::State);
    assert!(first.seq > 0);
    assert_eq!(first.payload["last_seq"], first.seq);
    assert_eq!(first.payload["status"], "RUNNING");
    let mut late_msgs = vec![first];
    late_msgs.extend(read_all(late).await);
    assert_gapless(&late_msgs);

    let msgs = reader.await.unwrap();
    assert_gapless(&msgs);
    assert_eq!(msgs[0].seq, 0);
    let samples = msgs.iter().filter(|m| m.kind == TelemetryKind::Sample).count();
    // Paced replays may shed a frame under load; the end report accounts for it.
    let end = &msgs.iter().find(|m| m.kind == TelemetryKind::MissionEnd).unwrap().payload;
    assert_eq!(end["processed"], samples);
    assert_eq!(end["processed"].as_u64().unwrap() + end["skipped"].as_u64().unwrap(), 180);
    assert!(samples >= 170);
    let kinds: Vec<TelemetryKind> = msgs.iter().rev().take(2).map(|m| m.kind).collect();
    assert_eq!(kinds, [TelemetryKind::State, TelemetryKind::MissionEnd]);
    assert_eq!(msgs.last().unwrap().payload["status"], "ENDED");
    // The late joiner saw the tail of the same stream.
    assert_eq!(late_msgs.last().unwrap().seq, msgs.last().unwrap().seq);

    let alerts: Vec<&Value> = msgs
        .iter()
        .filter(|m| m.kind == TelemetryKind::Alert)
        .map(|m| &m.payload)
        .collect();
    let red: Vec<&&Value> = alerts.iter().filter(|a| a["kind"] == "ENTER_RED").collect();
    assert_eq!(red.len(), 1);
    assert_eq!(red[0]["audio"], true);
    let sample = msgs.iter().find(|m| m.kind == TelemetryKind::Sample && m.payload["score"] == 1.0).unwrap();
    assert_eq!(sample.payload["individuals"].as_array().unwrap().len(), 5);
    assert_eq!(sample.payload["color"], "RED");

    // Joining an ended session yields its final state and a close.
    let msgs = read_all(ws(addr, &id, "telemetry").await).await;
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0].payload["status"], "ENDED");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn threshold_changes() {
    let addr = start_server().await;
    let (_, body) = create(addr, alert_mission(json!("2x"))).await;
    let id = body["id"].as_str().unwrap().to_string();
    let mut tele = ws(addr, &id, "telemetry").await;
    let mut cmd = ws(addr, &id, "command").await;

    send(&mut cmd, json!({"kind": "SET_THRESHOLD", "theta_s": 0.05, "id": 1})).await;
    let r = next_msg(&mut cmd).await.unwrap();
    assert_eq!(r.kind, TelemetryKind::Reject);
    assert_eq!(r.payload["id"], 1);
    assert!(r.payload["reason"].as_str().unwrap().contains("0.05"), "{}", r.payload);

    send(&mut cmd, json!({"kind": "SET_THRESHOLD", "theta_s": "high"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().kind, TelemetryKind::Reject);
    send(&mut cmd, json!({"kind": "LAND"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().kind, TelemetryKind::Reject);

    // Let a few samples through at the default first.
    let mut seen = Vec::new();
    while seen.iter().filter(|m: &&TelemetryMessage| m.kind == TelemetryKind::Sample).count() < 5 {
        seen.push(next_msg(&mut tele).await.unwrap());
    }
    send(&mut cmd, json!({"kind": "SET_THRESHOLD", "theta_s": 0.6, "id": "t"})).await;
    let ack = next_msg(&mut cmd).await.unwrap();
    assert_eq!(ack.kind, TelemetryKind::Ack);
    assert_eq!(ack.payload["command"], "SET_THRESHOLD");
    let effective = ack.payload["effective_seq"].as_u64().expect("ack carries a seq");

    while let Some(m) = next_msg(&mut tele).await {
        seen.push(m);
    }
    let samples: Vec<&TelemetryMessage> = seen.iter().filter(|m| m.kind == TelemetryKind::Sample).collect();
    let pos = samples.iter().position(|m| m.seq == effective).unwrap();
    assert!(pos > 0);
    assert_eq!(samples[pos].payload["theta_s"], 0.6);
    assert_eq!(samples[pos - 1].payload["theta_s"], 0.3);
    assert!(samples[pos..].iter().all(|m| m.payload["theta_s"] == 0.6));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_during_red_keeps_scoring() {
    let addr = start_server().await;
    let (_, body) = create(addr, alert_mission(json!(1))).await;
    let id = body["id"].as_str().unwrap().to_string();
    let mut tele = ws(addr, &id, "telemetry").await;
    let mut cmd = ws(addr, &id, "command").await;

    loop {
        let m = next_msg(&mut tele).await.unwrap();
        if m.kind == TelemetryKind::Sample && m.payload["alert_level"] == "RED" {
            break;
        }
    }
    send(&mut cmd, json!({"kind": "PAUSE"})).await;
    let ack = next_msg(&mut cmd).await.unwrap();
    assert_eq!(ack.kind, TelemetryKind::Ack);
    assert_eq!(ack.payload["state"]["drone_state"], "PAUSE");

    let mut state_seen = false;
    let mut samples_after = 0;
    let mut red_after = 0;
    for _ in 0..60 {
        let m = next_msg(&mut tele).await.unwrap();
        match m.kind {
            TelemetryKind::State => {
                assert_eq!(m.payload["drone_state"], "PAUSE");
                state_seen = true;
            }
            TelemetryKind::Sample if state_seen => {
                samples_after += 1;
                assert!(m.payload["score"].is_number());
                red_after += usize::from(m.payload["alert_level"] == "RED");
            }
            _ => {}
        }
    }
    assert!(state_seen);
    assert!(samples_after >= 10);
    assert!(red_after >= 10);

    send(&mut cmd, json!({"kind": "RESUME"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().payload["state"]["drone_state"], "FLYING");
    send(&mut cmd, json!({"kind": "SET_SPEED", "speed": "afap"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().payload["state"]["speed"], "afap");
    send(&mut cmd, json!({"kind": "STOP"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().kind, TelemetryKind::Ack);
    let rest = read_all(tele).await;
    assert_eq!(rest.last().unwrap().payload["status"], "ENDED");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stop_and_delete_over_http() {
    let addr = start_server().await;
    let c = reqwest::Client::new();
    let (_, body) = create(addr, alert_mission(json!(1))).await;
    let id = body["id"].as_str().unwrap().to_string();
    let list: Value = c.get(format!("http://{addr}/session")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list.as_array().unwrap().len(), 1);

    let tele = ws(addr, &id, "telemetry").await;
    let r = c.post(format!("http://{addr}/session/{id}/stop")).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let msgs = read_all(tele).await;
    let end = msgs.iter().find(|m| m.kind == TelemetryKind::MissionEnd).unwrap();
    assert_eq!(end.payload["stopped_early"], true);

    let r = c.delete(format!("http://{addr}/session/{id}")).send().await.unwrap();
    assert_eq!(r.status(), 204);
    assert_eq!(c.get(format!("http://{addr}/session/{id}")).send().await.unwrap().status(), 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_client_gets_gap_notice_and_never_stalls_scoring() {
    let addr = serve_state(AppState::with_broadcast_capacity(16)).await;
    let mut req = alert_mission(json!("afap"));
    req["autostart"] = json!(false);
    let (_, body) = create(addr, req).await;
    let id = body["id"].as_str().unwrap().to_string();
    let mut slow = ws(addr, &id, "telemetry").await;
    let mut cmd = ws(addr, &id, "command").await;
    send(&mut cmd, json!({"kind": "START_REPLAY"})).await;
    assert_eq!(next_msg(&mut cmd).await.unwrap().kind, TelemetryKind::Ack);

    // The replay finishes while this client has read nothing.
    let c = reqwest::Client::new();
    for _ in 0..200 {
        let s: Value = c.get(format!("http://{addr}/session/{id}")).send().await.unwrap().json().await.unwrap();
        if s["status"] == "ENDED" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let mut msgs = vec![next_msg(&mut slow).await.unwrap()];
    msgs.extend(read_all(slow).await);
    // GAP carries the last lost seq; the next message follows it.
    assert_gapless(&msgs);
    let gap = msgs.iter().find(|m| m.kind == TelemetryKind::Gap).expect("gap notice");
    assert!(gap.payload["missed"].as_u64().unwrap() > 0);
    let end = msgs.iter().find(|m| m.kind == TelemetryKind::MissionEnd).unwrap();
    assert_eq!(end.payload["processed"], 180);
}

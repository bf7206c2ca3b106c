use std::path::Path;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use nerflens::field::{make_procedural_grid, Primitive, SceneSpec};
use nerflens::formats::write_grid;
use nerflens::lens::LensConfig;
use nerflens_service::protocol::{decode_packet, FrameHeader, FORMAT_PNG_RGBA8};
use nerflens_service::{serve, Session, SessionFiles, MAX_IN_FLIGHT};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

fn scene_file(dir: &Path) -> std::path::PathBuf {
    let mut spec = SceneSpec::empty([24; 3], 1.0 / 24.0);
    spec.origin = [-0.5; 3];
    spec.primitives.push(Primitive::Sphere { center: [0.0; 3], radius: 0.3, color: [0.9, 0.4, 0.1], density: 25.0 });
    spec.primitives.push(Primitive::Box { min: [-0.45, -0.45, 0.2], max: [0.45, 0.45, 0.3], color: [0.2, 0.5, 0.9], density: 4.0 });
    let p = dir.join("scene.mnlv");
    write_grid(&make_procedural_grid(&spec).unwrap(), &p).unwrap();
    p
}

async fn start(scene: Option<&Path>) -> String {
    let files = SessionFiles { scene: scene.map(Path::to_path_buf), ..Default::default() };
    let lens = LensConfig { fov_deg: 30.0, ppd: 2.0, ..LensConfig::default() };
    let session = Session::open(&files, lens).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, session, std::future::pending()));
    format!("ws://{addr}/stream")
}

#[derive(Debug)]
enum Event {
    Text(Value),
    Frame(FrameHeader, Vec<u8>),
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Client {
    async fn connect(url: &str) -> Client {
        let (ws, _) = connect_async(url).await.unwrap();
        Client { ws, seq: 0 }
    }

    async fn send(&mut self, mut v: Value) -> u64 {
        self.seq += 1;
        v["seq"] = json!(self.seq);
        self.ws.send(Message::text(v.to_string())).await.unwrap();
        self.seq
    }

    async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_string())).await.unwrap();
    }

    async fn next(&mut self) -> Event {
        let msg = tokio::time::timeout(Duration::from_secs(30), self.ws.next())
            .await
            .expect("timed out waiting for the server")
            .expect("stream ended")
            .unwrap();
        match msg {
            Message::Text(t) => Event::Text(serde_json::from_str(t.as_str()).unwrap()),
            Message::Binary(b) => {
                let (h, payload) = decode_packet(&b).unwrap();
                Event::Frame(h, payload.to_vec())
            }
            other => panic!("unexpected message {other:?}"),
        }
    }

    /// Next reply to `seq`, skipping frames and stats.
    async fn reply(&mut self, seq: u64) -> Value {
        loop {
            if let Event::Text(v) = self.next().await {
                if v["seq"] == json!(seq) {
                    return v;
                }
            }
        }
    }

    /// Next frame with its stats message.
    async fn frame(&mut self) -> (FrameHeader, Vec<u8>, Value) {
        loop {
            if let Event::Frame(h, p) = self.next().await {
                loop {
                    if let Event::Text(v) = self.next().await {
                        if v["type"] == "stats" {
                            assert_eq!(v["frame_id"], json!(h.frame_id));
                            return (h, p, v);
                        }
                    }
                }
            }
        }
    }

    async fn ack_frame(&mut self, id: u32) {
        let s = self.send(json!({"type": "frame_ack", "frame_id": id})).await;
        assert_eq!(self.reply(s).await["type"], "ack");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn first_frame_is_a_png_packet() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let t0 = Instant::now();
    let mut c = Client::connect(&url).await;
    let (h, payload, stats) = c.frame().await;
    assert!(t0.elapsed() < Duration::from_secs(2), "first frame took {:?}", t0.elapsed());
    assert_eq!((h.width, h.height, h.format), (60, 60, FORMAT_PNG_RGBA8));
    assert_eq!(h.frame_id, 1);
    assert_eq!(payload[..8], PNG_SIGNATURE);
    assert!(stats["samples_total"].as_u64().unwrap() > 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn control_messages_are_acknowledged() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut c = Client::connect(&url).await;

    c.send_raw(r#"{"type":"pose","pos":[0,0,-1.2],"quat":[0,0,0,1],"seq":1}"#).await;
    assert_eq!(c.reply(1).await, json!({"type": "ack", "seq": 1}));

    c.send_raw(r#"{"type":"lens","fov_deg":200,"ppd":2,"seq":2}"#).await;
    let e = c.reply(2).await;
    assert_eq!(e["type"], "err");
    assert!(e["reason"].as_str().unwrap().contains("fov_deg out of range"), "{e}");

    c.send_raw(r#"{"type":"warp","seq":3}"#).await;
    assert_eq!(c.reply(3).await["reason"], "unknown_type");

    c.send_raw(r#"{"type":"edit","mode":"erase","center":[0,0,"x"],"radius":0.2,"seq":4}"#).await;
    let e = c.reply(4).await;
    assert!(e["reason"].as_str().unwrap().contains("center[2]"), "{e}");

    c.send_raw("{not json").await;
    loop {
        if let Event::Text(v) = c.next().await {
            if v["type"] == "err" && v["seq"].is_null() {
                assert!(v["reason"].as_str().unwrap().starts_with("invalid json"));
                break;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn edits_and_lens_changes_show_in_stats() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut c = Client::connect(&url).await;
    let (h, _, s0) = c.frame().await;
    c.ack_frame(h.frame_id).await;
    let before = s0["samples_total"].as_u64().unwrap();

    let seq = c.send(json!({"type": "edit", "mode": "erase", "center": [0, 0, 0], "radius": 0.2})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let (h, _, s1) = c.frame().await;
    c.ack_frame(h.frame_id).await;
    let erased = s1["samples_total"].as_u64().unwrap();
    assert!(erased < before, "erase: {before} -> {erased}");

    let seq = c.send(json!({"type": "lens", "fov_deg": 10, "ppd": 2})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let (h, _, s2) = c.frame().await;
    assert_eq!(h.width, 20);
    let narrow = s2["samples_total"].as_u64().unwrap();
    assert!(narrow < erased, "fov 30 -> 10: {erased} -> {narrow}");
}

#[tokio::test(flavor = "multi_thread")]
async fn frames_are_deterministic_and_numbered() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut c = Client::connect(&url).await;
    let (first, p0, _) = c.frame().await;
    c.ack_frame(first.frame_id).await;
    let mut last = first.frame_id;
    for i in 0..100 {
        let seq = c.send(json!({"type": "request_frame"})).await;
        assert_eq!(c.reply(seq).await["type"], "ack");
        let (h, p, _) = c.frame().await;
        assert_eq!(h.frame_id, last + 1);
        if i == 0 {
            assert_eq!(p, p0, "unchanged state must give identical payloads");
        }
        last = h.frame_id;
        c.ack_frame(h.frame_id).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn at_most_two_frames_in_flight() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut c = Client::connect(&url).await;
    let mut last_seq = 0;
    for _ in 0..10 {
        last_seq = c.send(json!({"type": "request_frame"})).await;
    }
    let mut frames = 0;
    loop {
        match c.next().await {
            Event::Frame(..) => frames += 1,
            Event::Text(v) if v["seq"] == json!(last_seq) => break,
            Event::Text(_) => {}
        }
    }
    // Anything rendered after the last ack is already on the wire.
    let probe = c.send(json!({"type": "lens", "fov_deg": 30, "ppd": 2, "far_len": 2.0})).await;
    loop {
        match c.next().await {
            Event::Frame(..) => frames += 1,
            Event::Text(v) if v["seq"] == json!(probe) => break,
            Event::Text(_) => {}
        }
    }
    assert_eq!(frames, MAX_IN_FLIGHT);

    // Acknowledging releases exactly the latest state.
    c.ack_frame(2).await;
    let (h, _, _) = c.frame().await;
    assert_eq!(h.frame_id, 3);
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_scene_reports_err_frames() {
    let url = start(None).await;
    let mut c = Client::connect(&url).await;
    match c.next().await {
        Event::Text(v) => {
            assert_eq!(v["type"], "err");
            assert_eq!(v["reason"], "no scene loaded");
            assert_eq!(v["frame_id"], 1);
        }
        other => panic!("{other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    let path = scene_file(dir.path());
    let seq = c.send(json!({"type": "load_scene", "path": path})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let (h, _, _) = c.frame().await;
    assert_eq!(h.frame_id, 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn second_client_is_turned_away() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut a = Client::connect(&url).await;
    a.frame().await;
    let mut b = Client::connect(&url).await;
    match b.next().await {
        Event::Text(v) => assert!(v["reason"].as_str().unwrap().starts_with("session busy")),
        other => panic!("{other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn mask_saved_over_the_wire_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(Some(&scene_file(dir.path()))).await;
    let mut c = Client::connect(&url).await;
    let seq = c.send(json!({"type": "edit", "mode": "erase", "center": [0.1, 0, 0], "radius": 0.25})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let m1 = dir.path().join("m1.mnlb");
    let m2 = dir.path().join("m2.mnlb");
    let seq = c.send(json!({"type": "save_mask", "path": m1})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let seq = c.send(json!({"type": "load_mask", "path": m1})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let seq = c.send(json!({"type": "save_mask", "path": m2})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());

    let t = dir.path().join("align.json");
    let seq = c
        .send(json!({"type": "align", "translation": [0.1, 0, 0], "rotation_quat": [0, 0, 0, 1], "scale": 1.0}))
        .await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let seq = c.send(json!({"type": "save_transform", "path": t})).await;
    assert_eq!(c.reply(seq).await["type"], "ack");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&t).unwrap()).unwrap();
    assert_eq!(saved["translation"], json!([0.1, 0.0, 0.0]));
}

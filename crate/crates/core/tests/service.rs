use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::time::Instant;

use lotwatch_core::backend::{
    BackendDescriptor, BackendError, BlobDetector, DetectorBackend, LatencyBackend, LatencyProfile, SharedBackend,
};
use lotwatch_core::scene::SceneSpec;
use lotwatch_core::service::{
    read_history, Ack, CaptureError, HttpPublisher, ImageSource, LotConfig, LotService, PublishConfig, PublishError,
    Publisher, StepClock, VirtualClock,
};
use lotwatch_core::{imageio, Detection, Frame, OccupancyRecord};

struct Lot {
    dir: tempfile::TempDir,
    frames: Vec<(Frame, u32)>,
}

/// Standard synthetic lot: shared mask on disk plus `n` frames with known
/// in-ROI counts.
fn lot(n: usize) -> Lot {
    let dir = tempfile::tempdir().unwrap();
    let mut frames = Vec::new();
    for i in 0..n {
        let occupied = (0..16).filter(|s| (s * 7 + i) % 3 == 0);
        let scene = SceneSpec::standard(occupied, i % 4).render(i as u64).unwrap();
        if i == 0 {
            imageio::write_image(&scene.mask_image(), &dir.path().join("mask.png")).unwrap();
        }
        frames.push((Frame::new(format!("f{i:02}.png"), scene.image.clone()), scene.vehicles_in_roi as u32));
    }
    Lot { dir, frames }
}

fn config(dir: &Path, interval_secs: f64) -> LotConfig {
    let text = format!(
        r#"
        lot_id = "test-lot"
        capacity = 16
        mask = "mask.png"
        interval_secs = {interval_secs}
        [backend]
        kind = "synthetic"
        [source]
        kind = "directory"
        path = "frames"
        "#
    );
    let mut cfg = LotConfig::from_toml(&text).unwrap();
    cfg.resolve_paths(dir);
    cfg
}

/// In-memory replay; records the tokio instant of every capture.
struct Replay {
    frames: VecDeque<Frame>,
    looping: bool,
    fail_next: bool,
    captured_at: Arc<Mutex<Vec<Instant>>>,
}

impl Replay {
    fn new(frames: impl IntoIterator<Item = Frame>, looping: bool) -> Self {
        Self {
            frames: frames.into_iter().collect(),
            looping,
            fail_next: false,
            captured_at: Arc::default(),
        }
    }
}

#[async_trait]
impl ImageSource for Replay {
    async fn capture(&mut self) -> Result<Option<Frame>, CaptureError> {
        if std::mem::take(&mut self.fail_next) {
            return Err(CaptureError::Command {
                program: "camera".into(),
                reason: "lens cap".into(),
            });
        }
        self.captured_at.lock().unwrap().push(Instant::now());
        let f = self.frames.pop_front();
        if let (Some(f), true) = (&f, self.looping) {
            self.frames.push_back(f.clone());
        }
        Ok(f)
    }
}

#[derive(Default)]
struct Sink {
    delay: Duration,
    down: AtomicBool,
    seen: Mutex<Vec<OccupancyRecord>>,
}

#[async_trait]
impl Publisher for Sink {
    async fn publish(&self, r: &OccupancyRecord) -> Result<Ack, PublishError> {
        tokio::time::sleep(self.delay).await;
        if self.down.load(Ordering::SeqCst) {
            return Err(PublishError::Transport("connection refused".into()));
        }
        self.seen.lock().unwrap().push(r.clone());
        Ok(Ack { latency: self.delay })
    }
}

struct Switchable {
    inner: BlobDetector,
    down: Arc<AtomicBool>,
}

#[async_trait]
impl DetectorBackend for Switchable {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(BackendError::Unavailable("inference server down".into()));
        }
        self.inner.detect(frame).await
    }
}

fn oracle() -> SharedBackend {
    SharedBackend::new(BlobDetector::oracle())
}

#[tokio::test(start_paused = true)]
async fn three_ticks_three_history_lines() {
    let lot = lot(1);
    let cfg = config(lot.dir.path(), 300.0);
    let history = cfg.history.clone();
    let sink = Arc::new(Sink::default());
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), true);
    let svc = LotService::new(cfg, oracle(), Box::new(src), sink.clone(), Arc::new(VirtualClock::new(1_700_000_000)))
        .unwrap();

    let report = svc.serve(tokio::time::sleep(Duration::from_secs(601))).await;
    assert_eq!((report.cycles, report.records, report.exhausted), (3, 3, false));

    let lines = read_history(&history).unwrap();
    let ts: Vec<i64> = lines.iter().map(|r| r.timestamp).collect();
    assert_eq!(ts, [1_700_000_000, 1_700_000_300, 1_700_000_600]);
    assert!(lines.iter().all(|r| r.vehicles == lot.frames[0].1));
    assert_eq!(*sink.seen.lock().unwrap(), lines);
}

#[tokio::test(start_paused = true)]
async fn overrunning_cycles_do_not_overlap() {
    let lot = lot(3);
    let cfg = config(lot.dir.path(), 1.0);
    let slow = SharedBackend::new(LatencyBackend::new(
        BlobDetector::oracle(),
        LatencyProfile::Constant(Duration::from_millis(2500)),
    ));
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), false);
    let captured_at = src.captured_at.clone();
    let start = Instant::now();
    let svc = LotService::new(cfg, slow, Box::new(src), Arc::new(Sink::default()), Arc::new(StepClock::new(0, 1)))
        .unwrap();
    let report = svc.serve(std::future::pending()).await;
    assert!(report.exhausted);
    assert_eq!(report.records, 3);

    let offsets: Vec<f64> = captured_at
        .lock()
        .unwrap()
        .iter()
        .map(|t| t.duration_since(start).as_secs_f64())
        .collect();
    assert_eq!(offsets.len(), 4);
    for (got, want) in offsets.iter().zip([0.0, 2.5, 5.0, 7.5]) {
        assert!((got - want).abs() < 0.05, "{offsets:?}");
    }
}

#[tokio::test(start_paused = true)]
async fn shutdown_flushes_queue() {
    let lot = lot(2);
    let cfg = config(lot.dir.path(), 1.0);
    let sink = Arc::new(Sink {
        delay: Duration::from_secs(5),
        ..Sink::default()
    });
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), true);
    let svc = LotService::new(cfg, oracle(), Box::new(src), sink.clone(), Arc::new(StepClock::new(0, 1))).unwrap();
    let report = svc.serve(tokio::time::sleep(Duration::from_millis(3500))).await;

    assert_eq!(report.records, 4);
    assert_eq!(report.queue.depth, 0);
    assert_eq!(report.queue.published, 4);
    let seen: Vec<i64> = sink.seen.lock().unwrap().iter().map(|r| r.timestamp).collect();
    assert_eq!(seen, [0, 1, 2, 3]);
}

#[tokio::test]
async fn backend_down_leaves_one_retry_entry() {
    let lot = lot(2);
    let cfg = config(lot.dir.path(), 60.0);
    let history = cfg.history.clone();
    let down = Arc::new(AtomicBool::new(true));
    let backend = SharedBackend::new(Switchable {
        inner: BlobDetector::oracle(),
        down: down.clone(),
    });
    let sink = Arc::new(Sink::default());
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), false);
    let mut svc = LotService::new(cfg, backend, Box::new(src), sink.clone(), Arc::new(StepClock::new(100, 60)))
        .unwrap()
        .with_backend_backoff(Duration::ZERO);

    let r = svc.run_pipeline_once().await;
    assert!(r.records.is_empty());
    assert_eq!(r.skipped.len(), 1);
    assert!(sink.seen.lock().unwrap().is_empty());
    assert_eq!(svc.pending_retry(), Some("f00.png"));
    assert!(read_history(&history).unwrap().is_empty());

    down.store(false, Ordering::SeqCst);
    let r = svc.run_pipeline_once().await;
    assert_eq!(svc.pending_retry(), None);
    let got: Vec<(i64, u32)> = r.records.iter().map(|r| (r.timestamp, r.vehicles)).collect();
    assert_eq!(got, [(100, lot.frames[0].1), (160, lot.frames[1].1)]);
    assert_eq!(sink.seen.lock().unwrap().len(), 2);
}

#[tokio::test]
async fn capture_failure_skips_cycle() {
    let lot = lot(1);
    let cfg = config(lot.dir.path(), 60.0);
    let mut src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), false);
    src.fail_next = true;
    let mut svc =
        LotService::new(cfg, oracle(), Box::new(src), Arc::new(Sink::default()), Arc::new(StepClock::new(0, 1))).unwrap();
    let r = svc.run_pipeline_once().await;
    assert!(r.records.is_empty() && r.skipped[0].contains("lens cap"));
    assert_eq!(svc.run_pipeline_once().await.records.len(), 1);
}

#[tokio::test]
async fn persistent_publish_failure_drops_oldest() {
    let lot = lot(1);
    let mut cfg = config(lot.dir.path(), 60.0);
    cfg.queue_capacity = 2;
    let history = cfg.history.clone();
    let sink = Arc::new(Sink::default());
    sink.down.store(true, Ordering::SeqCst);
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), true);
    let mut svc = LotService::new(cfg, oracle(), Box::new(src), sink.clone(), Arc::new(StepClock::new(0, 1))).unwrap();
    for _ in 0..4 {
        svc.run_pipeline_once().await;
    }
    let g = svc.queue().gauges();
    assert_eq!((g.depth, g.dropped, g.published), (2, 2, 0));
    assert_eq!(svc.queue().snapshot().iter().map(|r| r.timestamp).collect::<Vec<_>>(), [2, 3]);
    // history keeps everything regardless of delivery
    assert_eq!(read_history(&history).unwrap().len(), 4);

    sink.down.store(false, Ordering::SeqCst);
    svc.run_pipeline_once().await;
    let g = svc.queue().gauges();
    assert_eq!((g.depth, g.dropped, g.published), (0, 3, 2));
    let seen: Vec<i64> = sink.seen.lock().unwrap().iter().map(|r| r.timestamp).collect();
    assert_eq!(seen, [3, 4]);
}

#[derive(Clone, Default)]
struct HttpSink {
    bodies: Arc<Mutex<Vec<(HeaderMap, Bytes)>>>,
    malformed: bool,
}

async fn ingest(State(s): State<HttpSink>, headers: HeaderMap, body: Bytes) -> Response {
    if body.len() >= 1024 {
        return (StatusCode::PAYLOAD_TOO_LARGE, "").into_response();
    }
    s.bodies.lock().unwrap().push((headers, body));
    if s.malformed {
        return (StatusCode::OK, "ok").into_response();
    }
    axum::Json(serde_json::json!({ "accepted": true })).into_response()
}

async fn http_sink(malformed: bool) -> (SocketAddr, HttpSink) {
    let sink = HttpSink {
        malformed,
        ..HttpSink::default()
    };
    let app = Router::new().route("/ingest", post(ingest)).with_state(sink.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, sink)
}

fn http_publisher(addr: SocketAddr) -> HttpPublisher {
    HttpPublisher::new(&PublishConfig {
        endpoint: format!("http://{addr}/ingest"),
        bearer_token: Some("tok".into()),
        timeout_secs: 5.0,
    })
    .unwrap()
}

#[tokio::test]
async fn http_publish_contract() {
    let (addr, sink) = http_sink(false).await;
    let rec = OccupancyRecord::new("north", 1_700_000_000, 16, 9, "yolov9e");
    http_publisher(addr).publish(&rec).await.unwrap();

    let (headers, body) = sink.bodies.lock().unwrap()[0].clone();
    assert_eq!(headers["authorization"], "Bearer tok");
    assert_eq!(headers["idempotency-key"], "north@1700000000");
    let doc: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(
        doc,
        serde_json::json!({
            "lot_id": "north", "timestamp": 1_700_000_000, "capacity": 16,
            "vehicles": 9, "free": 7, "model_id": "yolov9e"
        })
    );
}

#[tokio::test]
async fn malformed_ack_keeps_record_queued() {
    let (addr, _) = http_sink(true).await;
    let lot = lot(1);
    let cfg = config(lot.dir.path(), 60.0);
    let src = Replay::new(lot.frames.iter().map(|f| f.0.clone()), false);
    let mut svc =
        LotService::new(cfg, oracle(), Box::new(src), Arc::new(http_publisher(addr)), Arc::new(StepClock::new(0, 1)))
            .unwrap();
    assert_eq!(svc.run_pipeline_once().await.records.len(), 1);
    let g = svc.queue().gauges();
    assert_eq!((g.depth, g.published, g.failures), (1, 0, 1));
}

#[tokio::test]
async fn unreachable_sink_is_retryable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = http_publisher(addr)
        .publish(&OccupancyRecord::new("l", 0, 1, 0, "m"))
        .await
        .unwrap_err();
    assert!(err.is_retryable(), "{err}");
}

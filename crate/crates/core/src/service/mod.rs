//! Long-running occupancy service: capture on a fixed interval, count
//! vehicles in the ROI, append to local history, publish the count.
//!
//! Only [`OccupancyRecord`]s enter the publish path, so in edge mode no
//! image data ever leaves the device.

pub mod config;
pub mod history;
pub mod publish;
pub mod source;

use std::future::Future;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::time::Instant;

use crate::backend::{BackendError, SharedBackend};
use crate::domain::{Frame, OccupancyRecord};
use crate::metrics;
use crate::pipeline::{CountError, Counter};
use crate::roi::{self, RoiError};

pub use config::{BackendConfig, LotConfig, PublishConfig, SourceConfig};
pub use history::{read_history, HistoryError, HistoryWriter};
pub use publish::{Ack, HttpPublisher, LogPublisher, PublishError, PublishQueue, Publisher, QueueGauges};
pub use source::{CaptureError, CommandSource, DirectorySource, ImageSource};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("mask: {0}")]
    Mask(#[from] RoiError),
    #[error("history: {0}")]
    History(#[from] std::io::Error),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Publish(#[from] PublishError),
}

/// Source of record timestamps (UTC seconds).
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        chrono::Utc::now().timestamp()
    }
}

/// Wall time derived from the tokio clock, so it follows a paused or
/// advanced test runtime.
#[derive(Debug, Clone, Copy)]
pub struct VirtualClock {
    epoch: i64,
    origin: Instant,
}

impl VirtualClock {
    pub fn new(epoch: i64) -> Self {
        Self {
            epoch,
            origin: Instant::now(),
        }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> i64 {
        self.epoch + self.origin.elapsed().as_secs() as i64
    }
}

/// Returns `start`, `start + step`, ... on successive calls.
#[derive(Debug)]
pub struct StepClock {
    next: AtomicI64,
    step: i64,
}

impl StepClock {
    pub fn new(start: i64, step: i64) -> Self {
        Self {
            next: AtomicI64::new(start),
            step,
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> i64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
struct Captured {
    frame: Frame,
    timestamp: i64,
}

/// What one capture cycle produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleReport {
    pub records: Vec<OccupancyRecord>,
    pub skipped: Vec<String>,
    /// The image source has no more frames.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServeReport {
    pub cycles: usize,
    pub records: usize,
    pub skipped: usize,
    pub exhausted: bool,
    pub queue: QueueGauges,
}

/// One lot's capture, count, record and publish loop.
pub struct LotService {
    config: LotConfig,
    counter: Counter,
    backend: SharedBackend,
    source: Box<dyn ImageSource>,
    publisher: Arc<dyn Publisher>,
    clock: Arc<dyn Clock>,
    history: HistoryWriter,
    queue: Arc<PublishQueue>,
    retry: Option<Captured>,
    backend_backoff: Duration,
}

impl LotService {
    pub fn new(
        config: LotConfig,
        backend: SharedBackend,
        source: Box<dyn ImageSource>,
        publisher: Arc<dyn Publisher>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let mask = roi::load_mask_file(&config.mask, config.mask_threshold)?;
        let counter = Counter::new(mask, config.roi_method, config.classes.clone());
        let history = HistoryWriter::open(&config.history)?;
        Ok(Self {
            queue: Arc::new(PublishQueue::new(config.queue_capacity)),
            config,
            counter,
            backend,
            source,
            publisher,
            clock,
            history,
            retry: None,
            backend_backoff: Duration::from_secs(1),
        })
    }

    /// Backend, source and publisher as described by the config.
    pub fn from_config(config: LotConfig) -> Result<Self, ServiceError> {
        let backend = config.backend.build()?;
        let source: Box<dyn ImageSource> = match &config.source {
            SourceConfig::Directory { path, looping } => Box::new(DirectorySource::new(path, *looping)?),
            SourceConfig::Command {
                program,
                args,
                timeout_secs,
            } => Box::new(CommandSource::new(
                program.clone(),
                args.clone(),
                Duration::from_secs_f64(timeout_secs.unwrap_or(30.0)),
            )),
        };
        let publisher: Arc<dyn Publisher> = match &config.publish {
            Some(p) => Arc::new(HttpPublisher::new(p)?),
            None => Arc::new(LogPublisher),
        };
        Self::new(config, backend, source, publisher, Arc::new(SystemClock))
    }

    /// Base delay between detect attempts within a cycle; attempt `n` waits
    /// `n` times this.
    pub fn with_backend_backoff(mut self, backoff: Duration) -> Self {
        self.backend_backoff = backoff;
        self
    }

    pub fn config(&self) -> &LotConfig {
        &self.config
    }

    pub fn queue(&self) -> &Arc<PublishQueue> {
        &self.queue
    }

    /// Frame held back after a transient backend failure.
    pub fn pending_retry(&self) -> Option<&str> {
        self.retry.as_ref().map(|c| c.frame.id.as_str())
    }

    async fn count_with_retries(&self, frame: &Frame) -> Result<crate::CountResult, CountError> {
        let mut attempt = 0;
        loop {
            match self.counter.count(&self.backend, frame).await {
                Err(CountError::Backend(e)) if e.is_retryable() && attempt < self.config.backend_retries => {
                    attempt += 1;
                    tracing::warn!(frame = %frame.id, attempt, error = %e, "detect failed, retrying");
                    tokio::time::sleep(self.backend_backoff * attempt).await;
                }
                other => return other,
            }
        }
    }

    async fn process(&mut self, captured: Captured, report: &mut CycleReport) {
        let count = match self.count_with_retries(&captured.frame).await {
            Ok(c) => c,
            Err(e) => {
                let msg = format!("{}: {e}", captured.frame.id);
                tracing::error!(error = %msg, "cycle skipped");
                if matches!(&e, CountError::Backend(b) if b.is_retryable()) {
                    if let Some(old) = self.retry.replace(captured) {
                        tracing::warn!(frame = %old.frame.id, "retry slot taken, older frame dropped");
                    }
                }
                report.skipped.push(msg);
                return;
            }
        };
        let record = match metrics::occupancy(
            &count,
            self.config.capacity,
            &self.config.lot_id,
            captured.timestamp,
            &self.backend.descriptor().model_id,
        ) {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push(e.to_string());
                return;
            }
        };
        if let Err(e) = self.history.append(&record) {
            tracing::error!(error = %e, "history write failed, record not published");
            report.skipped.push(format!("history: {e}"));
            return;
        }
        self.queue.push(record.clone());
        report.records.push(record);
    }

    /// Capture and record one frame (plus a held-back retry, if any) and
    /// enqueue the results. Publishing is left to the caller.
    pub async fn cycle(&mut self) -> CycleReport {
        let mut report = CycleReport::default();
        if let Some(pending) = self.retry.take() {
            self.process(pending, &mut report).await;
        }
        match self.source.capture().await {
            Ok(Some(frame)) => {
                let captured = Captured {
                    timestamp: self.clock.now(),
                    frame,
                };
                self.process(captured, &mut report).await;
            }
            Ok(None) => report.exhausted = true,
            Err(e) => {
                tracing::error!(error = %e, "capture failed, cycle skipped");
                report.skipped.push(format!("capture: {e}"));
            }
        }
        report
    }

    /// One cycle followed by a publish attempt of everything queued. A
    /// failed publish leaves the records queued.
    pub async fn run_pipeline_once(&mut self) -> CycleReport {
        let report = self.cycle().await;
        let _ = self.queue.flush(self.publisher.as_ref()).await;
        report
    }

    /// Run a cycle every interval until `shutdown` resolves or the source is
    /// exhausted. A cycle that overruns the interval delays the next one
    /// instead of overlapping it. Publishing runs alongside the capture
    /// loop; the queue is flushed once more before returning.
    pub async fn serve(mut self, shutdown: impl Future<Output = ()>) -> ServeReport {
        let (stop_tx, mut stop_rx) = tokio::sync::oneshot::channel::<()>();
        let queue = self.queue.clone();
        let publisher = self.publisher.clone();
        let flusher = tokio::spawn(async move {
            loop {
                let _ = queue.flush(publisher.as_ref()).await;
                tokio::select! {
                    _ = queue.wait_pending() => {}
                    _ = &mut stop_rx => break,
                }
            }
        });

        tokio::pin!(shutdown);
        let interval = self.config.interval();
        let mut report = ServeReport::default();
        let mut next = Instant::now();
        loop {
            tokio::select! {
                biased;
                _ = &mut shutdown => {
                    tracing::info!("shutdown requested");
                    break;
                }
                _ = tokio::time::sleep_until(next) => {}
            }
            let cycle = self.cycle().await;
            report.cycles += 1;
            report.records += cycle.records.len();
            report.skipped += cycle.skipped.len();
            if cycle.exhausted {
                report.exhausted = true;
                tracing::info!("image source exhausted");
                break;
            }
            next = (next + interval).max(Instant::now());
        }

        let _ = stop_tx.send(());
        if let Err(e) = flusher.await {
            tracing::error!(error = %e, "publisher task failed");
        }
        if let Err(e) = self.queue.flush(self.publisher.as_ref()).await {
            tracing::error!(error = %e, remaining = self.queue.gauges().depth, "final flush incomplete");
        }
        report.queue = self.queue.gauges();
        report
    }
}

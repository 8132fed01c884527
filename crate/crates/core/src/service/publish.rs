use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::Notify;
use tokio::time::Instant;

use super::config::PublishConfig;
use crate::domain::OccupancyRecord;

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("sink unreachable: {0}")]
    Transport(String),
    #[error("sink timed out")]
    Timeout,
    #[error("sink answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed acknowledgment: {0}")]
    MalformedAck(String),
    #[error("sink rejected the record")]
    Rejected,
}

impl PublishError {
    pub fn is_retryable(&self) -> bool {
        match self {
            PublishError::Transport(_) | PublishError::Timeout => true,
            PublishError::Status { status, .. } => *status >= 500 || *status == 429,
            PublishError::MalformedAck(_) | PublishError::Rejected => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ack {
    pub latency: Duration,
}

#[async_trait]
pub trait Publisher: Send + Sync {
    async fn publish(&self, record: &OccupancyRecord) -> Result<Ack, PublishError>;
}

/// Used when no sink is configured: every record is logged and accepted.
#[derive(Debug, Default)]
pub struct LogPublisher;

#[async_trait]
impl Publisher for LogPublisher {
    async fn publish(&self, record: &OccupancyRecord) -> Result<Ack, PublishError> {
        tracing::info!(
            lot = %record.lot_id,
            timestamp = record.timestamp,
            vehicles = record.vehicles,
            free = record.free,
            "occupancy"
        );
        Ok(Ack { latency: Duration::ZERO })
    }
}

#[derive(Deserialize)]
struct AckBody {
    accepted: bool,
}

/// POSTs the record as a flat JSON object and expects `{"accepted": true}`.
/// The record carries an idempotency key header so re-deliveries can be
/// dropped by the sink.
#[derive(Debug, Clone)]
pub struct HttpPublisher {
    client: reqwest::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpPublisher {
    pub fn new(config: &PublishConfig) -> Result<Self, PublishError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| PublishError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            token: config.bearer_token.clone(),
        })
    }
}

#[async_trait]
impl Publisher for HttpPublisher {
    async fn publish(&self, record: &OccupancyRecord) -> Result<Ack, PublishError> {
        let start = Instant::now();
        let mut req = self
            .client
            .post(&self.endpoint)
            .header("Idempotency-Key", record.key())
            .json(record);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                PublishError::Timeout
            } else {
                PublishError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| PublishError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(PublishError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).chars().take(200).collect(),
            });
        }
        let ack: AckBody = serde_json::from_slice(&body)
            .map_err(|_| PublishError::MalformedAck(String::from_utf8_lossy(&body).chars().take(200).collect()))?;
        if !ack.accepted {
            return Err(PublishError::Rejected);
        }
        Ok(Ack {
            latency: start.elapsed(),
        })
    }
}

/// Bounded FIFO of records awaiting delivery. When full the oldest record
/// is dropped and counted.
#[derive(Debug)]
pub struct PublishQueue {
    items: Mutex<VecDeque<OccupancyRecord>>,
    capacity: usize,
    dropped: AtomicU64,
    published: AtomicU64,
    failures: AtomicU64,
    pending: Notify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueGauges {
    pub depth: usize,
    pub dropped: u64,
    pub published: u64,
    pub failures: u64,
}

impl PublishQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity.min(4096))),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            published: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            pending: Notify::new(),
        }
    }

    /// Returns the record evicted to make room, if any.
    pub fn push(&self, record: OccupancyRecord) -> Option<OccupancyRecord> {
        let evicted = {
            let mut q = self.items.lock().unwrap();
            let evicted = if q.len() >= self.capacity { q.pop_front() } else { None };
            q.push_back(record);
            evicted
        };
        if let Some(old) = &evicted {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(key = %old.key(), "publish queue full, dropped oldest record");
        }
        self.pending.notify_one();
        evicted
    }

    pub fn gauges(&self) -> QueueGauges {
        QueueGauges {
            depth: self.items.lock().unwrap().len(),
            dropped: self.dropped.load(Ordering::Relaxed),
            published: self.published.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }

    pub fn snapshot(&self) -> Vec<OccupancyRecord> {
        self.items.lock().unwrap().iter().cloned().collect()
    }

    /// Resolves after the next `push`.
    pub async fn wait_pending(&self) {
        self.pending.notified().await
    }

    /// Publish queued records oldest first, stopping at the first failure.
    /// Returns how many were delivered.
    pub async fn flush(&self, publisher: &dyn Publisher) -> Result<usize, PublishError> {
        let mut delivered = 0;
        loop {
            let Some(front) = self.items.lock().unwrap().front().cloned() else {
                return Ok(delivered);
            };
            match publisher.publish(&front).await {
                Ok(ack) => {
                    let mut q = self.items.lock().unwrap();
                    // the record may have been evicted while in flight
                    if q.front() == Some(&front) {
                        q.pop_front();
                    }
                    drop(q);
                    self.published.fetch_add(1, Ordering::Relaxed);
                    delivered += 1;
                    tracing::debug!(key = %front.key(), latency_ms = ack.latency.as_secs_f64() * 1e3, "published");
                }
                Err(e) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(key = %front.key(), error = %e, "publish failed, record stays queued");
                    return Err(e);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;

    fn rec(ts: i64) -> OccupancyRecord {
        OccupancyRecord::new("lot", ts, 16, 4, "m")
    }

    #[derive(Default)]
    struct Switch {
        down: AtomicBool,
        seen: Mutex<Vec<i64>>,
    }

    #[async_trait]
    impl Publisher for Switch {
        async fn publish(&self, r: &OccupancyRecord) -> Result<Ack, PublishError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(PublishError::Transport("down".into()));
            }
            self.seen.lock().unwrap().push(r.timestamp);
            Ok(Ack { latency: Duration::ZERO })
        }
    }

    #[test]
    fn oldest_drop() {
        let q = PublishQueue::new(2);
        assert!(q.push(rec(1)).is_none());
        assert!(q.push(rec(2)).is_none());
        assert_eq!(q.push(rec(3)).unwrap().timestamp, 1);
        let g = q.gauges();
        assert_eq!((g.depth, g.dropped), (2, 1));
        assert_eq!(q.snapshot().iter().map(|r| r.timestamp).collect::<Vec<_>>(), [2, 3]);
    }

    #[tokio::test]
    async fn failure_keeps_order_and_records() {
        let q = PublishQueue::new(8);
        let sink = Switch::default();
        sink.down.store(true, Ordering::SeqCst);
        for ts in 1..=3 {
            q.push(rec(ts));
        }
        assert!(q.flush(&sink).await.is_err());
        assert_eq!(q.gauges().depth, 3);
        sink.down.store(false, Ordering::SeqCst);
        assert_eq!(q.flush(&sink).await.unwrap(), 3);
        assert_eq!(*sink.seen.lock().unwrap(), [1, 2, 3]);
        let g = q.gauges();
        assert_eq!((g.depth, g.published, g.failures), (0, 3, 1));
    }

    #[test]
    fn retryable_classification() {
        assert!(PublishError::Timeout.is_retryable());
        assert!(PublishError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!PublishError::Status { status: 400, body: String::new() }.is_retryable());
        assert!(!PublishError::MalformedAck(String::new()).is_retryable());
    }
}

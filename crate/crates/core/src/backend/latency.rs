use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use tokio::time::Instant;

use super::{BackendDescriptor, BackendError, Concurrency, DetectorBackend};
use crate::domain::{Detection, Frame};

/// Latency schedule for [`LatencyBackend`], indexed by call number.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencyProfile {
    Constant(Duration),
    /// Odd/even calls alternate between the two values, starting with the
    /// first.
    Alternating(Duration, Duration),
    /// Cycles through the list.
    Sequence(Vec<Duration>),
}

impl LatencyProfile {
    pub fn delay(&self, call: usize) -> Duration {
        match self {
            LatencyProfile::Constant(d) => *d,
            LatencyProfile::Alternating(a, b) => {
                if call.is_multiple_of(2) {
                    *a
                } else {
                    *b
                }
            }
            LatencyProfile::Sequence(v) if v.is_empty() => Duration::ZERO,
            LatencyProfile::Sequence(v) => v[call % v.len()],
        }
    }
}

/// Wraps another backend and holds every call for a scheduled duration
/// before returning the inner result. Used to validate the benchmark
/// harness against known latencies.
pub struct LatencyBackend<B> {
    inner: B,
    profile: LatencyProfile,
    calls: AtomicUsize,
    descriptor: BackendDescriptor,
    fail_after: Option<usize>,
}

impl<B: DetectorBackend> LatencyBackend<B> {
    pub fn new(inner: B, profile: LatencyProfile) -> Self {
        let mut descriptor = inner.descriptor().clone();
        descriptor.concurrency = Concurrency::Serial;
        Self {
            inner,
            profile,
            calls: AtomicUsize::new(0),
            descriptor,
            fail_after: None,
        }
    }

    /// Make every call after the first `n` fail.
    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Sleep until `deadline` with sub-millisecond accuracy: timer sleep for
/// most of the wait, then yield until the deadline passes. Falls back to a
/// plain timer sleep when the clock does not move while spinning (paused
/// test clock).
pub(crate) async fn wait_until(deadline: Instant) {
    if let Some(coarse) = deadline.checked_sub(Duration::from_millis(2)) {
        if coarse > Instant::now() {
            tokio::time::sleep_until(coarse).await;
        }
    }
    let spin_start = std::time::Instant::now();
    while Instant::now() < deadline {
        if spin_start.elapsed() > Duration::from_millis(5) {
            tokio::time::sleep_until(deadline).await;
            return;
        }
        tokio::task::yield_now().await;
    }
}

#[async_trait]
impl<B: DetectorBackend> DetectorBackend for LatencyBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        let start = Instant::now();
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|n| call >= n) {
            return Err(BackendError::Unavailable(format!("injected failure on call {call}")));
        }
        let result = self.inner.detect(frame).await;
        wait_until(start + self.profile.delay(call)).await;
        result
    }
}

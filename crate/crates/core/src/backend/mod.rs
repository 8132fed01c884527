//! Pluggable detection sources.
//!
//! Every backend reports detections in the pixel grid of the frame it was
//! given, whatever resizing it does internally. [`SharedBackend`] enforces
//! the box clamping post-condition and serializes calls for backends that
//! declare themselves serial.

mod blob;
mod fixture;
mod latency;
mod remote;

use std::sync::Arc;

use async_trait::async_trait;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::domain::{Detection, Frame};

pub use blob::{BlobDetector, NoiseModel, MinSize};
pub use fixture::FixtureBackend;
pub use latency::{LatencyBackend, LatencyProfile};
pub use remote::{RemoteBackend, RemoteConfig, RemoteResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {reason}; payload starts with {excerpt:?}")]
    Malformed { reason: String, excerpt: String },
    #[error("{0}")]
    Failed(String),
}

impl BackendError {
    /// Transient failures that are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Unavailable(_) | BackendError::Timeout(_) => true,
            BackendError::Status { status, .. } => *status >= 500 || *status == 429,
            BackendError::Malformed { .. } | BackendError::Failed(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    #[default]
    Concurrent,
    Serial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub model_id: String,
    /// The backend wants frames that were already gray-filled outside the ROI.
    #[serde(default)]
    pub expects_pre_masked: bool,
    #[serde(default)]
    pub concurrency: Concurrency,
}

impl BackendDescriptor {
    pub fn new(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            expects_pre_masked: false,
            concurrency: Concurrency::Concurrent,
        }
    }
}

#[async_trait]
pub trait DetectorBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError>;
}

/// Cloneable handle around a backend.
#[derive(Clone)]
pub struct SharedBackend {
    inner: Arc<dyn DetectorBackend>,
    gate: Option<Arc<Mutex<()>>>,
}

impl SharedBackend {
    pub fn new<B: DetectorBackend + 'static>(backend: B) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(inner: Arc<dyn DetectorBackend>) -> Self {
        let gate = match inner.descriptor().concurrency {
            Concurrency::Serial => Some(Arc::new(Mutex::new(()))),
            Concurrency::Concurrent => None,
        };
        Self { inner, gate }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    pub async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        let _guard = match &self.gate {
            Some(gate) => Some(gate.lock().await),
            None => None,
        };
        let (w, h) = frame.image.dims();
        let dets = self.inner.detect(frame).await?;
        Ok(clamp_all(dets, w, h, &self.inner.descriptor().backend_id))
    }
}

impl std::fmt::Debug for SharedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedBackend").field("descriptor", self.descriptor()).finish()
    }
}

pub(crate) fn clamp_all(dets: Vec<Detection>, width: u32, height: u32, backend_id: &str) -> Vec<Detection> {
    dets.into_iter()
        .map(|d| {
            if d.bbox().is_within(width, height) {
                d
            } else {
                tracing::warn!(
                    backend = backend_id,
                    bbox = ?d.bbox(),
                    width,
                    height,
                    "detection box outside frame, clamping"
                );
                d.clamped(width, height)
            }
        })
        .collect()
}

#[derive(Debug, Error, PartialEq)]
#[error("backend id {0:?} is already registered")]
pub struct DuplicateBackend(pub String);

#[derive(Debug, Default, Clone)]
pub struct BackendRegistry {
    backends: IndexMap<String, SharedBackend>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, backend: SharedBackend) -> Result<(), DuplicateBackend> {
        let id = backend.descriptor().backend_id.clone();
        if self.backends.contains_key(&id) {
            return Err(DuplicateBackend(id));
        }
        self.backends.insert(id, backend);
        Ok(())
    }

    pub fn get(&self, backend_id: &str) -> Option<&SharedBackend> {
        self.backends.get(backend_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

//! HTTP inference client.
//!
//! Request: `POST {endpoint}{path}` with the frame as JPEG bytes
//! (`Content-Type: image/jpeg`) and the frame id in `X-Image-Id`.
//!
//! Response (`200`, JSON):
//!
//! ```text
//! {"model_id":"yolo11n","inference_ms":41.5,
//!  "detections":[{"class":"car","confidence":0.91,"box":[12,40,88,120]}]}
//! ```
//!
//! Detection records follow the fixture file schema; their `image` field is
//! optional here.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{clamp_all, BackendDescriptor, BackendError, Concurrency, DetectorBackend};
use crate::detections::DetectionRecord;
use crate::domain::{Detection, Frame};
use crate::imageio;

const EXCERPT_LEN: usize = 200;

fn default_path() -> String {
    "/v1/detect".to_owned()
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

fn default_in_flight() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Extra attempts after a retryable failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub bearer_token: Option<String>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: default_path(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            max_in_flight: default_in_flight(),
            bearer_token: None,
        }
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), self.path)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub model_id: String,
    pub inference_ms: f64,
    pub detections: Vec<DetectionRecord>,
}

/// Remote detections plus the server-reported model and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteDetections {
    pub model_id: String,
    pub inference_ms: f64,
    pub detections: Vec<Detection>,
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    config: RemoteConfig,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl RemoteBackend {
    pub fn new(descriptor: BackendDescriptor, config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Failed(format!("cannot build HTTP client: {e}")))?;
        let mut descriptor = descriptor;
        if config.max_in_flight == 1 {
            descriptor.concurrency = Concurrency::Serial;
        }
        Ok(Self {
            descriptor,
            permits: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
            config,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One request with retries on transient failures.
    pub async fn remote_detect(&self, frame: &Frame) -> Result<RemoteDetections, BackendError> {
        let body = imageio::encode_jpeg(&frame.image).map_err(|e| BackendError::Failed(e.to_string()))?;
        let mut attempt = 0;
        loop {
            match self.attempt(frame, body.clone()).await {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    tracing::warn!(error = %e, attempt, url = %self.config.url(), "retrying remote inference");
                    tokio::time::sleep(Duration::from_millis(100 * attempt as u64)).await;
                }
                other => return other,
            }
        }
    }

    async fn attempt(&self, frame: &Frame, body: Vec<u8>) -> Result<RemoteDetections, BackendError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| BackendError::Unavailable("backend closed".into()))?;
        let mut req = self
            .client
            .post(self.config.url())
            .header(reqwest::header::CONTENT_TYPE, "image/jpeg")
            .header("X-Image-Id", &frame.id)
            .body(body);
        if let Some(token) = &self.config.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| self.transport_error(e))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| self.transport_error(e))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: excerpt(&bytes),
            });
        }
        let parsed: RemoteResponse = serde_json::from_slice(&bytes).map_err(|e| BackendError::Malformed {
            reason: e.to_string(),
            excerpt: excerpt(&bytes),
        })?;
        let detections = parsed
            .detections
            .iter()
            .map(DetectionRecord::to_detection)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BackendError::Malformed {
                reason: e.to_string(),
                excerpt: excerpt(&bytes),
            })?;
        let (w, h) = frame.image.dims();
        Ok(RemoteDetections {
            model_id: parsed.model_id,
            inference_ms: parsed.inference_ms,
            detections: clamp_all(detections, w, h, &self.descriptor.backend_id),
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.config.timeout())
        } else {
            BackendError::Unavailable(e.to_string())
        }
    }
}

fn excerpt(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    text.chars().take(EXCERPT_LEN).collect()
}

#[async_trait]
impl DetectorBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Ok(self.remote_detect(frame).await?.detections)
    }
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::backend::{
    BackendDescriptor, BlobDetector, FixtureBackend, NoiseModel, RemoteBackend, RemoteConfig, SharedBackend,
};
use crate::pipeline::RoiMethod;
use crate::roi;

pub const ENV_PUBLISH_URL: &str = "LOTWATCH_PUBLISH_URL";
pub const ENV_PUBLISH_TOKEN: &str = "LOTWATCH_PUBLISH_TOKEN";
pub const ENV_BACKEND_URL: &str = "LOTWATCH_BACKEND_URL";
pub const ENV_BACKEND_TOKEN: &str = "LOTWATCH_BACKEND_TOKEN";

fn default_interval() -> f64 {
    300.0
}
fn default_threshold() -> u8 {
    roi::DEFAULT_THRESHOLD
}
fn default_classes() -> BTreeSet<String> {
    roi::default_classes()
}
fn default_history() -> PathBuf {
    PathBuf::from("history.jsonl")
}
fn default_queue() -> usize {
    1024
}
fn default_backend_retries() -> u32 {
    2
}
fn default_publish_timeout() -> f64 {
    10.0
}

/// One monitored lot. Loaded from TOML; relative paths are resolved against
/// the directory of the config file.
///
/// ```toml
/// lot_id = "north"
/// capacity = 16
/// mask = "mask.png"
/// interval_secs = 300
/// roi_method = "post"
///
/// [backend]
/// kind = "remote"
/// endpoint = "http://gpu-box:8080"
///
/// [source]
/// kind = "directory"
/// path = "captures"
///
/// [publish]
/// endpoint = "https://iot.example/occupancy"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotConfig {
    pub lot_id: String,
    pub capacity: u32,
    pub mask: PathBuf,
    #[serde(default = "default_threshold")]
    pub mask_threshold: u8,
    #[serde(default = "default_interval")]
    pub interval_secs: f64,
    #[serde(default)]
    pub roi_method: RoiMethod,
    #[serde(default = "default_classes")]
    pub classes: BTreeSet<String>,
    #[serde(default = "default_history")]
    pub history: PathBuf,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    /// Extra attempts for a failed detect call within one cycle.
    #[serde(default = "default_backend_retries")]
    pub backend_retries: u32,
    pub backend: BackendConfig,
    pub source: SourceConfig,
    #[serde(default)]
    pub publish: Option<PublishConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Blob detector for synthetic scenes.
    Synthetic {
        #[serde(default)]
        model_id: Option<String>,
        #[serde(default)]
        noise: NoiseModel,
    },
    /// Precomputed detections (JSON lines keyed by image file name).
    Fixture {
        path: PathBuf,
        #[serde(default)]
        model_id: Option<String>,
    },
    Remote {
        #[serde(default)]
        model_id: Option<String>,
        #[serde(flatten)]
        remote: RemoteConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceConfig {
    /// Replays image files in name order.
    Directory {
        path: PathBuf,
        #[serde(default, rename = "loop")]
        looping: bool,
    },
    /// Runs a capture command that writes one encoded image to stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishConfig {
    pub endpoint: String,
    #[serde(default)]
    pub bearer_token: Option<String>,
    #[serde(default = "default_publish_timeout")]
    pub timeout_secs: f64,
}

impl LotConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let cfg: LotConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, apply environment overrides, resolve paths, validate.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: LotConfig =
            toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env(|k| std::env::var(k).ok());
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Config(m.to_owned()));
        if self.lot_id.trim().is_empty() {
            return bad("lot_id must not be empty");
        }
        if self.capacity == 0 {
            return bad("capacity must be positive");
        }
        if !(self.interval_secs.is_finite() && self.interval_secs > 0.0) {
            return bad("interval_secs must be positive");
        }
        if self.classes.is_empty() {
            return bad("classes must not be empty");
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be positive");
        }
        if let Some(p) = &self.publish {
            if !(p.timeout_secs.is_finite() && p.timeout_secs > 0.0) {
                return bad("publish.timeout_secs must be positive");
            }
        }
        Ok(())
    }

    /// Endpoint and credential overrides. `lookup` is usually
    /// `std::env::var`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(url) = lookup(ENV_PUBLISH_URL) {
            match &mut self.publish {
                Some(p) => p.endpoint = url,
                None => {
                    self.publish = Some(PublishConfig {
                        endpoint: url,
                        bearer_token: None,
                        timeout_secs: default_publish_timeout(),
                    })
                }
            }
        }
        if let (Some(token), Some(p)) = (lookup(ENV_PUBLISH_TOKEN), self.publish.as_mut()) {
            p.bearer_token = Some(token);
        }
        if let BackendConfig::Remote { remote, .. } = &mut self.backend {
            if let Some(url) = lookup(ENV_BACKEND_URL) {
                remote.endpoint = url;
            }
            if let Some(token) = lookup(ENV_BACKEND_TOKEN) {
                remote.bearer_token = Some(token);
            }
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.mask);
        fix(&mut self.history);
        if let BackendConfig::Fixture { path, .. } = &mut self.backend {
            fix(path);
        }
        if let SourceConfig::Directory { path, .. } = &mut self.source {
            fix(path);
        }
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval_secs)
    }

    /// Local inference keeps images on the device; only counts are sent.
    pub fn is_edge(&self) -> bool {
        !matches!(self.backend, BackendConfig::Remote { .. })
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<SharedBackend, ServiceError> {
        let model = |m: &Option<String>, default: &str| m.clone().unwrap_or_else(|| default.to_owned());
        Ok(match self {
            BackendConfig::Synthetic { model_id, noise } => {
                let desc = BackendDescriptor::new("synthetic", model(model_id, "blob-oracle"));
                SharedBackend::new(BlobDetector::new(desc, *noise))
            }
            BackendConfig::Fixture { path, model_id } => {
                let bytes = std::fs::read(path)
                    .map_err(|e| ServiceError::Config(format!("fixture {}: {e}", path.display())))?;
                let desc = BackendDescriptor::new("fixture", model(model_id, "fixture"));
                let backend = FixtureBackend::from_bytes(desc, &bytes)
                    .map_err(|e| ServiceError::Config(format!("fixture {}: {e}", path.display())))?;
                SharedBackend::new(backend)
            }
            BackendConfig::Remote { model_id, remote } => {
                let desc = BackendDescriptor::new("remote", model(model_id, "remote"));
                SharedBackend::new(RemoteBackend::new(desc, remote.clone()).map_err(ServiceError::Backend)?)
            }
        })
    }
}

//! Single-frame counting with either ROI strategy.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, SharedBackend};
use crate::domain::{CountResult, Frame, RoiMask};
use crate::roi::{self, RoiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiMethod {
    /// Gray-fill outside the ROI, then count every allowed detection.
    Pre,
    /// Detect on the raw frame, keep detections centered on ROI pixels.
    #[default]
    Post,
}

impl std::str::FromStr for RoiMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" => Ok(RoiMethod::Pre),
            "post" => Ok(RoiMethod::Post),
            other => Err(format!("unknown ROI method {other:?}, expected pre or post")),
        }
    }
}

impl std::fmt::Display for RoiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoiMethod::Pre => "pre",
            RoiMethod::Post => "post",
        })
    }
}

#[derive(Debug, Error)]
pub enum CountError {
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Everything needed to turn a frame into a [`CountResult`].
#[derive(Debug, Clone)]
pub struct Counter {
    pub mask: Arc<RoiMask>,
    pub method: RoiMethod,
    pub classes: BTreeSet<String>,
}

impl Counter {
    pub fn new(mask: RoiMask, method: RoiMethod, classes: BTreeSet<String>) -> Self {
        Self {
            mask: Arc::new(mask),
            method,
            classes,
        }
    }

    pub async fn count(&self, backend: &SharedBackend, frame: &Frame) -> Result<CountResult, CountError> {
        match self.method {
            RoiMethod::Pre => {
                let masked = roi::apply_pre_mask(&frame.image, &self.mask)?;
                let masked = Frame::new(frame.id.clone(), masked);
                let dets = backend.detect(&masked).await?;
                Ok(roi::count_allowed(&dets, &self.classes))
            }
            RoiMethod::Post => {
                let dets = backend.detect(frame).await?;
                Ok(roi::filter_detections_in(&dets, frame.image.dims(), &self.mask, &self.classes))
            }
        }
    }
}

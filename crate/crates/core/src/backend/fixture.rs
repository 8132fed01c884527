use async_trait::async_trait;

use super::{BackendDescriptor, BackendError, DetectorBackend};
use crate::detections::{parse_detections, DetectionsByImage, ParseError};
use crate::domain::{Detection, Frame};

/// Replays precomputed detections keyed by frame id. Unknown ids yield no
/// detections.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    descriptor: BackendDescriptor,
    detections: DetectionsByImage,
}

impl FixtureBackend {
    pub fn new(descriptor: BackendDescriptor, detections: DetectionsByImage) -> Self {
        Self {
            descriptor,
            detections,
        }
    }

    pub fn from_bytes(descriptor: BackendDescriptor, bytes: &[u8]) -> Result<Self, ParseError> {
        Ok(Self::new(descriptor, parse_detections(bytes)?))
    }

    pub fn detections(&self) -> &DetectionsByImage {
        &self.detections
    }
}

#[async_trait]
impl DetectorBackend for FixtureBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Ok(self.detections.get(&frame.id).cloned().unwrap_or_default())
    }
}

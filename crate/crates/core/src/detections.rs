//! Line-delimited detections fixture format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"image":"a.jpg","class":"car","confidence":0.9,"box":[0,0,10,10]}
//! ```
//!
//! `img` and `conf` are accepted as short aliases. Unknown fields are ignored
//! and blank lines are skipped. Records are grouped by image id, keeping the
//! order in which each image first appears.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoundingBox, Detection, DomainError};

pub type DetectionsByImage = IndexMap<String, Vec<Detection>>;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: input is not valid UTF-8")]
    Utf8 { line: usize },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: DomainError,
    },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Utf8 { line } | ParseError::Malformed { line, .. } | ParseError::Invalid { line, .. } => {
                *line
            }
        }
    }
}

/// Wire shape of one record. Also used for remote inference responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(alias = "img", default, skip_serializing_if = "String::is_empty")]
    pub image: String,
    pub class: String,
    #[serde(alias = "conf")]
    pub confidence: f32,
    #[serde(rename = "box")]
    pub bbox: [i32; 4],
}

impl DetectionRecord {
    pub fn from_detection(image: &str, d: &Detection) -> Self {
        let b = d.bbox();
        Self {
            image: image.to_owned(),
            class: d.class_label().to_owned(),
            confidence: d.confidence(),
            bbox: [b.x1, b.y1, b.x2, b.y2],
        }
    }

    pub fn to_detection(&self) -> Result<Detection, DomainError> {
        let [x1, y1, x2, y2] = self.bbox;
        let bbox = BoundingBox::new(x1, y1, x2, y2)?;
        Detection::new(self.class.clone(), self.confidence, bbox)
    }
}

pub fn parse_detections(bytes: &[u8]) -> Result<DetectionsByImage, ParseError> {
    let mut out = DetectionsByImage::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let text = std::str::from_utf8(raw).map_err(|_| ParseError::Utf8 { line })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(text).map_err(|source| ParseError::Malformed { line, source })?;
        let detection = record
            .to_detection()
            .map_err(|source| ParseError::Invalid { line, source })?;
        out.entry(record.image).or_default().push(detection);
    }
    Ok(out)
}

/// Canonical serialization: one record per line, fixed key order, trailing
/// newline after every record.
pub fn serialize_detections(map: &DetectionsByImage) -> String {
    let mut out = String::new();
    for (image, dets) in map {
        for d in dets {
            let rec = DetectionRecord::from_detection(image, d);
            out.push_str(&serde_json::to_string(&rec).expect("record serialization is infallible"));
            out.push('\n');
        }
    }
    out
}

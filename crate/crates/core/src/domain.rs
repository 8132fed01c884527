//! Shared value types used across the crate.
//!
//! Pixel coordinates are top-left origin, x grows rightward and y grows
//! downward. Every type here is immutable once built and is `Send + Sync`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("image has zero size ({width}x{height})")]
    ZeroSized { width: u32, height: u32 },
    #[error("unsupported channel count {0}, expected 1 or 3")]
    Channels(u8),
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("empty ROI: mask has no pixel inside the region of interest")]
    EmptyRoi,
    #[error("mask bit count {actual} does not match {width}x{height}")]
    MaskLength { width: u32, height: u32, actual: usize },
    #[error("confidence out of range: {0}")]
    Confidence(f32),
    #[error("class label must not be empty")]
    EmptyLabel,
    #[error("inverted box [{x1},{y1},{x2},{y2}]")]
    InvertedBox { x1: i32, y1: i32, x2: i32, y2: i32 },
}

/// 8-bit raster, row-major, 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, DomainError> {
        if width == 0 || height == 0 {
            return Err(DomainError::ZeroSized { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(DomainError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(DomainError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image filled with a single RGB color.
    pub fn filled_rgb(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, DomainError> {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, 3, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Channel values of the pixel at `(x, y)`. Panics when out of bounds.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, u8> {
        self.data.chunks_exact(self.channels as usize)
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

/// An image together with the identifier the backends key on (usually the
/// file name).
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub image: Arc<ImageBuffer>,
}

impl Frame {
    pub fn new(id: impl Into<String>, image: ImageBuffer) -> Self {
        Self {
            id: id.into(),
            image: Arc::new(image),
        }
    }
}

/// Bilevel region-of-interest mask. `true` marks a pixel inside the monitored
/// region (painted black in the source mask image).
#[derive(Clone, PartialEq, Eq)]
pub struct RoiMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl RoiMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, DomainError> {
        if width == 0 || height == 0 {
            return Err(DomainError::ZeroSized { width, height });
        }
        if bits.len() != width as usize * height as usize {
            return Err(DomainError::MaskLength {
                width,
                height,
                actual: bits.len(),
            });
        }
        if !bits.iter().any(|&b| b) {
            return Err(DomainError::EmptyRoi);
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bounds-checked lookup; anything outside the grid is outside the ROI.
    pub fn contains(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn roi_pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel-wise AND with another mask of the same shape. Returns `None` when
    /// the shapes differ, or when the intersection is empty.
    pub fn intersect(&self, other: &RoiMask) -> Option<RoiMask> {
        if self.dims() != other.dims() {
            return None;
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        RoiMask::new(self.width, self.height, bits).ok()
    }
}

impl fmt::Debug for RoiMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoiMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("roi_pixels", &self.roi_pixel_count())
            .finish()
    }
}

/// Axis-aligned box in integer pixel coordinates, `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BoundingBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Result<Self, DomainError> {
        if x1 > x2 || y1 > y2 {
            return Err(DomainError::InvertedBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Integer center. Halves are rounded toward zero, which for the
    /// non-negative coordinates of a clamped box is round-half-down.
    pub fn center(&self) -> (i32, i32) {
        let cx = (self.x1 as i64 + self.x2 as i64) / 2;
        let cy = (self.y1 as i64 + self.y2 as i64) / 2;
        (cx as i32, cy as i32)
    }

    /// Clamp into `[0, width] x [0, height]`.
    pub fn clamped(&self, width: u32, height: u32) -> Self {
        let w = width.min(i32::MAX as u32) as i32;
        let h = height.min(i32::MAX as u32) as i32;
        Self {
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
            x2: self.x2.clamp(0, w),
            y2: self.y2.clamp(0, h),
        }
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.clamped(width, height) == *self
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0) as i64;
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0) as i64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    class_label: String,
    confidence: f32,
    bbox: BoundingBox,
}

impl Detection {
    pub fn new(
        class_label: impl Into<String>,
        confidence: f32,
        bbox: BoundingBox,
    ) -> Result<Self, DomainError> {
        let class_label = class_label.into();
        if class_label.is_empty() {
            return Err(DomainError::EmptyLabel);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DomainError::Confidence(confidence));
        }
        Ok(Self {
            class_label,
            confidence,
            bbox,
        })
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn confidence(&self) -> f32 {
        self.confidence
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn clamped(&self, width: u32, height: u32) -> Self {
        Self {
            bbox: self.bbox.clamped(width, height),
            ..self.clone()
        }
    }
}

/// Raw versus in-ROI tallies for one image, restricted to the allowed classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountResult {
    pub total_detections: usize,
    pub in_roi_count: usize,
    pub per_class_in_roi: BTreeMap<String, usize>,
}

impl CountResult {
    pub(crate) fn record(&mut self, class_label: &str, inside: bool) {
        self.total_detections += 1;
        if inside {
            self.in_roi_count += 1;
            *self.per_class_in_roi.entry(class_label.to_owned()).or_default() += 1;
        }
    }

    /// `in_roi_count <= total_detections` and the per-class map sums to
    /// `in_roi_count`.
    pub fn is_consistent(&self) -> bool {
        self.in_roi_count <= self.total_detections
            && self.per_class_in_roi.values().sum::<usize>() == self.in_roi_count
    }
}

/// Per-spot confusion tallies. The positive class is "empty space".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            tn: self.tn + rhs.tn,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Precision,
    Recall,
    F1,
    Sensitivity,
    Specificity,
    BalancedAccuracy,
}

/// The seven confusion-matrix metrics. Any metric whose denominator is zero
/// is reported as 0 and listed in `zero_denominator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_denominator: Vec<MetricKind>,
}

impl MetricSet {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::F1 => self.f1,
            MetricKind::Sensitivity => self.sensitivity,
            MetricKind::Specificity => self.specificity,
            MetricKind::BalancedAccuracy => self.balanced_accuracy,
        }
    }

    pub fn is_flagged(&self, kind: MetricKind) -> bool {
        self.zero_denominator.contains(&kind)
    }
}

/// Timestamped lot occupancy. This is the only thing that leaves the device
/// in edge mode, so it deliberately carries no image data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyRecord {
    pub lot_id: String,
    /// UTC, seconds since the Unix epoch.
    pub timestamp: i64,
    pub capacity: u32,
    pub vehicles: u32,
    pub free: u32,
    pub model_id: String,
}

impl OccupancyRecord {
    pub fn new(lot_id: &str, timestamp: i64, capacity: u32, vehicles: u32, model_id: &str) -> Self {
        Self {
            lot_id: lot_id.to_owned(),
            timestamp,
            capacity,
            vehicles,
            free: capacity.saturating_sub(vehicles),
            model_id: model_id.to_owned(),
        }
    }

    /// Idempotency key used by sinks to de-duplicate re-deliveries.
    pub fn key(&self) -> String {
        format!("{}@{}", self.lot_id, self.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples_used: usize,
    pub discarded_warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

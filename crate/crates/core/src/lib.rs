//! Camera-based parking occupancy: ROI masking of detector output, vehicle
//! counting, confusion-matrix evaluation, latency benchmarking, telemetry
//! publishing and deployment cost modeling.

pub mod backend;
pub mod bench;
pub mod chart;
pub mod cost;
pub mod detections;
pub mod domain;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod roi;
pub mod scene;
pub mod service;

pub use domain::{
    BoundingBox, ConfusionCounts, CountResult, Detection, Frame, ImageBuffer, LatencyStats, MetricKind, MetricSet,
    OccupancyRecord, RoiMask,
};

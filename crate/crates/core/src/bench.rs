//! Latency benchmarking with warmup discard.
//!
//! Frames are held in memory, so each sample covers the detect call and the
//! frame hand-off but no disk I/O. Calls are strictly sequential. Every
//! sample carries a wall-clock timestamp so thermal throttling shows up as
//! drift in the raw log; run edge devices in a temperature-controlled
//! enclosure when the numbers matter.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::backend::SharedBackend;
use crate::chart::{BarChart, BarGroup};
use crate::domain::{Frame, LatencyStats};
use crate::pipeline::Counter;

pub const STANDARD_ITERATIONS: usize = 1500;
pub const STANDARD_WARMUP: usize = 100;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("warmup discard ({warmup}) must be smaller than total iterations ({total})")]
    WarmupTooLarge { warmup: usize, total: usize },
    #[error("no frames to benchmark")]
    NoFrames,
    #[error("nothing to compare")]
    EmptyComparison,
    #[error("raw sample log: {0}")]
    Io(#[from] std::io::Error),
    #[error("summary file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub total_iterations: usize,
    pub warmup_discard: usize,
    /// Pick frames at random with this seed instead of cycling in order.
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
    #[serde(default)]
    pub hardware_tag: String,
}

impl BenchPlan {
    pub fn new(total_iterations: usize, warmup_discard: usize) -> Result<Self, BenchError> {
        let plan = Self {
            total_iterations,
            warmup_discard,
            shuffle_seed: None,
            hardware_tag: String::new(),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 1500 inferences on one fixed image, the first 100 discarded.
    pub fn standard() -> Self {
        Self::new(STANDARD_ITERATIONS, STANDARD_WARMUP).expect("constants are consistent")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.warmup_discard >= self.total_iterations {
            return Err(BenchError::WarmupTooLarge {
                warmup: self.warmup_discard,
                total: self.total_iterations,
            });
        }
        Ok(())
    }

    pub fn samples_expected(&self) -> usize {
        self.total_iterations - self.warmup_discard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub timestamp: DateTime<Utc>,
    pub frame_id: String,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub hardware_tag: String,
    pub backend_id: String,
    pub model_id: String,
    pub plan: BenchPlan,
    pub samples: Vec<Sample>,
    /// `None` when no post-warmup sample was collected.
    pub stats: Option<LatencyStats>,
    pub failure: Option<String>,
}

impl BenchRun {
    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn summary(&self) -> BenchSummary {
        BenchSummary {
            hardware_tag: self.hardware_tag.clone(),
            backend_id: self.backend_id.clone(),
            model_id: self.model_id.clone(),
            total_iterations: self.plan.total_iterations,
            warmup_discard: self.plan.warmup_discard,
            stats: self.stats.clone(),
            failure: self.failure.clone(),
        }
    }

    pub fn write_raw(&self, path: &Path) -> Result<(), BenchError> {
        let mut log = RawLog::create(path)?;
        for s in &self.samples {
            log.append(s, s.iteration < self.plan.warmup_discard)?;
        }
        Ok(())
    }
}

/// Streaming raw-sample log: `iteration,timestamp,frame_id,duration_ms,warmup`.
struct RawLog {
    out: BufWriter<File>,
}

impl RawLog {
    fn create(path: &Path) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "iteration,timestamp,frame_id,duration_ms,warmup")?;
        Ok(Self { out })
    }

    fn append(&mut self, s: &Sample, warmup: bool) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{:.6},{}",
            s.iteration,
            s.timestamp.to_rfc3339_opts(SecondsFormat::Micros, true),
            s.frame_id,
            s.duration_ms,
            warmup
        )?;
        self.out.flush()
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean, sample standard deviation (n - 1), min and max.
pub fn latency_stats(durations_ms: &[f64], discarded_warmup: usize) -> Option<LatencyStats> {
    let n = durations_ms.len();
    if n == 0 {
        return None;
    }
    let mean = compensated_sum(durations_ms.iter().copied()) / n as f64;
    let var = if n > 1 {
        compensated_sum(durations_ms.iter().map(|d| (d - mean) * (d - mean))) / (n - 1) as f64
    } else {
        0.0
    };
    let min = durations_ms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = durations_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(LatencyStats {
        samples_used: n,
        discarded_warmup,
        // guard the ordering invariant against rounding in the mean
        mean_ms: mean.clamp(min, max),
        std_ms: var.max(0.0).sqrt(),
        min_ms: min,
        max_ms: max,
    })
}

/// Time `plan.total_iterations` detect calls. When `counter` is given each
/// sample also covers ROI masking and counting.
pub async fn run_bench(
    plan: &BenchPlan,
    backend: &SharedBackend,
    frames: &[Frame],
    counter: Option<&Counter>,
    raw_log: Option<&Path>,
) -> Result<BenchRun, BenchError> {
    plan.validate()?;
    if frames.is_empty() {
        return Err(BenchError::NoFrames);
    }
    let mut log = raw_log.map(RawLog::create).transpose()?;
    let mut rng = plan.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut samples = Vec::with_capacity(plan.total_iterations);
    let mut failure = None;

    for iteration in 0..plan.total_iterations {
        let idx = match rng.as_mut() {
            Some(r) => r.gen_range(0..frames.len()),
            None => iteration % frames.len(),
        };
        let frame = &frames[idx];
        let timestamp = Utc::now();
        let start = Instant::now();
        let outcome = match counter {
            Some(c) => c.count(backend, frame).await.map(|_| ()).map_err(|e| e.to_string()),
            None => backend.detect(frame).await.map(|_| ()).map_err(|e| e.to_string()),
        };
        let elapsed = start.elapsed();
        if let Err(e) = outcome {
            tracing::error!(iteration, error = %e, "benchmark aborted");
            failure = Some(format!("iteration {iteration}: {e}"));
            break;
        }
        let sample = Sample {
            iteration,
            timestamp,
            frame_id: frame.id.clone(),
            duration_ms: elapsed.as_secs_f64() * 1000.0,
        };
        if let Some(log) = log.as_mut() {
            log.append(&sample, iteration < plan.warmup_discard)?;
        }
        samples.push(sample);
    }

    let kept: Vec<f64> = samples
        .iter()
        .filter(|s| s.iteration >= plan.warmup_discard)
        .map(|s| s.duration_ms)
        .collect();
    let d = backend.descriptor();
    Ok(BenchRun {
        hardware_tag: plan.hardware_tag.clone(),
        backend_id: d.backend_id.clone(),
        model_id: d.model_id.clone(),
        stats: latency_stats(&kept, plan.warmup_discard.min(samples.len())),
        plan: plan.clone(),
        samples,
        failure,
    })
}

/// The fixed protocol (1500 runs on one image, first 100 discarded).
pub async fn standard_latency_protocol(backend: &SharedBackend, frame: Frame) -> Result<BenchRun, BenchError> {
    run_bench(&BenchPlan::standard(), backend, &[frame], None, None).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub hardware_tag: String,
    pub backend_id: String,
    pub model_id: String,
    pub total_iterations: usize,
    pub warmup_discard: usize,
    pub stats: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl BenchSummary {
    pub fn key(&self) -> (String, String, String) {
        (self.hardware_tag.clone(), self.backend_id.clone(), self.model_id.clone())
    }
}

/// Insert or replace `entry` in the JSON summary file at `path`, keyed by
/// (hardware, backend, model).
pub fn merge_summary(path: &Path, entry: BenchSummary) -> Result<Vec<BenchSummary>, BenchError> {
    let mut entries: Vec<BenchSummary> = match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    entries.retain(|e| e.key() != entry.key());
    entries.push(entry);
    entries.sort_by_key(BenchSummary::key);
    std::fs::write(path, serde_json::to_vec_pretty(&entries)?)?;
    Ok(entries)
}

/// Reference A100/TensorRT latencies (mean, std in ms) for the YOLO
/// variants; shown as reference lines only.
#[allow(clippy::approx_constant)]
pub const REFERENCE_A100_MS: [(&str, f64, f64); 8] = [
    ("YOLOv8n", 3.61, 0.38),
    ("YOLOv8x", 8.42, 0.49),
    ("YOLOv9t", 5.12, 0.41),
    ("YOLOv9e", 10.69, 0.39),
    ("YOLOv10n", 3.14, 0.11),
    ("YOLOv10x", 7.46, 0.28),
    ("YOLOv11n", 3.61, 0.21),
    ("YOLOv11x", 7.87, 0.42),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub hardware: String,
    pub model: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub svg: String,
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("| hardware | model | n | mean ± std (ms) |\n|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.2} ± {:.2} |\n",
                r.hardware, r.model, r.samples, r.mean_ms, r.std_ms
            ));
        }
        out
    }
}

/// Table grouped by hardware then model, and a bar chart on a logarithmic
/// y-axis. `references` are drawn as dashed horizontal lines.
pub fn compare_report(
    entries: &[BenchSummary],
    references: &[(String, f64)],
) -> Result<ComparisonReport, BenchError> {
    let mut grouped: BTreeMap<&str, Vec<(&str, &LatencyStats)>> = BTreeMap::new();
    for e in entries {
        if let Some(s) = &e.stats {
            grouped.entry(e.hardware_tag.as_str()).or_default().push((e.model_id.as_str(), s));
        }
    }
    if grouped.is_empty() {
        return Err(BenchError::EmptyComparison);
    }
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for (hw, mut models) in grouped {
        models.sort_by(|a, b| a.0.cmp(b.0));
        for (model, s) in &models {
            rows.push(ComparisonRow {
                hardware: hw.to_owned(),
                model: (*model).to_owned(),
                samples: s.samples_used,
                mean_ms: s.mean_ms,
                std_ms: s.std_ms,
            });
        }
        groups.push(BarGroup {
            label: hw.to_owned(),
            bars: models.iter().map(|(m, s)| ((*m).to_owned(), s.mean_ms)).collect(),
        });
    }
    let svg = BarChart {
        title: "Average processing time per hardware and model".into(),
        y_label: "time per image (ms, log scale)".into(),
        log_scale: true,
        y_range: None,
        groups,
        reference_lines: references.to_vec(),
    }
    .to_svg();
    Ok(ComparisonReport { rows, svg })
}

//! Occupancy records and confusion-matrix evaluation.
//!
//! Labels are per-image vehicle counts, while the metrics are per spot. A
//! count pair is mapped to spot outcomes under a maximal-overlap assumption:
//! predicted-occupied spots are matched to truly occupied spots first, which
//! is the assignment with the fewest errors. Reported metrics are therefore
//! an upper bound on what a per-spot labeling would give. The positive class
//! is "empty space".

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{BarChart, BarGroup};
use crate::domain::{ConfusionCounts, CountResult, MetricKind, MetricSet, OccupancyRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("label of {label} vehicles exceeds capacity {capacity}")]
    LabelOverCapacity { label: u32, capacity: u32 },
    #[error("confusion counts are all zero")]
    EmptyConfusion,
    #[error("no labeled images to evaluate")]
    NoLabels,
    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("labels file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image_id: String,
    pub vehicle_count: u32,
}

impl LabeledImage {
    pub fn new(image_id: impl Into<String>, vehicle_count: u32) -> Self {
        Self {
            image_id: image_id.into(),
            vehicle_count,
        }
    }
}

pub fn occupancy(
    count: &CountResult,
    capacity: u32,
    lot_id: &str,
    timestamp: i64,
    model_id: &str,
) -> Result<OccupancyRecord, MetricsError> {
    if capacity == 0 {
        return Err(MetricsError::ZeroCapacity);
    }
    let vehicles = u32::try_from(count.in_roi_count).unwrap_or(u32::MAX);
    Ok(OccupancyRecord::new(lot_id, timestamp, capacity, vehicles, model_id))
}

/// Per-spot confusion for one image from its labeled and predicted vehicle
/// counts. The prediction is clamped to `capacity` first.
pub fn confusion_from_counts(
    label_vehicles: u32,
    predicted_vehicles: u32,
    capacity: u32,
) -> Result<ConfusionCounts, MetricsError> {
    if label_vehicles > capacity {
        return Err(MetricsError::LabelOverCapacity {
            label: label_vehicles,
            capacity,
        });
    }
    let l = label_vehicles as u64;
    let p = predicted_vehicles.min(capacity) as u64;
    let s = capacity as u64;
    Ok(if p <= l {
        ConfusionCounts::new(s - l, p, l - p, 0)
    } else {
        ConfusionCounts::new(s - p, l, 0, p - l)
    })
}

fn ratio(num: u64, den: u64, kind: MetricKind, flags: &mut Vec<MetricKind>) -> f64 {
    if den == 0 {
        flags.push(kind);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet, MetricsError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricsError::EmptyConfusion);
    }
    let mut flags = Vec::new();
    let accuracy = ratio(c.tp + c.tn, total, MetricKind::Accuracy, &mut flags);
    let precision = ratio(c.tp, c.tp + c.fp, MetricKind::Precision, &mut flags);
    let recall = ratio(c.tp, c.tp + c.fn_, MetricKind::Recall, &mut flags);
    let f1 = if precision + recall == 0.0 {
        flags.push(MetricKind::F1);
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let sensitivity = ratio(c.tp, c.tp + c.fn_, MetricKind::Sensitivity, &mut flags);
    let specificity = ratio(c.tn, c.tn + c.fp, MetricKind::Specificity, &mut flags);
    Ok(MetricSet {
        accuracy,
        precision,
        recall,
        f1,
        sensitivity,
        specificity,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        zero_denominator: flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub image_id: String,
    pub label_vehicles: u32,
    pub predicted_vehicles: u32,
    #[serde(flatten)]
    pub confusion: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub capacity: u32,
    pub images: usize,
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
    pub rows: Vec<EvaluationRow>,
}

/// Evaluate per-image predictions (the `in_roi_count` of each
/// [`CountResult`]) against count labels.
pub fn evaluate_dataset(
    labels: &[LabeledImage],
    predictions: &HashMap<String, CountResult>,
    capacity: u32,
) -> Result<Evaluation, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::NoLabels);
    }
    if capacity == 0 {
        return Err(MetricsError::ZeroCapacity);
    }
    let missing: Vec<String> = labels
        .iter()
        .filter(|l| !predictions.contains_key(&l.image_id))
        .map(|l| l.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    let rows = labels
        .iter()
        .map(|l| {
            let predicted = u32::try_from(predictions[&l.image_id].in_roi_count).unwrap_or(u32::MAX);
            Ok(EvaluationRow {
                image_id: l.image_id.clone(),
                label_vehicles: l.vehicle_count,
                predicted_vehicles: predicted,
                confusion: confusion_from_counts(l.vehicle_count, predicted, capacity)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let confusion: ConfusionCounts = rows.iter().map(|r| r.confusion).sum();
    Ok(Evaluation {
        capacity,
        images: rows.len(),
        metrics: metrics(&confusion)?,
        confusion,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLabels {
    pub retained: Vec<LabeledImage>,
    pub removed: usize,
    /// Share of the input that was dropped; 0 for an empty input.
    pub removed_fraction: f64,
}

/// Keep only images with at least one vehicle.
pub fn dataset_filter(labels: Vec<LabeledImage>) -> FilteredLabels {
    let total = labels.len();
    let retained: Vec<_> = labels.into_iter().filter(|l| l.vehicle_count >= 1).collect();
    let removed = total - retained.len();
    FilteredLabels {
        removed_fraction: if total == 0 { 0.0 } else { removed as f64 / total as f64 },
        retained,
        removed,
    }
}

/// Read `image_id,vehicle_count` rows (with a header line).
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<LabeledImage>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_labels<W: std::io::Write>(writer: W, labels: &[LabeledImage]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(l)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Balanced accuracy per model, one bar per ROI method.
pub fn balanced_accuracy_chart(results: &BTreeMap<(String, String), MetricSet>) -> String {
    let mut groups: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for ((model, method), m) in results {
        groups
            .entry(model.as_str())
            .or_default()
            .push((method.clone(), m.balanced_accuracy * 100.0));
    }
    BarChart {
        title: "Balanced accuracy by model and ROI method".into(),
        y_label: "balanced accuracy (%)".into(),
        log_scale: false,
        y_range: Some((0.0, 100.0)),
        groups: groups
            .into_iter()
            .map(|(label, bars)| BarGroup {
                label: label.to_owned(),
                bars,
            })
            .collect(),
        reference_lines: Vec::new(),
    }
    .to_svg()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force per-spot model. Spot labels are interchangeable, so the
    /// truly occupied spots are fixed to the first `label` ones and every
    /// predicted-occupied subset of the right size is enumerated. Among the
    /// subsets with the fewest errors all tallies must agree; that shared
    /// tally is the answer.
    fn simulate(label: u32, predicted: u32, capacity: u32) -> ConfusionCounts {
        let p = predicted.min(capacity);
        let occ: u32 = (1u32 << label) - 1;
        let mut best: Option<(u64, ConfusionCounts)> = None;
        for pred in 0u32..(1 << capacity) {
            if pred.count_ones() != p {
                continue;
            }
            let mut c = ConfusionCounts::default();
            for spot in 0..capacity {
                match (occ >> spot & 1 == 1, pred >> spot & 1 == 1) {
                    (false, false) => c.tp += 1,
                    (true, true) => c.tn += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
            let err = c.fp + c.fn_;
            match &best {
                Some((e, b)) if err == *e => assert_eq!(*b, c, "minimizers disagree"),
                Some((e, _)) if err > *e => {}
                _ => best = Some((err, c)),
            }
        }
        best.unwrap().1
    }

    #[test]
    fn confusion_examples_match_simulation() {
        assert_eq!(simulate(8, 8, 16), ConfusionCounts::new(8, 8, 0, 0));
        assert_eq!(simulate(10, 7, 16), ConfusionCounts::new(6, 7, 3, 0));
        assert_eq!(simulate(5, 9, 16), ConfusionCounts::new(7, 5, 0, 4));
        assert_eq!(confusion_from_counts(8, 8, 16).unwrap(), ConfusionCounts::new(8, 8, 0, 0));
        assert_eq!(confusion_from_counts(10, 7, 16).unwrap(), ConfusionCounts::new(6, 7, 3, 0));
        assert_eq!(confusion_from_counts(5, 9, 16).unwrap(), ConfusionCounts::new(7, 5, 0, 4));
    }

    #[test]
    fn confusion_matches_simulation_small_lots() {
        for s in 0..=10 {
            for l in 0..=s {
                for p in 0..=s + 3 {
                    assert_eq!(confusion_from_counts(l, p, s).unwrap(), simulate(l, p, s), "L={l} P={p} S={s}");
                }
            }
        }
    }

    #[test]
    fn confusion_rejects_label_over_capacity() {
        assert!(matches!(
            confusion_from_counts(17, 3, 16),
            Err(MetricsError::LabelOverCapacity { label: 17, capacity: 16 })
        ));
    }

    #[test]
    fn over_capacity_prediction_is_clamped() {
        assert_eq!(confusion_from_counts(16, 40, 16).unwrap(), ConfusionCounts::new(0, 16, 0, 0));
    }

    #[test]
    fn occupancy_examples() {
        let mut c = CountResult {
            total_detections: 13,
            in_roi_count: 8,
            ..CountResult::default()
        };
        let r = occupancy(&c, 16, "lot", 1, "m").unwrap();
        assert_eq!((r.vehicles, r.free), (8, 8));
        c.in_roi_count = 0;
        assert_eq!(occupancy(&c, 16, "lot", 1, "m").unwrap().free, 16);
        c.in_roi_count = 20;
        assert_eq!(occupancy(&c, 16, "lot", 1, "m").unwrap().free, 0);
        assert!(matches!(occupancy(&c, 0, "lot", 1, "m"), Err(MetricsError::ZeroCapacity)));
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(&ConfusionCounts::new(8, 8, 0, 0)).unwrap();
        assert_eq!((m.accuracy, m.balanced_accuracy, m.f1), (1.0, 1.0, 1.0));
        assert!(m.zero_denominator.is_empty());

        let m = metrics(&ConfusionCounts::new(50, 40, 5, 5)).unwrap();
        assert!((m.accuracy - 0.90).abs() < 1e-12);
        assert!((m.precision - 50.0 / 55.0).abs() < 1e-12);
        assert!((m.recall - 50.0 / 55.0).abs() < 1e-12);
        assert!((m.f1 - 0.9091).abs() < 5e-5);
        assert!((m.specificity - 40.0 / 45.0).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.8990).abs() < 5e-5);

        let m = metrics(&ConfusionCounts::new(0, 10, 0, 0)).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.is_flagged(MetricKind::Precision));
        assert_eq!(m.specificity, 1.0);

        assert!(matches!(metrics(&ConfusionCounts::default()), Err(MetricsError::EmptyConfusion)));
    }

    fn pred(n: usize) -> CountResult {
        CountResult {
            total_detections: n,
            in_roi_count: n,
            per_class_in_roi: [("car".to_string(), n)].into_iter().filter(|(_, v)| *v > 0).collect(),
        }
    }

    #[test]
    fn evaluate_examples() {
        let labels = vec![LabeledImage::new("a", 4), LabeledImage::new("b", 9)];
        let preds: HashMap<_, _> = [("a".to_string(), pred(4)), ("b".to_string(), pred(9))].into();
        let e = evaluate_dataset(&labels, &preds, 16).unwrap();
        assert_eq!(e.confusion.tp + e.confusion.tn, 32);
        assert_eq!(e.metrics.balanced_accuracy, 1.0);

        let labels = vec![LabeledImage::new("a", 10), LabeledImage::new("b", 5)];
        let preds: HashMap<_, _> = [("a".to_string(), pred(7)), ("b".to_string(), pred(9))].into();
        let e = evaluate_dataset(&labels, &preds, 16).unwrap();
        assert_eq!(e.confusion, ConfusionCounts::new(13, 12, 3, 4));
        assert_eq!(e.rows.len(), 2);

        assert!(matches!(evaluate_dataset(&[], &preds, 16), Err(MetricsError::NoLabels)));
        let err = evaluate_dataset(&[LabeledImage::new("zz", 1), LabeledImage::new("a", 1)], &preds, 16).unwrap_err();
        assert_eq!(err.to_string(), "missing predictions for: zz");
    }

    #[test]
    fn filter_examples() {
        let labels: Vec<_> = (0..100).map(|i| LabeledImage::new(format!("{i}"), if i < 22 { 0 } else { 3 })).collect();
        let f = dataset_filter(labels);
        assert_eq!(f.retained.len(), 78);
        assert!((f.removed_fraction - 0.22).abs() < 1e-12);

        let all: Vec<_> = (0..5).map(|i| LabeledImage::new(format!("{i}"), 1)).collect();
        let f = dataset_filter(all.clone());
        assert_eq!(f.retained, all);
        assert_eq!(f.removed_fraction, 0.0);

        let none: Vec<_> = (0..5).map(|i| LabeledImage::new(format!("{i}"), 0)).collect();
        let f = dataset_filter(none);
        assert!(f.retained.is_empty());
        assert_eq!(f.removed_fraction, 1.0);
    }

    #[test]
    fn labels_csv_round_trip() {
        let text = "image_id,vehicle_count\na.jpg, 3\nb.jpg,0\n";
        let labels = read_labels(text.as_bytes()).unwrap();
        assert_eq!(labels, [LabeledImage::new("a.jpg", 3), LabeledImage::new("b.jpg", 0)]);
        let mut out = Vec::new();
        write_labels(&mut out, &labels).unwrap();
        assert_eq!(read_labels(out.as_slice()).unwrap(), labels);
        assert!(read_labels("image_id,vehicle_count\na,-1\n".as_bytes()).is_err());
    }

    #[test]
    fn chart_has_one_group_per_model() {
        let m = metrics(&ConfusionCounts::new(8, 8, 0, 0)).unwrap();
        let mut results = BTreeMap::new();
        results.insert(("blob".to_string(), "pre".to_string()), m.clone());
        results.insert(("blob".to_string(), "post".to_string()), m);
        let svg = balanced_accuracy_chart(&results);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("class=\"group\"").count(), 1);
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn confusion_invariants(s in 1u32..200, l_frac in 0.0f64..=1.0, p in 0u32..250) {
                let l = (s as f64 * l_frac).floor() as u32;
                let c = confusion_from_counts(l, p, s).unwrap();
                prop_assert_eq!(c.total(), s as u64);

                let diag = confusion_from_counts(l, l, s).unwrap();
                prop_assert_eq!((diag.fp, diag.fn_), (0, 0));

                // swapping label and prediction swaps the error types
                let p = p.min(s);
                let a = confusion_from_counts(l, p, s).unwrap();
                let b = confusion_from_counts(p, l, s).unwrap();
                prop_assert_eq!((a.fp, a.fn_), (b.fn_, b.fp));
                prop_assert_eq!((a.tp, a.tn), (b.tp, b.tn));
                let ma = metrics(&a).unwrap();
                let mb = metrics(&b).unwrap();
                prop_assert_eq!(ma.accuracy, mb.accuracy);
            }

            #[test]
            fn metric_ranges(tp in 0u64..1000, tn in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
                prop_assume!(tp + tn + fp + fn_ > 0);
                let m = metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
                prop_assert_eq!(m.recall, m.sensitivity);
                for k in [MetricKind::Accuracy, MetricKind::Precision, MetricKind::Recall, MetricKind::F1,
                          MetricKind::Sensitivity, MetricKind::Specificity, MetricKind::BalancedAccuracy] {
                    let v = m.get(k);
                    prop_assert!((0.0..=1.0).contains(&v), "{:?}={}", k, v);
                }
            }
        }
    }
}

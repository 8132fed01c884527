//! Region-of-interest masking.
//!
//! Two strategies share the same bilevel mask:
//!
//! * **pre-mask**: every pixel outside the ROI is overwritten with neutral
//!   gray before inference, so the detector never sees it;
//! * **post-filter**: inference runs on the untouched frame and a detection is
//!   kept only when the mask pixel under its box center is inside the ROI.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::domain::{CountResult, Detection, DomainError, ImageBuffer, RoiMask};

/// Fill value for non-ROI pixels in pre-mask mode.
pub const GRAY: [u8; 3] = [128, 128, 128];

pub const DEFAULT_THRESHOLD: u8 = 128;

pub const DEFAULT_CLASSES: [&str; 2] = ["car", "truck"];

#[derive(Debug, Error)]
pub enum RoiError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("dimension mismatch: image is {image_w}x{image_h}, mask is {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("pre-mask needs a 3-channel image, got {0} channel(s)")]
    NotRgb(u8),
    #[error("cannot decode mask image: {0}")]
    Decode(String),
}

pub fn default_classes() -> BTreeSet<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Rec. 601 luma, rounded to the nearest integer.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Binarize a mask image: a pixel is inside the ROI iff its luminance is
/// below `threshold`.
pub fn load_mask(image: &ImageBuffer, threshold: u8) -> Result<RoiMask, RoiError> {
    let bits = image
        .pixels()
        .map(|px| {
            let luma = match px {
                [v] => *v,
                [r, g, b] => luminance(*r, *g, *b),
                _ => unreachable!("ImageBuffer guarantees 1 or 3 channels"),
            };
            luma < threshold
        })
        .collect();
    Ok(RoiMask::new(image.width(), image.height(), bits)?)
}

/// Decode a PNG/JPEG mask file and binarize it.
pub fn load_mask_file(path: &std::path::Path, threshold: u8) -> Result<RoiMask, RoiError> {
    let img = crate::imageio::read_image(path).map_err(|e| RoiError::Decode(e.to_string()))?;
    load_mask(&img, threshold)
}

fn check_dims(image: &ImageBuffer, mask: &RoiMask) -> Result<(), RoiError> {
    if image.dims() != mask.dims() {
        return Err(RoiError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            mask_w: mask.width(),
            mask_h: mask.height(),
        });
    }
    Ok(())
}

/// Gray-fill everything outside the ROI. The input is left untouched.
pub fn apply_pre_mask(image: &ImageBuffer, mask: &RoiMask) -> Result<ImageBuffer, RoiError> {
    check_dims(image, mask)?;
    if image.channels() != 3 {
        return Err(RoiError::NotRgb(image.channels()));
    }
    let mut data = image.data().to_vec();
    for (px, &inside) in data.chunks_exact_mut(3).zip(mask.bits()) {
        if !inside {
            px.copy_from_slice(&GRAY);
        }
    }
    Ok(ImageBuffer::new(image.width(), image.height(), 3, data)?)
}

pub fn point_in_roi(mask: &RoiMask, x: i64, y: i64) -> bool {
    mask.contains(x, y)
}

/// Post-processing filter for detections reported on the mask's own pixel
/// grid.
pub fn filter_detections(
    detections: &[Detection],
    mask: &RoiMask,
    allowed_classes: &BTreeSet<String>,
) -> CountResult {
    filter_detections_in(detections, mask.dims(), mask, allowed_classes)
}

/// Like [`filter_detections`], for detections reported on a `frame_dims`
/// grid. When that grid differs from the mask, centers are rescaled linearly
/// onto the mask before lookup.
pub fn filter_detections_in(
    detections: &[Detection],
    frame_dims: (u32, u32),
    mask: &RoiMask,
    allowed_classes: &BTreeSet<String>,
) -> CountResult {
    let mut result = CountResult::default();
    for d in detections {
        if !allowed_classes.contains(d.class_label()) {
            continue;
        }
        let (cx, cy) = d.bbox().center();
        let (mx, my) = rescale((cx, cy), frame_dims, mask.dims());
        result.record(d.class_label(), point_in_roi(mask, mx, my));
    }
    result
}

/// Count every allowed-class detection without consulting a mask (used after
/// pre-masking, where the detector only ever saw the ROI).
pub fn count_allowed(detections: &[Detection], allowed_classes: &BTreeSet<String>) -> CountResult {
    let mut result = CountResult::default();
    for d in detections.iter().filter(|d| allowed_classes.contains(d.class_label())) {
        result.record(d.class_label(), true);
    }
    result
}

fn rescale(p: (i32, i32), from: (u32, u32), to: (u32, u32)) -> (i64, i64) {
    if from == to {
        return (p.0 as i64, p.1 as i64);
    }
    let sx = (p.0 as i64 * to.0 as i64).div_euclid(from.0.max(1) as i64);
    let sy = (p.1 as i64 * to.1 as i64).div_euclid(from.1.max(1) as i64);
    (sx, sy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundingBox;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, data: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    fn car(x1: i32, y1: i32, x2: i32, y2: i32) -> Detection {
        Detection::new("car", 0.9, BoundingBox::new(x1, y1, x2, y2).unwrap()).unwrap()
    }

    #[test]
    fn load_mask_thresholds_luminance() {
        let m = load_mask(&gray(2, 2, vec![0, 255, 0, 255]), 128).unwrap();
        assert_eq!(m.bits(), &[true, false, true, false]);

        let m = load_mask(&gray(4, 4, vec![0; 16]), DEFAULT_THRESHOLD).unwrap();
        assert!(m.bits().iter().all(|&b| b));

        let err = load_mask(&gray(4, 4, vec![255; 16]), DEFAULT_THRESHOLD).unwrap_err();
        assert!(err.to_string().contains("empty ROI"), "{err}");
    }

    #[test]
    fn load_mask_rgb_uses_luma() {
        // pure red has luma 76, pure green 150
        let img = ImageBuffer::new(2, 1, 3, vec![255, 0, 0, 0, 255, 0]).unwrap();
        let m = load_mask(&img, 128).unwrap();
        assert_eq!(m.bits(), &[true, false]);
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(128, 128, 128), 128);
    }

    #[test]
    fn threshold_is_strict() {
        let m = load_mask(&gray(2, 1, vec![127, 128]), 128).unwrap();
        assert_eq!(m.bits(), &[true, false]);
    }

    #[test]
    fn pre_mask_gray_fill() {
        let img = ImageBuffer::new(2, 1, 3, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let mask = RoiMask::new(2, 1, vec![true, false]).unwrap();
        let out = apply_pre_mask(&img, &mask).unwrap();
        assert_eq!(out.data(), &[10, 20, 30, 128, 128, 128]);
        assert_eq!(img.data(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn pre_mask_all_true_is_identity() {
        let img = ImageBuffer::new(3, 2, 3, (0..18).collect()).unwrap();
        let mask = RoiMask::new(3, 2, vec![true; 6]).unwrap();
        assert_eq!(apply_pre_mask(&img, &mask).unwrap(), img);
    }

    #[test]
    fn pre_mask_checkerboard_half_gray() {
        let (w, h) = (768u32, 1024u32);
        // no pixel of the source is gray, so every gray pixel came from the fill
        let data: Vec<u8> = (0..w * h).flat_map(|i| [(i % 97) as u8, 7, 200]).collect();
        let img = ImageBuffer::new(w, h, 3, data).unwrap();
        let bits = (0..h).flat_map(|y| (0..w).map(move |x| (x + y) % 2 == 0)).collect();
        let mask = RoiMask::new(w, h, bits).unwrap();
        let out = apply_pre_mask(&img, &mask).unwrap();
        let gray_count = out.pixels().filter(|p| *p == GRAY).count();
        assert_eq!(gray_count, (w * h / 2) as usize);
    }

    #[test]
    fn pre_mask_errors() {
        let img = ImageBuffer::new(2, 2, 3, vec![0; 12]).unwrap();
        let mask = RoiMask::new(2, 1, vec![true, true]).unwrap();
        let err = apply_pre_mask(&img, &mask).unwrap_err();
        assert!(err.to_string().contains("2x2") && err.to_string().contains("2x1"), "{err}");
        let g = gray(2, 1, vec![0, 0]);
        assert!(matches!(apply_pre_mask(&g, &mask), Err(RoiError::NotRgb(1))));
    }

    #[test]
    fn point_lookup() {
        let mut bits = vec![false; 8 * 6];
        bits[4 * 8 + 3] = true;
        let mask = RoiMask::new(8, 6, bits).unwrap();
        assert!(point_in_roi(&mask, 3, 4));
        assert!(!point_in_roi(&mask, 4, 3));
        assert!(!point_in_roi(&mask, -1, 0));
        assert!(!point_in_roi(&mask, 8, 5));
        assert!(!point_in_roi(&mask, 0, 6));
    }

    #[test]
    fn filter_counts_and_class_filter() {
        let mask = RoiMask::new(10, 10, (0..100).map(|i| i % 10 < 5).collect()).unwrap();
        let classes = default_classes();
        assert_eq!(filter_detections(&[], &mask, &classes), CountResult::default());

        let person = Detection::new("person", 0.8, BoundingBox::new(0, 0, 2, 2).unwrap()).unwrap();
        let r = filter_detections(&[person], &mask, &classes);
        assert_eq!((r.total_detections, r.in_roi_count), (0, 0));

        let truck = Detection::new("truck", 0.5, BoundingBox::new(1, 1, 3, 3).unwrap()).unwrap();
        let r = filter_detections(&[car(0, 0, 2, 2), car(6, 0, 8, 2), truck], &mask, &classes);
        assert_eq!((r.total_detections, r.in_roi_count), (3, 2));
        assert_eq!(r.per_class_in_roi["car"], 1);
        assert_eq!(r.per_class_in_roi["truck"], 1);
        assert!(r.is_consistent());
    }

    #[test]
    fn filter_rescales_centers() {
        // mask is half resolution of the frame; left half is ROI
        let mask = RoiMask::new(4, 4, (0..16).map(|i| i % 4 < 2).collect()).unwrap();
        let classes = default_classes();
        let dets = [car(0, 0, 6, 6), car(8, 0, 14, 6)];
        let r = filter_detections_in(&dets, (8, 8), &mask, &classes);
        assert_eq!((r.total_detections, r.in_roi_count), (2, 1));
    }

    fn arb_mask() -> impl Strategy<Value = RoiMask> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_filter_map("empty", move |mut bits| {
                bits[0] = true;
                RoiMask::new(w, h, bits).ok()
            })
        })
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        let det = (prop_oneof![Just("car"), Just("truck"), Just("bus")], -5i32..30, -5i32..30, 0i32..12, 0i32..12)
            .prop_map(|(c, x, y, w, h)| {
                Detection::new(c, 0.5, BoundingBox::new(x, y, x + w, y + h).unwrap()).unwrap()
            });
        proptest::collection::vec(det, 0..30)
    }

    proptest! {
        #[test]
        fn pre_mask_idempotent(mask in arb_mask(), seed in any::<u64>()) {
            let n = (mask.width() * mask.height()) as usize;
            let data: Vec<u8> = (0..n * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let img = ImageBuffer::new(mask.width(), mask.height(), 3, data).unwrap();
            let once = apply_pre_mask(&img, &mask).unwrap();
            let twice = apply_pre_mask(&once, &mask).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn shrinking_roi_never_increases_count(a in arb_mask(), seed in any::<u64>(), dets in arb_dets()) {
            let n = (a.width() * a.height()) as usize;
            let other: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
            let b = RoiMask::new(a.width(), a.height(), other).unwrap();
            let classes = default_classes();
            if let Some(both) = a.intersect(&b) {
                let full = filter_detections(&dets, &a, &classes);
                let shrunk = filter_detections(&dets, &both, &classes);
                prop_assert!(shrunk.in_roi_count <= full.in_roi_count);
                prop_assert_eq!(shrunk.total_detections, full.total_detections);
            }
        }

        #[test]
        fn permutation_invariant(mask in arb_mask(), mut dets in arb_dets()) {
            let classes = default_classes();
            let before = filter_detections(&dets, &mask, &classes);
            dets.reverse();
            let after = filter_detections(&dets, &mask, &classes);
            prop_assert!(before.is_consistent());
            prop_assert_eq!(before, after);
        }
    }
}

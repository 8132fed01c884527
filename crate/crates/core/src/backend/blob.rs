use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, DetectorBackend};
use crate::domain::{BoundingBox, Detection, Frame, ImageBuffer};

/// Minimum channel spread (max - min) for a pixel to count as vehicle paint.
pub const SATURATION_THRESHOLD: u8 = 60;

/// Smallest blob reported as a vehicle, as (shorter side, longer side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MinSize {
    pub short: u32,
    pub long: u32,
}

/// Detector error injection. All randomness is derived from `seed` and the
/// frame id, so results do not depend on call order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability of missing a real vehicle.
    #[serde(default)]
    pub drop_rate: f64,
    /// Expected spurious boxes per real vehicle.
    #[serde(default)]
    pub spurious_rate: f64,
    /// Blobs smaller than this are not recognized; partially hidden vehicles
    /// fall below it.
    #[serde(default)]
    pub min_size: MinSize,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn is_perfect(&self) -> bool {
        self.drop_rate == 0.0 && self.spurious_rate == 0.0 && self.min_size == MinSize::default()
    }
}

/// Detects saturated rectangles (the synthetic scene's vehicles) by
/// 4-connected component labeling. With the default, noise-free model it is
/// an exact oracle for [`crate::scene`] output.
#[derive(Debug, Clone)]
pub struct BlobDetector {
    descriptor: BackendDescriptor,
    noise: NoiseModel,
}

impl BlobDetector {
    pub fn oracle() -> Self {
        Self::new(BackendDescriptor::new("synthetic", "blob-oracle"), NoiseModel::default())
    }

    pub fn new(descriptor: BackendDescriptor, noise: NoiseModel) -> Self {
        Self { descriptor, noise }
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn run(&self, frame: &Frame) -> Vec<Detection> {
        let blobs = find_blobs(&frame.image);
        if self.noise.is_perfect() {
            return blobs.into_iter().map(vehicle).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed ^ fnv1a(frame.id.as_bytes()));
        let (w, h) = frame.image.dims();
        let mut out = Vec::with_capacity(blobs.len());
        for b in blobs {
            let (short, long) = sides(&b);
            let big_enough = short >= self.noise.min_size.short && long >= self.noise.min_size.long;
            if big_enough && !rng.gen_bool(self.noise.drop_rate.clamp(0.0, 1.0)) {
                out.push(vehicle(b));
            }
            if rng.gen_bool(self.noise.spurious_rate.clamp(0.0, 1.0)) {
                out.push(spurious(&mut rng, w, h));
            }
        }
        out
    }
}

#[async_trait]
impl DetectorBackend for BlobDetector {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn detect(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Ok(self.run(frame))
    }
}

fn vehicle(b: BoundingBox) -> Detection {
    Detection::new("car", 1.0, b).expect("static label and confidence are valid")
}

fn spurious(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Detection {
    let bw = rng.gen_range(8..=24.min(w as i32).max(8));
    let bh = rng.gen_range(8..=36.min(h as i32).max(8));
    let x1 = rng.gen_range(0..=(w as i32 - bw).max(0));
    let y1 = rng.gen_range(0..=(h as i32 - bh).max(0));
    let b = BoundingBox::new(x1, y1, x1 + bw, y1 + bh)
        .expect("positive extents")
        .clamped(w, h);
    Detection::new("car", rng.gen_range(0.25..0.6), b).expect("valid confidence")
}

fn sides(b: &BoundingBox) -> (u32, u32) {
    let (a, c) = (b.width() as u32, b.height() as u32);
    (a.min(c), a.max(c))
}

fn is_paint(px: &[u8]) -> bool {
    match px {
        [r, g, b] => r.max(g).max(b) - r.min(g).min(b) >= SATURATION_THRESHOLD,
        _ => false,
    }
}

/// Bounding boxes of 4-connected saturated regions, in raster order of each
/// region's first pixel.
pub fn find_blobs(image: &ImageBuffer) -> Vec<BoundingBox> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let paint: Vec<bool> = image.pixels().map(is_paint).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !paint[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x);
            y2 = y2.max(y);
            let mut visit = |j: usize| {
                if paint[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(BoundingBox {
            x1: x1 as i32,
            y1: y1 as i32,
            x2: x2 as i32 + 1,
            y2: y2 as i32 + 1,
        });
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

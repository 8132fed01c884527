//! Synthetic parking-lot scenes with exact ground truth.
//!
//! Vehicles are solid, saturated rectangles on a desaturated asphalt
//! background, so a color-blob detector recovers their boxes exactly. Spots
//! are painted into the ROI mask; a parked vehicle may overhang its spot but
//! its center always stays on a spot pixel. Distractors are vehicles outside
//! the lot (passing traffic, cars parked on the street).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{BoundingBox, Detection, DomainError, ImageBuffer, RoiMask};

/// Saturated colors used for vehicle bodies. Every entry has a channel spread
/// of at least 100, far above the background's spread of 0.
pub const VEHICLE_COLORS: [[u8; 3]; 6] = [
    [200, 30, 30],
    [30, 60, 200],
    [30, 170, 60],
    [220, 180, 20],
    [150, 40, 170],
    [20, 170, 190],
];

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("spots {0} and {1} overlap")]
    OverlappingSpots(usize, usize),
    #[error("spot {0} lies outside the {1}x{2} image")]
    SpotOutOfFrame(usize, u32, u32),
    #[error("occupied index {0} does not name a spot")]
    UnknownSpot(usize),
    #[error("distractor {0} intersects the lot region")]
    DistractorInLot(usize),
    #[error("distractor {0} touches another vehicle")]
    DistractorCollision(usize),
    #[error("lot has no spots")]
    NoSpots,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Geometry and occupancy of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub spots: Vec<BoundingBox>,
    pub occupied: BTreeSet<usize>,
    pub distractors: Vec<BoundingBox>,
    /// Vehicle size as a fraction of its spot (width, height).
    pub vehicle_fill: (f64, f64),
    /// Maximum center offset from the spot center, as a fraction of the spot
    /// half-size. Must stay below 1 so centers remain on the spot.
    pub park_jitter: f64,
}

/// Rendered scene plus everything a test needs to check a pipeline against.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageBuffer,
    pub mask: RoiMask,
    /// Every rendered vehicle (parked and distractor), class `car`,
    /// confidence 1.
    pub ground_truth: Vec<Detection>,
    /// Boxes of parked vehicles only, in spot order.
    pub parked: Vec<BoundingBox>,
    pub vehicles_in_roi: usize,
}

impl Scene {
    /// The ROI as a mask image: black on the spots, white elsewhere.
    pub fn mask_image(&self) -> ImageBuffer {
        let data = self.mask.bits().iter().map(|&b| if b { 0 } else { 255 }).collect();
        ImageBuffer::new(self.mask.width(), self.mask.height(), 1, data).expect("same shape as mask")
    }
}

/// Standard two-row, 16-spot lot on a 320x240 frame with a street band below.
pub const LOT_WIDTH: u32 = 320;
pub const LOT_HEIGHT: u32 = 240;

pub fn grid_spots(rows: u32, cols: u32, spot: (u32, u32), gap: (u32, u32), origin: (u32, u32)) -> Vec<BoundingBox> {
    let mut spots = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let x1 = (origin.0 + c * (spot.0 + gap.0)) as i32;
            let y1 = (origin.1 + r * (spot.1 + gap.1)) as i32;
            spots.push(BoundingBox {
                x1,
                y1,
                x2: x1 + spot.0 as i32,
                y2: y1 + spot.1 as i32,
            });
        }
    }
    spots
}

/// Street positions for up to ten distractor vehicles, clear of the standard
/// lot and of any overhang.
pub fn street_slots() -> Vec<BoundingBox> {
    (0..10)
        .map(|i| {
            let x1 = 8 + i * 30;
            let y1 = if i % 2 == 0 { 182 } else { 206 };
            BoundingBox {
                x1,
                y1,
                x2: x1 + 34,
                y2: y1 + 16,
            }
        })
        .collect()
}

impl SceneSpec {
    /// The standard 16-spot lot with the given occupancy and number of street
    /// distractors (at most 10).
    pub fn standard(occupied: impl IntoIterator<Item = usize>, distractors: usize) -> Self {
        Self {
            width: LOT_WIDTH,
            height: LOT_HEIGHT,
            spots: grid_spots(2, 8, (24, 40), (10, 36), (24, 30)),
            occupied: occupied.into_iter().collect(),
            distractors: street_slots().into_iter().take(distractors).collect(),
            vehicle_fill: (0.7, 0.9),
            park_jitter: 0.6,
        }
    }

    /// Bounding rectangle of all spots.
    pub fn lot_region(&self) -> Option<BoundingBox> {
        let first = self.spots.first()?;
        Some(self.spots.iter().fold(*first, |a, b| BoundingBox {
            x1: a.x1.min(b.x1),
            y1: a.y1.min(b.y1),
            x2: a.x2.max(b.x2),
            y2: a.y2.max(b.y2),
        }))
    }

    fn validate(&self) -> Result<BoundingBox, SceneError> {
        let lot = self.lot_region().ok_or(SceneError::NoSpots)?;
        for (i, s) in self.spots.iter().enumerate() {
            if !s.is_within(self.width, self.height) || s.area() == 0 {
                return Err(SceneError::SpotOutOfFrame(i, self.width, self.height));
            }
            for (j, t) in self.spots.iter().enumerate().skip(i + 1) {
                if s.intersects(t) {
                    return Err(SceneError::OverlappingSpots(i, j));
                }
            }
        }
        if let Some(&bad) = self.occupied.iter().find(|&&i| i >= self.spots.len()) {
            return Err(SceneError::UnknownSpot(bad));
        }
        for (i, d) in self.distractors.iter().enumerate() {
            if d.intersects(&lot) {
                return Err(SceneError::DistractorInLot(i));
            }
        }
        Ok(lot)
    }

    /// Render deterministically from `seed`.
    pub fn render(&self, seed: u64) -> Result<Scene, SceneError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.width as usize, self.height as usize);

        let mut data = vec![0u8; w * h * 3];
        for px in data.chunks_exact_mut(3) {
            let v = rng.gen_range(60u8..=100);
            px.copy_from_slice(&[v, v, v]);
        }

        let mut bits = vec![false; w * h];
        for s in &self.spots {
            for y in s.y1..s.y2 {
                for x in s.x1..s.x2 {
                    bits[y as usize * w + x as usize] = true;
                }
            }
        }
        let mask = RoiMask::new(self.width, self.height, bits)?;

        let mut parked = Vec::with_capacity(self.occupied.len());
        for &i in &self.occupied {
            parked.push(self.place_vehicle(&self.spots[i], &mut rng));
        }
        for (i, d) in self.distractors.iter().enumerate() {
            // a one-pixel margin keeps blobs from merging under 4-connectivity
            let grown = BoundingBox {
                x1: d.x1 - 1,
                y1: d.y1 - 1,
                x2: d.x2 + 1,
                y2: d.y2 + 1,
            };
            let hits_parked = parked.iter().any(|p| p.intersects(&grown));
            let hits_other = self.distractors[..i].iter().any(|o| o.intersects(&grown));
            if hits_parked || hits_other {
                return Err(SceneError::DistractorCollision(i));
            }
        }

        let mut ground_truth = Vec::with_capacity(parked.len() + self.distractors.len());
        for b in parked.iter().chain(&self.distractors) {
            let b = b.clamped(self.width, self.height);
            let color = VEHICLE_COLORS[rng.gen_range(0..VEHICLE_COLORS.len())];
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    let i = (y as usize * w + x as usize) * 3;
                    data[i..i + 3].copy_from_slice(&color);
                }
            }
            ground_truth.push(Detection::new("car", 1.0, b)?);
        }

        Ok(Scene {
            image: ImageBuffer::new(self.width, self.height, 3, data)?,
            mask,
            ground_truth,
            vehicles_in_roi: parked.len(),
            parked,
        })
    }

    fn place_vehicle(&self, spot: &BoundingBox, rng: &mut ChaCha8Rng) -> BoundingBox {
        let vw = ((spot.width() as f64 * self.vehicle_fill.0).round() as i32).max(1);
        let vh = ((spot.height() as f64 * self.vehicle_fill.1).round() as i32).max(1);
        let jx = (spot.width() as f64 / 2.0 * self.park_jitter) as i32;
        let jy = (spot.height() as f64 / 2.0 * self.park_jitter) as i32;
        let dx = if jx > 0 { rng.gen_range(-jx..=jx) } else { 0 };
        let dy = if jy > 0 { rng.gen_range(-jy..=jy) } else { 0 };
        let (scx, scy) = spot.center();
        let x1 = scx + dx - vw / 2;
        let y1 = scy + dy - vh / 2;
        let b = BoundingBox {
            x1,
            y1,
            x2: x1 + vw,
            y2: y1 + vh,
        };
        // keep the center pixel on the spot whatever the jitter
        let (cx, cy) = b.center();
        let sx = cx.clamp(spot.x1, spot.x2 - 1) - cx;
        let sy = cy.clamp(spot.y1, spot.y2 - 1) - cy;
        BoundingBox {
            x1: b.x1 + sx,
            y1: b.y1 + sy,
            x2: b.x2 + sx,
            y2: b.y2 + sy,
        }
    }
}

/// A labeled synthetic corpus of standard-lot scenes with random occupancy.
pub fn standard_corpus(count: usize, seed: u64) -> impl Iterator<Item = (String, SceneSpec, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(move |i| {
        let occupied_count = rng.gen_range(0..=16usize);
        let mut spots: Vec<usize> = (0..16).collect();
        for k in 0..16 {
            let j = rng.gen_range(k..16);
            spots.swap(k, j);
        }
        let distractors = rng.gen_range(0..=5usize);
        let spec = SceneSpec::standard(spots[..occupied_count].iter().copied(), distractors);
        (format!("scene_{i:04}.png"), spec, rng.gen())
    })
}

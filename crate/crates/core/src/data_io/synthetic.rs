use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DatasetSplit, ImageShape, Section};
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Per-coordinate standard deviation of every blob.
pub const BLOB_STD: f64 = 0.1;

fn held_out(per_class: usize) -> usize {
    per_class.div_ceil(4)
}

/// Isotropic Gaussian clusters, one per class.
///
/// Class centres sit at distance `separation / 2` from the middle of the unit
/// cube along random directions; features are clipped to `[0, 1]`. Train gets
/// `per_class` samples per class, validation and test a quarter of that each.
pub fn make_blobs(
    class_count: usize,
    d: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(separation > 0.0) {
        return Err(VpnError::Contract(format!(
            "blob separation must be positive, got {separation}"
        )));
    }
    let streams = Streams::new(seed);
    let mut rng = streams.stream(Domain::Synthetic, 0, 0, 0);
    let centres: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter().map(|v| 0.5 + 0.5 * separation * v / norm).collect()
        })
        .collect();

    let make = |part: u64, per: usize| -> Result<Section> {
        let mut rng = streams.stream(Domain::Synthetic, 1, part, 0);
        let mut features = Vec::with_capacity(per * class_count * d);
        let mut labels = Vec::with_capacity(per * class_count);
        for _ in 0..per {
            for (k, centre) in centres.iter().enumerate() {
                for c in centre {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push((c + BLOB_STD * z).clamp(0.0, 1.0));
                }
                labels.push(k);
            }
        }
        Section::new(d, features, labels)
    };
    let held = held_out(per_class);
    DatasetSplit::new(
        make(0, per_class)?,
        make(1, held)?,
        make(2, held)?,
        class_count,
        None,
    )
}

/// Small grayscale images: each class owns a bright rectangle at a fixed
/// random location on a dim, noisy background. Samples jitter the rectangle
/// by up to one pixel.
pub fn make_glyphs(
    class_count: usize,
    side: usize,
    per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if side < 4 {
        return Err(VpnError::Contract(format!("glyph side must be >= 4, got {side}")));
    }
    let streams = Streams::new(seed);
    let mut rng = streams.stream(Domain::Synthetic, 2, 0, 0);
    // (top, left, height, width), kept one pixel clear of the border
    let templates: Vec<(usize, usize, usize, usize)> = (0..class_count)
        .map(|_| {
            let h = rng.random_range(side / 4..=side / 2);
            let w = rng.random_range(side / 4..=side / 2);
            let top = rng.random_range(1..=side - 1 - h);
            let left = rng.random_range(1..=side - 1 - w);
            (top, left, h, w)
        })
        .collect();
    let d = side * side;

    let make = |part: u64, per: usize| -> Result<Section> {
        let mut rng = streams.stream(Domain::Synthetic, 3, part, 0);
        let mut features = Vec::with_capacity(per * class_count * d);
        let mut labels = Vec::with_capacity(per * class_count);
        for _ in 0..per {
            for (k, &(top, left, h, w)) in templates.iter().enumerate() {
                let dr = rng.random_range(-1i64..=1);
                let dc = rng.random_range(-1i64..=1);
                let top = (top as i64 + dr) as usize;
                let left = (left as i64 + dc) as usize;
                for r in 0..side {
                    for c in 0..side {
                        let inside = (top..top + h).contains(&r) && (left..left + w).contains(&c);
                        let v = if inside {
                            rng.random_range(0.7..=1.0)
                        } else {
                            rng.random_range(0.0..=0.15)
                        };
                        features.push(v);
                    }
                }
                labels.push(k);
            }
        }
        Section::new(d, features, labels)
    };
    let held = held_out(per_class);
    DatasetSplit::new(
        make(0, per_class)?,
        make(1, held)?,
        make(2, held)?,
        class_count,
        Some(ImageShape::gray(side, side)),
    )
}

//! Classification accuracy and the object-centric region distances.
//!
//! The two distances combine as a harmonic mean and read like errors:
//! lower is better. They are not rates; do not confuse the harmonic score
//! with an F-measure.

use crate::diffcore::{Real, Tensor};

/// Fraction of rows whose argmax equals the label. Ties break toward the
/// lowest index.
pub fn accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(b, labels.len(), "{} logit rows but {} labels", b, labels.len());
    let mut hits = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        let x = &logits.data()[row * k..(row + 1) * k];
        let mut best = 0usize;
        for j in 1..k {
            if x[j] > x[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / b.max(1) as f64
}

/// Point sets for one frame: predicted region centers and object centers,
/// both in normalized `[0, 1]` coordinates.
#[derive(Clone, Debug, Default)]
pub struct FramePoints {
    pub regions: Vec<(f64, f64)>,
    pub objects: Vec<(f64, f64)>,
}

fn min_distance(from: (f64, f64), to: &[(f64, f64)]) -> f64 {
    to.iter()
        .map(|&(x, y)| ((from.0 - x).powi(2) + (from.1 - y).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Mean over frames and regions of each region's distance to its nearest
/// object. Frames without objects are skipped.
pub fn dist_precision(frames: &[FramePoints]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in frames {
        if f.objects.is_empty() {
            continue;
        }
        for &r in &f.regions {
            total += min_distance(r, &f.objects);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Mean over frames and objects of each object's distance to its nearest
/// region. Frames without objects are skipped.
pub fn dist_recall(frames: &[FramePoints]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in frames {
        if f.objects.is_empty() || f.regions.is_empty() {
            continue;
        }
        for &b in &f.objects {
            total += min_distance(b, &f.regions);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `2pr / (p + r)`, defined as 0 when both inputs are 0. Lower is better.
pub fn harmonic_score(p: f64, r: f64) -> f64 {
    assert!(p >= 0.0 && r >= 0.0, "distances cannot be negative");
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Aggregated object-centric evaluation result.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistScore {
    pub dist_p: f64,
    pub dist_r: f64,
    pub harmonic: f64,
    pub frames_counted: usize,
}

impl DistScore {
    pub fn from_frames(frames: &[FramePoints]) -> DistScore {
        let p = dist_precision(frames);
        let r = dist_recall(frames);
        DistScore {
            dist_p: p,
            dist_r: r,
            harmonic: harmonic_score(p, r),
            frames_counted: frames.iter().filter(|f| !f.objects.is_empty()).count(),
        }
    }
}

//! Coordinate conventions.
//!
//! Grid cells are indexed by their centers: cell `p` of an axis of `size`
//! cells sits at coordinate `p`, and normalized position `(p + 0.5) / size`.
//! The same convention applies to original-frame pixels and feature-map
//! cells, so conversions between the two levels are exact.

/// Cell-center coordinate to normalized `[0, 1]`.
pub fn to_norm(x: f64, size: usize) -> f64 {
    (x + 0.5) / size as f64
}

/// Normalized position back to a cell-center coordinate.
pub fn from_norm(x: f64, size: usize) -> f64 {
    x * size as f64 - 0.5
}

/// Half-extent measured in cells of `from` cells, renormalized to `[0, 1]`.
pub fn extent_to_norm(w: f64, size: usize) -> f64 {
    w / size as f64
}

pub fn extent_from_norm(w: f64, size: usize) -> f64 {
    w * size as f64
}

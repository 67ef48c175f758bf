//! Deterministic programmatic glyphs. Ten shapes rasterized by per-pixel
//! predicates in the unit square, so any raster size gives the same shape.

use crate::error::{Error, Result};

pub const GLYPH_COUNT: usize = 10;

pub const GLYPH_NAMES: [&str; GLYPH_COUNT] = [
    "circle", "cross", "triangle", "square", "plus", "tee", "ell", "aitch", "ex", "diamond",
];

/// Binary raster of one glyph with its tight bounding box.
#[derive(Clone, Debug)]
pub struct Glyph {
    pub px: usize,
    pub bits: Vec<bool>,
    /// Inclusive tight extent (x0, y0, x1, y1) of lit pixels.
    pub bbox: (usize, usize, usize, usize),
}

impl Glyph {
    pub fn lit_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_lit(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.px + x]
    }
}

fn predicate(class_id: usize, u: f64, v: f64) -> bool {
    let in_band = |a: f64, c: f64, t: f64| (a - c).abs() <= t;
    match class_id {
        // ring
        0 => {
            let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            (0.22..=0.48).contains(&r)
        }
        // thick diagonal cross
        1 => {
            let margin = (0.06..=0.94).contains(&u) && (0.06..=0.94).contains(&v);
            margin && ((u - v).abs() <= 0.17 || (u + v - 1.0).abs() <= 0.17)
        }
        // filled triangle, apex up
        2 => {
            v >= 0.15 && v <= 0.85 && (u - 0.5).abs() <= (v - 0.15) / 0.70 * 0.42
        }
        // square outline
        3 => {
            let d = (u - 0.5).abs().max((v - 0.5).abs());
            (0.26..=0.45).contains(&d)
        }
        // plus
        4 => {
            (in_band(u, 0.5, 0.16) && (0.08..=0.92).contains(&v))
                || (in_band(v, 0.5, 0.16) && (0.08..=0.92).contains(&u))
        }
        // T
        5 => {
            ((0.08..=0.30).contains(&v) && (0.08..=0.92).contains(&u))
                || (in_band(u, 0.5, 0.15) && (0.08..=0.92).contains(&v))
        }
        // L
        6 => {
            ((0.08..=0.35).contains(&u) && (0.08..=0.92).contains(&v))
                || ((0.65..=0.92).contains(&v) && (0.08..=0.92).contains(&u))
        }
        // H
        7 => {
            let bars = (in_band(u, 0.20, 0.12) || in_band(u, 0.80, 0.12))
                && (0.08..=0.92).contains(&v);
            let rung = in_band(v, 0.5, 0.12) && (0.20..=0.80).contains(&u);
            bars || rung
        }
        // thin diagonal cross
        8 => {
            let margin = (0.06..=0.94).contains(&u) && (0.06..=0.94).contains(&v);
            margin && ((u - v).abs() <= 0.09 || (u + v - 1.0).abs() <= 0.09)
        }
        // diamond outline
        9 => {
            let d = (u - 0.5).abs() + (v - 0.5).abs();
            (0.26..=0.48).contains(&d)
        }
        _ => unreachable!(),
    }
}

/// Rasterizes a glyph class at `px` pixels on a side. Deterministic.
pub fn rasterize_glyph(class_id: usize, px: usize) -> Result<Glyph> {
    if class_id >= GLYPH_COUNT {
        return Err(Error::InvalidArgument(format!(
            "glyph class {class_id} out of range 0..{GLYPH_COUNT}"
        )));
    }
    let mut bits = vec![false; px * px];
    let (mut x0, mut y0, mut x1, mut y1) = (px, px, 0usize, 0usize);
    for y in 0..px {
        for x in 0..px {
            let u = (x as f64 + 0.5) / px as f64;
            let v = (y as f64 + 0.5) / px as f64;
            if predicate(class_id, u, v) {
                bits[y * px + x] = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    assert!(x1 >= x0, "glyph {class_id} rasterized empty at {px} px");
    Ok(Glyph { px, bits, bbox: (x0, y0, x1, y1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rasterization_is_deterministic() {
        let a = rasterize_glyph(3, 18).unwrap();
        let b = rasterize_glyph(3, 18).unwrap();
        assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn out_of_range_class_rejected() {
        assert!(rasterize_glyph(GLYPH_COUNT, 18).is_err());
    }

    #[test]
    fn lit_fraction_within_bounds_at_standard_sizes() {
        for px in [12, 18, 24] {
            for class in 0..GLYPH_COUNT {
                let g = rasterize_glyph(class, px).unwrap();
                let frac = g.lit_count() as f64 / (px * px) as f64;
                assert!(
                    (0.15..=0.70).contains(&frac),
                    "{} at {px}px has lit fraction {frac:.3}",
                    GLYPH_NAMES[class]
                );
            }
        }
    }

    #[test]
    fn all_pairs_differ_in_at_least_ten_percent_of_pixels() {
        for px in [12, 18, 24] {
            let glyphs: Vec<Glyph> = (0..GLYPH_COUNT)
                .map(|c| rasterize_glyph(c, px).unwrap())
                .collect();
            for a in 0..GLYPH_COUNT {
                for b in (a + 1)..GLYPH_COUNT {
                    let hamming = glyphs[a]
                        .bits
                        .iter()
                        .zip(&glyphs[b].bits)
                        .filter(|(x, y)| x != y)
                        .count();
                    let frac = hamming as f64 / (px * px) as f64;
                    assert!(
                        frac >= 0.10,
                        "{} vs {} at {px}px differ by only {frac:.3}",
                        GLYPH_NAMES[a],
                        GLYPH_NAMES[b]
                    );
                }
            }
        }
    }

    #[test]
    fn bbox_is_tight() {
        let g = rasterize_glyph(9, 18).unwrap();
        let (x0, y0, x1, y1) = g.bbox;
        let mut on_left = false;
        let mut on_right = false;
        for y in 0..18 {
            on_left |= g.is_lit(x0, y);
            on_right |= g.is_lit(x1, y);
        }
        assert!(on_left && on_right);
        let mut outside = 0;
        for y in 0..18 {
            for x in 0..18 {
                if g.is_lit(x, y) && (x < x0 || x > x1 || y < y0 || y > y1) {
                    outside += 1;
                }
            }
        }
        assert_eq!(outside, 0);
    }
}

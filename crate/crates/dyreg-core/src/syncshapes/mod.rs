//! Procedural synchronous-motion video task.
//!
//! Each video shows `D` glyphs drifting over a black background with
//! reflective bounces. Either no subset or a subset of at least two glyphs
//! shares its frame-to-frame displacement sequence exactly. The label
//! encodes the (smallest, largest) glyph class of the synchronous subset,
//! with one extra class for videos without synchrony. Every sample is a
//! pure function of `(config, sample_seed)`.

mod glyphs;
mod shard;

pub use glyphs::{rasterize_glyph, Glyph, GLYPH_COUNT, GLYPH_NAMES};
pub use shard::{config_digest, read_shard, write_shard, ShardContents};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub frame_size: usize,
    /// Frames per video.
    pub frames: usize,
    /// Moving glyphs per video.
    pub glyphs: usize,
    /// Glyph classes in play.
    pub classes: usize,
    pub glyph_px: usize,
    pub sync_min: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            frame_size: 64,
            frames: 10,
            glyphs: 5,
            classes: 10,
            glyph_px: 18,
            sync_min: 2,
            speed_min: 1.0,
            speed_max: 3.5,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > GLYPH_COUNT {
            return Err(Error::InvalidConfig(format!(
                "classes must lie in 2..={GLYPH_COUNT}, got {}",
                self.classes
            )));
        }
        if self.glyphs < self.sync_min {
            return Err(Error::InvalidConfig(format!(
                "{} glyphs cannot host a sync subset of at least {}",
                self.glyphs, self.sync_min
            )));
        }
        if self.sync_min < 2 {
            return Err(Error::InvalidConfig("sync_min must be at least 2".into()));
        }
        if self.glyph_px >= self.frame_size {
            return Err(Error::InvalidConfig(format!(
                "glyph raster {} must be smaller than the frame {}",
                self.glyph_px, self.frame_size
            )));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("need at least one frame".into()));
        }
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min) {
            return Err(Error::InvalidConfig(format!(
                "bad speed range [{}, {}]",
                self.speed_min, self.speed_max
            )));
        }
        Ok(())
    }

    /// Pair classes plus the no-sync class.
    pub fn num_labels(&self) -> usize {
        pair_count(self.classes) + 1
    }
}

fn pair_count(classes: usize) -> usize {
    classes * (classes + 1) / 2
}

/// Label index for a sync subset. Pairs `(a, b)` with `a <= b` enumerate
/// lexicographically; the no-sync class comes last.
pub fn compute_label(classes: &[usize], sync_mask: &[bool], num_classes: usize) -> Result<usize> {
    assert_eq!(classes.len(), sync_mask.len());
    let members: Vec<usize> = classes
        .iter()
        .zip(sync_mask)
        .filter(|(_, &m)| m)
        .map(|(&c, _)| c)
        .collect();
    if members.len() == 1 {
        return Err(Error::InvalidArgument(
            "a synchronous subset of one glyph is not valid".into(),
        ));
    }
    for &c in classes {
        if c >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "glyph class {c} out of range 0..{num_classes}"
            )));
        }
    }
    if members.is_empty() {
        return Ok(pair_count(num_classes));
    }
    let a = *members.iter().min().unwrap();
    let b = *members.iter().max().unwrap();
    Ok(a * (2 * num_classes - a + 1) / 2 + (b - a))
}

/// Inverse of [`compute_label`]: `None` for the no-sync class.
pub fn decode_label(label: usize, num_classes: usize) -> Option<(usize, usize)> {
    if label >= pair_count(num_classes) {
        return None;
    }
    let mut rest = label;
    for a in 0..num_classes {
        let row = num_classes - a;
        if rest < row {
            return Some((a, a + rest));
        }
        rest -= row;
    }
    unreachable!("label below pair_count always decodes")
}

/// Integer start position and per-step displacements of one glyph.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrack {
    pub start: (i64, i64),
    pub displacements: Vec<(i64, i64)>,
}

impl MotionTrack {
    /// Absolute integer positions at every frame.
    pub fn positions(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::with_capacity(self.displacements.len() + 1);
        let mut p = self.start;
        out.push(p);
        for d in &self.displacements {
            p = (p.0 + d.0, p.1 + d.1);
            out.push(p);
        }
        out
    }
}

/// Triangle-wave fold of an unfolded coordinate into `[0, limit]`,
/// modelling reflective bounces.
fn reflect(u: f64, limit: f64) -> f64 {
    if limit == 0.0 {
        return 0.0;
    }
    let period = 2.0 * limit;
    let m = u.rem_euclid(period);
    if m <= limit {
        m
    } else {
        period - m
    }
}

/// Rounded bouncing trajectory of a virtual particle: integer positions at
/// each frame for one axis.
fn particle_positions(rng: &mut ChaCha8Rng, limit: f64, speed: f64, frames: usize) -> Vec<(i64, i64)> {
    let x0 = rng.random_range(0.0..=limit);
    let y0 = rng.random_range(0.0..=limit);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
    (0..frames)
        .map(|t| {
            let x = reflect(x0 + vx * t as f64, limit);
            let y = reflect(y0 + vy * t as f64, limit);
            (x.round() as i64, y.round() as i64)
        })
        .collect()
}

fn displacements_of(positions: &[(i64, i64)]) -> Vec<(i64, i64)> {
    positions
        .windows(2)
        .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
        .collect()
}

/// Draws motion for all glyphs. Members of `sync_group` share one
/// displacement sequence exactly; their start positions are sampled from
/// the box that keeps the whole trajectory in frame.
pub fn sample_motion(
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
    sync_group: &[usize],
) -> Vec<MotionTrack> {
    let limit = (config.frame_size - config.glyph_px) as f64;
    let limit_i = config.frame_size as i64 - config.glyph_px as i64;
    let frames = config.frames;

    let shared = if sync_group.is_empty() {
        None
    } else {
        let speed = rng.random_range(config.speed_min..=config.speed_max);
        let positions = particle_positions(rng, limit, speed, frames);
        Some(displacements_of(&positions))
    };

    (0..config.glyphs)
        .map(|g| {
            if let (Some(disp), true) = (&shared, sync_group.contains(&g)) {
                // start anywhere that keeps every cumulative offset in frame
                let (mut cx_min, mut cx_max, mut cy_min, mut cy_max) = (0i64, 0i64, 0i64, 0i64);
                let (mut cx, mut cy) = (0i64, 0i64);
                for d in disp.iter() {
                    cx += d.0;
                    cy += d.1;
                    cx_min = cx_min.min(cx);
                    cx_max = cx_max.max(cx);
                    cy_min = cy_min.min(cy);
                    cy_max = cy_max.max(cy);
                }
                let sx = rng.random_range(-cx_min..=(limit_i - cx_max));
                let sy = rng.random_range(-cy_min..=(limit_i - cy_max));
                MotionTrack { start: (sx, sy), displacements: disp.clone() }
            } else {
                let speed = rng.random_range(config.speed_min..=config.speed_max);
                let positions = particle_positions(rng, limit, speed, frames);
                MotionTrack {
                    start: positions[0],
                    displacements: displacements_of(&positions),
                }
            }
        })
        .collect()
}

/// Tight pixel box of one glyph at one frame: center and full extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

/// One generated video with its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub frame_size: usize,
    pub num_frames: usize,
    /// `frames * size * size` values in `{0, 1}`.
    pub frames: Vec<f32>,
    pub label: usize,
    /// Per frame, per glyph.
    pub gt_boxes: Vec<Vec<GtBox>>,
    pub glyph_classes: Vec<usize>,
    pub sync_mask: Vec<bool>,
}

impl VideoSample {
    pub fn frame_tensor<T: Real>(&self, t: usize) -> Tensor<T> {
        let s = self.frame_size;
        let slice = &self.frames[t * s * s..(t + 1) * s * s];
        Tensor::from_vec(&[s, s, 1], slice.iter().map(|&v| T::from_f64(v as f64)).collect())
    }
}

/// Composites glyph rasters onto black frames by pixelwise max and records
/// tight boxes.
pub fn render_video(
    tracks: &[MotionTrack],
    glyph_classes: &[usize],
    config: &DatasetConfig,
    label: usize,
    sync_mask: Vec<bool>,
) -> VideoSample {
    let s = config.frame_size;
    let rasters: Vec<Glyph> = glyph_classes
        .iter()
        .map(|&c| rasterize_glyph(c, config.glyph_px).expect("validated class"))
        .collect();
    let positions: Vec<Vec<(i64, i64)>> = tracks.iter().map(|t| t.positions()).collect();

    let mut frames = vec![0.0f32; config.frames * s * s];
    let mut gt_boxes = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let base = t * s * s;
        let mut boxes = Vec::with_capacity(tracks.len());
        for (g, raster) in rasters.iter().enumerate() {
            let (px, py) = positions[g][t];
            for y in 0..raster.px {
                for x in 0..raster.px {
                    if raster.is_lit(x, y) {
                        let fx = px + x as i64;
                        let fy = py + y as i64;
                        debug_assert!(fx >= 0 && fy >= 0 && fx < s as i64 && fy < s as i64);
                        frames[base + fy as usize * s + fx as usize] = 1.0;
                    }
                }
            }
            let (x0, y0, x1, y1) = raster.bbox;
            boxes.push(GtBox {
                cx: px as f32 + (x0 + x1) as f32 / 2.0,
                cy: py as f32 + (y0 + y1) as f32 / 2.0,
                w: (x1 - x0 + 1) as f32,
                h: (y1 - y0 + 1) as f32,
            });
        }
        gt_boxes.push(boxes);
    }
    VideoSample {
        frame_size: s,
        num_frames: config.frames,
        frames,
        label,
        gt_boxes,
        glyph_classes: glyph_classes.to_vec(),
        sync_mask,
    }
}

fn sample_rng(config_seed: u64, sample_seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&config_seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample_seed.to_le_bytes());
    key[16..24].copy_from_slice(b"syshapes");
    ChaCha8Rng::from_seed(key)
}

/// Deterministically generates one sample from `(config, sample_seed)`.
pub fn generate_sample(config: &DatasetConfig, sample_seed: u64) -> VideoSample {
    let mut rng = sample_rng(config.seed, sample_seed);
    let d = config.glyphs;
    let g = config.classes;

    let glyph_classes: Vec<usize> = (0..d).map(|_| rng.random_range(0..g)).collect();

    // no-sync with probability 1/(pairs + 1), else a uniform subset size
    let pairs = pair_count(g) as u64;
    let sync_size = if rng.random_range(0..=pairs) == 0 {
        0
    } else {
        rng.random_range(config.sync_min..=d)
    };
    let mut order: Vec<usize> = (0..d).collect();
    for i in 0..sync_size {
        let j = rng.random_range(i..d);
        order.swap(i, j);
    }
    let mut sync_group: Vec<usize> = order[..sync_size].to_vec();
    sync_group.sort_unstable();
    let mut sync_mask = vec![false; d];
    for &m in &sync_group {
        sync_mask[m] = true;
    }

    let tracks = sample_motion(&mut rng, config, &sync_group);
    let label = compute_label(&glyph_classes, &sync_mask, g).expect("valid by construction");
    render_video(&tracks, &glyph_classes, config, label, sync_mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> DatasetConfig {
        DatasetConfig {
            frame_size: 48,
            frames: 6,
            glyphs: 3,
            classes: 5,
            glyph_px: 12,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn label_for_the_reference_case() {
        // classes {2,4,6,7,7} with sync over the {4,6,7} members -> pair (4,7)
        let classes = [2, 4, 6, 7, 7];
        let mask = [false, true, true, true, false];
        let label = compute_label(&classes, &mask, 10).unwrap();
        assert_eq!(decode_label(label, 10), Some((4, 7)));
    }

    #[test]
    fn ten_class_space_has_56_labels() {
        assert_eq!(DatasetConfig::default().num_labels(), 56);
        assert_eq!(compute_label(&[0, 0], &[true, true], 10).unwrap(), 0);
        assert_eq!(compute_label(&[9, 9], &[true, true], 10).unwrap(), 54);
        assert_eq!(compute_label(&[3, 4], &[false, false], 10).unwrap(), 55);
    }

    #[test]
    fn same_class_subset_maps_to_diagonal_pair() {
        let label = compute_label(&[7, 7, 1], &[true, true, false], 10).unwrap();
        assert_eq!(decode_label(label, 10), Some((7, 7)));
    }

    #[test]
    fn label_decode_is_a_bijection() {
        for g in [5usize, 10] {
            for label in 0..pair_count(g) {
                let (a, b) = decode_label(label, g).unwrap();
                assert!(a <= b && b < g);
                let again = compute_label(&[a, b], &[true, true], g).unwrap();
                assert_eq!(again, label);
            }
            assert_eq!(decode_label(pair_count(g), g), None);
        }
    }

    #[test]
    fn singleton_sync_subset_is_rejected() {
        assert!(compute_label(&[1, 2], &[true, false], 10).is_err());
    }

    #[test]
    fn sync_members_share_displacements_exactly() {
        let cfg = mini();
        for seed in 0..1000u64 {
            let s = generate_sample(&cfg, seed);
            let members: Vec<usize> = (0..cfg.glyphs).filter(|&i| s.sync_mask[i]).collect();
            if members.len() < 2 {
                continue;
            }
            // displacement = box center delta, equal across members per step
            for w in members.windows(2) {
                for t in 1..cfg.frames {
                    let d0 = (
                        s.gt_boxes[t][w[0]].cx - s.gt_boxes[t - 1][w[0]].cx,
                        s.gt_boxes[t][w[0]].cy - s.gt_boxes[t - 1][w[0]].cy,
                    );
                    let d1 = (
                        s.gt_boxes[t][w[1]].cx - s.gt_boxes[t - 1][w[1]].cx,
                        s.gt_boxes[t][w[1]].cy - s.gt_boxes[t - 1][w[1]].cy,
                    );
                    assert_eq!(d0, d1, "seed {seed} frame {t}");
                }
            }
        }
    }

    #[test]
    fn tracks_stay_in_bounds_over_many_draws() {
        let cfg = mini();
        let limit = (cfg.frame_size - cfg.glyph_px) as i64;
        for seed in 0..10_000u64 {
            let mut rng = sample_rng(cfg.seed, seed);
            let sync: &[usize] = if seed % 2 == 0 { &[0, 2] } else { &[] };
            let tracks = sample_motion(&mut rng, &cfg, sync);
            for tr in &tracks {
                for (x, y) in tr.positions() {
                    assert!(
                        x >= 0 && y >= 0 && x <= limit && y <= limit,
                        "seed {seed} leaves the frame at ({x}, {y})"
                    );
                }
            }
        }
    }

    #[test]
    fn empty_sync_group_gives_distinct_sequences() {
        let cfg = mini();
        let mut rng = sample_rng(1, 2);
        let tracks = sample_motion(&mut rng, &cfg, &[]);
        assert_ne!(tracks[0].displacements, tracks[1].displacements);
        assert_ne!(tracks[1].displacements, tracks[2].displacements);
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let cfg = mini();
        let a = generate_sample(&cfg, 123);
        let b = generate_sample(&cfg, 123);
        assert_eq!(a, b);
        let c = generate_sample(&cfg, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn static_glyph_renders_identically_across_frames() {
        let cfg = mini();
        let track = MotionTrack { start: (10, 8), displacements: vec![(0, 0); cfg.frames - 1] };
        let s = render_video(&[track], &[4], &cfg, 0, vec![false]);
        let fs = cfg.frame_size * cfg.frame_size;
        for t in 1..cfg.frames {
            assert_eq!(s.frames[..fs], s.frames[t * fs..(t + 1) * fs]);
            assert_eq!(s.gt_boxes[0][0], s.gt_boxes[t][0]);
        }
    }

    #[test]
    fn overlapping_glyphs_compose_by_max() {
        let cfg = mini();
        let tracks = vec![
            MotionTrack { start: (10, 10), displacements: vec![(0, 0); cfg.frames - 1] },
            MotionTrack { start: (12, 11), displacements: vec![(0, 0); cfg.frames - 1] },
        ];
        let s = render_video(&tracks, &[9, 9], &cfg, 0, vec![false, false]);
        assert!(s.frames.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn every_lit_pixel_sits_inside_its_box() {
        let cfg = mini();
        let s = generate_sample(&cfg, 7);
        // render each glyph alone and check extents against the stored box
        for (g, &class) in s.glyph_classes.iter().enumerate() {
            let raster = rasterize_glyph(class, cfg.glyph_px).unwrap();
            for t in 0..cfg.frames {
                let b = &s.gt_boxes[t][g];
                let (x0, y0, x1, y1) = raster.bbox;
                let w = (x1 - x0 + 1) as f32;
                let h = (y1 - y0 + 1) as f32;
                assert_eq!(b.w, w);
                assert_eq!(b.h, h);
                assert!(b.cx - b.w / 2.0 >= -0.5 && b.cx + b.w / 2.0 <= cfg.frame_size as f32);
                assert!(b.cy - b.h / 2.0 >= -0.5 && b.cy + b.h / 2.0 <= cfg.frame_size as f32);
            }
        }
    }

    #[test]
    fn labels_cover_every_class_eventually() {
        let cfg = mini();
        let n_labels = cfg.num_labels();
        let mut seen = vec![false; n_labels];
        for seed in 0..20_000u64 {
            seen[generate_sample(&cfg, seed).label] = true;
            if seen.iter().all(|&s| s) {
                return;
            }
        }
        let missing: Vec<usize> = (0..n_labels).filter(|&l| !seen[l]).collect();
        panic!("labels never produced: {missing:?}");
    }
}

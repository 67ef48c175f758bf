//! SYSH shard files: a materialized run of generated samples.
//!
//! Layout, all little-endian:
//! magic `SYSH`, u32 version, u64 config digest, u32 config-JSON length,
//! the JSON, u32 sample count; then per sample: u64 seed, u16 label,
//! `D` class bytes, `D` sync-mask bytes, `T*H*W` frame bytes (0 or 255),
//! and `T*D` boxes of four f32 each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetConfig, GtBox, VideoSample};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"SYSH";
pub const SHARD_VERSION: u32 = 1;

/// FNV-1a over the canonical JSON encoding of a config.
pub fn config_digest<S: serde::Serialize>(config: &S) -> u64 {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hash = 0xcbf29ce484222325u64;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug)]
pub struct ShardContents {
    pub config: DatasetConfig,
    pub seeds: Vec<u64>,
    pub samples: Vec<VideoSample>,
}

pub fn write_shard(
    path: &Path,
    config: &DatasetConfig,
    entries: &[(u64, VideoSample)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&SHARD_VERSION.to_le_bytes())?;
    w.write_all(&config_digest(config).to_le_bytes())?;
    let json = serde_json::to_vec(config)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (seed, s) in entries {
        w.write_all(&seed.to_le_bytes())?;
        w.write_all(&(s.label as u16).to_le_bytes())?;
        for &c in &s.glyph_classes {
            w.write_all(&[c as u8])?;
        }
        for &m in &s.sync_mask {
            w.write_all(&[m as u8])?;
        }
        let bytes: Vec<u8> = s
            .frames
            .iter()
            .map(|&v| if v > 0.5 { 255u8 } else { 0u8 })
            .collect();
        w.write_all(&bytes)?;
        for frame in &s.gt_boxes {
            for b in frame {
                for v in [b.cx, b.cy, b.w, b.h] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!(
                "shard truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_shard(path: &Path) -> Result<ShardContents> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    let mut c = Cursor { data: &raw, pos: 0 };

    if c.take(4)? != SHARD_MAGIC {
        return Err(Error::Format("not a SYSH shard (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != SHARD_VERSION {
        return Err(Error::Format(format!(
            "unsupported shard version {version}, expected {SHARD_VERSION}"
        )));
    }
    let digest = c.u64()?;
    let json_len = c.u32()? as usize;
    let config: DatasetConfig = serde_json::from_slice(c.take(json_len)?)?;
    if config_digest(&config) != digest {
        return Err(Error::Format("shard config digest mismatch".into()));
    }
    config.validate()?;

    let n = c.u32()? as usize;
    let (d, t, s) = (config.glyphs, config.frames, config.frame_size);
    let mut seeds = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        seeds.push(c.u64()?);
        let label = c.u16()? as usize;
        let glyph_classes: Vec<usize> = c.take(d)?.iter().map(|&b| b as usize).collect();
        let sync_mask: Vec<bool> = c.take(d)?.iter().map(|&b| b != 0).collect();
        let frames: Vec<f32> = c
            .take(t * s * s)?
            .iter()
            .map(|&b| if b != 0 { 1.0 } else { 0.0 })
            .collect();
        let mut gt_boxes = Vec::with_capacity(t);
        for _ in 0..t {
            let mut boxes = Vec::with_capacity(d);
            for _ in 0..d {
                boxes.push(GtBox {
                    cx: c.f32()?,
                    cy: c.f32()?,
                    w: c.f32()?,
                    h: c.f32()?,
                });
            }
            gt_boxes.push(boxes);
        }
        samples.push(VideoSample {
            frame_size: s,
            num_frames: t,
            frames,
            label,
            gt_boxes,
            glyph_classes,
            sync_mask,
        });
    }
    Ok(ShardContents { config, seeds, samples })
}

//! DYRG checkpoint files.
//!
//! Layout, little-endian: magic `DYRG`, u32 version, u64 config digest,
//! u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
//! one u32 per dim, 32-bit reals. Optimizer momentum buffers ride in the
//! same table under the `optim.momentum.` prefix. A trailer carries the
//! sample counter, the schedule state and the resolved config JSON so a
//! run can resume from the file alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::syncshapes::config_digest;

pub const CKPT_MAGIC: &[u8; 4] = b"DYRG";
pub const CKPT_VERSION: u32 = 1;

const MOMENTUM_PREFIX: &str = "optim.momentum.";

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub best: Option<f64>,
    pub since_improve: u32,
    pub drops: u32,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: ParamStore<f32>,
    pub momentum: BTreeMap<String, Tensor<f32>>,
    pub samples_seen: u64,
    pub schedule: ScheduleState,
}

impl Checkpoint {
    pub fn digest(&self) -> u64 {
        config_digest(&self.config_json)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.digest().to_le_bytes())?;

    let count = ckpt.params.len() + ckpt.momentum.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    let write_tensor = |w: &mut BufWriter<File>, name: &str, t: &Tensor<f32>| -> Result<()> {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for (name, t) in ckpt.params.iter() {
        write_tensor(&mut w, name, t)?;
    }
    for (name, t) in &ckpt.momentum {
        write_tensor(&mut w, &format!("{MOMENTUM_PREFIX}{name}"), t)?;
    }

    w.write_all(&ckpt.samples_seen.to_le_bytes())?;
    w.write_all(&[ckpt.schedule.best.is_some() as u8])?;
    w.write_all(&ckpt.schedule.best.unwrap_or(0.0).to_le_bytes())?;
    w.write_all(&ckpt.schedule.since_improve.to_le_bytes())?;
    w.write_all(&ckpt.schedule.drops.to_le_bytes())?;
    let json = ckpt.config_json.as_bytes();
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(json)?;
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
                "checkpoint truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    let mut c = Cursor { data: &raw, pos: 0 };

    if c.take(4)? != CKPT_MAGIC {
        return Err(Error::Format("not a DYRG checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CKPT_VERSION}"
        )));
    }
    let digest = c.u64()?;

    let count = c.u32()? as usize;
    let mut params = ParamStore::new();
    let mut momentum = BTreeMap::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = c.take(numel * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data);
        match name.strip_prefix(MOMENTUM_PREFIX) {
            Some(param) => {
                momentum.insert(param.to_string(), tensor);
            }
            None => params.insert(name, tensor),
        }
    }

    let samples_seen = c.u64()?;
    let has_best = c.u8()? != 0;
    let best_raw = c.f64()?;
    let schedule = ScheduleState {
        best: has_best.then_some(best_raw),
        since_improve: c.u32()?,
        drops: c.u32()?,
    };
    let json_len = c.u32()? as usize;
    let config_json = std::str::from_utf8(c.take(json_len)?)
        .map_err(|_| Error::Format("config JSON is not UTF-8".into()))?
        .to_string();

    let ckpt = Checkpoint { config_json, params, momentum, samples_seen, schedule };
    if ckpt.digest() != digest {
        return Err(Error::Format("checkpoint config digest mismatch".into()));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a.w", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.25, 1e-7]));
        params.insert("b", Tensor::from_vec(&[3], vec![0.5, 0.125, -1.0]));
        let mut momentum = BTreeMap::new();
        momentum.insert("a.w".to_string(), Tensor::from_vec(&[2, 2], vec![0.1; 4]));
        Checkpoint {
            config_json: "{\"x\":1}".into(),
            params,
            momentum,
            samples_seen: 12345,
            schedule: ScheduleState { best: Some(0.75), since_improve: 2, drops: 1 },
        }
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dyrg");
        let p2 = dir.path().join("b.dyrg");
        let ckpt = sample_checkpoint();
        save_checkpoint(&p1, &ckpt).unwrap();
        let back = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(back.samples_seen, 12345);
        assert_eq!(back.schedule, ckpt.schedule);
        assert_eq!(back.params.get("a.w").data(), ckpt.params.get("a.w").data());
        assert_eq!(back.momentum["a.w"].data(), ckpt.momentum["a.w"].data());
    }

    #[test]
    fn truncated_checkpoint_is_rejected_without_partial_state() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dyrg");
        save_checkpoint(&p, &sample_checkpoint()).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dyrg");
        std::fs::write(&p, b"NOPEnope").unwrap();
        match load_checkpoint(&p) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}

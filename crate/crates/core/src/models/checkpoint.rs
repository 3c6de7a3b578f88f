//! Binary checkpoint container (`.tssd`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "TSSD"
//! version  u32
//! config   u32 length + UTF-8 `key = value` text
//! arrays   u32 count, then per array:
//!          u32 name length + UTF-8 name, u32 rank, u64 per dimension, f32 values
//! optim    u8 flag; when 1: u64 step, f64 base learning rate, then an array
//!          section as above holding `m.<param>` and `v.<param>` moments
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, ModelError};
use crate::nn::{LayerKind, RunningStats, Tensor};

pub const MAGIC: &[u8; 4] = b"TSSD";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer moments saved alongside a model, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub base_lr: f64,
    pub first_moments: Vec<(String, Tensor<f32>)>,
    pub second_moments: Vec<(String, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_array(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_section(buf: &mut Vec<u8>, arrays: &[(String, &Tensor<f32>)]) {
    put_u32(buf, arrays.len() as u32);
    for (name, t) in arrays {
        put_array(buf, name, t);
    }
}

fn model_arrays(model: &Model<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for l in model.layers() {
        out.push((format!("{}.weight", l.name), &l.weight));
        out.push((format!("{}.bias", l.name), &l.bias));
        if let Some(r) = &l.running {
            out.push((format!("{}.running_mean", l.name), &r.mean));
            out.push((format!("{}.running_var", l.name), &r.var));
        }
    }
    out
}

/// Serialises a model (and optionally optimizer state) to bytes.
pub fn encode_checkpoint(model: &Model<f32>, optimizer: Option<&OptimizerSnapshot>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    let cfg = model.config().to_text();
    put_u32(&mut buf, cfg.len() as u32);
    buf.extend_from_slice(cfg.as_bytes());
    put_section(&mut buf, &model_arrays(model));
    match optimizer {
        None => buf.push(0),
        Some(o) => {
            buf.push(1);
            buf.extend_from_slice(&o.step.to_le_bytes());
            buf.extend_from_slice(&o.base_lr.to_le_bytes());
            let arrays: Vec<(String, &Tensor<f32>)> = o
                .first_moments
                .iter()
                .map(|(n, t)| (format!("m.{n}"), t))
                .chain(o.second_moments.iter().map(|(n, t)| (format!("v.{n}"), t)))
                .collect();
            put_section(&mut buf, &arrays);
        }
    }
    buf
}

pub fn save_checkpoint(
    model: &Model<f32>,
    optimizer: Option<&OptimizerSnapshot>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(model, optimizer))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(ModelError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Format("string is not UTF-8".into()))
    }

    fn array(&mut self) -> Result<(String, Tensor<f32>), ModelError> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(ModelError::Format(format!("array `{name}` has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64()?).map_err(|_| ModelError::Format("dimension overflow".into()))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ModelError::Format(format!("array `{name}` size overflows")))?;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| ModelError::Format(format!("array `{name}` size overflows")))?;
        let raw = self.take(bytes)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| ModelError::Format(format!("array `{name}`: {e}")))?;
        Ok((name, t))
    }

    fn section(&mut self) -> Result<Vec<(String, Tensor<f32>)>, ModelError> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            out.push(self.array()?);
        }
        Ok(out)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let config = ModelConfig::from_text(&r.string()?)?;
    // Parameters are overwritten below; the generator only fills the skeleton.
    let mut model: Model<f32> = Model::build(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut arrays: std::collections::HashMap<String, Tensor<f32>> = std::collections::HashMap::new();
    for (name, t) in r.section()? {
        if arrays.insert(name.clone(), t).is_some() {
            return Err(ModelError::Format(format!("duplicate array `{name}`")));
        }
    }
    let mut take = |name: String, expected: &[usize]| -> Result<Tensor<f32>, ModelError> {
        let t = arrays
            .remove(&name)
            .ok_or_else(|| ModelError::Format(format!("missing array `{name}`")))?;
        if t.shape() != expected {
            return Err(ModelError::Format(format!(
                "array `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                expected
            )));
        }
        Ok(t)
    };
    for l in model.layers_mut() {
        l.weight = take(format!("{}.weight", l.name), l.weight.shape())?;
        l.bias = take(format!("{}.bias", l.name), l.bias.shape())?;
        if l.kind == LayerKind::BatchNorm1d {
            let c = [l.weight.len()];
            let mean = take(format!("{}.running_mean", l.name), &c);
            let var = take(format!("{}.running_var", l.name), &c);
            l.running = match (mean, var) {
                (Ok(mean), Ok(var)) => Some(RunningStats { mean, var }),
                _ => None,
            };
        }
        l.validate()?;
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(ModelError::Format(format!("unexpected array `{extra}`")));
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let base_lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let mut first = Vec::new();
            let mut second = Vec::new();
            for (name, t) in r.section()? {
                if let Some(n) = name.strip_prefix("m.") {
                    first.push((n.to_string(), t));
                } else if let Some(n) = name.strip_prefix("v.") {
                    second.push((n.to_string(), t));
                } else {
                    return Err(ModelError::Format(format!("unexpected optimizer array `{name}`")));
                }
            }
            Some(OptimizerSnapshot {
                step,
                base_lr,
                first_moments: first,
                second_moments: second,
            })
        }
        other => return Err(ModelError::Format(format!("bad optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    model.set_mode(super::Mode::Eval);
    Ok(Checkpoint { model, optimizer })
}

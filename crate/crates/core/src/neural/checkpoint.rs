//! Binary checkpoint: `"ACVAE\x01"`, entry count (u32 LE), then per entry
//! name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE each), and
//! row-major `f32` LE values. Adam moments are stored as `<name>.m` and
//! `<name>.v`; the update counter as the scalar `adam.step`.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{NeuralError, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ACVAE\x01";
const STEP_ENTRY: &str = "adam.step";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), NeuralError> {
    let v = u32::try_from(v).map_err(|_| NeuralError::Checkpoint(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_entry(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<(), NeuralError> {
    put_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        put_u32(buf, d)?;
    }
    for &x in t.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut out: W) -> Result<(), NeuralError> {
    let mut buf = Vec::with_capacity(16 + params.num_values() * 12);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, params.len() * 3 + 1)?;
    for p in params.iter() {
        put_entry(&mut buf, &p.name, &p.value)?;
    }
    for p in params.iter() {
        put_entry(&mut buf, &format!("{}.m", p.name), &p.m)?;
        put_entry(&mut buf, &format!("{}.v", p.name), &p.v)?;
    }
    let step = Tensor::from_vec(&[], vec![params.step as f64])?;
    put_entry(&mut buf, STEP_ENTRY, &step)?;
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NeuralError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NeuralError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<CheckpointEntry>, NeuralError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic bytes".into()));
    }
    let count = cur.u32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| NeuralError::Checkpoint(format!("entry name: {e}")))?
            .to_string();
        let rank = cur.u32()?;
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| NeuralError::Checkpoint(format!("{name}: shape overflow")))?;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| NeuralError::Checkpoint("size overflow".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    if cur.pos != bytes.len() {
        return Err(NeuralError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}

impl ParamSet {
    /// Overwrites values (and moments, when present) from checkpoint entries.
    /// Every parameter must be present with an identical shape.
    pub fn restore(&mut self, entries: &[CheckpointEntry]) -> Result<(), NeuralError> {
        let by_name: HashMap<&str, &CheckpointEntry> =
            entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let fetch = |name: &str, shape: &[usize]| -> Result<Option<Vec<f64>>, NeuralError> {
            match by_name.get(name) {
                None => Ok(None),
                Some(e) if e.shape != shape => Err(NeuralError::Checkpoint(format!(
                    "{name}: stored shape {:?}, model expects {shape:?}",
                    e.shape
                ))),
                Some(e) => Ok(Some(e.values.iter().map(|&v| f64::from(v)).collect())),
            }
        };
        for p in self.iter_mut() {
            let shape = p.value.shape().to_vec();
            let values = fetch(&p.name, &shape)?
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing parameter {:?}", p.name)))?;
            p.value.data_mut().copy_from_slice(&values);
            if let Some(m) = fetch(&format!("{}.m", p.name), &shape)? {
                p.m.data_mut().copy_from_slice(&m);
            }
            if let Some(v) = fetch(&format!("{}.v", p.name), &shape)? {
                p.v.data_mut().copy_from_slice(&v);
            }
            p.grad.fill(0.0);
        }
        if let Some(e) = by_name.get(STEP_ENTRY) {
            self.step = e.values.first().copied().unwrap_or(0.0) as u64;
        }
        Ok(())
    }
}

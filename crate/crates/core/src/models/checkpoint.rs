//! Binary checkpoint container.
//!
//! ```text
//! magic        4 bytes  "LAKD"
//! version      u32 LE
//! unit count   u32 LE   feature units (the net's depth)
//! records      until end of file:
//!   name len   u32 LE
//!   name       utf-8
//!   rank       u32 LE
//!   dims       rank x u64 LE
//!   payload    prod(dims) x f64 LE
//! ```
//!
//! Besides the net's parameters, two metadata records are written first:
//! `meta.input_hw` (`[H, W]`) and `meta.seed` (`[seed]`, informational).
//! Width and class count are recovered from the stem and classifier shapes.

use std::path::Path;

use super::{NetSpec, TapNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LAKD";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &TapNet) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.depth as u32).to_le_bytes());
    put_record(&mut out, "meta.input_hw", &[2], &[spec.input_hw.0 as f64, spec.input_hw.1 as f64]);
    put_record(&mut out, "meta.seed", &[1], &[spec.seed as f64]);
    for (name, t) in net.params() {
        put_record(&mut out, name, t.shape(), t.values());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

struct Record {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn read_record(r: &mut Reader<'_>) -> Result<Record> {
    let len = r.u32("name length")? as usize;
    let name = std::str::from_utf8(r.take(len, "name")?)
        .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
        .to_string();
    let rank = r.u32("rank")? as usize;
    let dims = (0..rank)
        .map(|_| r.u64("dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::Checkpoint(format!("record {name}: dims {dims:?} overflow")))?;
    let payload = r.take(count * 8, "payload")?;
    let values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    Ok(Record { name, dims, values })
}

/// Parses a checkpoint and rebuilds the net it describes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TapNet> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let depth = r.u32("unit count")? as usize;
    let mut records = Vec::new();
    while !r.done() {
        records.push(read_record(&mut r)?);
    }
    let find = |name: &str| {
        records
            .iter()
            .find(|rec| rec.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    };
    let hw = find("meta.input_hw")?;
    let seed = find("meta.seed")?;
    let stem = find("unit1.conv")?;
    let classifier = find(&format!("unit{}.weight", depth + 2))?;
    if hw.values.len() != 2 || stem.dims.len() != 4 || classifier.dims.len() != 2 {
        return Err(Error::Checkpoint("malformed metadata records".into()));
    }
    let spec = NetSpec {
        depth,
        width: stem.dims[0],
        num_classes: classifier.dims[1],
        input_hw: (hw.values[0] as usize, hw.values[1] as usize),
        seed: seed.values[0] as u64,
    };
    let mut net = TapNet::new(spec).map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let expected = net.params().count();
    let mut loaded = 0;
    for rec in records.iter().filter(|rec| !rec.name.starts_with("meta.")) {
        net.set_param(&rec.name, &rec.dims, rec.values.clone())?;
        loaded += 1;
    }
    if loaded != expected {
        return Err(Error::Checkpoint(format!("expected {expected} parameter records, found {loaded}")));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &TapNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TapNet> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
    decode_checkpoint(&bytes)
}

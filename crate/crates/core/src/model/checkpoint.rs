//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "QIKTCKP1"
//! d, n, m    u64 LE each
//! lambda     f64 LE
//! variant    u8 length + UTF-8 name
//! count      u32 LE
//! per tensor u16 LE name length, name, u8 rank, rank × u64 LE dims,
//!            product(dims) × f64 LE values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::config::{ModelConfig, Variant};
use super::params::{expected_layout, QiktParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QIKTCKP1";

pub fn write_checkpoint<W: Write>(params: &QiktParams, mut w: W) -> Result<()> {
    let cfg = &params.config;
    w.write_all(MAGIC)?;
    for v in [cfg.d, cfg.n, cfg.m] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&cfg.lambda.to_le_bytes())?;
    let variant = cfg.variant.as_str().as_bytes();
    w.write_all(&[variant.len() as u8])?;
    w.write_all(variant)?;
    let named = params.named_tensors();
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &dim in t.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<QiktParams> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let d = read_u64(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let lambda = f64::from_le_bytes(read_array(&mut r)?);
    let vlen = read_array::<1, _>(&mut r)?[0] as usize;
    let variant: Variant = read_string(&mut r, vlen)?.parse()?;
    let config = ModelConfig::new(d, n, m, lambda, variant)?;

    let layout = expected_layout(&config);
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if count != layout.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this config, found {count}",
            layout.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (expected_name, expected_shape) in &layout {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let name = read_string(&mut r, name_len)?;
        if &name != expected_name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expected_name}, found {name}"
            )));
        }
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != expected_shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, config requires {expected_shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| read_array(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    QiktParams::from_tensors(config, tensors)
}

pub fn save_checkpoint(params: &QiktParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<QiktParams> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    read_checkpoint(bytes.as_slice())
}

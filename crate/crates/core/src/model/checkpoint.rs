//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes   "RPKCKPT\0"
//! version    u32       1
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON: {"variant": ..., "backbone": {...}}
//! count      u32       number of tensors
//! count times:
//!   name_len u32
//!   name     name_len bytes of UTF-8
//!   rank     u32
//!   dims     rank x u64
//!   data     prod(dims) x f64, row-major
//! ```
//!
//! Tensors are the trainable parameters in network order followed by
//! `input.shift` and `input.scale` (both `1 x input_dim`).

use super::{BackboneConfig, HeadVariant, Network};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"RPKCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    variant: HeadVariant,
    backbone: BackboneConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[T]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, 2);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
    }
}

pub fn to_bytes<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let meta = serde_json::to_vec(&Meta { variant: net.variant(), backbone: net.backbone().clone() })?;
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    put_u32(&mut out, net.params().len() as u32 + 2);
    for p in net.params() {
        put_tensor(&mut out, &p.name, p.value.rows(), p.value.cols(), p.value.data());
    }
    let (shift, scale) = net.input_normalization();
    put_tensor(&mut out, "input.shift", 1, shift.len(), shift);
    put_tensor(&mut out, "input.scale", 1, scale.len(), scale);
    Ok(out)
}

pub fn write<T: Real, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(net)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    let mut net = Network::<T>::new(meta.variant, meta.backbone, 0)?;
    let count = r.u32()? as usize;
    if count != net.params().len() + 2 {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", net.params().len() + 2)));
    }
    let mut read_tensor = |expect: &str, rows: usize, cols: usize| -> Result<Vec<T>> {
        let name = r.string()?;
        if name != expect {
            return Err(Error::Checkpoint(format!("expected tensor '{expect}', found '{name}'")));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<u64>>>()?;
        if dims != [rows as u64, cols as u64] {
            return Err(Error::Checkpoint(format!("tensor '{name}' has shape {dims:?}, expected [{rows}, {cols}]")));
        }
        (0..rows * cols)
            .map(|_| Ok(T::lit(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")))))
            .collect()
    };
    let shapes: Vec<(String, usize, usize)> =
        net.params().iter().map(|p| (p.name.clone(), p.value.rows(), p.value.cols())).collect();
    for (i, (name, rows, cols)) in shapes.into_iter().enumerate() {
        let data = read_tensor(&name, rows, cols)?;
        net.params_mut()[i].value = Tensor::from_vec(rows, cols, data)?;
    }
    let d = net.backbone().input_dim;
    let shift = read_tensor("input.shift", 1, d)?;
    let scale = read_tensor("input.scale", 1, d)?;
    net.set_input_normalization(shift, scale)?;
    Ok(net)
}

pub fn read<T: Real, R: Read>(mut r: R) -> Result<Network<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

pub fn save<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Network<T>> {
    from_bytes(&std::fs::read(path)?)
}

//! Checkpoint format: magic "UAVSEG01", then a u32 tensor count, then per
//! tensor a length-prefixed UTF-8 name, a length-prefixed u32 shape, and
//! the row-major f32 payload. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"UAVSEG01";

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader {
    data: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::input("checkpoint truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_raw(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut file = fs::File::open(path)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::input(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::input("checkpoint name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 4)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, values)));
    }
    if r.pos != r.data.len() {
        return Err(Error::input("checkpoint has trailing bytes"));
    }
    Ok(out)
}

/// Loads a checkpoint into an already-constructed store; every tensor must
/// match an existing parameter by name and shape, and every parameter must
/// be covered.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let tensors = load_raw(path)?;
    if tensors.len() != store.len() {
        return Err(Error::input(format!(
            "checkpoint has {} tensors but the model has {} parameters",
            tensors.len(),
            store.len()
        )));
    }
    for (name, tensor) in tensors {
        let id = store.lookup(&name).ok_or_else(|| {
            Error::input(format!("checkpoint tensor {name:?} has no matching parameter"))
        })?;
        if store.get(id).shape() != tensor.shape() {
            return Err(Error::input(format!(
                "checkpoint tensor {name:?} shape {:?} does not match parameter shape {:?}",
                tensor.shape(),
                store.get(id).shape()
            )));
        }
        store.set(id, tensor)?;
    }
    Ok(())
}

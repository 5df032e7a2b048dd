use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OLSCKPT1";

/// Writes named `f32` tensors in name order.
///
/// Layout: magic, then per tensor: `u64` name length, UTF-8 name, `u64` rank,
/// `rank × u64` dims, raw `f32` values. All integers and floats little-endian.
pub fn write_checkpoint_to<W: Write>(
    mut w: W,
    params: &BTreeMap<String, Tensor<f32>>,
) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in params {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    params: &BTreeMap<String, Tensor<f32>>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint_to(BufWriter::new(file), params).map_err(|e| Error::io(path, e))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Data("checkpoint is truncated".into())
    } else {
        Error::Data(format!("checkpoint read failed: {e}"))
    }
}

/// Reads a checkpoint written by [`write_checkpoint_to`].
pub fn read_checkpoint_from<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let mut out = BTreeMap::new();
    loop {
        let mut len = [0u8; 8];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => r.read_exact(&mut len[1..]).map_err(truncated)?,
            Err(e) => return Err(truncated(e)),
        }
        let len = u64::from_le_bytes(len) as usize;
        if len > 4096 {
            return Err(Error::Data(format!(
                "implausible parameter name length {len}"
            )));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data("parameter name is not UTF-8".into()))?;
        let rank = read_u64(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Data(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name, Tensor::from_vec(&dims, data)?);
    }
    Ok(out)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<f32>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(BufReader::new(file))
}

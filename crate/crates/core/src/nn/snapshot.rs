//! Flat little-endian parameter files.
//!
//! Layout: `b"DDAM"`, `u32` version, then one record per tensor until EOF:
//! `u32` name length, name bytes (UTF-8), `u32` rank, `rank × u64` dims,
//! `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::NnError;
use crate::autodiff::Tensor;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"DDAM";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<(), NnError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u32::try_from(name.len()).map_err(|_| NnError::Snapshot("tensor name too long".into()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Snapshot("file too short for header".into()))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(NnError::Snapshot(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(NnError::Snapshot(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let name_len = match read_u32(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let truncated = |_| NnError::Snapshot(format!("truncated record {}", out.len()));
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Snapshot("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r).map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data)?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_snapshot(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<(), NnError> {
    write_snapshot(BufWriter::new(File::create(path)?), tensors)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, NnError> {
    read_snapshot(BufReader::new(File::open(path)?))
}

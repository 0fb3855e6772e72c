//! Binary parameter container.
//!
//! Layout: magic string `PRLNET1`, dtype tag (scalar width in bytes),
//! tensor count (u32 LE), then per tensor: name length (u32 LE), name bytes,
//! rank (u32 LE), dims (u32 LE each), raw little-endian scalar data.
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"PRLNET1";

pub fn save_tensors<S: Scalar>(path: &Path, entries: &[(String, &Tensor<S>)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(S::DTYPE_TAG);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &value in tensor.data() {
            value.write_le(&mut out);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_tensors<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        offset: 0,
        path,
    };
    let magic = cursor.take(CHECKPOINT_MAGIC.len())?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let dtype = cursor.take(1)?[0];
    if dtype != S::DTYPE_TAG {
        return Err(Error::Checkpoint(format!(
            "{}: dtype tag {dtype} does not match the requested scalar width {}",
            path.display(),
            S::DTYPE_TAG
        )));
    }
    let count = cursor.read_u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.read_u32()? as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec()).map_err(|_| {
            Error::Checkpoint(format!("{}: tensor name is not UTF-8", path.display()))
        })?;
        let rank = cursor.read_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.read_u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let width = S::DTYPE_TAG as usize;
        let raw = cursor.take(len * width)?;
        let data: Vec<S> = raw.chunks_exact(width).map(S::read_le).collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    if cursor.offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after the last tensor",
            path.display(),
            bytes.len() - cursor.offset
        )));
    }
    Ok(entries)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {} (wanted {n} more)",
                self.path.display(),
                self.offset
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let raw = self.take(4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let a = Tensor::<f32>::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1e-38, -0.0, 7.5]).unwrap();
        let b = Tensor::<f32>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_tensors(&path, &[("layer.w".into(), &a), ("layer.b".into(), &b)]).unwrap();
        let loaded = load_tensors::<f32>(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "layer.w");
        assert!(loaded[0].1.bit_eq(&a));
        assert!(loaded[1].1.bit_eq(&b));
        // Saving the loaded tensors reproduces identical bytes.
        let path2 = dir.path().join("net2.bin");
        let refs: Vec<(String, &Tensor<f32>)> =
            loaded.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_tensors(&path2, &refs).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTPRL1\x04\x00\x00\x00\x00").unwrap();
        assert!(load_tensors::<f32>(&path).is_err());
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f64.bin");
        let t = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        save_tensors(&path, &[("x".into(), &t)]).unwrap();
        assert!(load_tensors::<f32>(&path).is_err());
        assert!(load_tensors::<f64>(&path).is_ok());
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        let t = Tensor::<f32>::from_vec(&[8], vec![1.0; 8]).unwrap();
        save_tensors(&path, &[("x".into(), &t)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, bytes).unwrap();
        let err = load_tensors::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}

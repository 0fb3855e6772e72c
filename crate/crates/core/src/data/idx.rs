//! IDX binary format exactly as published: big-endian 32-bit header fields
//! (magic, count, rows, cols for images; magic, count for labels), then raw
//! unsigned bytes. Pixel bytes scale by 1/255 into [0, 1] on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx<S: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<S>> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut img = Cursor::new(&image_bytes, images_path);
    let magic = img.read_u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(img.error(0, format!("bad image magic {magic:#010x}")));
    }
    let count = img.read_u32_be()? as usize;
    let rows = img.read_u32_be()? as usize;
    let cols = img.read_u32_be()? as usize;
    if rows == 0 || cols == 0 || count == 0 {
        return Err(img.error(4, format!("degenerate dimensions {count}x{rows}x{cols}")));
    }

    let mut lab = Cursor::new(&label_bytes, labels_path);
    let lab_magic = lab.read_u32_be()?;
    if lab_magic != IDX_LABELS_MAGIC {
        return Err(lab.error(0, format!("bad label magic {lab_magic:#010x}")));
    }
    let lab_count = lab.read_u32_be()? as usize;
    if lab_count != count {
        return Err(lab.error(
            4,
            format!("label count {lab_count} does not match image count {count}"),
        ));
    }

    let pixels = img.take(count * rows * cols)?;
    img.expect_end()?;
    let labels_raw = lab.take(count)?;
    lab.expect_end()?;

    let scale = S::from_f64(1.0 / 255.0);
    let mut images = Vec::with_capacity(count);
    for chunk in pixels.chunks_exact(rows * cols) {
        let data: Vec<S> = chunk
            .iter()
            .map(|&b| S::from_f64(b as f64) * scale)
            .collect();
        images.push(Tensor::from_vec(&[rows, cols, 1], data)?);
    }
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map(|&m| m + 1).unwrap_or(1).max(2);
    Dataset::new(images, labels, classes)
}

/// Serialize a single-channel dataset back to an IDX file pair. Loading and
/// re-serializing an IDX pair reproduces the original files byte-for-byte.
pub fn write_idx<S: Scalar>(
    ds: &Dataset<S>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let shape = ds.shape();
    if shape[2] != 1 {
        return Err(Error::InvalidArgument(format!(
            "IDX export supports single-channel images, got {shape:?}"
        )));
    }
    let (rows, cols) = (shape[0], shape[1]);

    let mut image_bytes =
        Vec::with_capacity(16 + ds.len() * rows * cols);
    image_bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in ds.images() {
        for &v in img.data() {
            let byte = (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8;
            image_bytes.push(byte);
        }
    }

    let mut label_bytes = Vec::with_capacity(8 + ds.len());
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &label in ds.labels() {
        if label > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "label {label} does not fit the IDX byte encoding"
            )));
        }
        label_bytes.push(label as u8);
    }

    fs::write(images_path, image_bytes)?;
    fs::write(labels_path, label_bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Cursor<'a> {
        Cursor {
            bytes,
            offset: 0,
            path,
        }
    }

    fn error(&self, offset: u64, message: String) -> Error {
        Error::IdxFormat {
            path: self.path.display().to_string(),
            offset,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.error(
                self.offset as u64,
                format!(
                    "truncated: wanted {n} more bytes, file has {}",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let raw = self.take(4)?;
        Ok(u32::from_be_bytes(raw.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.error(
                self.offset as u64,
                format!("{} trailing bytes", self.bytes.len() - self.offset),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_pair(dir: &Path, count: u32, rows: u32, cols: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("images.idx");
        let labels = dir.join("labels.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&count.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for i in 0..(count * rows * cols) {
            img.push((i % 256) as u8);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&count.to_be_bytes());
        for i in 0..count {
            lab.push((i % 10) as u8);
        }
        fs::write(&images, img).unwrap();
        fs::write(&labels, lab).unwrap();
        (images, labels)
    }

    #[test]
    fn well_formed_pair_loads_with_expected_shape() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 10, 28, 28);
        let ds: Dataset<f32> = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.shape(), &[28, 28, 1]);
        assert_eq!(ds.classes(), 10);
    }

    #[test]
    fn pixel_scaling_endpoints() {
        let dir = tempdir().unwrap();
        let images = dir.path().join("images.idx");
        let labels = dir.path().join("labels.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.push(255);
        img.push(0);
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&1u32.to_be_bytes());
        lab.push(1);
        fs::write(&images, img).unwrap();
        fs::write(&labels, lab).unwrap();
        let ds: Dataset<f32> = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.image(0).data()[0], 1.0);
        assert_eq!(ds.image(0).data()[1], 0.0);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 23, 12, 9);
        let ds: Dataset<f32> = load_idx(&images, &labels).unwrap();
        let images2 = dir.path().join("images2.idx");
        let labels2 = dir.path().join("labels2.idx");
        write_idx(&ds, &images2, &labels2).unwrap();
        assert_eq!(fs::read(&images).unwrap(), fs::read(&images2).unwrap());
        assert_eq!(fs::read(&labels).unwrap(), fs::read(&labels2).unwrap());
    }

    #[test]
    fn bad_magic_rejected_with_offset() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 2, 4, 4);
        let mut bytes = fs::read(&images).unwrap();
        bytes[2] = 0xFF;
        fs::write(&images, bytes).unwrap();
        let err = load_idx::<f32>(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 100, 4, 4);
        let mut bytes = fs::read(&labels).unwrap();
        // Header says 99 labels.
        bytes[4..8].copy_from_slice(&99u32.to_be_bytes());
        bytes.pop();
        fs::write(&labels, bytes).unwrap();
        let err = load_idx::<f32>(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");
    }

    #[test]
    fn truncated_pixels_rejected_with_position() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 4, 6, 6);
        let mut bytes = fs::read(&images).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&images, bytes).unwrap();
        let err = load_idx::<f32>(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("byte"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempdir().unwrap();
        let (images, labels) = write_pair(dir.path(), 4, 6, 6);
        let mut bytes = fs::read(&images).unwrap();
        bytes.push(7);
        fs::write(&images, bytes).unwrap();
        let err = load_idx::<f32>(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }
}

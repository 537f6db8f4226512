//! IDX (MNIST) image/label files: big-endian `u32` header, unsigned-byte payload.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "file ends inside the header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

/// Decodes in-memory IDX buffers; pixels map to `[-1, 1]` via `v / 127.5 - 1`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = read_u32(images, 0, "images.magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected {IDX_IMAGE_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = read_u32(images, 4, "images.count")? as usize;
    let rows = read_u32(images, 8, "images.rows")? as usize;
    let cols = read_u32(images, 12, "images.cols")? as usize;

    let lmagic = read_u32(labels, 0, "labels.magic")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected {IDX_LABEL_MAGIC:#010x}, found {lmagic:#010x}"),
        ));
    }
    let lcount = read_u32(labels, 4, "labels.count")? as usize;
    if lcount != count {
        return Err(Error::format(
            "labels.count",
            format!("{lcount} labels for {count} images"),
        ));
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(
            "images.count",
            "header declares an empty dataset",
        ));
    }

    let pixels = rows * cols;
    let payload = &images[16..];
    if payload.len() != count * pixels {
        return Err(Error::format(
            "images.payload",
            format!(
                "expected {} bytes for {count} images of {rows}x{cols}, found {}",
                count * pixels,
                payload.len()
            ),
        ));
    }
    let lpayload = &labels[8..];
    if lpayload.len() != count {
        return Err(Error::format(
            "labels.payload",
            format!("expected {count} bytes, found {}", lpayload.len()),
        ));
    }

    let imgs = payload
        .chunks(pixels)
        .map(|chunk| {
            let data = chunk.iter().map(|&b| f32::from(b) / 127.5 - 1.0).collect();
            Tensor::new(&[1, rows, cols], data)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(imgs, lpayload.iter().map(|&l| u32::from(l)).collect())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn idx_pair(
        count: u32,
        rows: u32,
        cols: u32,
        pixels: &[u8],
        labels: &[u8],
    ) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(pixels);
        let mut lbl = Vec::new();
        for v in [IDX_LABEL_MAGIC, count] {
            lbl.extend_from_slice(&v.to_be_bytes());
        }
        lbl.extend_from_slice(labels);
        (img, lbl)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::idx_pair;
    use super::*;

    #[test]
    fn two_image_fixture() {
        let mut px = vec![0u8; 2 * 28 * 28];
        px[0] = 255;
        px[1] = 128;
        let (img, lbl) = idx_pair(2, 28, 28, &px, &[3, 7]);
        let ds = parse_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_shape(), &[1, 28, 28]);
        assert_eq!(ds.labels(), &[3, 7]);
        let d = ds.images()[0].data();
        assert_eq!(d[0], 1.0);
        assert!((d[1] - 0.003_921_6).abs() < 1e-6);
        assert_eq!(d[2], -1.0);
    }

    #[test]
    fn bad_magic_names_the_field() {
        let (mut img, lbl) = idx_pair(1, 2, 2, &[0; 4], &[0]);
        img[3] = 0x04;
        let err = parse_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("images.magic"), "{err}");
        let (img, mut lbl) = idx_pair(1, 2, 2, &[0; 4], &[0]);
        lbl[3] = 0x03;
        let err = parse_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("labels.magic"), "{err}");
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let (img, lbl) = idx_pair(2, 2, 2, &[0; 7], &[0, 1]);
        let err = parse_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("images.payload"), "{err}");

        let (img, _) = idx_pair(2, 2, 2, &[0; 8], &[0, 1]);
        let (_, lbl) = idx_pair(3, 2, 2, &[], &[0, 1, 2]);
        let err = parse_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("labels.count"), "{err}");

        let err = parse_idx(&img[..10], &lbl).unwrap_err().to_string();
        assert!(err.contains("images.rows"), "{err}");
    }
}

//! `GANOMRAW` container: 8-byte magic, little-endian `u32` count, channels,
//! height, width, then per image a `u32` label and `c*h*w` `f32` pixels.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 8] = b"GANOMRAW";
const HEADER_LEN: usize = 8 + 16;

pub fn encode_raw_container(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let [c, h, w] = match *ds.image_shape() {
        [c, h, w] => [c, h, w],
        _ => unreachable!("dataset images are rank 3"),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (4 + 4 * c * h * w));
    out.extend_from_slice(RAW_MAGIC);
    for v in [ds.len(), c, h, w] {
        let v = u32::try_from(v).map_err(|_| Error::format("header", "extent exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (img, &label) in ds.images().iter().zip(ds.labels()) {
        out.extend_from_slice(&label.to_le_bytes());
        for &v in img.data() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::format(
                    "payload",
                    format!("pixel value {v} outside [-1, 1]"),
                ));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_raw_container(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let bytes = encode_raw_container(ds)?;
    crate::io::write_atomic(path.as_ref(), &bytes)
}

pub fn load_raw_container(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_raw_container(&bytes)
}

pub fn read_raw_container(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < 8 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::format("magic", "file does not start with GANOMRAW"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("header", "file ends inside the header"));
    }
    let field = |i: usize| {
        let o = 8 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (count, c, h, w) = (field(0), field(1), field(2), field(3));
    if count == 0 {
        return Err(Error::format("count", "container declares zero images"));
    }
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::format(
            "shape",
            format!("degenerate image shape {c}x{h}x{w}"),
        ));
    }
    let pixels = c * h * w;
    let record = 4 + 4 * pixels;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * record {
        return Err(Error::format(
            "payload",
            format!(
                "expected {} bytes for {count} records, found {}",
                count * record,
                payload.len()
            ),
        ));
    }
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in payload.chunks(record).enumerate() {
        labels.push(u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]));
        let data: Vec<f32> = rec[4..]
            .chunks(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(bad) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::format(
                "payload",
                format!("image {i} has pixel value {bad} outside [-1, 1]"),
            ));
        }
        images.push(Tensor::new(&[c, h, w], data)?);
    }
    LabeledDataset::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_dataset(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n)
            .map(|_| {
                let d = (0..3 * 5 * 4)
                    .map(|_| rng.random_range(-1.0f32..=1.0))
                    .collect();
                Tensor::new(&[3, 5, 4], d).unwrap()
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
        LabeledDataset::new(images, labels).unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let ds = random_dataset(3, 5);
        let bytes = encode_raw_container(&ds).unwrap();
        assert_eq!(read_raw_container(&bytes).unwrap(), ds);
    }

    #[test]
    fn header_layout() {
        let img = Tensor::zeros(&[1, 32, 32]);
        let ds = LabeledDataset::new(vec![img; 10], vec![0; 10]).unwrap();
        let bytes = encode_raw_container(&ds).unwrap();
        assert_eq!(bytes.len(), 8 + 16 + 10 * (4 + 4 * 32 * 32));
        assert_eq!(&bytes[8..12], &10u32.to_le_bytes());
        assert_eq!(&bytes[12..24], &[1, 0, 0, 0, 32, 0, 0, 0, 32, 0, 0, 0]);
    }

    #[test]
    fn empty_count_is_an_error() {
        let mut bytes = RAW_MAGIC.to_vec();
        for v in [0u32, 1, 4, 4] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            read_raw_container(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rejects_bad_magic_truncation_and_range() {
        let ds = random_dataset(2, 1);
        let bytes = encode_raw_container(&ds).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_raw_container(&wrong).is_err());
        assert!(read_raw_container(&bytes[..bytes.len() - 1]).is_err());
        let mut out_of_range = bytes.clone();
        out_of_range[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&1.5f32.to_le_bytes());
        let err = read_raw_container(&out_of_range).unwrap_err().to_string();
        assert!(err.contains("outside"), "{err}");
    }
}

//! Dataset ingestion, preprocessing and the one-class split protocol.

mod idx;
mod preprocess;
mod raw;
mod split;
mod synthetic;

pub use idx::{load_idx, parse_idx, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
pub use preprocess::{preprocess, resize_bilinear, PreprocessSpec};
pub use raw::{
    encode_raw_container, load_raw_container, read_raw_container, write_raw_container, RAW_MAGIC,
};
pub use split::{make_anomaly_split, AnomalySplit, TRAIN_FRACTION};
pub use synthetic::{generate_synthetic, SyntheticSpec, MIN_SYNTHETIC_SIZE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images (`c x H x W` each) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<u32>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<u32>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::EmptyInput("dataset has no images".into()))?;
        if first.rank() != 3 {
            return Err(Error::Dimension(format!(
                "images must be c x H x W, got {:?}",
                first.shape()
            )));
        }
        if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::shape_mismatch("dataset", first.shape(), bad.shape()));
        }
        if labels.len() != images.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `[c, H, W]` shared by every image.
    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    /// Keeps roughly `fraction` of every class, chosen by `seed`.
    pub fn stratified_subsample(&self, fraction: f64, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Contract(format!(
                "subsample fraction must be in (0, 1], got {fraction}"
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut classes: Vec<u32> = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        let mut keep = Vec::new();
        for class in classes {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            let n = ((idx.len() as f64 * fraction).round() as usize).max(1);
            keep.extend_from_slice(&idx[..n]);
        }
        keep.sort_unstable();
        Self::new(
            keep.iter().map(|&i| self.images[i].clone()).collect(),
            keep.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

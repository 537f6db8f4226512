use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Share of the normal samples that goes to training.
pub const TRAIN_FRACTION: f64 = 0.8;

const MIN_NORMALS: usize = 5;

/// One-vs-rest split: a normal-only training set and a labeled test set.
///
/// Test data sits behind counting accessors so callers can verify that
/// training never touched it.
#[derive(Debug)]
pub struct AnomalySplit {
    train_normal: Vec<Tensor>,
    train_sources: Vec<usize>,
    test_images: Vec<Tensor>,
    test_labels: Vec<u8>,
    test_sources: Vec<usize>,
    abnormal_class: u32,
    seed: u64,
    test_reads: AtomicUsize,
}

impl AnomalySplit {
    pub fn train_normal(&self) -> &[Tensor] {
        &self.train_normal
    }

    pub fn test_images(&self) -> &[Tensor] {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        &self.test_images
    }

    /// `0` normal, `1` abnormal, aligned with [`AnomalySplit::test_images`].
    pub fn test_labels(&self) -> &[u8] {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        &self.test_labels
    }

    /// Number of test-set accessor calls so far.
    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::Relaxed)
    }

    /// Source-dataset indices of the training images.
    pub fn train_sources(&self) -> &[usize] {
        &self.train_sources
    }

    pub fn test_sources(&self) -> &[usize] {
        &self.test_sources
    }

    pub fn abnormal_class(&self) -> u32 {
        self.abnormal_class
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }
}

/// Treats `abnormal_class` as the anomaly and every other class as normal.
///
/// Normals are shuffled with `seed` and split 80/20 into training and test;
/// every abnormal sample goes to the test set.
pub fn make_anomaly_split(
    ds: &LabeledDataset,
    abnormal_class: u32,
    seed: u64,
) -> Result<AnomalySplit> {
    let (mut normals, abnormals): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.labels()[i] != abnormal_class);
    if abnormals.is_empty() {
        return Err(Error::Protocol(format!(
            "class {abnormal_class} does not occur in the dataset"
        )));
    }
    if normals.len() < MIN_NORMALS {
        return Err(Error::Protocol(format!(
            "need at least {MIN_NORMALS} normal samples, found {}",
            normals.len()
        )));
    }
    normals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (normals.len() as f64 * TRAIN_FRACTION).floor() as usize;
    let (train, test_normal) = normals.split_at(n_train);

    let mut test_sources = test_normal.to_vec();
    test_sources.extend_from_slice(&abnormals);
    let mut test_labels = vec![0u8; test_normal.len()];
    test_labels.resize(test_sources.len(), 1);

    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.images()[i].clone()).collect();
    Ok(AnomalySplit {
        train_normal: pick(train),
        train_sources: train.to_vec(),
        test_images: pick(&test_sources),
        test_labels,
        test_sources,
        abnormal_class,
        seed,
        test_reads: AtomicUsize::new(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_classes() -> LabeledDataset {
        let images = (0..1000)
            .map(|i| Tensor::full(&[1, 2, 2], (i % 7) as f32 / 7.0))
            .collect();
        let labels = (0..1000).map(|i| (i % 10) as u32).collect();
        LabeledDataset::new(images, labels).unwrap()
    }

    #[test]
    fn split_arithmetic() {
        let ds = ten_classes();
        let s = make_anomaly_split(&ds, 2, 9).unwrap();
        assert_eq!(s.train_normal().len(), 720);
        let labels = s.test_labels();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 180);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 100);
    }

    #[test]
    fn deterministic_membership() {
        let ds = ten_classes();
        let a = make_anomaly_split(&ds, 2, 9).unwrap();
        let b = make_anomaly_split(&ds, 2, 9).unwrap();
        assert_eq!(a.train_sources(), b.train_sources());
        assert_eq!(a.test_sources(), b.test_sources());
        let c = make_anomaly_split(&ds, 2, 10).unwrap();
        assert_ne!(a.train_sources(), c.train_sources());
    }

    #[test]
    fn abnormal_class_never_in_training() {
        let ds = ten_classes();
        let s = make_anomaly_split(&ds, 4, 1).unwrap();
        assert!(s.train_sources().iter().all(|&i| ds.labels()[i] != 4));
        for (&src, &lab) in s.test_sources().iter().zip(s.test_labels()) {
            assert_eq!(lab == 1, ds.labels()[src] == 4);
        }
    }

    #[test]
    fn protocol_errors() {
        let ds = ten_classes();
        assert!(matches!(
            make_anomaly_split(&ds, 11, 0),
            Err(Error::Protocol(_))
        ));
        let tiny =
            LabeledDataset::new(vec![Tensor::zeros(&[1, 1, 1]); 4], vec![0, 0, 0, 1]).unwrap();
        assert!(matches!(
            make_anomaly_split(&tiny, 1, 0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn accessor_counts_reads() {
        let s = make_anomaly_split(&ten_classes(), 0, 0).unwrap();
        assert_eq!(s.test_reads(), 0);
        let _ = s.train_normal();
        assert_eq!(s.test_reads(), 0);
        let _ = s.test_images();
        assert_eq!(s.test_reads(), 1);
    }
}

//! Procedural two-class shape dataset: filled rectangles (label 0) and
//! plus-sign crosses (label 1) on a dark background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_SYNTHETIC_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

const BACKGROUND: f32 = -1.0;

fn rectangle(rng: &mut ChaCha8Rng, s: usize) -> Vec<f32> {
    let mut img = vec![BACKGROUND; s * s];
    let h = rng.random_range(s * 3 / 8..=s * 5 / 8);
    let w = rng.random_range(s * 3 / 8..=s * 5 / 8);
    let top = rng.random_range(s / 8..=s - s / 8 - h);
    let left = rng.random_range(s / 8..=s - s / 8 - w);
    let ink = rng.random_range(0.4f32..=1.0);
    for y in top..top + h {
        for x in left..left + w {
            img[y * s + x] = ink;
        }
    }
    img
}

fn cross(rng: &mut ChaCha8Rng, s: usize) -> Vec<f32> {
    let mut img = vec![BACKGROUND; s * s];
    // thick arms keep the ink area close to the rectangles'
    let arm = rng.random_range(s / 4..=s * 3 / 8 - 1);
    let thick = rng.random_range((s / 5).max(2)..=(s / 4).max(3));
    let cy = rng.random_range(arm..s - arm);
    let cx = rng.random_range(arm..s - arm);
    let ink = rng.random_range(0.4f32..=1.0);
    let half = thick / 2;
    for y in cy - arm..=cy + arm {
        for x in cx - half..cx - half + thick {
            img[y * s + x] = ink;
        }
    }
    for x in cx - arm..=cx + arm {
        for y in cy - half..cy - half + thick {
            img[y * s + x] = ink;
        }
    }
    img
}

/// Deterministic in `spec.seed`. Samples alternate rectangle, cross, ...
pub fn generate_synthetic(spec: SyntheticSpec) -> Result<LabeledDataset> {
    let s = spec.image_size;
    if s < MIN_SYNTHETIC_SIZE {
        return Err(Error::Contract(format!(
            "synthetic image_size must be at least {MIN_SYNTHETIC_SIZE}, got {s}"
        )));
    }
    if spec.n_per_class == 0 {
        return Err(Error::EmptyInput("n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(2 * spec.n_per_class);
    let mut labels = Vec::with_capacity(2 * spec.n_per_class);
    for _ in 0..spec.n_per_class {
        images.push(Tensor::new(&[1, s, s], rectangle(&mut rng, s))?);
        labels.push(0);
        images.push(Tensor::new(&[1, s, s], cross(&mut rng, s))?);
        labels.push(1);
    }
    LabeledDataset::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, size: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_per_class: n,
            image_size: size,
            seed,
        }
    }

    #[test]
    fn counts_per_label() {
        let ds = generate_synthetic(spec(50, 32, 7)).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.labels().iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(ds.image_shape(), &[1, 32, 32]);
    }

    #[test]
    fn deterministic_and_in_range() {
        for size in [16, 17, 32, 64] {
            let a = generate_synthetic(spec(20, size, 3)).unwrap();
            assert_eq!(a, generate_synthetic(spec(20, size, 3)).unwrap());
            assert!(a
                .images()
                .iter()
                .all(|t| t.data().iter().all(|v| (-1.0..=1.0).contains(v))));
            // every image has some ink
            assert!(a.images().iter().all(|t| t.data().iter().any(|&v| v > 0.0)));
        }
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(generate_synthetic(spec(5, 8, 0)).is_err());
    }
}

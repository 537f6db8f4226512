//! Differentiable layers used by the DCGAN-style sub-networks.

mod activation;
mod batchnorm;
mod conv;
mod gemm;

pub use activation::{activation, bce_loss, Activation, BCE_EPSILON, DEFAULT_LEAKY_SLOPE};
pub use batchnorm::{batch_norm2d, BatchNormState, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{conv2d, conv_transpose2d, ConvGeometry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Standard deviation of the DCGAN weight initialization.
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormScale,
    NormShift,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        Self {
            name: name.into(),
            kind,
            value,
        }
    }
}

/// DCGAN initialization: conv weights ~ N(0, 0.02), batch-norm scales
/// ~ N(1, 0.02), shifts and biases zero. Deterministic in `seed`.
pub fn init_weights<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let scale = Normal::new(1.0f32, INIT_STD).expect("valid std");
    for p in params {
        match p.kind {
            ParamKind::ConvWeight => fill(&mut p.value, || weight.sample(&mut rng)),
            ParamKind::NormScale => fill(&mut p.value, || scale.sample(&mut rng)),
            ParamKind::Bias | ParamKind::NormShift => fill(&mut p.value, || 0.0),
        }
    }
}

fn fill(t: &mut Tensor, mut f: impl FnMut() -> f32) {
    for v in t.data_mut() {
        *v = f();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> Vec<Parameter> {
        vec![
            Parameter::new("w", ParamKind::ConvWeight, Tensor::zeros(&[100, 100])),
            Parameter::new("g", ParamKind::NormScale, Tensor::zeros(&[16])),
            Parameter::new("b", ParamKind::NormShift, Tensor::full(&[16], 3.0)),
            Parameter::new("bias", ParamKind::Bias, Tensor::full(&[4], 3.0)),
        ]
    }

    #[test]
    fn same_seed_same_parameters() {
        let mut a = sample_params();
        let mut b = sample_params();
        init_weights(&mut a, 11);
        init_weights(&mut b, 11);
        assert_eq!(a, b);
        let mut c = sample_params();
        init_weights(&mut c, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn weight_statistics_and_zero_shifts() {
        let mut ps = sample_params();
        init_weights(&mut ps, 3);
        let w = ps[0].value.data();
        let mean = w.iter().map(|&v| f64::from(v)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
        let var = w
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / w.len() as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.001);
        let gm = ps[1].value.data();
        assert!(gm.iter().all(|&v| (v - 1.0).abs() < 0.1));
        assert!(ps[2].value.data().iter().all(|&v| v == 0.0));
        assert!(ps[3].value.data().iter().all(|&v| v == 0.0));
    }
}

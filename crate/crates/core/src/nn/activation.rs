use crate::error::{Error, Result};
use crate::tensor::{Backward, BackwardCtx, Graph, Tensor, Var};

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.2;

/// Clamp applied to probabilities before taking logs in [`bce_loss`].
pub const BCE_EPSILON: f32 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f32),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }

    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(g: &mut Graph, kind: Activation, x: Var) -> Result<Var> {
    let out = g.value(x)?.map(|v| kind.apply(v));
    g.record(out, vec![x], Box::new(ActivationRule(kind)))
}

struct ActivationRule(Activation);

impl Backward for ActivationRule {
    fn name(&self) -> &'static str {
        "activation"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let data = grad
            .data()
            .iter()
            .zip(ctx.inputs[0].data())
            .zip(ctx.output.data())
            .map(|((&g, &x), &y)| g * self.0.derivative(x, y))
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
pub fn bce_loss(g: &mut Graph, predicted: Var, target: &Tensor) -> Result<Var> {
    let p = g.value(predicted)?;
    if p.shape() != target.shape() {
        return Err(Error::shape_mismatch("bce_loss", p.shape(), target.shape()));
    }
    if let Some(bad) = target.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Contract(format!(
            "bce_loss targets must be 0 or 1, found {bad}"
        )));
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = f64::from(p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON));
            if t == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    let out = Tensor::scalar((total / p.numel() as f64) as f32);
    g.record(
        out,
        vec![predicted],
        Box::new(BceRule {
            target: target.clone(),
        }),
    )
}

struct BceRule {
    target: Tensor,
}

impl Backward for BceRule {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let p = ctx.inputs[0];
        let upstream = f64::from(grad.item()?) / p.numel() as f64;
        let data = p
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&pv, &t)| {
                // zero slope where the clamp is active
                if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&pv) {
                    return 0.0;
                }
                let pv = f64::from(pv);
                let d = if t == 1.0 {
                    -1.0 / pv
                } else {
                    1.0 / (1.0 - pv)
                };
                (upstream * d) as f32
            })
            .collect();
        Ok(vec![Some(Tensor::new(p.shape(), data)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: Activation, xs: &[f32]) -> Vec<f32> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(xs.to_vec()));
        let y = activation(&mut g, kind, x).unwrap();
        g.value(y).unwrap().data().to_vec()
    }

    #[test]
    fn definitions() {
        assert_eq!(run(Activation::leaky(), &[-1.0, 2.0]), vec![-0.2, 2.0]);
        assert_eq!(run(Activation::Relu, &[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(run(Activation::Tanh, &[0.0]), vec![0.0]);
        assert_eq!(run(Activation::Sigmoid, &[0.0]), vec![0.5]);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        let ys = run(Activation::Sigmoid, &[-200.0, 200.0]);
        assert_eq!(ys, vec![0.0, 1.0]);
    }

    #[test]
    fn bce_values() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![1.0, 0.0]));
        let l = bce_loss(&mut g, p, &Tensor::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(g.value(l).unwrap().item().unwrap() < 1e-5);

        let p = g.param(Tensor::from_vec(vec![0.5; 4]));
        let l = bce_loss(&mut g, p, &Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0])).unwrap();
        let v = g.value(l).unwrap().item().unwrap();
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_soft_targets() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![0.3]));
        assert!(matches!(
            bce_loss(&mut g, p, &Tensor::from_vec(vec![0.5])),
            Err(Error::Contract(_))
        ));
    }
}

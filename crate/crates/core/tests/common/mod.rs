//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ganomaly_core::model::HyperParams;
use ganomaly_core::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `[-hi, -gap] U [gap, hi]`, away from a kink at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn tiny_hyper() -> HyperParams {
    HyperParams {
        image_size: 32,
        channels: 1,
        latent_dim: 8,
        base_features: 4,
    }
}

pub fn image_batch(rng: &mut ChaCha8Rng, n: usize, hyper: &HyperParams) -> Tensor {
    uniform(rng, &hyper.image_shape(n), -1.0, 1.0)
}

/// Worst relative error between analytic and central-difference gradients
/// of `sum(build(inputs) * r)` for a fixed random projection `r`, over the
/// inputs flagged in `check`.
pub fn gradient_error(
    inputs: &[Tensor],
    check: &[bool],
    h: f32,
    seed: u64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(check)
        .map(|(t, &c)| g.leaf(t.clone(), c))
        .collect();
    let out = build(&mut g, &vars).unwrap();
    let out_shape = g.value(out).unwrap().shape().to_vec();
    let r = uniform(&mut rng(seed), &out_shape, -1.0, 1.0);
    let rv = g.constant(r.clone());
    let prod = g.mul(out, rv).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();

    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out)
            .unwrap()
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    };

    let mut worst: f64 = 0.0;
    for (k, (&var, &c)) in vars.iter().zip(check).enumerate() {
        if !c {
            continue;
        }
        let analytic = g.grad_or_zeros(var).unwrap();
        let mut numeric = Vec::with_capacity(inputs[k].numel());
        let mut values = inputs.to_vec();
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            values[k].data_mut()[i] = orig + h;
            let plus = eval(&values);
            values[k].data_mut()[i] = orig - h;
            let minus = eval(&values);
            values[k].data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * f64::from(h)));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| (f64::from(a) - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic
            .data()
            .iter()
            .map(|&a| f64::from(a).powi(2))
            .sum::<f64>()
            .sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Direct loop convolution. `w` is `[O, C, k, k]`.
pub fn conv2d_naive(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0f64; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| f64::from(t.data()[oc]));
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oc * c + ic) * k + ky) * k + kx];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Direct scatter transposed convolution. `w` is `[I, O, k, k]`.
pub fn conv_transpose2d_naive(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let [n, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [_, o, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut out = vec![0f64; n * o * oh * ow];
    for b in 0..n {
        for ic in 0..ci {
            for y in 0..h {
                for xx in 0..wd {
                    let xv = f64::from(x.data()[((b * ci + ic) * h + y) * wd + xx]);
                    for oc in 0..o {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xx * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = f64::from(w.data()[((ic * o + oc) * k + ky) * k + kx]);
                                out[((b * o + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        for b in 0..n {
            for oc in 0..o {
                for v in &mut out[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow] {
                    *v += f64::from(bias.data()[oc]);
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `(wins + ties / 2) / (n_pos * n_neg)` over all positive/negative pairs.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice_wins = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                }
            }
        }
    }
    (twice_wins as f64 / 2.0) / (pos as f64 * neg as f64)
}

pub fn param_hash(params: &[ganomaly_core::nn::Parameter]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in params {
        p.name.hash(&mut h);
        for v in p.value.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

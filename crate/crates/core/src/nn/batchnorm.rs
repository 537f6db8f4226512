use crate::error::{Error, Result};
use crate::tensor::{Backward, BackwardCtx, Graph, Tensor, Var};

pub const DEFAULT_MOMENTUM: f32 = 0.1;
pub const DEFAULT_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of a 2-D batch-norm layer. The affine `gamma`/`beta`
/// are ordinary parameters passed to [`batch_norm2d`] as variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub epsilon: f32,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }
}

/// Per-channel normalization of an `[N, C, H, W]` batch.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into the running estimates (the running variance uses the
/// unbiased estimate). Eval mode reads the running estimates only.
pub fn batch_norm2d(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
) -> Result<Var> {
    match state.mode {
        Mode::Train => batch_norm2d_train(g, x, gamma, beta, state),
        Mode::Eval => batch_norm2d_eval(g, x, gamma, beta, state),
    }
}

fn check(g: &Graph, x: Var, gamma: Var, beta: Var, channels: usize) -> Result<[usize; 4]> {
    let dims = match *g.value(x)?.shape() {
        [n, c, h, w] => [n, c, h, w],
        ref s => {
            return Err(Error::Dimension(format!(
                "batch_norm2d input must be rank 4, got {s:?}"
            )))
        }
    };
    for (name, v) in [("gamma", gamma), ("beta", beta)] {
        if g.value(v)?.shape() != [dims[1]] {
            return Err(Error::Dimension(format!(
                "batch_norm2d {name} shape {:?} does not match {} channels",
                g.value(v)?.shape(),
                dims[1]
            )));
        }
    }
    if dims[1] != channels {
        return Err(Error::Dimension(format!(
            "batch_norm2d state tracks {channels} channels, input has {}",
            dims[1]
        )));
    }
    Ok(dims)
}

fn batch_norm2d_train(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
) -> Result<Var> {
    let [n, c, h, w] = check(g, x, gamma, beta, state.channels())?;
    if n < 2 {
        return Err(Error::Contract(
            "batch_norm2d in train mode needs a batch of at least 2".into(),
        ));
    }
    let l = h * w;
    let count = (n * l) as f64;
    let xs = g.value(x)?.data();
    let (gm, bt) = (g.value(gamma)?.data(), g.value(beta)?.data());

    let mut xhat = vec![0.0f32; xs.len()];
    let mut out = vec![0.0f32; xs.len()];
    let mut inv_std = vec![0.0f32; c];
    for ch in 0..c {
        let plane = |b: usize| &xs[(b * c + ch) * l..][..l];
        let mean = (0..n).flat_map(plane).map(|&v| f64::from(v)).sum::<f64>() / count;
        let var = (0..n)
            .flat_map(plane)
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / count;
        let istd = 1.0 / (var + f64::from(state.epsilon)).sqrt();
        inv_std[ch] = istd as f32;
        for b in 0..n {
            let base = (b * c + ch) * l;
            for i in base..base + l {
                let xh = ((f64::from(xs[i]) - mean) * istd) as f32;
                xhat[i] = xh;
                out[i] = gm[ch] * xh + bt[ch];
            }
        }
        let m = state.momentum;
        let unbiased = var * count / (count - 1.0);
        let rm = &mut state.running_mean.data_mut()[ch];
        *rm = (1.0 - m) * *rm + m * mean as f32;
        let rv = &mut state.running_var.data_mut()[ch];
        *rv = (1.0 - m) * *rv + m * unbiased as f32;
    }
    let out = Tensor::new(&[n, c, h, w], out)?;
    g.record(
        out,
        vec![x, gamma, beta],
        Box::new(BatchNormRule {
            xhat,
            inv_std,
            batch_stats: true,
        }),
    )
}

fn batch_norm2d_eval(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &BatchNormState,
) -> Result<Var> {
    let [n, c, h, w] = check(g, x, gamma, beta, state.channels())?;
    let l = h * w;
    let xs = g.value(x)?.data();
    let (gm, bt) = (g.value(gamma)?.data(), g.value(beta)?.data());
    let mut xhat = vec![0.0f32; xs.len()];
    let mut out = vec![0.0f32; xs.len()];
    let inv_std: Vec<f32> = state
        .running_var
        .data()
        .iter()
        .map(|&v| 1.0 / (v + state.epsilon).sqrt())
        .collect();
    let mean = state.running_mean.data();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            for i in base..base + l {
                let xh = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gm[ch] * xh + bt[ch];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out)?;
    g.record(
        out,
        vec![x, gamma, beta],
        Box::new(BatchNormRule {
            xhat,
            inv_std,
            batch_stats: false,
        }),
    )
}

struct BatchNormRule {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    /// Whether the statistics were computed from the batch itself, in which
    /// case they depend on the input and contribute to its gradient.
    batch_stats: bool,
}

impl Backward for BatchNormRule {
    fn name(&self) -> &'static str {
        "batch_norm2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = ctx.inputs[0];
        let gamma = ctx.inputs[1].data();
        let [n, c, h, w] = match *x.shape() {
            [a, b, cc, d] => [a, b, cc, d],
            _ => unreachable!("checked in forward"),
        };
        let l = h * w;
        let dy = grad.data();
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = vec![0.0f32; x.numel()];
        let count = (n * l) as f64;

        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for b in 0..n {
                let base = (b * c + ch) * l;
                for (&d, &xh) in dy[base..base + l].iter().zip(&self.xhat[base..base + l]) {
                    sum_dy += f64::from(d);
                    sum_dy_xhat += f64::from(d) * f64::from(xh);
                }
            }
            dgamma[ch] = sum_dy_xhat as f32;
            dbeta[ch] = sum_dy as f32;
            if !ctx.needs[0] {
                continue;
            }
            let scale = f64::from(gamma[ch]) * f64::from(self.inv_std[ch]);
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    dx[i] = if self.batch_stats {
                        (scale
                            * (f64::from(dy[i])
                                - sum_dy / count
                                - f64::from(self.xhat[i]) * sum_dy_xhat / count))
                            as f32
                    } else {
                        (scale * f64::from(dy[i])) as f32
                    };
                }
            }
        }
        Ok(vec![
            ctx.needs[0]
                .then(|| Tensor::new(x.shape(), dx))
                .transpose()?,
            ctx.needs[1].then(|| Tensor::from_vec(dgamma)),
            ctx.needs[2].then(|| Tensor::from_vec(dbeta)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(g: &mut Graph, c: usize) -> (Var, Var) {
        (
            g.param(Tensor::full(&[c], 1.0)),
            g.param(Tensor::zeros(&[c])),
        )
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[3, 2, 2, 2], 4.25));
        let (gm, bt) = affine(&mut g, 2);
        let mut st = BatchNormState::new(2);
        let y = batch_norm2d(&mut g, x, gm, bt, &mut st).unwrap();
        assert!(g.value(y).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_of_one_in_train_mode_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 2, 2], 1.0));
        let (gm, bt) = affine(&mut g, 2);
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            batch_norm2d(&mut g, x, gm, bt, &mut st),
            Err(Error::Contract(_))
        ));
        st.mode = Mode::Eval;
        assert!(batch_norm2d(&mut g, x, gm, bt, &mut st).is_ok());
    }

    #[test]
    fn running_stats_move_only_in_train_mode() {
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[4, 1, 2, 2], data).unwrap());
        let (gm, bt) = affine(&mut g, 1);
        let mut st = BatchNormState::new(1);
        st.mode = Mode::Eval;
        batch_norm2d(&mut g, x, gm, bt, &mut st).unwrap();
        assert_eq!(st.running_mean.data(), &[0.0]);
        st.mode = Mode::Train;
        batch_norm2d(&mut g, x, gm, bt, &mut st).unwrap();
        assert!((st.running_mean.data()[0] - 0.75).abs() < 1e-6);
        // unbiased variance of 0..16 is 22.666..; 0.9 * 1 + 0.1 * 22.667
        assert!((st.running_var.data()[0] - 3.166_667).abs() < 1e-5);
    }
}

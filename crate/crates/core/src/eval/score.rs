use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::GanomalyModel;
use crate::tensor::{Graph, Tensor};

/// Environment variable capping scoring threads.
pub const THREADS_ENV: &str = "GANOMALY_THREADS";

pub const DEFAULT_SCORE_BATCH: usize = 64;

/// Norm applied to `G_E(x) - E(G(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreDistance {
    #[default]
    L1,
    /// Matches the training-time encoder loss.
    L2,
}

/// What a score measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Distance between the two latent codes.
    Latent(ScoreDistance),
    /// `||x - G(x)||_1` in pixel space.
    Reconstruction,
}

impl Default for ScoreKind {
    fn default() -> Self {
        Self::Latent(ScoreDistance::L1)
    }
}

/// Scores plus the work that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub scores: Vec<f64>,
    /// Samples pushed through each of `G_E`, `G_D`, `E` and `D`.
    pub forward_samples: [u64; 4],
    /// Backward passes run while scoring; always zero.
    pub backward_calls: usize,
}

impl ScoreRun {
    /// Forward passes per scored sample through the generator encoder.
    pub fn passes_per_sample(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.forward_samples[0] as f64 / self.scores.len() as f64
        }
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn row_distance(a: &[f32], b: &[f32], kind: ScoreDistance) -> f64 {
    let it = a.iter().zip(b).map(|(&x, &y)| f64::from(x - y));
    match kind {
        ScoreDistance::L1 => it.map(f64::abs).sum(),
        ScoreDistance::L2 => it.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

fn score_batch(
    model: &GanomalyModel,
    batch: &Tensor,
    kind: ScoreKind,
) -> Result<(Vec<f64>, usize)> {
    let mut g = Graph::no_grad();
    let b = model.bind_generator(&mut g, false);
    let x = g.constant(batch.clone());
    let out = model.generator_forward_frozen(&mut g, &b, x)?;
    let n = batch.shape()[0];
    let scores = match kind {
        ScoreKind::Latent(d) => {
            let (z, zh) = (g.value(out.z)?.data(), g.value(out.z_hat)?.data());
            let dim = z.len() / n;
            z.chunks(dim)
                .zip(zh.chunks(dim))
                .map(|(a, b)| row_distance(a, b, d))
                .collect()
        }
        ScoreKind::Reconstruction => {
            let (xs, xh) = (batch.data(), g.value(out.x_hat)?.data());
            let dim = xs.len() / n;
            xs.chunks(dim)
                .zip(xh.chunks(dim))
                .map(|(a, b)| row_distance(a, b, ScoreDistance::L1))
                .collect()
        }
    };
    Ok((scores, g.backward_calls()))
}

/// Scores every image with one frozen forward pass, fanning batches out
/// over a thread pool capped by [`THREADS_ENV`].
pub fn anomaly_scores(
    model: &GanomalyModel,
    images: &[Tensor],
    kind: ScoreKind,
    batch_size: usize,
) -> Result<ScoreRun> {
    if batch_size == 0 {
        return Err(Error::Contract(
            "scoring batch size must be positive".into(),
        ));
    }
    let expected = &model.hyper.image_shape(1)[1..];
    if let Some(bad) = images.iter().find(|t| t.shape() != expected) {
        return Err(Error::shape_mismatch(
            "anomaly_score",
            expected,
            bad.shape(),
        ));
    }
    let before = model.networks().map(|n| n.forward_samples());
    let batches: Vec<Tensor> = images
        .chunks(batch_size)
        .map(|c| Tensor::stack(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Evaluation(format!("cannot start scoring threads: {e}")))?;
    let parts: Vec<(Vec<f64>, usize)> = pool.install(|| {
        batches
            .par_iter()
            .map(|b| score_batch(model, b, kind))
            .collect::<Result<_>>()
    })?;
    let after = model.networks().map(|n| n.forward_samples());
    let mut scores = Vec::with_capacity(images.len());
    let mut backward_calls = 0;
    for (s, b) in parts {
        scores.extend(s);
        backward_calls += b;
    }
    Ok(ScoreRun {
        scores,
        forward_samples: std::array::from_fn(|i| after[i] - before[i]),
        backward_calls,
    })
}

/// Latent L1 score of a single `c x H x W` image or an `N x c x H x W` batch.
pub fn anomaly_score(model: &GanomalyModel, x: &Tensor) -> Result<Vec<f64>> {
    let images = match x.rank() {
        3 => vec![x.clone()],
        4 => x.unstack(),
        r => {
            return Err(Error::Dimension(format!(
                "anomaly_score expects a rank 3 or 4 tensor, got rank {r}"
            )))
        }
    };
    let n = images.len().max(1);
    Ok(anomaly_scores(model, &images, ScoreKind::default(), n)?.scores)
}

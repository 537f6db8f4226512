use std::time::Instant;

use serde::Serialize;

use super::score::{anomaly_scores, thread_cap, ScoreKind};
use crate::error::{Error, Result};
use crate::model::GanomalyModel;
use crate::tensor::Tensor;

pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub cpu: String,
    pub logical_cores: usize,
    pub scoring_threads: usize,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpu,
            logical_cores: cores,
            scoring_threads: thread_cap().unwrap_or(cores),
        }
    }
}

/// Per-sample latency of scoring, measured on a CPU. Not comparable with
/// GPU timings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Set when timing started without any warm-up pass.
    pub warmup_skipped: bool,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub image_size: usize,
    pub latent_dim: usize,
    /// Generator-encoder passes per sample per repetition.
    pub forward_passes_per_sample: f64,
    pub backward_calls: usize,
    pub hardware: Hardware,
}

/// Median and nearest-rank 95th percentile.
pub fn median_p95(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no timings".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok((median, v[rank - 1]))
}

/// Times `repetitions` scoring passes over `images` after `warmup`
/// untimed passes.
pub fn latency_bench(
    model: &GanomalyModel,
    images: &[Tensor],
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::EmptyInput("benchmark batch is empty".into()));
    }
    if repetitions == 0 {
        return Err(Error::Contract("repetitions must be positive".into()));
    }
    let n = images.len();
    for _ in 0..warmup {
        anomaly_scores(model, images, ScoreKind::default(), n)?;
    }
    let mut per_sample = Vec::with_capacity(repetitions);
    let mut passes = 0u64;
    let mut backward_calls = 0;
    for _ in 0..repetitions {
        let start = Instant::now();
        let run = anomaly_scores(model, images, ScoreKind::default(), n)?;
        per_sample.push(start.elapsed().as_secs_f64() * 1e3 / n as f64);
        passes += run.forward_samples[0];
        backward_calls += run.backward_calls;
    }
    let (median_ms, p95_ms) = median_p95(&per_sample)?;
    Ok(BenchReport {
        samples: n,
        repetitions,
        warmup,
        warmup_skipped: warmup == 0,
        median_ms,
        p95_ms,
        image_size: model.hyper.image_size,
        latent_dim: model.hyper.latent_dim,
        forward_passes_per_sample: passes as f64 / (n * repetitions) as f64,
        backward_calls,
        hardware: Hardware::detect(),
    })
}

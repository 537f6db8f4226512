use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use ganomaly_core::data::{
    generate_synthetic, load_idx, load_raw_container, make_anomaly_split, preprocess,
    write_raw_container, LabeledDataset, PreprocessSpec, SyntheticSpec,
};
use ganomaly_core::eval::{
    anomaly_scores, histogram, histogram_csv, latency_bench, roc_auc, roc_csv, scale_with_range,
    scores_csv, ScoreDistance, ScoreKind, ScoreRange, ScoreSet, DEFAULT_SCORE_BATCH,
};
use ganomaly_core::io::write_atomic;
use ganomaly_core::train::{
    read_hyper, read_model, Checkpoint, EpochLosses, Trainer, LOSS_CSV_HEADER,
};
use ganomaly_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{ConfigError, DatasetKind, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";

/// Appends rows to a CSV as they are produced so an interrupted run still
/// leaves every finished row, followed by an error sentinel on failure.
struct CsvLog {
    path: PathBuf,
    file: File,
}

impl CsvLog {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let mut file =
            File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{header}")?;
        Ok(Self { path, file })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .with_context(|| format!("writing {}", self.path.display()))
    }

    fn fail(&mut self, err: &anyhow::Error) {
        let msg = format!("{err:#}").replace(['\n', '\r'], " ");
        let _ = writeln!(self.file, "# error: {msg}");
        let _ = self.file.flush();
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn synth(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    if size < ganomaly_core::data::MIN_SYNTHETIC_SIZE {
        return Err(ConfigError(format!(
            "--size must be at least {}, got {size}",
            ganomaly_core::data::MIN_SYNTHETIC_SIZE
        ))
        .into());
    }
    if n == 0 {
        return Err(ConfigError("--n must be positive".into()).into());
    }
    let ds = generate_synthetic(SyntheticSpec {
        n_per_class: n,
        image_size: size,
        seed,
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_raw_container(out, &ds)?;
    println!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str, cfg: &RunConfig) -> Result<&'a PathBuf> {
    value.as_ref().ok_or_else(|| {
        ConfigError(format!(
            "{key} is required for dataset.kind = {}",
            match cfg.dataset_kind {
                DatasetKind::Idx => "idx",
                DatasetKind::Raw => "raw",
                DatasetKind::Synthetic => "synthetic",
            }
        ))
        .into()
    })
}

/// Loads, subsamples and resizes the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    let ds = match cfg.dataset_kind {
        DatasetKind::Raw => load_raw_container(require(&cfg.dataset_path, "dataset.path", cfg)?)?,
        DatasetKind::Idx => {
            let images = require(&cfg.dataset_path, "dataset.path", cfg)?;
            let labels = require(&cfg.labels_path, "dataset.labels_path", cfg)?;
            load_idx(images, labels)?
        }
        DatasetKind::Synthetic => generate_synthetic(SyntheticSpec {
            n_per_class: cfg.synthetic_n,
            image_size: cfg.image_size,
            seed: cfg.seed,
        })?,
    };
    let ds = if cfg.subsample < 1.0 {
        ds.stratified_subsample(cfg.subsample, cfg.seed)?
    } else {
        ds
    };
    Ok(preprocess(
        &ds,
        PreprocessSpec {
            target_size: cfg.image_size,
        },
    )?)
}

pub struct TrainOutcome {
    pub last: EpochLosses,
    pub checkpoint: PathBuf,
}

/// Trains per `cfg` and writes the loss CSV and final checkpoint into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path, verbose: bool) -> Result<TrainOutcome> {
    let ds = load_dataset(cfg)?;
    let split = make_anomaly_split(&ds, cfg.abnormal_class, cfg.seed)?;
    let mut tc = cfg.train_config(ds.image_shape()[0]);
    tc.checkpoint_dir = tc.checkpoint_every.map(|_| out_dir.join("checkpoints"));
    tc.validate().map_err(|e| ConfigError(e.to_string()))?;
    create_dir(out_dir)?;
    if let Some(dir) = &tc.checkpoint_dir {
        create_dir(dir)?;
    }
    write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    let mut log = CsvLog::create(out_dir.join(LOSSES_FILE), LOSS_CSV_HEADER)?;
    let epochs = tc.epochs;
    let result = (|| -> Result<TrainOutcome> {
        let mut trainer = Trainer::new(tc)?;
        let mut write_err = None;
        let report = trainer.fit(split.train_normal(), |e| {
            if verbose {
                println!(
                    "epoch {}/{epochs} adv={:.6} con={:.6} enc={:.6} total={:.6} disc={:.6}",
                    e.epoch, e.adv, e.con, e.enc, e.total, e.disc
                );
            }
            if write_err.is_none() {
                write_err = log.row(&e.csv_row()).err();
            }
        })?;
        if let Some(e) = write_err {
            return Err(e);
        }
        let mut ckpt = trainer.to_checkpoint()?;
        ckpt.insert_u64("run.abnormal_class", &[u64::from(cfg.abnormal_class)])?;
        let path = out_dir.join(CHECKPOINT_FILE);
        ckpt.save(&path)?;
        let last = *report
            .epochs
            .last()
            .ok_or_else(|| anyhow!("training produced no epochs"))?;
        Ok(TrainOutcome {
            last,
            checkpoint: path,
        })
    })();
    if let Err(e) = &result {
        log.fail(e);
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Min-max over the test scores themselves.
    PerSet,
    /// Min-max from the training scores, clamped.
    Reference,
}

pub struct EvalOptions {
    pub distance: ScoreDistance,
    pub bins: usize,
    pub scaling: Scaling,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            distance: ScoreDistance::L1,
            bins: 10,
            scaling: Scaling::PerSet,
        }
    }
}

pub struct EvalOutcome {
    pub auc: f64,
    pub summary: serde_json::Value,
}

fn check_compat(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let h = read_hyper(ckpt)?;
    let mut diffs = Vec::new();
    if h.image_size != cfg.image_size {
        diffs.push(format!(
            "image_size {} vs config {}",
            h.image_size, cfg.image_size
        ));
    }
    if h.latent_dim != cfg.latent_dim {
        diffs.push(format!(
            "latent_dim {} vs config {}",
            h.latent_dim, cfg.latent_dim
        ));
    }
    if h.base_features != cfg.base_features {
        diffs.push(format!(
            "base_features {} vs config {}",
            h.base_features, cfg.base_features
        ));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(ganomaly_core::Error::Compatibility(format!("checkpoint {}", diffs.join(", "))).into())
    }
}

/// Rebuilds the split recorded in the checkpoint, scores the test set and
/// writes scores, ROC, histogram and summary files into `out_dir`.
pub fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    out_dir: &Path,
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compat(cfg, &ckpt)?;
    let model = read_model(&ckpt)?;
    let seed = ckpt.u64s_exact("meta.train", 5)?[2];
    let abnormal = if ckpt.contains("run.abnormal_class") {
        u32::try_from(ckpt.u64s_exact("run.abnormal_class", 1)?[0])?
    } else {
        cfg.abnormal_class
    };
    let mut data_cfg = cfg.clone();
    data_cfg.seed = seed;
    let ds = load_dataset(&data_cfg)?;
    if ds.image_shape()[0] != model.hyper.channels {
        return Err(ganomaly_core::Error::Compatibility(format!(
            "checkpoint expects {} channels, dataset has {}",
            model.hyper.channels,
            ds.image_shape()[0]
        ))
        .into());
    }
    let split = make_anomaly_split(&ds, abnormal, seed)?;
    let kind = ScoreKind::Latent(opts.distance);
    let run = anomaly_scores(&model, split.test_images(), kind, DEFAULT_SCORE_BATCH)?;
    let labels = split.test_labels().to_vec();
    let mut set = ScoreSet::new(run.scores, labels)?;
    if opts.scaling == Scaling::Reference {
        let train = anomaly_scores(&model, split.train_normal(), kind, DEFAULT_SCORE_BATCH)?;
        let scaled = scale_with_range(&set.raw, ScoreRange::of(&train.scores)?)?;
        set.scaled = scaled.values;
        set.warning = scaled.warning;
    }
    if let Some(w) = &set.warning {
        eprintln!("warning: {w}");
    }
    let curve = roc_auc(&set.raw, &set.labels)?;
    let hist = histogram(&set.scaled, &set.labels, opts.bins)?;

    create_dir(out_dir)?;
    write_text(&out_dir.join("scores.csv"), &scores_csv(&set))?;
    write_text(&out_dir.join("roc.csv"), &roc_csv(&curve))?;
    write_text(&out_dir.join("histogram.csv"), &histogram_csv(&hist))?;
    let summary = json!({
        "auc": curve.auc,
        "n_test": set.raw.len(),
        "n_normal": curve.n_normal,
        "n_abnormal": curve.n_abnormal,
        "n_train": split.train_normal().len(),
        "abnormal_class": abnormal,
        "seed": seed,
        "distance": match opts.distance { ScoreDistance::L1 => "l1", ScoreDistance::L2 => "l2" },
        "scaling": match opts.scaling { Scaling::PerSet => "per_set", Scaling::Reference => "reference" },
        "warning": set.warning,
    });
    write_text(
        &out_dir.join("eval.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok(EvalOutcome {
        auc: curve.auc,
        summary,
    })
}

pub fn bench(
    checkpoint: &Path,
    out_dir: &Path,
    batch: usize,
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<serde_json::Value> {
    if batch == 0 || repetitions == 0 {
        return Err(ConfigError("--batch and --repetitions must be positive".into()).into());
    }
    let model = read_model(&Checkpoint::load(checkpoint)?)?;
    let shape = model.hyper.image_shape(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..batch)
        .map(|_| {
            let data = (0..shape[1] * shape[2] * shape[3])
                .map(|_| rng.random_range(-1.0f32..=1.0))
                .collect();
            Tensor::new(&shape[1..], data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if warmup == 0 {
        eprintln!("warning: warmup=0, first timed repetition includes cold-start costs");
    }
    let report = latency_bench(&model, &images, repetitions, warmup)?;
    let value = serde_json::to_value(&report)?;
    create_dir(out_dir)?;
    write_text(
        &out_dir.join("bench.json"),
        &(serde_json::to_string_pretty(&value)? + "\n"),
    )?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    Latent(usize),
    Weights(f32, f32, f32),
}

pub const SWEEP_CSV_HEADER: &str = "point,latent_dim,w_adv,w_con,w_enc,seed,auc,loss_adv,loss_con,loss_enc,loss_total,loss_disc,status";

/// Runs train + eval for each point with seed `cfg.seed + index`.
/// Returns the number of failed points.
pub fn sweep(cfg: &RunConfig, points: &[SweepPoint], out_dir: &Path) -> Result<usize> {
    if points.is_empty() {
        return Err(ConfigError("sweep needs at least one point".into()).into());
    }
    create_dir(out_dir)?;
    let mut log = CsvLog::create(out_dir.join("sweep.csv"), SWEEP_CSV_HEADER)?;
    let mut failed = 0;
    for (i, point) in points.iter().enumerate() {
        let mut pc = cfg.clone();
        pc.seed = cfg.seed.wrapping_add(i as u64);
        match *point {
            SweepPoint::Latent(d) => pc.latent_dim = d,
            SweepPoint::Weights(a, c, e) => {
                pc.weights.adv = a;
                pc.weights.con = c;
                pc.weights.enc = e;
            }
        }
        let dir = out_dir.join(format!("point_{i}"));
        pc.out_dir = dir.clone();
        let echo = format!(
            "{i},{},{},{},{},{}",
            pc.latent_dim, pc.weights.adv, pc.weights.con, pc.weights.enc, pc.seed
        );
        let outcome = train(&pc, &dir, false).and_then(|t| {
            let e = eval(&pc, &t.checkpoint, &dir, &EvalOptions::default())?;
            Ok((t, e))
        });
        let line = match outcome {
            Ok((t, e)) => {
                let l = t.last;
                println!("point {i}: auc={}", e.auc);
                format!(
                    "{echo},{},{},{},{},{},{},ok",
                    e.auc, l.adv, l.con, l.enc, l.total, l.disc
                )
            }
            Err(err) => {
                failed += 1;
                let msg = format!("{err:#}").replace([',', '\n', '\r'], ";");
                eprintln!("point {i} failed: {msg}");
                format!("{echo},,,,,,,error: {msg}")
            }
        };
        if let Err(e) = log.row(&line) {
            log.fail(&e);
            return Err(e);
        }
    }
    Ok(failed)
}

/// Parses `16,64,100`.
pub fn parse_latent_list(s: &str) -> Result<Vec<SweepPoint>, ConfigError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .map(SweepPoint::Latent)
                .ok_or_else(|| ConfigError(format!("invalid latent size {v:?}")))
        })
        .collect()
}

/// Parses `1:50:1,1:25:1`.
pub fn parse_weight_grid(s: &str) -> Result<Vec<SweepPoint>, ConfigError> {
    s.split(',')
        .map(|t| {
            let parts: Vec<f32> = t
                .split(':')
                .map(|v| v.trim().parse::<f32>())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError(format!("invalid weight triple {t:?}")))?;
            match parts[..] {
                [a, c, e] => Ok(SweepPoint::Weights(a, c, e)),
                _ => Err(ConfigError(format!(
                    "weight triple {t:?} needs three values"
                ))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        assert_eq!(parse_latent_list("16, 64,100").unwrap().len(), 3);
        assert!(parse_latent_list("16,x").is_err());
        assert_eq!(
            parse_weight_grid("1:50:1").unwrap(),
            vec![SweepPoint::Weights(1.0, 50.0, 1.0)]
        );
        assert!(parse_weight_grid("1:50").is_err());
    }
}

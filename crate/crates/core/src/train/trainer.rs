use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{GanomalyModel, HyperParams, Network};
use crate::nn::{Mode, Parameter};
use crate::objectives::{
    adversarial_loss_with, contextual_loss, discriminator_objective, encoder_loss,
    generator_objective, FeatureMatching, LossWeights,
};
use crate::tensor::{Graph, Tensor};

/// Smallest batch that batch norm can train on.
pub const MIN_BATCH: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub feature_matching: FeatureMatching,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs when `checkpoint_dir` is set.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            feature_matching: FeatureMatching::default(),
            epochs: 15,
            batch_size: 64,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if self.batch_size < MIN_BATCH {
            return Err(Error::Contract(format!(
                "batch_size must be at least {MIN_BATCH}, got {}",
                self.batch_size
            )));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Contract("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub adv: f32,
    pub con: f32,
    pub enc: f32,
    pub total: f32,
    pub disc: f32,
}

/// Per-epoch means of [`StepLosses`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    /// 1-based.
    pub epoch: usize,
    pub adv: f64,
    pub con: f64,
    pub enc: f64,
    pub total: f64,
    pub disc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLosses>,
    /// Checkpoints written during this call.
    pub checkpoints: Vec<PathBuf>,
}

pub const LOSS_CSV_HEADER: &str = "epoch,loss_adv,loss_con,loss_enc,loss_total,loss_disc";

impl EpochLosses {
    /// One loss CSV row without the line break.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.adv, self.con, self.enc, self.total, self.disc
        )
    }
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(out, "{}", e.csv_row());
        }
        out
    }
}

/// Owns the model, both optimizers and the shuffling stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: GanomalyModel,
    pub config: TrainConfig,
    gen_opt: AdamState,
    disc_opt: AdamState,
    rng: ChaCha8Rng,
    /// Completed epochs.
    epoch: usize,
    steps: u64,
}

fn generator_params(model: &GanomalyModel) -> impl Iterator<Item = &Parameter> {
    model
        .g_encoder
        .params()
        .iter()
        .chain(model.g_decoder.params())
        .chain(model.encoder2.params())
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = GanomalyModel::new(config.hyper, config.seed)?;
        let gen_opt = AdamState::new(config.adam, generator_params(&model));
        let disc_opt = AdamState::new(config.adam, model.discriminator.params());
        Ok(Self {
            rng: shuffle_rng(config.seed),
            model,
            config,
            gen_opt,
            disc_opt,
            epoch: 0,
            steps: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn generator_optimizer(&self) -> &AdamState {
        &self.gen_opt
    }

    pub fn discriminator_optimizer(&self) -> &AdamState {
        &self.disc_opt
    }

    /// One discriminator update followed by one generator update on `batch`.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<StepLosses> {
        let hyper = self.model.hyper;
        let n = batch.shape().first().copied().unwrap_or(0);
        if batch.shape() != hyper.image_shape(n) {
            return Err(Error::Dimension(format!(
                "batch shape {:?} does not match {:?}",
                batch.shape(),
                hyper.image_shape(n)
            )));
        }
        if n < MIN_BATCH {
            return Err(Error::Contract(format!(
                "training batch needs at least {MIN_BATCH} samples, got {n}"
            )));
        }
        self.model.set_mode(Mode::Train);

        let mut gg = Graph::new();
        let gb = self.model.bind_generator(&mut gg, true);
        let x = gg.constant(batch.clone());
        let gen = self.model.generator_forward(&mut gg, &gb, x)?;
        let x_hat_value = gg.value(gen.x_hat)?.clone();

        // Discriminator update on real vs detached reconstructions.
        let mut gd = Graph::new();
        let db = self.model.discriminator.bind(&mut gd, true);
        let xr = gd.constant(batch.clone());
        let xf = gd.constant(x_hat_value);
        let real = self.model.discriminator_forward(&mut gd, &db, xr)?;
        let fake = self.model.discriminator_forward(&mut gd, &db, xf)?;
        let disc_loss = discriminator_objective(&mut gd, real.prob, fake.prob)?;
        let disc = gd.value(disc_loss)?.item()?;
        if !disc.is_finite() {
            return Err(Error::Training(format!("discriminator loss is {disc}")));
        }
        gd.backward(disc_loss)?;
        let d_grads = self.model.discriminator.grads(&gd, &db)?;
        {
            let mut params: Vec<&mut Parameter> =
                self.model.discriminator.params_mut().iter_mut().collect();
            self.disc_opt.step(&mut params, &d_grads)?;
        }

        // Generator update against the freshly updated, frozen discriminator.
        let db2 = self.model.discriminator.bind(&mut gg, false);
        let real = self.model.discriminator_forward(&mut gg, &db2, x)?;
        let fake = self.model.discriminator_forward(&mut gg, &db2, gen.x_hat)?;
        let adv = adversarial_loss_with(
            &mut gg,
            real.features,
            fake.features,
            self.config.feature_matching,
        )?;
        let con = contextual_loss(&mut gg, x, gen.x_hat)?;
        let enc = encoder_loss(&mut gg, gen.z, gen.z_hat)?;
        let bundle = generator_objective(&mut gg, adv, con, enc, &self.config.weights)?;
        let total = gg.value(bundle.total)?.item()?;
        if !total.is_finite() {
            return Err(Error::Training(format!("generator loss is {total}")));
        }
        gg.backward(bundle.total)?;
        let mut g_grads = self.model.g_encoder.grads(&gg, &gb.g_encoder)?;
        g_grads.extend(self.model.g_decoder.grads(&gg, &gb.g_decoder)?);
        g_grads.extend(self.model.encoder2.grads(&gg, &gb.encoder2)?);
        {
            let m = &mut self.model;
            let mut params: Vec<&mut Parameter> = m
                .g_encoder
                .params_mut()
                .iter_mut()
                .chain(m.g_decoder.params_mut().iter_mut())
                .chain(m.encoder2.params_mut().iter_mut())
                .collect();
            self.gen_opt.step(&mut params, &g_grads)?;
        }
        self.steps += 1;

        Ok(StepLosses {
            adv: gg.value(bundle.adv)?.item()?,
            con: gg.value(bundle.con)?.item()?,
            enc: gg.value(bundle.enc)?.item()?,
            total,
            disc,
        })
    }

    /// Trains on `train` (normal samples only) from the current epoch up to
    /// `config.epochs`. `on_epoch` sees each epoch's mean losses as they finish.
    pub fn fit(
        &mut self,
        train: &[Tensor],
        mut on_epoch: impl FnMut(&EpochLosses),
    ) -> Result<TrainReport> {
        if train.len() < MIN_BATCH {
            return Err(Error::Training(format!(
                "need at least {MIN_BATCH} training samples, got {}",
                train.len()
            )));
        }
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..train.len()).collect();
        while self.epoch < self.config.epochs {
            order.sort_unstable();
            order.shuffle(&mut self.rng);
            let mut sums = [0f64; 5];
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                if chunk.len() < MIN_BATCH {
                    continue;
                }
                let items: Vec<&Tensor> = chunk.iter().map(|&i| &train[i]).collect();
                let s = self.train_step(&Tensor::stack(&items)?)?;
                for (acc, v) in sums.iter_mut().zip([s.adv, s.con, s.enc, s.total, s.disc]) {
                    *acc += f64::from(v);
                }
                batches += 1;
            }
            self.epoch += 1;
            let k = batches as f64;
            let row = EpochLosses {
                epoch: self.epoch,
                adv: sums[0] / k,
                con: sums[1] / k,
                enc: sums[2] / k,
                total: sums[3] / k,
                disc: sums[4] / k,
            };
            on_epoch(&row);
            report.epochs.push(row);
            if let (Some(every), Some(dir)) = (
                self.config.checkpoint_every,
                self.config.checkpoint_dir.clone(),
            ) {
                if self.epoch.is_multiple_of(every) {
                    let path = dir.join(format!("epoch_{:04}.ckpt", self.epoch));
                    self.save(&path)?;
                    report.checkpoints.push(path);
                }
            }
        }
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        write_model(&self.model, &mut c)?;
        let cfg = &self.config;
        c.insert_u64("meta.epoch", &[self.epoch as u64, self.steps])?;
        c.insert_f32s(
            "meta.weights",
            &[cfg.weights.adv, cfg.weights.con, cfg.weights.enc],
        )?;
        c.insert_u64(
            "meta.train",
            &[
                cfg.epochs as u64,
                cfg.batch_size as u64,
                cfg.seed,
                cfg.checkpoint_every.unwrap_or(0) as u64,
                match cfg.feature_matching {
                    FeatureMatching::Paired => 0,
                    FeatureMatching::BatchMeanFake => 1,
                },
            ],
        )?;
        write_adam(&mut c, "adam.gen", &self.gen_opt)?;
        write_adam(&mut c, "adam.disc", &self.disc_opt)?;
        let seed = self.rng.get_seed();
        let seed_words: Vec<u64> = seed
            .chunks(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let pos = self.rng.get_word_pos();
        let mut rng_state = seed_words;
        rng_state.extend([pos as u64, (pos >> 64) as u64, self.rng.get_stream()]);
        c.insert_u64("rng.state", &rng_state)?;
        Ok(c)
    }

    /// Restores a trainer; `checkpoint_dir` is not stored and comes back unset.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let model = read_model(c)?;
        let w = c.f32s_exact("meta.weights", 3)?;
        let t = c.u64s_exact("meta.train", 5)?;
        let gen_opt = read_adam(c, "adam.gen", generator_params(&model))?;
        let disc_opt = read_adam(c, "adam.disc", model.discriminator.params())?;
        let config = TrainConfig {
            hyper: model.hyper,
            weights: LossWeights::new(w[0], w[1], w[2])?,
            adam: gen_opt.config,
            feature_matching: match t[4] {
                0 => FeatureMatching::Paired,
                1 => FeatureMatching::BatchMeanFake,
                k => {
                    return Err(Error::Checkpoint(format!(
                        "unknown feature matching tag {k}"
                    )))
                }
            },
            epochs: to_usize(t[0])?,
            batch_size: to_usize(t[1])?,
            seed: t[2],
            checkpoint_every: match t[3] {
                0 => None,
                k => Some(to_usize(k)?),
            },
            checkpoint_dir: None,
        };
        let epoch = c.u64s_exact("meta.epoch", 2)?;
        let r = c.u64s_exact("rng.state", 7)?;
        let mut seed = [0u8; 32];
        for (dst, w) in seed.chunks_mut(8).zip(&r[..4]) {
            dst.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r[6]);
        rng.set_word_pos(u128::from(r[4]) | (u128::from(r[5]) << 64));
        Ok(Self {
            model,
            config,
            gen_opt,
            disc_opt,
            rng,
            epoch: to_usize(epoch[0])?,
            steps: epoch[1],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in usize")))
}

fn write_adam(c: &mut Checkpoint, prefix: &str, st: &AdamState) -> Result<()> {
    let cfg = st.config;
    c.insert_u64(format!("{prefix}.t"), &[st.t])?;
    c.insert_f32s(
        format!("{prefix}.config"),
        &[cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon],
    )?;
    for (i, (m, v)) in st.m.iter().zip(&st.v).enumerate() {
        c.insert_tensor(format!("{prefix}.m.{i}"), m)?;
        c.insert_tensor(format!("{prefix}.v.{i}"), v)?;
    }
    Ok(())
}

fn read_adam<'a>(
    c: &Checkpoint,
    prefix: &str,
    params: impl IntoIterator<Item = &'a Parameter>,
) -> Result<AdamState> {
    let cfg = c.f32s_exact(&format!("{prefix}.config"), 4)?;
    let config = AdamConfig {
        lr: cfg[0],
        beta1: cfg[1],
        beta2: cfg[2],
        epsilon: cfg[3],
    };
    let mut st = AdamState::new(config, params.into_iter().collect::<Vec<_>>());
    st.t = c.u64s_exact(&format!("{prefix}.t"), 1)?[0];
    for i in 0..st.m.len() {
        st.m[i] = checked(c, &format!("{prefix}.m.{i}"), st.m[i].shape())?;
        st.v[i] = checked(c, &format!("{prefix}.v.{i}"), st.v[i].shape())?;
    }
    Ok(st)
}

fn checked(c: &Checkpoint, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = c.tensor(name)?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "record {name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

fn hyper_words(h: &HyperParams) -> [u64; 4] {
    [
        h.image_size as u64,
        h.channels as u64,
        h.latent_dim as u64,
        h.base_features as u64,
    ]
}

/// Stores hyperparameters, every parameter and every batch-norm running statistic.
pub fn write_model(model: &GanomalyModel, c: &mut Checkpoint) -> Result<()> {
    c.insert_u64("meta.hyper", &hyper_words(&model.hyper))?;
    for net in model.networks() {
        for p in net.params() {
            c.insert_tensor(format!("param.{}", p.name), &p.value)?;
        }
        for (i, s) in net.norm_states().iter().enumerate() {
            c.insert_tensor(
                format!("bn.{}.{i}.running_mean", net.name()),
                &s.running_mean,
            )?;
            c.insert_tensor(format!("bn.{}.{i}.running_var", net.name()), &s.running_var)?;
        }
    }
    Ok(())
}

/// Stored hyperparameters without rebuilding the model.
pub fn read_hyper(c: &Checkpoint) -> Result<HyperParams> {
    let h = c.u64s_exact("meta.hyper", 4)?;
    let hyper = HyperParams {
        image_size: to_usize(h[0])?,
        channels: to_usize(h[1])?,
        latent_dim: to_usize(h[2])?,
        base_features: to_usize(h[3])?,
    };
    hyper
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored hyperparameters are invalid: {e}")))?;
    Ok(hyper)
}

pub fn read_model(c: &Checkpoint) -> Result<GanomalyModel> {
    let mut model = GanomalyModel::new(read_hyper(c)?, 0)?;
    for net in model.networks_mut() {
        load_network(c, net)?;
    }
    Ok(model)
}

fn load_network(c: &Checkpoint, net: &mut Network) -> Result<()> {
    for p in net.params_mut() {
        p.value = checked(c, &format!("param.{}", p.name), p.value.shape())?;
    }
    let name = net.name().to_string();
    for (i, s) in net.norm_states_mut().into_iter().enumerate() {
        let shape = s.running_mean.shape().to_vec();
        s.running_mean = checked(c, &format!("bn.{name}.{i}.running_mean"), &shape)?;
        s.running_var = checked(c, &format!("bn.{name}.{i}.running_var"), &shape)?;
    }
    Ok(())
}

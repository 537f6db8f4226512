//! Generator loss terms, their weighted sum, and the discriminator loss.

use crate::error::{Error, Result};
use crate::nn::bce_loss;
use crate::tensor::{Graph, NormKind, Tensor, Var};

/// Weights of the adversarial, contextual and encoder terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub adv: f32,
    pub con: f32,
    pub enc: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            con: 50.0,
            enc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(adv: f32, con: f32, enc: f32) -> Result<Self> {
        let w = Self { adv, con, enc };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.con, self.enc];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Contract(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the fake-side features enter the feature-matching term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMatching {
    /// `f(x_i)` against `f(G(x_i))` sample by sample.
    #[default]
    Paired,
    /// `f(x_i)` against the batch mean of `f(G(x))`.
    BatchMeanFake,
}

/// Handles to the generator loss terms of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossBundle {
    pub adv: Var,
    pub con: Var,
    pub enc: Var,
    pub total: Var,
}

fn same_shape(g: &Graph, op: &str, a: Var, b: Var) -> Result<()> {
    let (ta, tb) = (g.value(a)?, g.value(b)?);
    if ta.shape() != tb.shape() {
        return Err(Error::shape_mismatch(op, ta.shape(), tb.shape()));
    }
    if ta.rank() == 0 {
        return Err(Error::Dimension(format!("{op} needs a batch axis")));
    }
    Ok(())
}

/// Batch mean of per-sample Euclidean distances.
fn mean_row_distance(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let per_sample = g.row_norms(NormKind::L2, diff)?;
    g.mean(per_sample)
}

/// Feature-matching loss: mean over the batch of `||f(x) - f(G(x))||_2`.
pub fn adversarial_loss(g: &mut Graph, f_real: Var, f_fake: Var) -> Result<Var> {
    adversarial_loss_with(g, f_real, f_fake, FeatureMatching::Paired)
}

pub fn adversarial_loss_with(
    g: &mut Graph,
    f_real: Var,
    f_fake: Var,
    mode: FeatureMatching,
) -> Result<Var> {
    same_shape(g, "adversarial_loss", f_real, f_fake)?;
    let fake = match mode {
        FeatureMatching::Paired => f_fake,
        FeatureMatching::BatchMeanFake => g.batch_mean_rows(f_fake)?,
    };
    mean_row_distance(g, f_real, fake)
}

/// Mean absolute pixel difference between input and reconstruction.
pub fn contextual_loss(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    same_shape(g, "contextual_loss", x, x_hat)?;
    let numel = g.value(x)?.numel();
    let diff = g.sub(x, x_hat)?;
    let l1 = g.norm(NormKind::L1, diff)?;
    g.scale(l1, 1.0 / numel as f32)
}

/// Mean over the batch of `||z - z_hat||_2`.
pub fn encoder_loss(g: &mut Graph, z: Var, z_hat: Var) -> Result<Var> {
    same_shape(g, "encoder_loss", z, z_hat)?;
    mean_row_distance(g, z, z_hat)
}

/// `w_adv * adv + w_con * con + w_enc * enc`.
pub fn generator_objective(
    g: &mut Graph,
    adv: Var,
    con: Var,
    enc: Var,
    w: &LossWeights,
) -> Result<LossBundle> {
    w.validate()?;
    let a = g.scale(adv, w.adv)?;
    let c = g.scale(con, w.con)?;
    let e = g.scale(enc, w.enc)?;
    let ac = g.add(a, c)?;
    let total = g.add(ac, e)?;
    Ok(LossBundle {
        adv,
        con,
        enc,
        total,
    })
}

/// `bce(prob_real, 1) + bce(prob_fake, 0)`.
pub fn discriminator_objective(g: &mut Graph, prob_real: Var, prob_fake: Var) -> Result<Var> {
    let ones = Tensor::full(g.value(prob_real)?.shape(), 1.0);
    let zeros = Tensor::zeros(g.value(prob_fake)?.shape());
    let real = bce_loss(g, prob_real, &ones)?;
    let fake = bce_loss(g, prob_fake, &zeros)?;
    g.add(real, fake)
}

//! The four sub-networks: generator encoder `G_E`, generator decoder `G_D`,
//! second encoder `E` and discriminator `D`.
//!
//! All networks are fully convolutional DCGAN stacks of 4x4 kernels. An
//! encoder halves the spatial extent per stage down to 4x4 and then applies a
//! valid 4x4 convolution, so latents are carried as `N x d x 1 x 1` and
//! flattened to `N x d` at the model boundary.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::{
    activation, batch_norm2d, conv2d, conv_transpose2d, init_weights, Activation, BatchNormState,
    ConvGeometry, Mode, ParamKind, Parameter,
};
use crate::tensor::{Graph, Tensor, Var};

const KERNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperParams {
    pub image_size: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub base_features: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            latent_dim: 100,
            base_features: 64,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(Error::Contract(format!(
                "image_size must be a power of two >= 32, got {}",
                self.image_size
            )));
        }
        if self.channels == 0 || self.latent_dim == 0 || self.base_features == 0 {
            return Err(Error::Contract(
                "channels, latent_dim and base_features must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of stride-2 stages, `log2(image_size) - 2`.
    pub fn stages(&self) -> usize {
        self.image_size.trailing_zeros() as usize - 2
    }

    /// Channel widths of the strided pyramid, `base * 2^k`.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.stages())
            .map(|k| self.base_features << k)
            .collect()
    }

    pub fn image_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.channels, self.image_size, self.image_size]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvKind {
    Forward,
    Transpose,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: usize,
    beta: usize,
    state: BatchNormState,
}

#[derive(Debug, Clone)]
struct Layer {
    kind: ConvKind,
    weight: usize,
    bias: Option<usize>,
    geom: ConvGeometry,
    norm: Option<Norm>,
    act: Option<Activation>,
}

/// A chain of conv (or conv-transpose) stages with optional batch norm and
/// activation, owning its parameters.
#[derive(Debug)]
pub struct Network {
    name: String,
    params: Vec<Parameter>,
    layers: Vec<Layer>,
    /// Samples pushed through `forward*` since construction.
    forward_samples: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            params: self.params.clone(),
            layers: self.layers.clone(),
            forward_samples: AtomicU64::new(self.forward_samples.load(Ordering::Relaxed)),
        }
    }
}

/// Graph handles of one network's parameters, in `Network::params` order.
#[derive(Debug, Clone)]
pub struct Binding(pub Vec<Var>);

struct StageSpec {
    kind: ConvKind,
    in_ch: usize,
    out_ch: usize,
    geom: ConvGeometry,
    norm: bool,
    act: Option<Activation>,
}

impl Network {
    fn build(name: &str, stages: &[StageSpec]) -> Self {
        let mut params = Vec::new();
        let mut layers = Vec::new();
        for (i, s) in stages.iter().enumerate() {
            let wshape = match s.kind {
                ConvKind::Forward => [s.out_ch, s.in_ch, KERNEL, KERNEL],
                ConvKind::Transpose => [s.in_ch, s.out_ch, KERNEL, KERNEL],
            };
            let weight = params.len();
            params.push(Parameter::new(
                format!("{name}.{i}.weight"),
                ParamKind::ConvWeight,
                Tensor::zeros(&wshape),
            ));
            // a bias is redundant in front of batch norm
            let bias = (!s.norm).then(|| {
                params.push(Parameter::new(
                    format!("{name}.{i}.bias"),
                    ParamKind::Bias,
                    Tensor::zeros(&[s.out_ch]),
                ));
                params.len() - 1
            });
            let norm = s.norm.then(|| {
                params.push(Parameter::new(
                    format!("{name}.{i}.bn.gamma"),
                    ParamKind::NormScale,
                    Tensor::full(&[s.out_ch], 1.0),
                ));
                params.push(Parameter::new(
                    format!("{name}.{i}.bn.beta"),
                    ParamKind::NormShift,
                    Tensor::zeros(&[s.out_ch]),
                ));
                Norm {
                    gamma: params.len() - 2,
                    beta: params.len() - 1,
                    state: BatchNormState::new(s.out_ch),
                }
            });
            layers.push(Layer {
                kind: s.kind,
                weight,
                bias,
                geom: s.geom,
                norm,
                act: s.act,
            });
        }
        Self {
            name: name.to_string(),
            params,
            layers,
            forward_samples: AtomicU64::new(0),
        }
    }

    /// Strided encoder pyramid followed by a valid 4x4 conv to `out_dim`.
    fn encoder(name: &str, hp: &HyperParams, out_dim: usize, head: Option<Activation>) -> Self {
        let widths = hp.widths();
        let mut stages = Vec::new();
        let mut in_ch = hp.channels;
        for (i, &w) in widths.iter().enumerate() {
            stages.push(StageSpec {
                kind: ConvKind::Forward,
                in_ch,
                out_ch: w,
                geom: ConvGeometry::new(2, 1),
                norm: i > 0,
                act: Some(Activation::leaky()),
            });
            in_ch = w;
        }
        stages.push(StageSpec {
            kind: ConvKind::Forward,
            in_ch,
            out_ch: out_dim,
            geom: ConvGeometry::new(1, 0),
            norm: false,
            act: head,
        });
        Self::build(name, &stages)
    }

    /// Mirror of the encoder built from transposed convolutions.
    fn decoder(name: &str, hp: &HyperParams) -> Self {
        let widths = hp.widths();
        let top = *widths.last().expect("at least one stage");
        let mut stages = vec![StageSpec {
            kind: ConvKind::Transpose,
            in_ch: hp.latent_dim,
            out_ch: top,
            geom: ConvGeometry::new(1, 0),
            norm: true,
            act: Some(Activation::Relu),
        }];
        for pair in widths.windows(2).rev() {
            stages.push(StageSpec {
                kind: ConvKind::Transpose,
                in_ch: pair[1],
                out_ch: pair[0],
                geom: ConvGeometry::new(2, 1),
                norm: true,
                act: Some(Activation::Relu),
            });
        }
        stages.push(StageSpec {
            kind: ConvKind::Transpose,
            in_ch: widths[0],
            out_ch: hp.channels,
            geom: ConvGeometry::new(2, 1),
            norm: false,
            act: Some(Activation::Tanh),
        });
        Self::build(name, &stages)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn forward_samples(&self) -> u64 {
        self.forward_samples.load(Ordering::Relaxed)
    }

    /// Batch-norm states in layer order.
    pub fn norm_states(&self) -> Vec<&BatchNormState> {
        self.layers
            .iter()
            .filter_map(|l| l.norm.as_ref().map(|n| &n.state))
            .collect()
    }

    pub fn norm_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.norm.as_mut().map(|n| &mut n.state))
            .collect()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for s in self.norm_states_mut() {
            s.mode = mode;
        }
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        Binding(
            self.params
                .iter()
                .map(|p| g.leaf(p.value.clone(), trainable))
                .collect(),
        )
    }

    /// Gradients collected from `g` after backward, zero where none arrived.
    pub fn grads(&self, g: &Graph, binding: &Binding) -> Result<Vec<Tensor>> {
        binding.0.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }

    fn conv(&self, g: &mut Graph, b: &Binding, layer: &Layer, x: Var) -> Result<Var> {
        let bias = layer.bias.map(|i| b.0[i]);
        match layer.kind {
            ConvKind::Forward => conv2d(g, x, b.0[layer.weight], bias, layer.geom),
            ConvKind::Transpose => conv_transpose2d(g, x, b.0[layer.weight], bias, layer.geom),
        }
    }

    fn count(&self, g: &Graph, x: Var) -> Result<()> {
        let n = g.value(x)?.shape().first().copied().unwrap_or(1) as u64;
        self.forward_samples.fetch_add(n, Ordering::Relaxed);
        Ok(())
    }

    /// Runs every layer. Batch norm follows each state's mode and updates
    /// running statistics in train mode. Returns the final output and the
    /// output of layer `tap` when given.
    fn run(
        &mut self,
        g: &mut Graph,
        b: &Binding,
        x: Var,
        tap: Option<usize>,
    ) -> Result<(Var, Option<Var>)> {
        self.count(g, x)?;
        let mut h = x;
        let mut tapped = None;
        let mut layers = std::mem::take(&mut self.layers);
        let result = (|| {
            for (i, layer) in layers.iter_mut().enumerate() {
                h = self.conv(g, b, layer, h)?;
                if let Some(norm) = layer.norm.as_mut() {
                    h = batch_norm2d(g, h, b.0[norm.gamma], b.0[norm.beta], &mut norm.state)?;
                }
                if let Some(act) = layer.act {
                    h = activation(g, act, h)?;
                }
                if tap == Some(i) {
                    tapped = Some(h);
                }
            }
            Ok((h, tapped))
        })();
        self.layers = layers;
        result
    }

    /// Read-only pass with batch norm on running statistics regardless of mode.
    fn run_frozen(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: Var,
        tap: Option<usize>,
    ) -> Result<(Var, Option<Var>)> {
        self.count(g, x)?;
        let mut h = x;
        let mut tapped = None;
        for (i, layer) in self.layers.iter().enumerate() {
            h = self.conv(g, b, layer, h)?;
            if let Some(norm) = &layer.norm {
                let mut state = norm.state.clone();
                state.mode = Mode::Eval;
                h = batch_norm2d(g, h, b.0[norm.gamma], b.0[norm.beta], &mut state)?;
            }
            if let Some(act) = layer.act {
                h = activation(g, act, h)?;
            }
            if tap == Some(i) {
                tapped = Some(h);
            }
        }
        Ok((h, tapped))
    }

    pub fn forward(&mut self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        Ok(self.run(g, b, x, None)?.0)
    }

    pub fn forward_frozen(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        Ok(self.run_frozen(g, b, x, None)?.0)
    }
}

/// Bindings of all four networks in one graph.
#[derive(Debug, Clone)]
pub struct ModelBinding {
    pub g_encoder: Binding,
    pub g_decoder: Binding,
    pub encoder2: Binding,
}

/// Outputs of the generator path `z = G_E(x)`, `x_hat = G_D(z)`, `z_hat = E(x_hat)`.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// `N x d`
    pub z: Var,
    /// `N x c x H x W`
    pub x_hat: Var,
    /// `N x d`
    pub z_hat: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorOutput {
    /// Real/fake probability per sample, shape `[N]`.
    pub prob: Var,
    /// Feature map `f(x)` tapped after the last strided block.
    pub features: Var,
}

#[derive(Debug, Clone)]
pub struct GanomalyModel {
    pub hyper: HyperParams,
    pub g_encoder: Network,
    pub g_decoder: Network,
    pub encoder2: Network,
    pub discriminator: Network,
}

impl GanomalyModel {
    /// Builds all four networks and initializes them from `seed`.
    pub fn new(hyper: HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut model = Self {
            hyper,
            g_encoder: Network::encoder("g_encoder", &hyper, hyper.latent_dim, None),
            g_decoder: Network::decoder("g_decoder", &hyper),
            encoder2: Network::encoder("encoder2", &hyper, hyper.latent_dim, None),
            discriminator: Network::encoder("discriminator", &hyper, 1, Some(Activation::Sigmoid)),
        };
        let all = model
            .g_encoder
            .params
            .iter_mut()
            .chain(model.g_decoder.params.iter_mut())
            .chain(model.encoder2.params.iter_mut())
            .chain(model.discriminator.params.iter_mut());
        init_weights(all, seed);
        Ok(model)
    }

    pub fn networks(&self) -> [&Network; 4] {
        [
            &self.g_encoder,
            &self.g_decoder,
            &self.encoder2,
            &self.discriminator,
        ]
    }

    pub fn networks_mut(&mut self) -> [&mut Network; 4] {
        [
            &mut self.g_encoder,
            &mut self.g_decoder,
            &mut self.encoder2,
            &mut self.discriminator,
        ]
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for net in self.networks_mut() {
            net.set_mode(mode);
        }
    }

    pub fn bind_generator(&self, g: &mut Graph, trainable: bool) -> ModelBinding {
        ModelBinding {
            g_encoder: self.g_encoder.bind(g, trainable),
            g_decoder: self.g_decoder.bind(g, trainable),
            encoder2: self.encoder2.bind(g, trainable),
        }
    }

    /// Index of the discriminator layer whose output is `f(x)`.
    fn feature_tap(&self) -> usize {
        self.hyper.stages() - 1
    }

    pub fn check_input(&self, g: &Graph, x: Var) -> Result<usize> {
        let shape = g.value(x)?.shape();
        let n = shape.first().copied().unwrap_or(0);
        if shape != self.hyper.image_shape(n) {
            return Err(Error::Dimension(format!(
                "input shape {shape:?} does not match {}x{}x{} images",
                self.hyper.channels, self.hyper.image_size, self.hyper.image_size
            )));
        }
        Ok(n)
    }

    fn flatten_latent(&self, g: &mut Graph, z: Var, n: usize) -> Result<Var> {
        g.reshape(z, &[n, self.hyper.latent_dim])
    }

    fn unflatten_latent(&self, g: &mut Graph, z: Var, n: usize) -> Result<Var> {
        g.reshape(z, &[n, self.hyper.latent_dim, 1, 1])
    }

    pub fn generator_forward(
        &mut self,
        g: &mut Graph,
        b: &ModelBinding,
        x: Var,
    ) -> Result<GeneratorOutput> {
        let n = self.check_input(g, x)?;
        let z4 = self.g_encoder.forward(g, &b.g_encoder, x)?;
        let x_hat = self.g_decoder.forward(g, &b.g_decoder, z4)?;
        let z_hat4 = self.encoder2.forward(g, &b.encoder2, x_hat)?;
        Ok(GeneratorOutput {
            z: self.flatten_latent(g, z4, n)?,
            x_hat,
            z_hat: self.flatten_latent(g, z_hat4, n)?,
        })
    }

    /// Generator path on running batch-norm statistics; leaves the model untouched.
    pub fn generator_forward_frozen(
        &self,
        g: &mut Graph,
        b: &ModelBinding,
        x: Var,
    ) -> Result<GeneratorOutput> {
        let n = self.check_input(g, x)?;
        let z4 = self.g_encoder.forward_frozen(g, &b.g_encoder, x)?;
        let x_hat = self.g_decoder.forward_frozen(g, &b.g_decoder, z4)?;
        let z_hat4 = self.encoder2.forward_frozen(g, &b.encoder2, x_hat)?;
        Ok(GeneratorOutput {
            z: self.flatten_latent(g, z4, n)?,
            x_hat,
            z_hat: self.flatten_latent(g, z_hat4, n)?,
        })
    }

    /// Decodes an `N x d` latent batch.
    pub fn decode_frozen(&self, g: &mut Graph, b: &Binding, z: Var) -> Result<Var> {
        let n = g.value(z)?.shape()[0];
        let z4 = self.unflatten_latent(g, z, n)?;
        self.g_decoder.forward_frozen(g, b, z4)
    }

    pub fn discriminator_forward(
        &mut self,
        g: &mut Graph,
        b: &Binding,
        x: Var,
    ) -> Result<DiscriminatorOutput> {
        let n = self.check_input(g, x)?;
        let tap = self.feature_tap();
        let (out, features) = self.discriminator.run(g, b, x, Some(tap))?;
        Ok(DiscriminatorOutput {
            prob: g.reshape(out, &[n])?,
            features: features.expect("tap index is within the layer chain"),
        })
    }

    pub fn discriminator_forward_frozen(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: Var,
    ) -> Result<DiscriminatorOutput> {
        let n = self.check_input(g, x)?;
        let (out, features) = self
            .discriminator
            .run_frozen(g, b, x, Some(self.feature_tap()))?;
        Ok(DiscriminatorOutput {
            prob: g.reshape(out, &[n])?,
            features: features.expect("tap index is within the layer chain"),
        })
    }
}

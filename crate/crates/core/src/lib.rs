//! Semi-supervised anomaly detection with an encoder-decoder-encoder GAN.
//!
//! A generator `G_D(G_E(x))` reconstructs images of the normal class, a second
//! encoder `E` maps reconstructions back to latent space, and a discriminator
//! supplies feature-matching and real/fake signals during training. At test
//! time the distance between `G_E(x)` and `E(G(x))` is the anomaly score.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, NormKind, Tensor, Var};

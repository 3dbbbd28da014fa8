//! Multi-view variational autoencoders for echocardiography-style video:
//! per-view VAE pretraining (independent or with a mixture-of-posteriors
//! prior), classifier fine-tuning on the learned latents, preprocessing and
//! augmentation, a synthetic multi-view benchmark, and the evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod networks;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod training;

pub use error::{Error, ErrorKind, Result};

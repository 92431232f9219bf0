//! Diffusion-GAN enhanced unsupervised phoneme recognition at desk scale.

pub mod adversarial;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod numerics;
pub mod phoneme_lm;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

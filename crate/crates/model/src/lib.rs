//! Learned components: the virtual-microphone generator, its discriminator,
//! a reference multichannel enhancement model, differentiable beamforming
//! and the training loops tying them together.

mod error;

pub mod config;
pub mod discriminator;
pub mod generator;
pub mod loss;
pub mod mcse;
pub mod pipeline;
mod layers;
pub mod signal;
pub mod train;

pub use error::{ModelError, Result};

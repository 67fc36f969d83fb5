//! Signal-processing core: STFT, shoebox room simulation, scene synthesis,
//! block-wise beamforming and speech quality metrics.

mod error;

pub mod array;
pub mod beamformer;
pub mod fft;
pub mod manifest;
pub mod metrics;
pub mod rng;
pub mod room;
pub mod scene;
pub mod sources;
pub mod stft;
pub mod wav;

pub use error::{CoreError, Result};
pub use stft::{istft, sqrt_hann, stft, Spectrogram, StftConfig};

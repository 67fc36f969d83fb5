//! Compact reference multichannel enhancement model. It has an encoder
//! (conv to `H` channels), a separator of gated residual conv blocks, and a
//! sigmoid mask head applied to the reference channel. The encoder and the
//! separator-decoder are exposed separately so VM features can be fused
//! between them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmbeam_tensor::{Bound, Conv2d, ParamStore, Var};

use crate::config::McSeConfig;
use crate::error::{shape, ModelError, Result};
use crate::layers::{add_conv, conv, rms_normalize};
use crate::signal::{apply_mask, im, re, select_channels};

/// Floor inside the log-power features, relative to unit RMS.
const LOG_FLOOR: f64 = 1e-6;
/// Power floor that keeps cross-spectrum features smooth in silent bins.
const PHASE_FLOOR: f64 = 1e-3;

/// Encoder input maps per complex channel count: real and imaginary parts,
/// log power, and two cross-spectrum maps per non-reference channel.
fn feature_maps(channels: usize) -> usize {
    5 * channels - 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSe {
    pub cfg: McSeConfig,
    /// Complex input channels.
    pub channels: usize,
}

impl McSe {
    pub fn new(cfg: McSeConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(ModelError::Config("mcse needs at least one input channel".into()));
        }
        Ok(Self { cfg, channels })
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let (h, k) = (self.cfg.hidden, self.cfg.kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        add_conv(&mut s, &mut rng, "enc", h, feature_maps(self.channels), k, 1);
        for i in 0..self.cfg.blocks {
            add_conv(&mut s, &mut rng, &format!("b{i}.a"), h, h, k, 1);
            add_conv(&mut s, &mut rng, &format!("b{i}.g"), h, h, k, 1);
        }
        add_conv(&mut s, &mut rng, "mask", 1, h, k, 1);
        s
    }

    fn same(&self) -> Conv2d {
        Conv2d::same(self.cfg.kernel)
    }

    /// Embedding `[H, T, F]` of a `[2M, T, F]` spectrum. The encoder sees the
    /// RMS-normalized real and imaginary parts, per-channel log power and
    /// the normalized cross-spectra against channel 0.
    pub fn encode<'t>(&self, p: &Bound<'t>, spec: Var<'t>) -> Result<Var<'t>> {
        let sh = spec.shape();
        if sh.len() != 3 || sh[0] != 2 * self.channels {
            return Err(shape("mcse", format!("expected [{}, T, F], got {sh:?}", 2 * self.channels)));
        }
        let (normalized, _) = rms_normalize(spec);
        let (a, b) = (re(normalized), im(normalized));
        let power = a.square() + b.square();
        let mut parts = vec![normalized, power.add_scalar(LOG_FLOOR).ln()];
        let m = self.channels;
        if m > 1 {
            // normalized cross-spectra of every channel against channel 0
            let (t, f) = (sh[1], sh[2]);
            let rows = [m - 1, t, f];
            let p0 = a.slice(0, 0, 1).expand(&rows);
            let q0 = b.slice(0, 0, 1).expand(&rows);
            let (pc, qc) = (a.slice(0, 1, m), b.slice(0, 1, m));
            let e0 = power.slice(0, 0, 1).expand(&rows).add_scalar(PHASE_FLOOR);
            let ec = power.slice(0, 1, m).add_scalar(PHASE_FLOOR);
            let norm = (e0 * ec).sqrt();
            parts.push((pc * p0 + qc * q0).div(norm));
            parts.push((qc * p0 - pc * q0).div(norm));
        }
        let input = Var::concat(&parts, 0);
        Ok(conv(p, "enc", input, self.same()).mish())
    }

    /// Separator and decoder: an `[H, T, F]` embedding to a `[1, T, F]` mask in `[0, 1]`.
    pub fn decode<'t>(&self, p: &Bound<'t>, embedding: Var<'t>) -> Result<Var<'t>> {
        if embedding.shape().first() != Some(&self.cfg.hidden) {
            return Err(shape(
                "mcse",
                format!("embedding {:?} does not have {} channels", embedding.shape(), self.cfg.hidden),
            ));
        }
        let mut h = embedding;
        for i in 0..self.cfg.blocks {
            let a = conv(p, &format!("b{i}.a"), h, self.same()).mish();
            let g = conv(p, &format!("b{i}.g"), h, self.same()).sigmoid();
            h = h + a * g;
        }
        Ok(conv(p, "mask", h, self.same()).sigmoid())
    }

    pub fn mask<'t>(&self, p: &Bound<'t>, spec: Var<'t>) -> Result<Var<'t>> {
        let e = self.encode(p, spec)?;
        self.decode(p, e)
    }

    /// Masked channel `ref_channel` of `spec`, `[2, T, F]`.
    pub fn enhance<'t>(&self, p: &Bound<'t>, spec: Var<'t>, ref_channel: usize) -> Result<Var<'t>> {
        let m = self.mask(p, spec)?;
        Ok(apply_mask(select_channels(spec, &[ref_channel]), m))
    }
}

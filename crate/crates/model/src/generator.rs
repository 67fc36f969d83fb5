//! Virtual-microphone generator. The real-microphone spectrum enters as a
//! `[2·M_r, T, F]` map, is lifted to `D_1` channels, passes through `N_b`
//! stages of (up block, down block, channel allocation) and is read out by
//! a signal head (`2·M_v` channels) and a feature head (`H` channels).
//!
//! Up and down blocks are back-projection residual units acting on the
//! channel dimension only; the time-frequency grid is never resampled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmbeam_tensor::{Bound, Conv2d, ParamStore, Tensor, Var};

use crate::config::GeneratorConfig;
use crate::error::{shape, Result};
use crate::layers::{add_conv, add_linear, conv, global_pool, linear, rms_normalize};

/// Generator outputs for one clip.
#[derive(Clone, Copy)]
pub struct VmEstimate<'t> {
    /// Complex VM spectra `[2·M_v, T, F]`, real parts first.
    pub signals: Var<'t>,
    /// Features `[H, T, F]`.
    pub features: Var<'t>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub cfg: GeneratorConfig,
}

fn dca_hidden(d: usize) -> usize {
    (d / 4).max(4)
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// Fresh parameters; identical seeds give identical stores.
    pub fn init(&self, seed: u64) -> ParamStore {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let k = c.kernel;
        add_conv(&mut s, &mut rng, "init", c.dims[0], 2 * c.real_channels, k, 1);
        for i in 0..c.n_blocks() {
            let (d, out) = (c.dims[i], c.stage_out(i));
            for (block, groups) in [("up", 1), ("down", c.groups)] {
                add_conv(&mut s, &mut rng, &format!("s{i}.{block}.p"), d, d, k, groups);
                add_conv(&mut s, &mut rng, &format!("s{i}.{block}.q"), d, d, k, groups);
                if c.enable_selection {
                    add_conv(&mut s, &mut rng, &format!("s{i}.{block}.sa"), d, d, 1, 1);
                    add_conv(&mut s, &mut rng, &format!("s{i}.{block}.sb"), d, d, 1, 1);
                }
            }
            if c.enable_dca {
                let h = dca_hidden(d);
                add_linear(&mut s, &mut rng, &format!("s{i}.dca.fc1"), d, h);
                add_linear(&mut s, &mut rng, &format!("s{i}.dca.fc2"), h, c.dca_slots);
                let bound = 1.0 / (d as f64).sqrt();
                s.insert(format!("s{i}.dca.kernels"), vmbeam_tensor::uniform(&mut rng, vec![c.dca_slots, out * d], bound));
                s.insert(format!("s{i}.dca.bias"), Tensor::zeros(vec![c.dca_slots, out]));
            } else if out != d {
                add_conv(&mut s, &mut rng, &format!("s{i}.reduce"), out, d, 1, 1);
            }
        }
        let last = c.stage_out(c.n_blocks() - 1);
        add_conv(&mut s, &mut rng, "head_sig", 2 * c.virtual_channels, last, k, 1);
        add_conv(&mut s, &mut rng, "head_feat", c.feature_dim, last, k, 1);
        s
    }

    fn same(&self, groups: usize) -> Conv2d {
        Conv2d::same(self.cfg.kernel).with_groups(groups)
    }

    /// One back-projection unit. Up blocks add the operands, down blocks
    /// subtract them; with selection enabled each operand is gated first.
    pub fn block<'t>(&self, p: &Bound<'t>, prefix: &str, x: Var<'t>, down: bool) -> Var<'t> {
        let geom = self.same(if down { self.cfg.groups } else { 1 });
        let proj = conv(p, &format!("{prefix}.p"), x, geom).mish();
        let back = conv(p, &format!("{prefix}.q"), proj, geom).mish();
        let (a, b) = if self.cfg.enable_selection {
            (
                selection(p, &format!("{prefix}.sa"), x),
                selection(p, &format!("{prefix}.sb"), back),
            )
        } else {
            (x, back)
        };
        if down {
            a - b
        } else {
            a + b
        }
    }

    /// Channel reduction of stage `i`: attention-mixed pointwise kernels, or
    /// a static pointwise conv (identity for equal widths) when disabled.
    pub fn allocate<'t>(&self, p: &Bound<'t>, i: usize, x: Var<'t>) -> Var<'t> {
        let (d, out) = (self.cfg.dims[i], self.cfg.stage_out(i));
        if self.cfg.enable_dca {
            let attn = dca_attention(p, &format!("s{i}.dca"), x);
            let kernel = attn.matmul(p.var(&format!("s{i}.dca.kernels"))).reshape(&[out, d, 1, 1]);
            let bias = attn.matmul(p.var(&format!("s{i}.dca.bias"))).reshape(&[out]);
            x.conv2d(kernel, Some(bias), Conv2d::default())
        } else if out != d {
            conv(p, &format!("s{i}.reduce"), x, Conv2d::default())
        } else {
            x
        }
    }

    /// Up block, down block and channel allocation of stage `i`.
    pub fn stage<'t>(&self, p: &Bound<'t>, i: usize, x: Var<'t>) -> Var<'t> {
        let u = self.block(p, &format!("s{i}.up"), x, false);
        let d = self.block(p, &format!("s{i}.down"), u, true);
        self.allocate(p, i, d)
    }

    /// Runs the network on a `[2·M_r, T, F]` spectrum. The input is divided by
    /// its RMS and the signal head is multiplied back, so the map from RM to
    /// VM spectra commutes with gain (up to a tiny floor for silent input).
    pub fn forward<'t>(&self, p: &Bound<'t>, r: Var<'t>) -> Result<VmEstimate<'t>> {
        let sh = r.shape();
        if sh.len() != 3 || sh[0] != 2 * self.cfg.real_channels {
            return Err(shape(
                "generator",
                format!("expected [{}, T, F], got {sh:?}", 2 * self.cfg.real_channels),
            ));
        }
        let (normalized, scale) = rms_normalize(r);
        let mut h = conv(p, "init", normalized, self.same(1)).mish();
        for i in 0..self.cfg.n_blocks() {
            h = self.stage(p, i, h);
        }
        let head = conv(p, "head_sig", h, self.same(1));
        let signals = head.mul(scale.expand(&head.shape()));
        let features = conv(p, "head_feat", h, self.same(1));
        Ok(VmEstimate { signals, features })
    }
}

/// `x ⊙ mish(pointwise(x))`.
pub fn selection<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    x * conv(p, name, x, Conv2d::default()).mish()
}

/// Slot weights `[1, K]`: global pool, two-layer MLP, softmax.
pub fn dca_attention<'t>(p: &Bound<'t>, prefix: &str, x: Var<'t>) -> Var<'t> {
    let h = linear(p, &format!("{prefix}.fc1"), global_pool(x)).mish();
    linear(p, &format!("{prefix}.fc2"), h).softmax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmbeam_tensor::Tape;

    #[test]
    fn shapes_follow_config() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let params = g.init(1);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let r = tape.constant(Tensor::from_fn(vec![4, 5, 7], |i| (i as f64 * 0.3).sin()));
        let out = g.forward(&p, r).unwrap();
        assert_eq!(out.signals.shape(), vec![8, 5, 7]);
        assert_eq!(out.features.shape(), vec![16, 5, 7]);
        assert!(out.signals.value().is_finite());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let params = g.init(1);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        assert!(g.forward(&p, tape.constant(Tensor::zeros(vec![6, 3, 3]))).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        assert_eq!(g.init(3), g.init(3));
        assert_ne!(g.init(3), g.init(4));
    }
}

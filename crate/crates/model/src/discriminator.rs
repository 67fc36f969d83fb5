//! Magnitude-domain discriminator: four strided 3x3 convolutions with leaky
//! ReLU, global average pooling and a linear read-out to one score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmbeam_tensor::{Bound, Conv2d, ParamStore, Var};

use crate::error::{shape, Result};
use crate::layers::{add_conv, add_linear, conv, global_pool, linear, rms_scale};

pub const DISC_WIDTHS: [usize; 4] = [8, 16, 16, 16];
const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    /// Channels per magnitude map (the number of virtual microphones).
    pub channels: usize,
}

impl Discriminator {
    pub fn new(channels: usize) -> Self {
        Self { channels }
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mut cin = 2 * self.channels;
        for (i, &w) in DISC_WIDTHS.iter().enumerate() {
            add_conv(&mut s, &mut rng, &format!("c{i}"), w, cin, 3, 1);
            cin = w;
        }
        add_linear(&mut s, &mut rng, "out", cin, 1);
        s
    }

    /// Scores the pair `(reference, estimate)` of `[M, T, F]` magnitudes.
    /// Both maps are divided by the RMS of the reference, so the score does
    /// not depend on the overall level.
    pub fn forward<'t>(&self, p: &Bound<'t>, reference: Var<'t>, estimate: Var<'t>) -> Result<Var<'t>> {
        let sh = reference.shape();
        if sh.len() != 3 || sh[0] != self.channels || estimate.shape() != sh {
            return Err(shape(
                "discriminator",
                format!("expected two [{}, T, F] maps, got {sh:?} and {:?}", self.channels, estimate.shape()),
            ));
        }
        let scale = reference.with_value(rms_scale);
        let mut h = Var::concat(&[reference, estimate], 0).scale(1.0 / scale);
        let geom = Conv2d {
            stride: 2,
            padding: 1,
            groups: 1,
        };
        for i in 0..DISC_WIDTHS.len() {
            h = conv(p, &format!("c{i}"), h, geom).leaky_relu(SLOPE);
        }
        Ok(linear(p, "out", global_pool(h)).reshape(&[]))
    }
}

/// Least-squares adversarial terms for one scored pair.
pub struct AdversarialTerms<'t> {
    /// `(D(v, v̂) - 1)²`, differentiable through the estimate.
    pub generator: Var<'t>,
    /// `(D(v, v) - 1)² + D(v, sg(v̂))²`.
    pub discriminator: Var<'t>,
}

/// Builds both least-squares terms. The discriminator term sees a detached
/// copy of the estimate so it never pushes gradients into the generator.
pub fn adversarial_terms<'t>(
    disc: &Discriminator,
    p: &Bound<'t>,
    reference: Var<'t>,
    estimate: Var<'t>,
) -> Result<AdversarialTerms<'t>> {
    let tape = reference.tape();
    let fake = disc.forward(p, reference, estimate)?;
    let real = disc.forward(p, reference, reference)?;
    let detached = disc.forward(p, reference, tape.constant(estimate.value()))?;
    Ok(AdversarialTerms {
        generator: fake.add_scalar(-1.0).square(),
        discriminator: real.add_scalar(-1.0).square() + detached.square(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmbeam_tensor::{Tape, Tensor};

    #[test]
    fn score_is_a_scalar() {
        let d = Discriminator::new(2);
        let params = d.init(0);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let a = tape.constant(Tensor::from_fn(vec![2, 9, 17], |i| (i as f64 * 0.1).cos().abs()));
        let s = d.forward(&p, a, a).unwrap();
        assert!(s.shape().is_empty());
        assert!(d.forward(&p, a, a.slice(0, 0, 1)).is_err());
    }
}

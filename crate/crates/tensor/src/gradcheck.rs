use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of `f` at `input` against central differences.
///
/// Non-scalar outputs are contracted with fixed pseudo-random weights. Returns
/// `max_i |analytic_i - cd_i| / max(|analytic_i|, |cd_i|, 1e-8)`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    if eps <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            msg: "eps must be positive".into(),
        });
    }
    let projection = {
        let tape = Tape::new();
        let out = f(&tape, tape.constant(input.clone()));
        let shape = out.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    };
    let scalar_of = |x: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let out = f(&tape, tape.constant(x)).value();
        out.check_finite("grad_check output")?;
        Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let tape = Tape::new();
    let x = tape.param(input.clone());
    let out = f(&tape, x);
    let loss = (out * tape.constant(projection.clone())).sum();
    let analytic = tape.backward(loss)?.wrt(x);
    analytic.check_finite("analytic gradient")?;

    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let cd = (scalar_of(plus)? - scalar_of(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

//! Parameter layout and forward helpers shared by the networks.

use rand_chacha::ChaCha8Rng;
use vmbeam_tensor::{fan_in_uniform, uniform, Bound, Conv2d, ParamStore, Tensor, Var};

/// Adds `{name}.w` `[cout, cin/groups, k, k]` and a zero `{name}.b`.
pub(crate) fn add_conv(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cout: usize, cin: usize, k: usize, groups: usize) {
    store.insert(format!("{name}.w"), fan_in_uniform(rng, vec![cout, cin / groups, k, k]));
    store.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
}

/// Adds `{name}.w` `[din, dout]` and a zero `{name}.b` `[1, dout]`.
pub(crate) fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) {
    store.insert(format!("{name}.w"), uniform(rng, vec![din, dout], 1.0 / (din as f64).sqrt()));
    store.insert(format!("{name}.b"), Tensor::zeros(vec![1, dout]));
}

pub(crate) fn conv<'t>(p: &Bound<'t>, name: &str, x: Var<'t>, geom: Conv2d) -> Var<'t> {
    x.conv2d(p.var(&format!("{name}.w")), Some(p.var(&format!("{name}.b"))), geom)
}

/// `[1, din] -> [1, dout]`.
pub(crate) fn linear<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    x.matmul(p.var(&format!("{name}.w"))) + p.var(&format!("{name}.b"))
}

/// Mean over every axis but the first: `[C, H, W] -> [1, C]`.
pub(crate) fn global_pool(x: Var<'_>) -> Var<'_> {
    let sh = x.shape();
    let plane = sh[1] * sh[2];
    x.reshape(&[sh[0], plane]).sum_axis(1).scale(1.0 / plane as f64).reshape(&[1, sh[0]])
}

/// Keeps the normalizing RMS positive for an all-zero input.
const RMS_FLOOR: f64 = 1e-24;

/// Divides `x` by its (differentiable) RMS; returns the normalized tensor
/// and the RMS as a rank-0 variable.
pub(crate) fn rms_normalize(x: Var<'_>) -> (Var<'_>, Var<'_>) {
    let shape = x.shape();
    let s = x.square().mean().add_scalar(RMS_FLOOR).sqrt();
    (x.div(s.expand(&shape)), s)
}

/// Root-mean-square of a constant tensor, or 1 for an all-zero input.
pub(crate) fn rms_scale(t: &Tensor) -> f64 {
    let s = (t.sq_norm() / t.len().max(1) as f64).sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

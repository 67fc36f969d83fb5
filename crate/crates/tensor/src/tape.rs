//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends an immutable node holding its value,
//! its parent ids and (when any parent needs a gradient) a closure that maps
//! the output gradient to parent gradients. [`Tape::backward`] walks the tape
//! in reverse insertion order, which is a valid topological order because a
//! node can only reference nodes created before it.

use std::cell::RefCell;
use std::ops;

use crate::error::{Result, TensorError};
use crate::tensor::{numel, strides, Tensor};

/// Maps `(grad_out, parent_values, out_value)` to one optional gradient per parent.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation computed outside this module.
    pub fn custom<'t>(&'t self, parents: &[Var<'t>], value: Tensor, backward: BackwardFn) -> Var<'t> {
        let ids: Vec<usize> = parents
            .iter()
            .map(|p| {
                assert!(std::ptr::eq(p.tape, self), "var from a different tape");
                p.id
            })
            .collect();
        self.push(value, ids, backward)
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: BackwardFn) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from a scalar `loss` to every tracked leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor> = node
                .parents
                .iter()
                .map(|&p| {
                    assert!(p < id, "graph cycle: node {id} references {p}");
                    &nodes[p].value
                })
                .collect();
            let pg = backward(&g, &parent_values, &node.value);
            debug_assert_eq!(pg.len(), node.parents.len());
            for (&p, pgrad) in node.parents.iter().zip(pg) {
                let Some(pgrad) = pgrad else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pgrad.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pgrad),
                    slot @ None => *slot = Some(pgrad),
                }
            }
        }
        // Only leaves keep their gradients.
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.parents.is_empty() {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) {
    if a.shape() != b.shape() {
        panic!(
            "{}",
            TensorError::ShapeMismatch {
                op,
                expected: a.shape().to_vec(),
                got: b.shape().to_vec(),
            }
        );
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(softplus(x))` from a single exponential: with `n = e^x (e^x + 2)`
/// it equals `n / (n + 2)`. Saturated to 1 above 20 to avoid overflow.
fn tanh_softplus(x: f64) -> (f64, f64) {
    if x > 20.0 {
        return (1.0, 1.0);
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    (n / (n + 2.0), e / (1.0 + e))
}

/// `x * tanh(softplus(x))`.
pub fn mish_scalar(x: f64) -> f64 {
    x * tanh_softplus(x).0
}

fn mish_grad(x: f64) -> f64 {
    let (t, sig) = tanh_softplus(x);
    t + x * (1.0 - t * t) * sig
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.with_value(|t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn item(&self) -> f64 {
        self.with_value(|t| t.item())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let value = self.with_value(|x| x.map(&f));
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, p, y| {
                let x = p[0];
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(y.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(x.shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = self.with_value(|a| {
            other.with_value(|b| {
                same_shape("add", a, b);
                a.zip_map(b, |x, y| x + y)
            })
        });
        self.tape.push(
            value,
            vec![self.id, other.id],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = self.with_value(|a| {
            other.with_value(|b| {
                same_shape("sub", a, b);
                a.zip_map(b, |x, y| x - y)
            })
        });
        self.tape.push(
            value,
            vec![self.id, other.id],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = self.with_value(|a| {
            other.with_value(|b| {
                same_shape("mul", a, b);
                a.zip_map(b, |x, y| x * y)
            })
        });
        self.tape.push(
            value,
            vec![self.id, other.id],
            Box::new(|g, p, _| {
                vec![
                    Some(g.zip_map(p[1], |g, b| g * b)),
                    Some(g.zip_map(p[0], |g, a| g * a)),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = self.with_value(|a| {
            other.with_value(|b| {
                same_shape("div", a, b);
                a.zip_map(b, |x, y| x / y)
            })
        });
        self.tape.push(
            value,
            vec![self.id, other.id],
            Box::new(|g, p, y| {
                let ga = g.zip_map(p[1], |g, b| g / b);
                let t = g.zip_map(y, |g, y| g * y);
                let gb = t.zip_map(p[1], |t, b| -t / b);
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(|x| x + c, |_, _| 1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// `max(x, 0) + log1p(exp(-|x|))`.
    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn mish(self) -> Var<'t> {
        self.unary(mish_scalar, |x, _| mish_grad(x))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    /// `min(x, c)`; the gradient is zero where the clamp is active.
    pub fn clamp_max(self, c: f64) -> Var<'t> {
        self.unary(move |x| x.min(c), move |x, _| if x < c { 1.0 } else { 0.0 })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let (value, shape) = self.with_value(|x| (Tensor::scalar(x.sum()), x.shape().to_vec()));
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(|x| x.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let in_shape = self.shape();
        assert!(axis < in_shape.len(), "sum_axis: axis {axis} out of range");
        let outer: usize = in_shape[..axis].iter().product();
        let n = in_shape[axis];
        let inner: usize = in_shape[axis + 1..].iter().product();
        let mut out_shape = in_shape.clone();
        out_shape.remove(axis);
        let value = self.with_value(|x| {
            let d = x.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            Tensor::new(out_shape, out).unwrap()
        });
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut out = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        out[(o * n + k) * inner..(o * n + k + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::new(in_shape.clone(), out).unwrap())]
            }),
        )
    }

    /// Broadcasts to `shape` following right-aligned broadcasting rules.
    pub fn expand(self, shape: &[usize]) -> Var<'t> {
        let in_shape = self.shape();
        assert!(in_shape.len() <= shape.len(), "expand: rank {:?} -> {:?}", in_shape, shape);
        let pad = shape.len() - in_shape.len();
        let mut padded = vec![1; pad];
        padded.extend_from_slice(&in_shape);
        for (a, b) in padded.iter().zip(shape) {
            assert!(*a == *b || *a == 1, "expand: cannot broadcast {:?} to {:?}", in_shape, shape);
        }
        let in_strides = strides(&padded);
        let bstrides: Vec<usize> = padded
            .iter()
            .zip(&in_strides)
            .map(|(&d, &s)| if d == 1 { 0 } else { s })
            .collect();
        let out_shape = shape.to_vec();
        let total = numel(&out_shape);
        let index_map: Vec<usize> = {
            let mut map = Vec::with_capacity(total);
            let mut idx = vec![0usize; out_shape.len()];
            for _ in 0..total {
                map.push(idx.iter().zip(&bstrides).map(|(i, s)| i * s).sum());
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            map
        };
        let value = self.with_value(|x| {
            let d = x.data();
            Tensor::new(out_shape.clone(), index_map.iter().map(|&i| d[i]).collect()).unwrap()
        });
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; numel(&in_shape)];
                for (gv, &i) in g.data().iter().zip(&index_map) {
                    out[i] += gv;
                }
                vec![Some(Tensor::new(in_shape.clone(), out).unwrap())]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let in_shape = self.shape();
        let value = self.with_value(|x| x.clone().reshape(shape.to_vec())).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| vec![Some(g.clone().reshape(in_shape.clone()).unwrap())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Var<'t> {
        let in_shape = self.shape();
        assert_eq!(perm.len(), in_shape.len(), "permute: rank mismatch");
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            assert!(p < perm.len() && !seen[p], "permute: invalid permutation {perm:?}");
            seen[p] = true;
        }
        let map = permute_map(&in_shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let value = self.with_value(|x| {
            let d = x.data();
            Tensor::new(out_shape, map.iter().map(|&i| d[i]).collect()).unwrap()
        });
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; map.len()];
                for (gv, &i) in g.data().iter().zip(&map) {
                    out[i] = *gv;
                }
                vec![Some(Tensor::new(in_shape.clone(), out).unwrap())]
            }),
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Var<'t> {
        let in_shape = self.shape();
        assert!(axis < in_shape.len() && start <= end && end <= in_shape[axis], "slice: bad range");
        let outer: usize = in_shape[..axis].iter().product();
        let n = in_shape[axis];
        let inner: usize = in_shape[axis + 1..].iter().product();
        let m = end - start;
        let mut out_shape = in_shape.clone();
        out_shape[axis] = m;
        let value = self.with_value(|x| {
            let d = x.data();
            let mut out = Vec::with_capacity(outer * m * inner);
            for o in 0..outer {
                out.extend_from_slice(&d[(o * n + start) * inner..(o * n + end) * inner]);
            }
            Tensor::new(out_shape, out).unwrap()
        });
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut out = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    out[(o * n + start) * inner..(o * n + end) * inner]
                        .copy_from_slice(&gd[o * m * inner..(o + 1) * m * inner]);
                }
                vec![Some(Tensor::new(in_shape.clone(), out).unwrap())]
            }),
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(vars: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!vars.is_empty(), "concat of nothing");
        let tape = vars[0].tape;
        let shapes: Vec<Vec<usize>> = vars.iter().map(|v| v.shape()).collect();
        let base = &shapes[0];
        for s in &shapes {
            assert_eq!(s.len(), base.len(), "concat: rank mismatch");
            for d in 0..s.len() {
                assert!(d == axis || s[d] == base[d], "concat: {:?} vs {:?}", s, base);
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let sizes: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let nodes = tape.nodes.borrow();
            for o in 0..outer {
                for (v, &n) in vars.iter().zip(&sizes) {
                    let d = nodes[v.id].value.data();
                    out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
                }
            }
        }
        let value = Tensor::new(out_shape, out).unwrap();
        let ids = vars.iter().map(|v| v.id).collect();
        tape.push(
            value,
            ids,
            Box::new(move |g, p, _| {
                let gd = g.data();
                let mut parts: Vec<Vec<f64>> = sizes.iter().map(|n| Vec::with_capacity(outer * n * inner)).collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (part, &n) in parts.iter_mut().zip(&sizes) {
                        part.extend_from_slice(&gd[off..off + n * inner]);
                        off += n * inner;
                    }
                }
                parts
                    .into_iter()
                    .zip(p)
                    .map(|(d, pv)| Some(Tensor::new(pv.shape(), d).unwrap()))
                    .collect()
            }),
        )
    }

    /// `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.shape(), other.shape());
        assert!(a.len() == 2 && b.len() == 2 && a[1] == b[0], "matmul: {:?} x {:?}", a, b);
        let (n, k, m) = (a[0], a[1], b[1]);
        self.reshape(&[1, n, k]).bmm(other.reshape(&[1, k, m])).reshape(&[n, m])
    }

    /// Batched matrix product `[B,n,k] x [B,k,m] -> [B,n,m]`.
    pub fn bmm(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let (a, b) = (self.shape(), other.shape());
        assert!(
            a.len() == 3 && b.len() == 3 && a[0] == b[0] && a[2] == b[1],
            "bmm: {:?} x {:?}",
            a,
            b
        );
        let (bs, n, k, m) = (a[0], a[1], a[2], b[2]);
        let value = self.with_value(|x| {
            other.with_value(|y| {
                Tensor::new(vec![bs, n, m], bmm_raw(x.data(), y.data(), bs, n, k, m, false, false)).unwrap()
            })
        });
        self.tape.push(
            value,
            vec![self.id, other.id],
            Box::new(move |g, p, _| {
                // dA = G B^T, dB = A^T G
                let ga = bmm_raw(g.data(), p[1].data(), bs, n, m, k, false, true);
                let gb = bmm_raw(p[0].data(), g.data(), bs, k, n, m, true, false);
                vec![
                    Some(Tensor::new(vec![bs, n, k], ga).unwrap()),
                    Some(Tensor::new(vec![bs, k, m], gb).unwrap()),
                ]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let shape = self.shape();
        let n = *shape.last().expect("softmax of a scalar");
        let value = self.with_value(|x| {
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(n) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            Tensor::new(shape.clone(), out).unwrap()
        });
        self.tape.push(
            value,
            vec![self.id],
            Box::new(move |g, _, y| {
                let mut out = vec![0.0; y.len()];
                for ((o, gr), yr) in out.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(Tensor::new(y.shape(), out).unwrap())]
            }),
        )
    }
}

/// For each output linear index of the permuted tensor, the input linear index.
fn permute_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(in_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Batched product of `a` (`[B,n,k]`, or `[B,k,n]` if `ta`) and `b`
/// (`[B,k,m]`, or `[B,m,k]` if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm_raw(
    a: &[f64],
    b: &[f64],
    bs: usize,
    n: usize,
    k: usize,
    m: usize,
    ta: bool,
    tb: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; bs * n * m];
    for batch in 0..bs {
        let a = &a[batch * n * k..(batch + 1) * n * k];
        let b = &b[batch * k * m..(batch + 1) * k * m];
        let o = &mut out[batch * n * m..(batch + 1) * n * m];
        for i in 0..n {
            let orow = &mut o[i * m..(i + 1) * m];
            for p in 0..k {
                let av = if ta { a[p * n + i] } else { a[i * k + p] };
                if av == 0.0 {
                    continue;
                }
                if tb {
                    for (j, ov) in orow.iter_mut().enumerate() {
                        *ov += av * b[j * k + p];
                    }
                } else {
                    for (ov, bv) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                        *ov += av * bv;
                    }
                }
            }
        }
    }
    out
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

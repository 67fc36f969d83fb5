use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without an entry in `grads` are treated
    /// as having zero gradient. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TensorError::InvalidArgument {
                op: "adam",
                msg: format!("gradient for unknown parameter '{name}'"),
            })?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            g.check_finite(&format!("gradient of '{name}'"))?;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let p = params.get_mut(&name).unwrap();
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let g = grads.get(&name);
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments and step counter as named tensors, for checkpointing.
    pub fn state_tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(format!("{prefix}step"), Tensor::scalar(self.step_count as f64));
        for (k, v) in &self.first_moment {
            out.insert(format!("{prefix}m.{k}"), v.clone());
        }
        for (k, v) in &self.second_moment {
            out.insert(format!("{prefix}v.{k}"), v.clone());
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let step = tensors
            .get(&format!("{prefix}step"))
            .ok_or_else(|| TensorError::Format(format!("missing '{prefix}step'")))?;
        self.step_count = step.item() as u64;
        self.first_moment.clear();
        self.second_moment.clear();
        for (k, v) in tensors {
            if let Some(rest) = k.strip_prefix(prefix) {
                if let Some(name) = rest.strip_prefix("m.") {
                    self.first_moment.insert(name.to_string(), v.clone());
                } else if let Some(name) = rest.strip_prefix("v.") {
                    self.second_moment.insert(name.to_string(), v.clone());
                }
            }
        }
        Ok(())
    }
}

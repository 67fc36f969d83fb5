//! Time-domain SNR objectives and their weighted combination.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};
use vmbeam_tensor::{Tensor, Var};

use crate::config::LossConfig;
use crate::discriminator::AdversarialTerms;
use crate::error::{shape, ModelError, Result};

/// Keeps `10·log10` finite for an exact reconstruction.
pub const SNR_EPS: f64 = 1e-20;

/// Per-channel SNR in dB of `est` against the constant `reference`, both `[C, L]`.
pub fn snr_db<'t>(est: Var<'t>, reference: &Tensor) -> Result<Var<'t>> {
    let sh = est.shape();
    if sh.len() != 2 || sh != reference.shape() {
        return Err(shape("snr", format!("estimate {sh:?} vs reference {:?}", reference.shape())));
    }
    let power: Vec<f64> = reference.data().chunks(sh[1].max(1)).map(|c| c.iter().map(|v| v * v).sum()).collect();
    if power.iter().any(|&p| !(p > 0.0)) {
        return Err(ModelError::ZeroReference("snr"));
    }
    let tape = est.tape();
    let signal = tape.constant(Tensor::from_vec(power.iter().map(|p| p + SNR_EPS).collect()));
    let err = (est - tape.constant(reference.clone())).square().sum_axis(1).add_scalar(SNR_EPS);
    Ok((signal.ln() - err.ln()).scale(10.0 / LN_10))
}

/// `mean_c -min(SNR_c, clip)`.
pub fn snr_loss<'t>(est: Var<'t>, reference: &Tensor, clip_db: f64) -> Result<Var<'t>> {
    Ok(snr_db(est, reference)?.clamp_max(clip_db).mean().neg())
}

/// Scalar values of every loss term for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub vme: f64,
    pub bf: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub gen: f64,
    pub disc: f64,
}

/// Weighted objectives for one clip.
pub struct CompositeLoss<'t> {
    pub generator: Var<'t>,
    /// Present when adversarial terms were supplied.
    pub discriminator: Option<Var<'t>>,
    pub record: LossRecord,
}

/// Combines the VM-estimation SNR loss on `(vm_est, vm_ref)`, the beamformer
/// SNR loss on `(bf_est, bf_ref)` and optional adversarial terms. Absent
/// terms contribute zero; a zero weight drops its term.
pub fn composite_loss<'t>(
    cfg: &LossConfig,
    vm: Option<(Var<'t>, &Tensor)>,
    bf: Option<(Var<'t>, &Tensor)>,
    adv: Option<AdversarialTerms<'t>>,
) -> Result<CompositeLoss<'t>> {
    let tape = match (&vm, &bf, &adv) {
        (Some((v, _)), _, _) | (_, Some((v, _)), _) => v.tape(),
        (_, _, Some(a)) => a.generator.tape(),
        _ => return Err(ModelError::Config("composite loss needs at least one term".into())),
    };
    let mut record = LossRecord::default();
    let mut gen = tape.scalar(0.0);
    if let Some((est, reference)) = vm {
        let l = snr_loss(est, reference, cfg.snr_clip_db)?;
        record.vme = l.item();
        if cfg.w_vme > 0.0 {
            gen = gen + l.scale(cfg.w_vme);
        }
    }
    if let Some((est, reference)) = bf {
        let l = snr_loss(est, reference, cfg.snr_clip_db)?;
        record.bf = l.item();
        if cfg.w_bf > 0.0 {
            gen = gen + l.scale(cfg.w_bf);
        }
    }
    let mut disc = None;
    if let Some(a) = adv {
        record.adv_g = a.generator.item();
        record.adv_d = a.discriminator.item();
        if cfg.w_adv_g > 0.0 {
            gen = gen + a.generator.scale(cfg.w_adv_g);
        }
        disc = Some(a.discriminator.scale(cfg.w_adv_d));
    }
    record.gen = gen.item();
    record.disc = disc.map_or(0.0, |d| d.item());
    Ok(CompositeLoss {
        generator: gen,
        discriminator: disc,
        record,
    })
}

//! Training targets, the SI-SNR metric and the joint loss.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor::{CVar, ComplexTensor, Var};

/// Added to every denominator.
pub const EPS: f64 = 1e-8;
/// SI-SNR values are clipped to `[-MAX_SI_SNR_DB, MAX_SI_SNR_DB]`.
pub const MAX_SI_SNR_DB: f64 = 100.0;

/// Complex ideal ratio mask `Y / X`.
#[derive(Clone, Debug, PartialEq)]
pub struct CirmTarget {
    pub values: ComplexTensor,
    pub clamped: bool,
}

/// `M = Y X* / (|X|^2 + eps)`, optionally clamped part-wise to `[-1, 1]`.
pub fn cirm_target(x: &ComplexTensor, y: &ComplexTensor, eps: f64, clamp: bool) -> Result<CirmTarget> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "cirm: noisy {:?} vs clean {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let mut re = x.re.clone();
    let mut im = x.im.clone();
    let pairs = x.re.data().iter().zip(x.im.data()).zip(y.re.data().iter().zip(y.im.data()));
    for (k, ((&xr, &xi), (&yr, &yi))) in pairs.enumerate() {
        let d = xr * xr + xi * xi + eps;
        let mut mr = (yr * xr + yi * xi) / d;
        let mut mi = (yi * xr - yr * xi) / d;
        if clamp {
            mr = mr.clamp(-1.0, 1.0);
            mi = mi.clamp(-1.0, 1.0);
        }
        re.data_mut()[k] = mr;
        im.data_mut()[k] = mi;
    }
    Ok(CirmTarget {
        values: ComplexTensor::new(re, im)?,
        clamped: clamp,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SNR in dB of `estimate` against `reference`, without
/// mean removal, clipped to ±[`MAX_SI_SNR_DB`].
pub fn si_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "si-snr: reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let yy = dot(reference, reference);
    if yy == 0.0 {
        return Err(Error::Numeric("si-snr: zero-energy reference".into()));
    }
    let alpha = dot(estimate, reference) / yy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (&y, &e) in reference.iter().zip(estimate) {
        let t = alpha * y;
        target += t * t;
        noise += (e - t) * (e - t);
    }
    let db = 10.0 * (target / (noise + EPS)).log10();
    if db.is_nan() {
        return Err(Error::Numeric("si-snr: non-finite input".into()));
    }
    Ok(db.clamp(-MAX_SI_SNR_DB, MAX_SI_SNR_DB))
}

/// Differentiable SI-SNR per row of `[batch, samples]`, returned as `[batch]`.
pub fn si_snr_var<'t>(reference: Var<'t>, estimate: Var<'t>) -> Result<Var<'t>> {
    let s = reference.shape();
    if s.len() != 2 || estimate.shape() != s {
        return Err(Error::shape(format!(
            "si-snr: reference {s:?} and estimate {:?} must both be [batch, samples]",
            estimate.shape()
        )));
    }
    let yy = reference.square().sum_axes(&[1], true)?;
    if yy.value().data().iter().any(|&v| v == 0.0) {
        return Err(Error::Numeric("si-snr: zero-energy reference".into()));
    }
    let alpha = estimate.mul(reference)?.sum_axes(&[1], true)?.div(yy)?;
    let target = alpha.mul(reference)?;
    let noise = estimate.sub(target)?;
    let ratio = target
        .square()
        .sum_axes(&[1], false)?
        .div(noise.square().sum_axes(&[1], false)?.add_scalar(EPS))?;
    Ok(ratio
        .ln()
        .scale(10.0 / LN_10)
        .clamp(-MAX_SI_SNR_DB, MAX_SI_SNR_DB))
}

/// How [`mask_mse`] reduces the squared error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// The bare sum over every bin.
    Sum,
    /// Sum divided by the number of complex bins, so values are comparable
    /// across utterance lengths and batch sizes.
    Normalized,
}

/// `sum (M^_r - M_r)^2 + (M^_i - M_i)^2`, reduced per `reduction`.
pub fn mask_mse(target: &ComplexTensor, estimate: &ComplexTensor, reduction: Reduction) -> Result<f64> {
    if target.shape() != estimate.shape() {
        return Err(Error::shape(format!(
            "mask mse: target {:?} vs estimate {:?}",
            target.shape(),
            estimate.shape()
        )));
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let sum = sq(target.re.data(), estimate.re.data()) + sq(target.im.data(), estimate.im.data());
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Normalized => sum / target.numel() as f64,
    })
}

pub fn mask_mse_var<'t>(target: CVar<'t>, estimate: CVar<'t>, reduction: Reduction) -> Result<Var<'t>> {
    if target.shape() != estimate.shape() {
        return Err(Error::shape(format!(
            "mask mse: target {:?} vs estimate {:?}",
            target.shape(),
            estimate.shape()
        )));
    }
    let d = estimate.sub(target)?;
    let sum = d.re.square().sum_all().add(d.im.square().sum_all())?;
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Normalized => sum.scale(1.0 / target.re.value().numel() as f64),
    })
}

/// `-SI-SNR + lambda * mask_mse` for one utterance.
pub fn joint_loss(
    reference: &[f64],
    estimate: &[f64],
    mask_target: &ComplexTensor,
    mask_estimate: &ComplexTensor,
    lambda: f64,
) -> Result<f64> {
    Ok(-si_snr(reference, estimate)? + lambda * mask_mse(mask_target, mask_estimate, Reduction::Normalized)?)
}

/// Batch version of [`joint_loss`]: the SI-SNR term is averaged over rows,
/// the mask term is normalized over every bin of the batch.
pub fn joint_loss_var<'t>(
    reference: Var<'t>,
    estimate: Var<'t>,
    mask_target: CVar<'t>,
    mask_estimate: CVar<'t>,
    lambda: f64,
) -> Result<Var<'t>> {
    let batch = reference.shape()[0] as f64;
    let snr = si_snr_var(reference, estimate)?.sum_all().scale(-1.0 / batch);
    if lambda == 0.0 {
        return Ok(snr);
    }
    snr.add(mask_mse_var(mask_target, mask_estimate, Reduction::Normalized)?.scale(lambda))
}

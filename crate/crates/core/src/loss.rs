//! Focal + Dice objective and its deep-supervision sum.
//!
//! For one case with softmax probabilities `p` and binary target `q`:
//!
//! ```text
//! focal = mean_t  -(1 - p_t)^gamma * ln(p_t)      p_t: probability of the true class
//! dice  = 1 - (2 sum p_fg q + eps) / (sum p_fg + sum q + eps)
//! ```
//!
//! The batch loss is the mean of `focal + dice` over cases.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, TensorError};
use crate::metrics::BinaryMask;
use crate::tensor::{Real, Tensor};

/// Lower bound applied inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub dice_eps: f64,
    /// Weight of output `i`; the default is `2^-i`.
    pub ds_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 2.0, dice_eps: 1e-5, ds_weights: ds_weights(4) }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.dice_eps > 0.0) {
            return Err(TensorError::config(format!("loss needs gamma >= 0 and eps > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// `[1, 1/2, 1/4, ..]` with `n` entries.
pub fn ds_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5f64.powi(i as i32)).collect()
}

/// Focal + Dice loss of `(N, classes, *spatial)` logits against an
/// `(N, *spatial)` mask.
pub fn focal_dice_loss<'g, T: Real>(
    g: &'g Graph<T>,
    logits: Var<'g, T>,
    target: &BinaryMask,
    cfg: &LossConfig,
) -> Result<Var<'g, T>> {
    cfg.validate()?;
    let shape = logits.shape();
    if shape.len() < 3 || shape[1] < 2 || target.shape().len() != shape.len() - 1 || target.shape()[0] != shape[0] || target.shape()[1..] != shape[2..] {
        return Err(TensorError::shape("focal_dice_loss", &[&shape, target.shape()]));
    }
    let (n, classes) = (shape[0], shape[1]);
    let voxels: usize = shape[2..].iter().product();

    let mut onehot = vec![T::zero(); n * classes * voxels];
    let mut fg = vec![T::zero(); n * voxels];
    for b in 0..n {
        for v in 0..voxels {
            let label = target.data()[b * voxels + v] as usize;
            onehot[(b * classes + label) * voxels + v] = T::one();
            fg[b * voxels + v] = T::of(label as f64);
        }
    }
    let onehot = g.constant(Tensor::from_parts(vec![n, classes, voxels], onehot));
    let q = g.constant(Tensor::from_parts(vec![n, voxels], fg));

    let probs = logits.reshape(&[n, classes, voxels])?.softmax(1)?;
    let p_true = probs.mul(onehot)?.sum_axis(1, false)?;
    let log_p = p_true.ln_clamped(LOG_FLOOR)?;
    let weighted = if cfg.gamma == 0.0 { log_p } else { p_true.affine(-1.0, 1.0)?.powf(cfg.gamma)?.mul(log_p)? };
    let focal = weighted.mean_axis(1, false)?.neg()?;

    let p_fg = probs.narrow(1, 1, 1)?.reshape(&[n, voxels])?;
    let inter = p_fg.mul(q)?.sum_axis(1, false)?.affine(2.0, cfg.dice_eps)?;
    let total = p_fg.add(q)?.sum_axis(1, false)?.affine(1.0, cfg.dice_eps)?;
    let dice = inter.div(total)?.affine(-1.0, 1.0)?;

    focal.add(dice)?.mean_all()
}

/// Weighted sum of [`focal_dice_loss`] over the multi-scale outputs. The
/// target of each output is the full-resolution mask resized with
/// nearest-neighbour sampling.
pub fn ds_loss<'g, T: Real>(g: &'g Graph<T>, outputs: &[Var<'g, T>], target: &BinaryMask, cfg: &LossConfig) -> Result<Var<'g, T>> {
    if outputs.is_empty() || outputs.len() > cfg.ds_weights.len() {
        return Err(TensorError::invalid(
            "ds_loss",
            format!("{} outputs for {} weights", outputs.len(), cfg.ds_weights.len()),
        ));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (o, &w) in outputs.iter().zip(&cfg.ds_weights) {
        let extents = &o.shape()[2..];
        let resized = if target.shape()[1..] == *extents { target.clone() } else { target.resize_nearest(extents)? };
        let term = focal_dice_loss(g, *o, &resized, cfg)?.scale(w)?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(term)?,
        });
    }
    Ok(total.expect("at least one output"))
}

//! Composite training objective: text cross-entropy plus weighted mask BCE
//! and Dice terms.
//!
//! These are the reference (f64, non-differentiable) implementations used
//! for reporting and as oracles for the graph's fused loss ops; training
//! uses the graph versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossWeights {
    pub txt: f32,
    pub ref_bce: f32,
    pub dice: f32,
    pub dice_eps: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            txt: 1.0,
            ref_bce: 2.0,
            dice: 0.5,
            dice_eps: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.txt < 0.0 || self.ref_bce < 0.0 || self.dice < 0.0 {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if self.dice_eps <= 0.0 {
            return Err(Error::config("dice smoothing must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub txt: f64,
    pub ref_bce: f64,
    pub dice: f64,
    /// False when the answer span was empty and the text term contributed
    /// nothing.
    pub text_active: bool,
}

/// 1 − (2Σpt + ε) / (Σp + Σt + ε) over probability/target grids.
pub fn dice_loss(pred_probs: &[f32], target: &[f32], eps: f32) -> Result<f64> {
    if pred_probs.len() != target.len() {
        return Err(Error::input("dice: prediction and target sizes differ"));
    }
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut tsum = 0.0f64;
    for (&p, &t) in pred_probs.iter().zip(target) {
        inter += p as f64 * t as f64;
        psum += p as f64;
        tsum += t as f64;
    }
    Ok(1.0 - (2.0 * inter + eps as f64) / (psum + tsum + eps as f64))
}

/// Mean pixel BCE from logits in the stable log-sum-exp form
/// max(z,0) − z·t + log(1 + e^{−|z|}).
pub fn bce_mask_loss(pred_logits: &[f32], target: &[f32]) -> Result<f64> {
    if pred_logits.len() != target.len() {
        return Err(Error::input("bce: prediction and target sizes differ"));
    }
    if pred_logits.is_empty() {
        return Err(Error::input("bce: empty mask"));
    }
    let mut acc = 0.0f64;
    for (&z, &t) in pred_logits.iter().zip(target) {
        let z = z as f64;
        acc += z.max(0.0) - z * t as f64 + (-z.abs()).exp().ln_1p();
    }
    Ok(acc / pred_logits.len() as f64)
}

/// Mean token cross-entropy over `span` (half-open position range) of a
/// (positions × vocab) logit table; targets index by absolute position.
/// An empty span is legal and reports an inactive text term.
pub fn text_loss(
    logits: &[f32],
    vocab: usize,
    targets: &[(usize, usize)],
) -> Result<(f64, bool)> {
    if targets.is_empty() {
        return Ok((0.0, false));
    }
    let positions = logits.len() / vocab;
    let mut acc = 0.0f64;
    for &(pos, tok) in targets {
        if pos >= positions || tok >= vocab {
            return Err(Error::input("text loss target out of range"));
        }
        let row = &logits[pos * vocab..(pos + 1) * vocab];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
        acc += lse - row[tok] as f64;
    }
    Ok((acc / targets.len() as f64, true))
}

/// Weighted combination per the training objective.
pub fn total_loss(txt: f64, ref_bce: f64, dice: f64, weights: &LossWeights) -> Result<LossReport> {
    if txt < 0.0 || ref_bce < 0.0 || dice < 0.0 {
        return Err(Error::input("loss components must be nonnegative"));
    }
    weights.validate()?;
    Ok(LossReport {
        total: weights.txt as f64 * txt
            + weights.ref_bce as f64 * ref_bce
            + weights.dice as f64 * dice,
        txt,
        ref_bce,
        dice,
        text_active: true,
    })
}

//! Asymmetric multi-label loss and score quantization.
//!
//! Per class `j` with score `z` and label `y`:
//!
//! ```text
//! pos_j = y · (1 − z)^γ⁺ · ln(max(z, clamp))
//! neg_j = (1 − y) · p^γ⁻ · ln(max(1 − p, clamp)),   p = max(z − ε, 0)
//! loss  = −mean_j(pos_j + neg_j)
//! ```
//!
//! The sum of log-likelihood terms is negated so the loss is non-negative and
//! is minimized. At the margin kink `z = ε` the gradient of `p` is taken as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    /// Probability margin subtracted from negative-class scores.
    pub margin: f64,
    /// Floor for log arguments.
    pub clamp: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        AslConfig {
            gamma_pos: 3.0,
            gamma_neg: 4.0,
            margin: 0.2,
            clamp: 1e-8,
        }
    }
}

impl AslConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma_pos >= 0.0 && self.gamma_pos.is_finite()) {
            problems.push(format!("gamma_pos must be >= 0, got {}", self.gamma_pos));
        }
        if !(self.gamma_neg >= 0.0 && self.gamma_neg.is_finite()) {
            problems.push(format!("gamma_neg must be >= 0, got {}", self.gamma_neg));
        }
        if !(0.0..1.0).contains(&self.margin) {
            problems.push(format!("margin must lie in [0, 1), got {}", self.margin));
        }
        if !(self.clamp > 0.0 && self.clamp <= 1e-3) {
            problems.push(format!("clamp must lie in (0, 1e-3], got {}", self.clamp));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Plain binary cross-entropy as a special case (no focusing, no margin).
    pub fn bce() -> Self {
        AslConfig {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
            ..AslConfig::default()
        }
    }
}

/// `max(z − margin, 0)`.
pub fn shifted_probability(z: f64, margin: f64) -> f64 {
    (z - margin).max(0.0)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    // Saturated sigmoids can round to exactly 0 or 1; the clamp keeps both finite.
    match scores.iter().find(|z| !(0.0..=1.0).contains(*z)) {
        Some(z) => Err(Error::domain("asl_loss", format!("score {z} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|y| **y != 0.0 && **y != 1.0) {
        Some(y) => Err(Error::domain("asl_loss", format!("label {y} is not binary"))),
        None => Ok(()),
    }
}

/// Tape-recorded loss, averaged over every element of `scores`.
///
/// For `[B, M]` scores this is the mean over samples of the per-sample loss.
pub fn asl_loss(tape: &mut Tape, scores: Var, labels: &Tensor, cfg: &AslConfig) -> Result<Var> {
    if tape.shape(scores) != labels.shape() {
        return Err(Error::shape("asl_loss", tape.shape(scores), labels.shape()));
    }
    check_scores(tape.value(scores).data())?;
    check_labels(labels.data())?;

    let y = tape.constant(labels.clone());
    let not_y = tape.constant(labels.map(|v| 1.0 - v));

    let floored = tape.max_scalar(scores, cfg.clamp);
    let log_z = tape.log(floored)?;
    let neg_z = tape.mul_scalar(scores, -1.0);
    let one_minus_z = tape.add_scalar(neg_z, 1.0);
    let pos_weight = tape.pow_scalar(one_minus_z, cfg.gamma_pos)?;
    let pos = tape.mul(pos_weight, log_z)?;
    let pos = tape.mul(pos, y)?;

    let shifted = tape.add_scalar(scores, -cfg.margin);
    let p = tape.max_scalar(shifted, 0.0);
    let neg_weight = tape.pow_scalar(p, cfg.gamma_neg)?;
    let neg_p = tape.mul_scalar(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let one_minus_p = tape.max_scalar(one_minus_p, cfg.clamp);
    let log_one_minus_p = tape.log(one_minus_p)?;
    let neg = tape.mul(neg_weight, log_one_minus_p)?;
    let neg = tape.mul(neg, not_y)?;

    let total = tape.add(pos, neg)?;
    let mean = tape.mean_all(total);
    Ok(tape.mul_scalar(mean, -1.0))
}

/// Loss of one sample evaluated directly on values.
pub fn asl_loss_value(scores: &[f64], labels: &[bool], cfg: &AslConfig) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::shape("asl_loss", &[scores.len()], &[labels.len()]));
    }
    check_scores(scores)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            if y {
                (1.0 - z).powf(cfg.gamma_pos) * z.max(cfg.clamp).ln()
            } else {
                let p = shifted_probability(z, cfg.margin);
                p.powf(cfg.gamma_neg) * (1.0 - p).max(cfg.clamp).ln()
            }
        })
        .sum();
    Ok((0.0 - total) / scores.len() as f64)
}

/// Mean per-sample loss over a non-empty batch of `(scores, labels)`.
pub fn batch_cost<'a, I>(batch: I, cfg: &AslConfig) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [bool])>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (z, y) in batch {
        sum += asl_loss_value(z, y, cfg)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("batch_cost of an empty batch".into()));
    }
    Ok(sum / n as f64)
}

/// Binary labels: 1 where the score is strictly above `tau`.
pub fn quantize(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&z| z > tau).collect()
}

//! Pixel-overlap metrics: confusion counts, Dice, IoU, and friends.

use serde::Serialize;

use crate::error::{AruError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn check_binary(name: &'static str, m: &[u8]) -> Result<()> {
    if m.iter().any(|&v| v > 1) {
        return Err(AruError::InvalidArgument(format!(
            "{name} mask must be binary (values in {{0,1}})"
        )));
    }
    Ok(())
}

impl ConfusionCounts {
    pub fn from_masks(pred: &[u8], target: &[u8]) -> Result<Self> {
        if pred.len() != target.len() {
            return Err(AruError::ShapeMismatch {
                op: "confusion",
                detail: format!("{} vs {} pixels", pred.len(), target.len()),
            });
        }
        check_binary("pred", pred)?;
        check_binary("target", target)?;
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(target) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// tp / (tp + fp); an empty prediction makes no false claims, so the
    /// 0/0 case reports 1.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// tp / (tp + fn); 0/0 (empty target) reports 1.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Harmonic mean of precision and recall; equals Dice on binary masks.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Dice coefficient 2|P∩G| / (|P|+|G|). Both-empty returns (1.0, degenerate=true).
pub fn dice(pred: &[u8], target: &[u8]) -> Result<(f64, bool)> {
    let c = ConfusionCounts::from_masks(pred, target)?;
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok((1.0, true));
    }
    Ok((2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64), false))
}

/// Intersection over union |P∩G| / |P∪G|. Both-empty returns (1.0, degenerate=true).
pub fn iou(pred: &[u8], target: &[u8]) -> Result<(f64, bool)> {
    let c = ConfusionCounts::from_masks(pred, target)?;
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok((1.0, true));
    }
    Ok((c.tp as f64 / (c.tp + c.fp + c.fn_) as f64, false))
}

/// Thresholds probabilities into a {0,1} mask (p > threshold is foreground).
pub fn binarize(probs: &[f32], threshold: f32) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > threshold)).collect()
}

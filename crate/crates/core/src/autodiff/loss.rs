use super::tape::soft_dice;
use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, Volume};

/// Smoothing term added to both sides of every Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// Batch Dice loss `−(1/N)·Σₙ (2Σ yŷ + ε)/(Σ y + Σ ŷ + ε)`, in `[−1, 0]`.
pub fn dice_loss(pred: &[Volume], target: &[BinaryMask]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "dice_loss: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.dims() != t.dims() {
            return Err(Error::Shape(format!("dice_loss: {:?} vs {:?}", p.dims(), t.dims())));
        }
        total += soft_dice(p.data(), &t.as_f64(), DICE_EPS);
    }
    Ok(-total / pred.len() as f64)
}

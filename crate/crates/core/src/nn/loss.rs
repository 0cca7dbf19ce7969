//! Cross-entropy for the single-image classifier and the summed squared error
//! used to train the sequence forecaster.

use super::Scalar;
use crate::encoding::LabelVector;
use crate::error::{Error, Result};

/// Predictions are clamped to at least this value inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: prediction has {a} entries, target has {b}")));
    }
    Ok(())
}

/// `−Σ target·log(max(pred, floor))`.
pub fn cross_entropy<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    same_len(pred.len(), target.len(), "cross entropy")?;
    let floor = T::from_f64(PROB_FLOOR);
    Ok(-pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| t * p.max(floor).ln())
        .sum::<T>())
}

/// Gradient of [`cross_entropy`] with respect to the predictions.
pub fn cross_entropy_grad<T: Scalar>(pred: &[T], target: &[T]) -> Result<Vec<T>> {
    same_len(pred.len(), target.len(), "cross entropy")?;
    let floor = T::from_f64(PROB_FLOOR);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| if p >= floor { -t / p } else { T::ZERO })
        .collect())
}

/// Gradient of `cross_entropy(softmax(z), t)` with respect to the logits `z`,
/// given the softmax output: `y·Σt − t`.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &[T], target: &[T]) -> Vec<T> {
    let mass: T = target.iter().copied().sum();
    probs.iter().zip(target).map(|(&y, &t)| y * mass - t).collect()
}

/// `Σᵢ ‖yᵢ − tᵢ‖²` over the steps of a sequence (no averaging).
pub fn sequence_mse<T: Scalar, P: AsRef<[T]>, Q: AsRef<[T]>>(preds: &[P], targets: &[Q]) -> Result<T> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "sequence loss: {} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = T::ZERO;
    for (y, t) in preds.iter().zip(targets) {
        let (y, t) = (y.as_ref(), t.as_ref());
        same_len(y.len(), t.len(), "sequence loss")?;
        total += y.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
    }
    Ok(total)
}

pub fn sequence_mse_grad<T: Scalar, P: AsRef<[T]>, Q: AsRef<[T]>>(preds: &[P], targets: &[Q]) -> Result<Vec<Vec<T>>> {
    sequence_mse::<T, _, _>(preds, targets)?;
    let two = T::from_f64(2.0);
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            y.as_ref()
                .iter()
                .zip(t.as_ref())
                .map(|(&a, &b)| two * (a - b))
                .collect()
        })
        .collect())
}

pub fn cross_entropy_loss(pred: &LabelVector, target: &LabelVector) -> Result<f64> {
    cross_entropy(pred.as_slice(), target.as_slice())
}

pub fn sequence_mse_loss(preds: &[LabelVector], targets: &[LabelVector]) -> Result<f64> {
    let p: Vec<&[f64]> = preds.iter().map(|v| v.as_slice()).collect();
    let t: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
    sequence_mse(&p, &t)
}

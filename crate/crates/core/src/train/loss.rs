//! Cross entropy, weighted cross entropy and focal loss on `(B, K)` logits.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::ClassCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    WeightedCe,
    Focal,
}

fn target_tensor(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    if targets.len() != b {
        return Err(Error::InvalidInput(format!("{} targets for a batch of {b}", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidInput(format!("target index {bad} out of range for {k} classes")));
    }
    let idx: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
    Ok(Tensor::from_vec(idx, (b, 1), logits.device())?)
}

/// `log softmax(logits)_y` per row, shape `(B,)`.
fn target_log_probs(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let idx = target_tensor(logits, targets)?;
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok(logp.gather(&idx, 1)?.squeeze(1)?)
}

/// Batch mean of `-w_y log p_y`, normalized by `sum w_y` when weights are given.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], weights: Option<&[f64]>) -> Result<Tensor> {
    let nll = target_log_probs(logits, targets)?.neg()?;
    match weights {
        None => Ok(nll.mean_all()?),
        Some(w) => {
            let (_, k) = logits.dims2()?;
            if w.len() != k {
                return Err(Error::InvalidInput(format!("{} class weights for {k} classes", w.len())));
            }
            let per_sample: Vec<f64> = targets.iter().map(|&t| w[t]).collect();
            let total: f64 = per_sample.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidInput("class weights of the batch sum to zero".into()));
            }
            let wt = Tensor::from_vec(per_sample, targets.len(), logits.device())?.to_dtype(logits.dtype())?;
            Ok(((nll * wt)?.sum_all()? / total)?)
        }
    }
}

/// Batch mean of `-(1 - p_y)^gamma log p_y`.
pub fn focal_loss(logits: &Tensor, targets: &[usize], gamma: f64) -> Result<Tensor> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidInput(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let logp = target_log_probs(logits, targets)?;
    if gamma == 0.0 {
        return Ok(logp.neg()?.mean_all()?);
    }
    let one_minus_p = logp.exp()?.affine(-1.0, 1.0)?.clamp(1e-12, 1.0)?;
    let factor = one_minus_p.powf(gamma)?;
    Ok((factor * logp)?.neg()?.mean_all()?)
}

/// `N / (K count_c)` per class before rescaling.
pub fn inverse_frequency_raw(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no class counts".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("class {c} has zero samples; cannot weight an absent class")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

/// Inverse-frequency weights rescaled to mean 1.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let raw = inverse_frequency_raw(counts)?;
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

pub fn class_weights_for(counts: &ClassCounts) -> Result<Vec<f64>> {
    let counts: Vec<usize> = counts.iter().map(|(_, n)| n).collect();
    inverse_frequency_weights(&counts)
}

/// Convenience dispatch used by the training loop.
pub fn compute_loss(
    kind: LossKind,
    logits: &Tensor,
    targets: &[usize],
    weights: Option<&[f64]>,
    gamma: f64,
) -> Result<Tensor> {
    match kind {
        LossKind::CrossEntropy => cross_entropy(logits, targets, None),
        LossKind::WeightedCe => cross_entropy(logits, targets, weights),
        LossKind::Focal => focal_loss(logits, targets, gamma),
    }
}

pub fn scalar(loss: &Tensor) -> Result<f64> {
    Ok(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn logits(rows: Vec<Vec<f64>>) -> Tensor {
        Tensor::new(rows, &Device::Cpu).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln10() {
        let l = logits(vec![vec![0.0; 10]; 3]);
        let v = scalar(&cross_entropy(&l, &[0, 4, 9], None).unwrap()).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_have_tiny_loss() {
        let mut row = vec![0.0; 10];
        row[3] = 20.0;
        let v = scalar(&cross_entropy(&logits(vec![row]), &[3], None).unwrap()).unwrap();
        assert!(v < 1e-3);
    }

    #[test]
    fn focal_single_sample_value() {
        // p_y = 0.4 with two classes: logit gap ln(0.4/0.6)
        let l = logits(vec![vec![(0.4f64 / 0.6).ln(), 0.0]]);
        let v = scalar(&focal_loss(&l, &[0], 2.0).unwrap()).unwrap();
        assert!((v - 0.36 * -(0.4f64.ln())).abs() < 1e-9, "{v}");
    }

    #[test]
    fn target_out_of_range_is_rejected() {
        let l = logits(vec![vec![0.0; 10]]);
        assert!(cross_entropy(&l, &[10], None).is_err());
        assert!(focal_loss(&l, &[0], -1.0).is_err());
    }

    #[test]
    fn inverse_frequency_examples() {
        let raw = inverse_frequency_raw(&[100, 300]).unwrap();
        assert!((raw[0] - 2.0).abs() < 1e-12 && (raw[1] - 2.0 / 3.0).abs() < 1e-12);
        let w = inverse_frequency_weights(&[100, 300]).unwrap();
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert_eq!(inverse_frequency_weights(&[7; 10]).unwrap(), vec![1.0; 10]);
        assert!(inverse_frequency_weights(&[3, 0]).is_err());
    }
}

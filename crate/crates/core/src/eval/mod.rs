//! Dice metrics, prompt × label evaluation matrices, parameter accounting,
//! ablations and overlays.

pub mod ablation;
mod matrix;
pub mod overlay;
mod params_report;

pub use matrix::{default_rows, evaluate_matrix, evaluate_rows, EvalMatrix, RowSpec, Serve};
pub use params_report::{count_params, params_report, ParamReport, REFERENCE_FULL_PARAMS, REFERENCE_HEAD_PARAMS, REFERENCE_PROMPT_PARAMS};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn is_binary<T: Scalar>(t: &Tensor<T>) -> bool {
    t.data().iter().all(|&v| v == T::zero() || v == T::one())
}

/// `2|A∩B| / (|A| + |B|)` for binary masks; two empty masks score 1.
pub fn dice_coefficient<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("dice_coefficient", pred.shape(), gt.shape()));
    }
    if !is_binary(pred) || !is_binary(gt) {
        return Err(Error::Contract("dice needs binary masks with entries in {0, 1}".into()));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p == T::one(), g == T::one());
        inter += (p && g) as usize;
        a += p as usize;
        b += g as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Dice of each class channel of `H×W×C` masks.
pub fn class_dice<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Vec<f64>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("class_dice", pred.shape(), gt.shape()));
    }
    let c = gt.last_dim();
    let n = gt.len() / c.max(1);
    (0..c)
        .map(|k| {
            let pick = |t: &Tensor<T>| Tensor::from_fn(&[n], |i| t.data()[i * c + k]);
            dice_coefficient(&pick(pred), &pick(gt))
        })
        .collect()
}

/// Sigmoid probabilities thresholded at 0.5: `1` where the logit is positive.
pub fn binarize<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(|v| if v > T::zero() { T::one() } else { T::zero() })
}

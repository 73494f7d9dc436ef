use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_SMOOTH: f64 = 1.0;

/// Soft Dice loss over sigmoid probabilities, averaged over classes:
/// `1 − (2·Σ p·t + s) / (Σ p + Σ t + s)` per class channel.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: &Tensor<T>, smooth: T) -> Result<Var> {
    if tape.shape(logits) != target.shape() {
        return Err(Error::shape("dice_loss", tape.shape(logits), target.shape()));
    }
    if !(smooth > T::zero()) {
        return Err(Error::Argument("dice smoothing must be positive".into()));
    }
    let classes = target.last_dim();
    let t = tape.constant(target.clone());
    let p = tape.sigmoid(logits);
    let pt = tape.mul(p, t)?;
    let inter = tape.sum_rows(pt);
    let psum = tape.sum_rows(p);
    let tsum = tape.sum_rows(t);

    let num = tape.scale(inter, T::of(2.0));
    let num = tape.add_scalar(num, smooth);
    let den = tape.add(psum, tsum)?;
    let den = tape.add_scalar(den, smooth);
    let ratio = tape.div(num, den)?;
    let score = tape.mean(ratio);
    let loss = tape.scale(score, -T::one());
    debug_assert_eq!(tape.shape(ratio), &[classes]);
    Ok(tape.add_scalar(loss, T::one()))
}

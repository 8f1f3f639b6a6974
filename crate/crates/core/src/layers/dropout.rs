use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// Entries are exactly 0.0 or 1.0, same shape as the layer output.
    pub mask: Tensor,
    pub retain: f64,
    pub stream: u64,
}

fn check_retain(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("retain probability {p} outside (0, 1]")))
    }
}

/// Samples an i.i.d. Bernoulli(`retain`) mask per unit per case and applies it.
pub fn dropout_train(
    x: &Tensor,
    retain: f64,
    stream: u64,
    rng: &mut impl Rng,
) -> Result<(Tensor, DropoutMask)> {
    check_retain(retain)?;
    let mask = Tensor::from_fn(x.shape(), |_| if rng.gen::<f64>() < retain { 1.0 } else { 0.0 });
    let y = x.mul(&mask)?;
    Ok((y, DropoutMask { mask, retain, stream }))
}

/// Applies a previously sampled mask.
pub fn dropout_apply(x: &Tensor, mask: &DropoutMask) -> Result<Tensor> {
    x.mul(&mask.mask)
}

/// Inference-time scaling by the retain probability.
pub fn dropout_infer(x: &Tensor, retain: f64) -> Result<Tensor> {
    check_retain(retain)?;
    Ok(x.scale(retain))
}

pub fn dropout_backward(mask: &DropoutMask, d_out: &Tensor) -> Result<Tensor> {
    d_out.mul(&mask.mask)
}

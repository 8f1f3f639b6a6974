use super::{LayerGrads, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

fn check(params: &LayerParams, x: &Tensor) -> Result<(usize, usize, usize)> {
    let w = params.weights.shape();
    if w.len() != 2 || params.biases.shape() != [w[1]] {
        return Err(Error::dim("dense params", w, params.biases.shape()));
    }
    let n = x.rows();
    if x.rank() == 0 || x.row_len() != w[0] {
        return Err(Error::dim("dense_forward", x.shape(), w));
    }
    Ok((n, w[0], w[1]))
}

/// `y = x W + b`. Inputs of rank > 2 are flattened per sample.
pub fn dense_forward(params: &LayerParams, x: &Tensor) -> Result<Tensor> {
    let (n, fan_in, fan_out) = check(params, x)?;
    let mut out = vec![0.0; n * fan_out];
    gemm(x.data(), params.weights.data(), &mut out, n, fan_in, fan_out);
    let b = params.biases.data();
    for row in out.chunks_exact_mut(fan_out) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Tensor::new(vec![n, fan_out], out)
}

/// Gradients of a dense layer: `dW = xᵀ dOut`, `db = colsum(dOut)`,
/// `dX = dOut Wᵀ` (reshaped to the input's shape). Set `want_input` to
/// false to skip `dX`.
pub fn dense_backward(
    params: &LayerParams,
    x: &Tensor,
    d_out: &Tensor,
    want_input: bool,
) -> Result<LayerGrads> {
    let (n, fan_in, fan_out) = check(params, x)?;
    if d_out.shape() != [n, fan_out] {
        return Err(Error::dim("dense_backward", d_out.shape(), &[n, fan_out]));
    }
    let mut dw = vec![0.0; fan_in * fan_out];
    gemm_tn(x.data(), d_out.data(), &mut dw, fan_in, n, fan_out);
    let mut db = vec![0.0; fan_out];
    for row in d_out.data().chunks_exact(fan_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let input = if want_input {
        let mut dx = vec![0.0; n * fan_in];
        gemm_nt(d_out.data(), params.weights.data(), &mut dx, n, fan_out, fan_in);
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok(LayerGrads {
        weights: Tensor::new(vec![fan_in, fan_out], dw)?,
        biases: Tensor::vector(db),
        input,
    })
}

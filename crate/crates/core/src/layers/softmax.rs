use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise `exp(x - rowmax) / sum`.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] == 0 {
        return Err(Error::dim("softmax", x.shape(), &[0, 1]));
    }
    let k = x.shape()[1];
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor geometry: partial windows at the border are discarded.
pub fn pool_output_dims(h: usize, w: usize, rh: usize, rw: usize, stride: usize) -> Option<(usize, usize)> {
    (rh >= 1 && rw >= 1 && stride >= 1 && rh <= h && rw <= w)
        .then(|| ((h - rh) / stride + 1, (w - rw) / stride + 1))
}

/// Winning flat input index for every pooled output, plus the input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(
    x: &Tensor,
    region: (usize, usize),
    stride: usize,
) -> Result<(Tensor, PoolIndices)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::dim("maxpool_forward", x.shape(), &[0, 0, 0, 0]));
    };
    let (rh, rw) = region;
    let (oh, ow) = pool_output_dims(h, w, rh, rw, stride).ok_or_else(|| {
        Error::invalid(format!("pool region {rh}x{rw}/s{stride} exceeds input {h}x{w}"))
    })?;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut best = base + y0 * w + x0;
                let mut best_v = data[best];
                for dy in 0..rh {
                    for dx in 0..rw {
                        let idx = base + (y0 + dy) * w + x0 + dx;
                        // strict comparison: ties keep the lowest flat index
                        if data[idx] > best_v {
                            best = idx;
                            best_v = data[idx];
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, c, oh, ow], out)?,
        PoolIndices { input_shape: x.shape().to_vec(), argmax },
    ))
}

/// Routes each output gradient to its window's argmax; overlapping windows
/// accumulate.
pub fn maxpool_backward(indices: &PoolIndices, d_out: &Tensor) -> Result<Tensor> {
    if d_out.len() != indices.argmax.len() {
        return Err(Error::dim("maxpool_backward", d_out.shape(), &[indices.argmax.len()]));
    }
    let mut dx = Tensor::zeros(&indices.input_shape);
    let buf = dx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(d_out.data()) {
        buf[i] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, (2, 2), 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool_backward(&idx, &Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn overlapping_geometry() {
        assert_eq!(pool_output_dims(28, 28, 3, 3, 2), Some((13, 13)));
        assert_eq!(pool_output_dims(2, 2, 3, 3, 2), None);
        let (y, _) = maxpool_forward(&Tensor::zeros(&[1, 2, 28, 28]), (3, 3), 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 13, 13]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let (_, idx) = maxpool_forward(&x, (2, 2), 2).unwrap();
        assert_eq!(idx.argmax, vec![0]);
    }

    #[test]
    fn center_cell_collects_from_four_windows() {
        // centre is the strict maximum, so every 2x2/s1 window picks it
        let mut x = Tensor::zeros(&[1, 1, 3, 3]);
        x.data_mut()[4] = 5.0;
        let (y, idx) = maxpool_forward(&x, (2, 2), 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        let dx = maxpool_backward(&idx, &Tensor::filled(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(dx.data()[4], 4.0);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn overlapping_brute_force_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_tensor(&[1, 2, 7, 7], 1.0, &mut rng);
            let (y, idx) = maxpool_forward(&x, (3, 3), 2).unwrap();
            let dout = random_tensor(y.shape(), 1.0, &mut rng);
            let dx = maxpool_backward(&idx, &dout).unwrap();
            // brute force: every window credits its max element
            let mut expect = vec![0.0; x.len()];
            let (oh, ow) = (y.shape()[2], y.shape()[3]);
            for c in 0..2 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for dy in 0..3 {
                            for dxx in 0..3 {
                                let i = c * 49 + (oy * 2 + dy) * 7 + ox * 2 + dxx;
                                if x.data()[i] > best.0 {
                                    best = (x.data()[i], i);
                                }
                            }
                        }
                        expect[best.1] += dout.data()[(c * oh + oy) * ow + ox];
                    }
                }
            }
            for (a, b) in dx.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
            assert!((dx.sum() - dout.sum()).abs() < 1e-12);
        }
    }
}

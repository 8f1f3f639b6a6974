use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Winning piece (0..k) for every maxout output.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxoutIndices {
    pub input_shape: Vec<usize>,
    pub pieces: usize,
    pub winner: Vec<u32>,
}

/// Maximum over disjoint groups of `pieces` consecutive features on axis 1.
///
/// For dense inputs `[N, F]` unit `i` takes features `i*k..i*k+k`. For
/// convolutional inputs `[N, C, H, W]` the group is channels
/// `c*k..c*k+k` at one spatial position. Ties go to the lowest piece.
pub fn maxout_forward(x: &Tensor, pieces: usize) -> Result<(Tensor, MaxoutIndices)> {
    let shape = x.shape();
    if shape.len() < 2 || pieces == 0 || !shape[1].is_multiple_of(pieces) {
        return Err(Error::invalid(format!(
            "maxout with {pieces} pieces needs a feature axis divisible by it, got {shape:?}"
        )));
    }
    let (n, f) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let units = f / pieces;
    let data = x.data();
    let mut out = Vec::with_capacity(n * units * spatial);
    let mut winner = Vec::with_capacity(n * units * spatial);
    for s in 0..n {
        let sample = &data[s * f * spatial..(s + 1) * f * spatial];
        for u in 0..units {
            for p in 0..spatial {
                let at = |j: usize| sample[(u * pieces + j) * spatial + p];
                let mut best = 0;
                let mut best_v = at(0);
                for j in 1..pieces {
                    if at(j) > best_v {
                        best = j;
                        best_v = at(j);
                    }
                }
                out.push(best_v);
                winner.push(best as u32);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[1] = units;
    Ok((
        Tensor::new(out_shape, out)?,
        MaxoutIndices { input_shape: shape.to_vec(), pieces, winner },
    ))
}

pub fn maxout_backward(indices: &MaxoutIndices, d_out: &Tensor) -> Result<Tensor> {
    if d_out.len() != indices.winner.len() {
        return Err(Error::dim("maxout_backward", d_out.shape(), &indices.input_shape));
    }
    let shape = &indices.input_shape;
    let (n, f) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let k = indices.pieces;
    let units = f / k;
    let mut dx = Tensor::zeros(shape);
    let buf = dx.data_mut();
    let g = d_out.data();
    for s in 0..n {
        for u in 0..units {
            for p in 0..spatial {
                let o = (s * units + u) * spatial + p;
                let j = indices.winner[o] as usize;
                buf[(s * f + u * k + j) * spatial + p] += g[o];
            }
        }
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
    fn single_piece_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[2, 3, 2, 2], 1.0, &mut rng);
        let (y, _) = maxout_forward(&x, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pair_routes_to_winner() {
        let x = Tensor::matrix(&[&[0.3, -0.5]]);
        let (y, idx) = maxout_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.3]);
        let dx = maxout_backward(&idx, &Tensor::matrix(&[&[1.0]])).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0]);
    }

    #[test]
    fn ties_pick_lowest_piece() {
        let (_, idx) = maxout_forward(&Tensor::matrix(&[&[1.0, 1.0, 1.0]]), 3).unwrap();
        assert_eq!(idx.winner, vec![0]);
    }

    #[test]
    fn rejects_indivisible_features() {
        assert!(maxout_forward(&Tensor::zeros(&[1, 5]), 2).is_err());
    }

    #[test]
    fn conv_grouping_is_by_channel_per_position() {
        // channels 0,1 form unit 0; channels 2,3 form unit 1
        let x = Tensor::new(
            vec![1, 4, 1, 2],
            vec![1.0, 9.0, 5.0, 0.0, -1.0, 2.0, 3.0, 3.0],
        )
        .unwrap();
        let (y, _) = maxout_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 2]);
        assert_eq!(y.data(), &[5.0, 9.0, 3.0, 3.0]);
    }

    #[test]
    fn gradient_mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[3, 10, 2, 2], 1.0, &mut rng);
        let (y, idx) = maxout_forward(&x, 5).unwrap();
        let d = random_tensor(y.shape(), 1.0, &mut rng);
        let dx = maxout_backward(&idx, &d).unwrap();
        assert!((dx.sum() - d.sum()).abs() < 1e-12);
    }
}

//! Shared fixtures for the kernel benchmarks.

use convnet_core::gradcheck::random_tensor;
use convnet_core::layers::LayerParams;
use convnet_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` tensor, reproducible from `seed`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Convolution parameters `[maps, channels, k, k]` with zero biases.
pub fn conv_params(maps: usize, channels: usize, k: usize, seed: u64) -> LayerParams {
    LayerParams { weights: uniform(&[maps, channels, k, k], seed), biases: Tensor::zeros(&[maps]) }
}

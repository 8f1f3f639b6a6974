//! Forward and backward passes for each layer type.
//!
//! Layers are plain functions over `(params, input)`; they own no state.
//! The [`crate::network`] module chains them into a model.

mod activation;
mod conv;
mod dense;
mod dropout;
mod maxout;
mod pool;
mod softmax;

pub use activation::{activation_backward, activation_forward, ActivationKind};
pub use conv::{conv_backward, conv_forward, conv_output_dims};
pub use dense::{dense_backward, dense_forward};
pub use dropout::{dropout_apply, dropout_backward, dropout_infer, dropout_train, DropoutMask};
pub use maxout::{maxout_backward, maxout_forward, MaxoutIndices};
pub use pool::{maxpool_backward, maxpool_forward, pool_output_dims, PoolIndices};
pub use softmax::softmax;

use crate::tensor::Tensor;

/// Trainable tensors of one dense or convolutional layer.
///
/// Dense weights are `[in, out]` with biases `[out]`; convolution weights
/// are `[maps_out, maps_in, kH, kW]` with one bias per output map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub biases: Tensor,
    /// Gradient with respect to the layer input; `None` when the caller
    /// asked to skip it.
    pub input: Option<Tensor>,
}

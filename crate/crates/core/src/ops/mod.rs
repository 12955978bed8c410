//! Forward and backward kernels for every layer the networks use.

mod activation;
mod conv;
mod loss;
mod mix;

pub use activation::{
    channel_softmax, channel_softmax_backward, relu, relu_backward, soft_shrink,
    soft_shrink_backward,
};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvGrads, ConvSpec};
pub use loss::mse_loss;
pub use mix::{pointwise_mul_sum, pointwise_mul_sum_backward};

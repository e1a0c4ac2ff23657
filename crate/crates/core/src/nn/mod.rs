//! A small CPU neural-network engine: strided convolution and its transpose,
//! ReLU, MSE, RMSProp and finite-difference gradient checking.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod optim;
mod scalar;
mod tensor;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, deconv2d, ConvGrads, ConvLayer};
pub use gradcheck::{
    gradient_check, relative_error, ConvProbe, Differentiable, GradCheckReport, MseProbe, ReluProbe, Slot, FD_STEP,
    REL_ERROR_FLOOR,
};
pub use loss::{mse_backward, mse_loss};
pub use optim::{rmsprop_step, OptimizerState, RmsPropConfig};
pub use scalar::Scalar;
pub use tensor::Tensor4;

//! Minimal neural-network machinery: parameter storage, convolution
//! primitives, layers with hand-written backward passes, residual blocks,
//! and the optimizer. Everything runs in f64 on the CPU; heavy lifting goes
//! through one gemm per convolution.

pub mod adam;
pub mod blocks;
pub mod conv;
pub mod layers;
pub mod param;

pub use adam::{Optimizer, OptimizerKind};
pub use blocks::{ResidualBlock, UpsampleResidualBlock};
pub use layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Mode, PowerNorm, Relu, Sigmoid, Softmax,
};
pub use param::{Param, Parameterized};

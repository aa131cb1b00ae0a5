//! Neural-network building blocks on `[h, w, c]` tensors.

pub mod conv;
pub mod init;
pub mod ops;

pub use conv::{conv2d, pad, symmetric_pad, ConvGeometry, ConvLayer, ConvSpec, PaddingMode};
pub use init::{init_parameters, InitScheme, InitSpec, KernelShape};
pub use ops::{fully_connected, global_average_pool, leaky_relu, softmax, LEAKY_SLOPE};

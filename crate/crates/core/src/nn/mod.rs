//! Minimal numerical core: dense and 1-D convolution layers with hand-written
//! backward passes, and Adam/SGD optimizers.

pub mod layer;
pub mod ops;
pub mod optim;

pub use layer::{Activation, Layer, LayerKind, LayerSpec};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

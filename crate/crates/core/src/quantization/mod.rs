//! Post-training quantization: linear fixed-point and k-means codebooks.

mod fixed_point;
mod kmeans;
mod model;

pub use fixed_point::{ceil_log2, compute_linear_params, quantize_linear, FixedPointParams};
pub use kmeans::{kmeans_1d, quantize_layer_nonlinear, Codebook, KMeansResult};
pub use model::{
    calibrate_activations, dequantize, quantize_model, quantize_model_linear, quantize_model_nonlinear,
    BiasPayload, QuantScheme, QuantSpec, QuantizedLayer, QuantizedModel, WeightPayload,
};

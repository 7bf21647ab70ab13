use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{self, ConvGeometry};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, xs: &mut [f32]) {
        match self {
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Identity => {}
        }
    }

    /// Turns the gradient w.r.t. the activation output into the gradient
    /// w.r.t. the pre-activation, in place.
    pub fn backward(self, pre: &[f32], post: &[f32], grad: &mut [f32]) {
        match self {
            Activation::Relu => grad
                .iter_mut()
                .zip(pre)
                .for_each(|(g, &p)| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Tanh => grad
                .iter_mut()
                .zip(post)
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv1d,
    Conv1dTransposed,
}

fn default_stride() -> usize {
    1
}

/// Declarative description of one layer. Dense layers ignore the kernel,
/// stride and padding fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub kernel_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    /// Extra trailing length for transposed convolutions, used to restore the
    /// exact input length of the mirrored encoder layer.
    #[serde(default)]
    pub output_padding: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_features: usize, out_features: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_channels: in_features,
            out_channels: out_features,
            kernel_size: 0,
            stride: 1,
            padding: 0,
            output_padding: 0,
            activation,
        }
    }

    pub fn conv1d(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1d,
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            output_padding: 0,
            activation,
        }
    }

    pub fn conv1d_transposed(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1dTransposed,
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            output_padding,
            activation,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.out_channels, self.in_channels],
            LayerKind::Conv1d => vec![self.out_channels, self.in_channels, self.kernel_size],
            LayerKind::Conv1dTransposed => {
                vec![self.in_channels, self.out_channels, self.kernel_size]
            }
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Output `(channels, length)` for an input of `(channels, length)`.
    /// Dense layers flatten their input and emit `(out_features, 1)`.
    pub fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("layer channel counts must be positive".into()));
        }
        let (c, t) = input;
        match self.kind {
            LayerKind::Dense => {
                if c * t != self.in_channels {
                    return Err(Error::Config(format!(
                        "dense layer expects {} input features, got {c}x{t}",
                        self.in_channels
                    )));
                }
                Ok((self.out_channels, 1))
            }
            LayerKind::Conv1d => {
                if c != self.in_channels {
                    return Err(Error::Config(format!(
                        "conv1d expects {} input channels, got {c}",
                        self.in_channels
                    )));
                }
                let t_out = ops::conv_output_len(t, self.kernel_size, self.stride, self.padding)?;
                Ok((self.out_channels, t_out))
            }
            LayerKind::Conv1dTransposed => {
                if c != self.in_channels {
                    return Err(Error::Config(format!(
                        "conv1d_transposed expects {} input channels, got {c}",
                        self.in_channels
                    )));
                }
                let t_out = ops::conv1d_transposed_output_len(
                    t,
                    self.kernel_size,
                    self.stride,
                    self.padding,
                    self.output_padding,
                )?;
                Ok((self.out_channels, t_out))
            }
        }
    }

    fn fans(&self) -> (usize, usize) {
        let k = self.kernel_size.max(1);
        match self.kind {
            LayerKind::Dense => (self.in_channels, self.out_channels),
            _ => (self.in_channels * k, self.out_channels * k),
        }
    }
}

/// A layer with its parameters and resolved input/output shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: (usize, usize),
    pub out_shape: (usize, usize),
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    /// Creates a layer with Glorot-uniform weights and zero bias.
    ///
    /// `out_shape` overrides the natural output shape of a dense layer (same
    /// element count) so a decoder dense layer can emit a `(channels, length)`
    /// map.
    pub fn init(
        spec: LayerSpec,
        in_shape: (usize, usize),
        out_shape: Option<(usize, usize)>,
        rng: &mut Rng,
    ) -> Result<Self> {
        use rand::Rng as _;
        let natural = spec.output_shape(in_shape)?;
        let out_shape = match out_shape {
            Some(s) if s.0 * s.1 == natural.0 * natural.1 && spec.kind == LayerKind::Dense => s,
            Some(s) if s == natural => s,
            Some(s) => {
                return Err(Error::Config(format!(
                    "layer produces {natural:?}, cannot be viewed as {s:?}"
                )))
            }
            None => natural,
        };
        let (fan_in, fan_out) = spec.fans();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n = spec.weight_count();
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        Ok(Layer {
            spec,
            in_shape,
            out_shape,
            weight: Tensor::new(spec.weight_shape(), data)?,
            bias: Tensor::zeros(vec![spec.out_channels]),
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_shape.0 * self.in_shape.1
    }

    pub fn out_features(&self) -> usize {
        self.out_shape.0 * self.out_shape.1
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            c_in: self.spec.in_channels,
            c_out: self.spec.out_channels,
            kernel: self.spec.kernel_size,
            stride: self.spec.stride,
            padding: self.spec.padding,
            t_in: self.in_shape.1,
            t_out: self.out_shape.1,
        }
    }

    /// Pre-activation output for one sample.
    pub fn forward_sample(&self, x: &[f32], pre: &mut [f32]) {
        let (w, b) = (self.weight.data(), self.bias.data());
        match self.spec.kind {
            LayerKind::Dense => ops::dense_sample(x, w, b, pre),
            LayerKind::Conv1d => ops::conv1d_sample(x, w, b, &self.geometry(), pre),
            LayerKind::Conv1dTransposed => {
                ops::conv1d_transposed_sample(x, w, b, &self.geometry(), pre)
            }
        }
    }

    /// Backward pass for one sample given the gradient w.r.t. the
    /// pre-activation. Parameter gradients are accumulated.
    pub fn backward_sample(
        &self,
        x: &[f32],
        grad_pre: &[f32],
        grad_w: &mut [f32],
        grad_b: &mut [f32],
        grad_x: &mut [f32],
    ) {
        let w = self.weight.data();
        match self.spec.kind {
            LayerKind::Dense => ops::dense_sample_backward(x, w, grad_pre, grad_w, grad_b, grad_x),
            LayerKind::Conv1d => ops::conv1d_sample_backward(
                x,
                w,
                grad_pre,
                &self.geometry(),
                grad_w,
                grad_b,
                grad_x,
            ),
            LayerKind::Conv1dTransposed => ops::conv1d_transposed_sample_backward(
                x,
                w,
                grad_pre,
                &self.geometry(),
                grad_w,
                grad_b,
                grad_x,
            ),
        }
    }
}

//! Symmetric encoder/decoder stacks, reconstruction loss and the training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Activation, Layer, LayerKind, LayerSpec, Optimizer, OptimizerConfig};
use crate::pruning::MaskSet;
use crate::quantization::FixedPointParams;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

/// Shape of one input window: `channels` series of `length` timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub channels: usize,
    pub length: usize,
}

impl InputShape {
    pub fn features(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderModel {
    pub input: InputShape,
    pub latent_dim: usize,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    /// Per-layer output activation quantizers, set on dequantized models.
    pub activation_quant: Option<Vec<FixedPointParams>>,
}

/// Builds the decoder specs mirroring `encoder`, together with the shape each
/// decoder layer must emit.
fn mirror(
    encoder: &[LayerSpec],
    shapes: &[(usize, usize)],
) -> Result<Vec<(LayerSpec, (usize, usize))>> {
    let mut out = Vec::with_capacity(encoder.len());
    for (i, spec) in encoder.iter().enumerate().rev() {
        let (enc_in, enc_out) = (shapes[i], shapes[i + 1]);
        let mirrored = match spec.kind {
            LayerKind::Dense => LayerSpec::dense(spec.out_channels, spec.in_channels, Activation::Relu),
            LayerKind::Conv1d => {
                let base = ((enc_out.1 - 1) * spec.stride + spec.kernel_size) as isize
                    - 2 * spec.padding as isize;
                let output_padding = enc_in.1 as isize - base;
                if output_padding < 0 || output_padding >= spec.stride as isize {
                    return Err(Error::Config(format!(
                        "encoder layer {i} cannot be mirrored by a transposed convolution"
                    )));
                }
                LayerSpec::conv1d_transposed(
                    spec.out_channels,
                    spec.in_channels,
                    spec.kernel_size,
                    spec.stride,
                    spec.padding,
                    output_padding as usize,
                    Activation::Relu,
                )
            }
            LayerKind::Conv1dTransposed => LayerSpec::conv1d(
                spec.out_channels,
                spec.in_channels,
                spec.kernel_size,
                spec.stride,
                spec.padding,
                Activation::Relu,
            ),
        };
        out.push((mirrored, enc_in));
    }
    if let Some(last) = out.last_mut() {
        last.0.activation = Activation::Identity;
    }
    Ok(out)
}

/// Builds a symmetric autoencoder whose decoder mirrors `encoder`.
///
/// Hidden decoder layers use ReLU and the output layer is linear. Parameters
/// are drawn from a ChaCha8 stream seeded with `seed`.
pub fn build_autoencoder(
    input: InputShape,
    encoder: &[LayerSpec],
    latent_dim: usize,
    seed: u64,
) -> Result<AutoencoderModel> {
    if encoder.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    if input.channels == 0 || input.length == 0 {
        return Err(Error::Config("input shape must be positive".into()));
    }
    let mut shapes = vec![(input.channels, input.length)];
    for (i, spec) in encoder.iter().enumerate() {
        let next = spec
            .output_shape(*shapes.last().unwrap())
            .map_err(|e| Error::Config(format!("encoder layer {i}: {e}")))?;
        shapes.push(next);
    }
    let latent = shapes.last().map(|s| s.0 * s.1).unwrap();
    if latent != latent_dim {
        return Err(Error::Config(format!(
            "encoder produces a latent of {latent} features but latent_dim is {latent_dim}"
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut enc_layers = Vec::with_capacity(encoder.len());
    for (i, spec) in encoder.iter().enumerate() {
        enc_layers.push(Layer::init(*spec, shapes[i], None, &mut rng)?);
    }
    let mut dec_layers = Vec::with_capacity(encoder.len());
    let mut cur = *shapes.last().unwrap();
    for (j, (spec, target)) in mirror(encoder, &shapes)?.into_iter().enumerate() {
        let layer = Layer::init(spec, cur, Some(target), &mut rng)
            .map_err(|e| Error::Config(format!("decoder layer {j}: {e}")))?;
        if layer.out_shape != target {
            return Err(Error::Config(format!(
                "decoder layer {j} produces {:?}, expected {target:?}",
                layer.out_shape
            )));
        }
        cur = layer.out_shape;
        dec_layers.push(layer);
    }
    Ok(AutoencoderModel {
        input,
        latent_dim,
        encoder: enc_layers,
        decoder: dec_layers,
        activation_quant: None,
    })
}

impl AutoencoderModel {
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        self.encoder.iter().map(|l| l.spec).collect()
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        self.decoder.iter().map(|l| l.spec).collect()
    }

    /// Encoder layers followed by decoder layers, in forward order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn num_layers(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    pub fn layer(&self, i: usize) -> &Layer {
        if i < self.encoder.len() {
            &self.encoder[i]
        } else {
            &self.decoder[i - self.encoder.len()]
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layers().map(|l| l.weight.len()).sum()
    }

    /// Shapes of all parameters: weight then bias for each layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .flat_map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        let per_sample: usize = shape.iter().skip(1).product();
        if shape.len() < 2 || per_sample != self.input.features() {
            return Err(Error::dim(
                "autoencoder input",
                format!(
                    "expected [batch, {}, {}], got {shape:?}",
                    self.input.channels, self.input.length
                ),
            ));
        }
        Ok(shape[0])
    }

    /// Full forward pass for one sample; activation quantizers are honoured.
    fn forward_sample(&self, x: &[f32]) -> Vec<f32> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers().enumerate() {
            let mut out = vec![0.0; layer.out_features()];
            layer.forward_sample(&cur, &mut out);
            layer.spec.activation.apply(&mut out);
            if let Some(q) = &self.activation_quant {
                q[i].quantize_in_place(&mut out);
            }
            cur = out;
        }
        cur
    }

    /// `D(E(x))` for a batch; output has the same shape as `x`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.reconstruct_with(x, Exec::default())
    }

    pub fn reconstruct_with(&self, x: &Tensor, exec: Exec) -> Result<Tensor> {
        self.check_batch(x)?;
        let f = self.input.features();
        let mut out = vec![0.0f32; x.len()];
        const CHUNK: usize = 32;
        exec.for_each_chunk_mut(&mut out, f * CHUNK, |ci, chunk| {
            let start = ci * CHUNK * f;
            for (k, dst) in chunk.chunks_mut(f).enumerate() {
                let src = &x.data()[start + k * f..start + (k + 1) * f];
                dst.copy_from_slice(&self.forward_sample(src));
            }
        });
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Mean over the batch of the per-window L2 norm of `x - x_hat`. A rank-1
/// tensor is treated as a single window.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(
            "reconstruction loss",
            format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        ));
    }
    let batch = if x.shape().len() == 1 { 1 } else { x.shape()[0] };
    let per = x.len() / batch;
    let total: f64 = x
        .data()
        .chunks(per)
        .zip(x_hat.data().chunks(per))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(p, q)| {
                    let d = (*p - *q) as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / batch as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `x_hat`.
fn loss_gradient(x: &Tensor, x_hat: &Tensor) -> Tensor {
    let batch = x.shape()[0];
    let per = x.len() / batch;
    let mut g = vec![0.0f32; x.len()];
    for ((gs, a), b) in g
        .chunks_mut(per)
        .zip(x.data().chunks(per))
        .zip(x_hat.data().chunks(per))
    {
        let norm = a
            .iter()
            .zip(b)
            .map(|(p, q)| ((q - p) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            let scale = 1.0 / (norm * batch as f64);
            for ((gi, p), q) in gs.iter_mut().zip(a).zip(b) {
                *gi = ((q - p) as f64 * scale) as f32;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), g).expect("same shape as input")
}

struct Trace {
    batch: usize,
    /// Input to each layer, `batch * in_features`.
    inputs: Vec<Vec<f32>>,
    pre: Vec<Vec<f32>>,
    post: Vec<Vec<f32>>,
}

/// Records a forward pass so that [`GradientTape::backward`] can replay it.
///
/// Activation quantizers are ignored here; training always runs in float.
#[derive(Default)]
pub struct GradientTape {
    trace: Option<Trace>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, model: &AutoencoderModel, x: &Tensor) -> Result<Tensor> {
        let batch = model.check_batch(x)?;
        let mut inputs = Vec::with_capacity(model.num_layers());
        let mut pres = Vec::with_capacity(model.num_layers());
        let mut posts = Vec::with_capacity(model.num_layers());
        let mut cur = x.data().to_vec();
        for layer in model.layers() {
            let (fi, fo) = (layer.in_features(), layer.out_features());
            let mut pre = vec![0.0; batch * fo];
            for (xs, ys) in cur.chunks(fi).zip(pre.chunks_mut(fo)) {
                layer.forward_sample(xs, ys);
            }
            let mut post = pre.clone();
            layer.spec.activation.apply(&mut post);
            inputs.push(std::mem::replace(&mut cur, post.clone()));
            pres.push(pre);
            posts.push(post);
        }
        self.trace = Some(Trace {
            batch,
            inputs,
            pre: pres,
            post: posts,
        });
        Tensor::new(x.shape().to_vec(), cur)
    }

    /// Gradients of `sum(grad_output * output)` for every parameter, in
    /// [`AutoencoderModel::param_shapes`] order. Consumes the recorded pass.
    pub fn backward(&mut self, model: &AutoencoderModel, grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if grad_output.len() != trace.batch * model.input.features() {
            return Err(Error::dim(
                "backward",
                format!("gradient shape {:?} does not match the recorded batch", grad_output.shape()),
            ));
        }
        let layers: Vec<&Layer> = model.layers().collect();
        let mut grads: Vec<Tensor> = Vec::with_capacity(2 * layers.len());
        let mut upstream = grad_output.data().to_vec();
        for (li, layer) in layers.iter().enumerate().rev() {
            let (fi, fo) = (layer.in_features(), layer.out_features());
            layer.spec.activation.backward(&trace.pre[li], &trace.post[li], &mut upstream);
            let mut gw = vec![0.0; layer.weight.len()];
            let mut gb = vec![0.0; layer.bias.len()];
            let mut gx = vec![0.0; trace.batch * fi];
            for n in 0..trace.batch {
                layer.backward_sample(
                    &trace.inputs[li][n * fi..(n + 1) * fi],
                    &upstream[n * fo..(n + 1) * fo],
                    &mut gw,
                    &mut gb,
                    &mut gx[n * fi..(n + 1) * fi],
                );
            }
            grads.push(Tensor::new(vec![layer.bias.len()], gb)?);
            grads.push(Tensor::new(layer.weight.shape().to_vec(), gw)?);
            upstream = gx;
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Reconstruction loss of `x` and its gradient for every parameter.
pub fn loss_and_gradients(model: &AutoencoderModel, x: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = GradientTape::new();
    let x_hat = tape.forward(model, x)?;
    let loss = reconstruction_loss(x, &x_hat)?;
    let g = loss_gradient(x, &x_hat);
    Ok((loss, tape.backward(model, &g)?))
}

/// Training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches per epoch. `None` means `ceil(windows / batch_size)`.
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            batches_per_epoch: None,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Config("train.batches_per_epoch must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Optimizer state and epoch counter that persist across calls, so training
/// can be resumed (as the final stage of the pruning search does).
///
/// Batches are drawn from a permutation of the windows reshuffled every
/// epoch with a stream derived from `(seed, epoch)`; batch `b` covers
/// positions `b*batch_size .. (b+1)*batch_size` of that permutation, wrapping
/// around when the epoch asks for more windows than exist.
#[derive(Clone, Debug)]
pub struct TrainSession {
    pub optimizer: Optimizer,
    seed: u64,
    batch_size: usize,
    batches_per_epoch: Option<usize>,
    epochs_done: u64,
}

impl TrainSession {
    pub fn new(model: &AutoencoderModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TrainSession {
            optimizer: Optimizer::new(cfg.optimizer, &model.param_shapes())?,
            seed: cfg.seed,
            batch_size: cfg.batch_size,
            batches_per_epoch: cfg.batches_per_epoch,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    /// Runs `epochs` epochs over `windows` (`[n, channels, length]`). With a
    /// mask, pruned weights are zeroed after every optimizer step. Returns the
    /// mean batch loss of each epoch.
    pub fn run(
        &mut self,
        model: &mut AutoencoderModel,
        windows: &Tensor,
        epochs: usize,
        mask: Option<&MaskSet>,
    ) -> Result<Vec<f64>> {
        let n = model.check_batch(windows)?;
        if n == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        if let Some(m) = mask {
            m.check_model(model)?;
        }
        let f = model.input.features();
        let bs = self.batch_size;
        let batches = self.batches_per_epoch.unwrap_or(n.div_ceil(bs));
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = self.epochs_done;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(self.seed, epoch)));
            let mut total = 0.0;
            for b in 0..batches {
                let mut data = Vec::with_capacity(bs * f);
                for j in 0..bs {
                    let w = order[(b * bs + j) % n];
                    data.extend_from_slice(&windows.data()[w * f..(w + 1) * f]);
                }
                let x = Tensor::new(vec![bs, model.input.channels, model.input.length], data)?;
                let (loss, grads) = loss_and_gradients(model, &x)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss became non-finite at epoch {epoch}, batch {b}"
                    )));
                }
                self.optimizer.step(&mut model.params_mut(), &grads)?;
                if let Some(m) = mask {
                    m.apply(model)?;
                }
                debug_assert!(model.layers().all(|l| l.weight.all_finite() && l.bias.all_finite()));
                total += loss;
            }
            self.epochs_done += 1;
            history.push(total / batches as f64);
        }
        Ok(history)
    }
}

/// Trains `model` for `cfg.epochs` epochs with a fresh optimizer.
pub fn train(
    model: &mut AutoencoderModel,
    windows: &Tensor,
    cfg: &TrainConfig,
    mask: Option<&MaskSet>,
) -> Result<Vec<f64>> {
    let mut session = TrainSession::new(model, cfg)?;
    session.run(model, windows, cfg.epochs, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_ae() -> AutoencoderModel {
        let enc = [
            LayerSpec::dense(8, 4, Activation::Relu),
            LayerSpec::dense(4, 2, Activation::Relu),
        ];
        build_autoencoder(InputShape { channels: 1, length: 8 }, &enc, 2, 3).unwrap()
    }

    #[test]
    fn dense_decoder_mirrors_encoder() {
        let m = dense_ae();
        let dec = m.decoder_specs();
        assert_eq!((dec[0].in_channels, dec[0].out_channels), (2, 4));
        assert_eq!((dec[1].in_channels, dec[1].out_channels), (4, 8));
        assert_eq!(dec[0].kind, LayerKind::Dense);
        assert_eq!(dec[1].activation, Activation::Identity);
    }

    #[test]
    fn strided_conv_is_mirrored_to_original_length() {
        let enc = [LayerSpec::conv1d(4, 8, 3, 2, 0, Activation::Relu)];
        let m = build_autoencoder(InputShape { channels: 4, length: 12 }, &enc, 40, 0).unwrap();
        assert_eq!(m.encoder[0].out_shape, (8, 5));
        let d = &m.decoder[0];
        assert_eq!(d.spec.kind, LayerKind::Conv1dTransposed);
        assert_eq!((d.spec.in_channels, d.spec.out_channels), (8, 4));
        assert_eq!(d.out_shape, (4, 12));
        assert_eq!(d.spec.output_padding, 1);
    }

    #[test]
    fn broken_chain_names_layer() {
        let enc = [
            LayerSpec::dense(8, 4, Activation::Relu),
            LayerSpec::dense(5, 2, Activation::Relu),
        ];
        let err = build_autoencoder(InputShape { channels: 1, length: 8 }, &enc, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("encoder layer 1")), "{err}");
    }

    #[test]
    fn latent_dim_must_match() {
        let enc = [LayerSpec::dense(8, 4, Activation::Relu)];
        assert!(build_autoencoder(InputShape { channels: 1, length: 8 }, &enc, 3, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(dense_ae(), dense_ae());
    }

    #[test]
    fn identity_network_reconstructs_input() {
        let enc = [LayerSpec::dense(3, 3, Activation::Identity)];
        let mut m = build_autoencoder(InputShape { channels: 1, length: 3 }, &enc, 3, 0).unwrap();
        for l in m.layers_mut() {
            let w = l.weight.data_mut();
            w.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        }
        let x = Tensor::new(vec![2, 1, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        assert_eq!(m.reconstruct(&x).unwrap(), x);
    }

    #[test]
    fn identical_windows_identical_reconstructions() {
        let m = dense_ae();
        let w: Vec<f32> = (0..8).map(|i| i as f32 / 8.0).collect();
        let x = Tensor::new(vec![2, 1, 8], [w.clone(), w].concat()).unwrap();
        let y = m.reconstruct(&x).unwrap();
        assert_eq!(y.data()[..8], y.data()[8..]);
    }

    #[test]
    fn sequential_and_parallel_reconstruction_agree() {
        let m = dense_ae();
        let x = Tensor::new(vec![100, 1, 8], (0..800).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let a = m.reconstruct_with(&x, Exec::Sequential).unwrap();
        let b = m.reconstruct_with(&x, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_examples() {
        let x = Tensor::from_vec(vec![3.0, 4.0]);
        let z = Tensor::from_vec(vec![0.0, 0.0]);
        assert_eq!(reconstruction_loss(&x, &z).unwrap(), 5.0);
        assert_eq!(reconstruction_loss(&z, &x).unwrap(), 5.0);
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        assert!(reconstruction_loss(&x, &Tensor::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let m = dense_ae();
        let mut tape = GradientTape::new();
        let g = Tensor::zeros(vec![1, 1, 8]);
        assert!(matches!(tape.backward(&m, &g), Err(Error::State(_))));
    }

    #[test]
    fn perfect_reconstruction_has_zero_gradient() {
        let enc = [LayerSpec::dense(2, 2, Activation::Identity)];
        let mut m = build_autoencoder(InputShape { channels: 1, length: 2 }, &enc, 2, 0).unwrap();
        for l in m.layers_mut() {
            l.weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let x = Tensor::new(vec![1, 1, 2], vec![0.3, 0.7]).unwrap();
        let (loss, grads) = loss_and_gradients(&m, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let mut m = dense_ae();
        let before = m.clone();
        let x = Tensor::zeros(vec![4, 1, 8]);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(&mut m, &x, &cfg, None).unwrap().is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn split_sessions_equal_one_long_run() {
        let x = Tensor::new(vec![20, 1, 8], (0..160).map(|i| (i as f32 * 0.3).sin()).collect()).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 6,
            ..Default::default()
        };
        let mut a = dense_ae();
        train(&mut a, &x, &cfg, None).unwrap();
        let mut b = dense_ae();
        let mut s = TrainSession::new(&b, &cfg).unwrap();
        s.run(&mut b, &x, 1, None).unwrap();
        s.run(&mut b, &x, 3, None).unwrap();
        assert_eq!(a, b);
    }
}

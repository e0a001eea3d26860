//! Small dense encoder/decoder with fully manual forward and backward
//! passes, wrapping the projection bottleneck into a complete training loop.
//! Gradients flow through encoder and decoder only; the bottleneck's basis
//! and mean are updated by their own streaming rules and never receive
//! gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bottleneck::{BottleneckLayout, LatentTensor};
use crate::datasets::ImageBatch;
use crate::error::{CoreError, Result};
use crate::linalg::{self, DenseMatrix};

/// Layer nonlinearity. Hidden layers use `Tanh`, output layers `Identity`;
/// both have derivatives expressible from the activation output alone, which
/// keeps the backward pass free of stored pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `out = act(input W^T + bias)`, weight is out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpStack {
    pub layers: Vec<DenseLayer>,
}

/// Post-activation outputs kept from a forward pass, one entry per layer,
/// plus the stack input. Consumed by [`MlpStack::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DenseMatrix,
    outputs: Vec<DenseMatrix>,
}

/// Parameter gradients for one stack, aligned with its layers.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::InvalidArgument(
                "stack needs at least one layer".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(CoreError::DimensionMismatch(format!(
                    "layer {i} bias has length {}, weight has {} rows",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(CoreError::NonFinite(format!(
                    "layer {i} bias is not finite"
                )));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(CoreError::DimensionMismatch(format!(
                    "layer {} outputs {}, layer {i} expects {}",
                    i - 1,
                    layers[i - 1].output_dim(),
                    layer.input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded stack over the dimension chain `dims`, tanh on hidden layers
    /// and identity on the last. Weights are Gaussian scaled by
    /// `1/sqrt(fan_in)`, biases zero.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CoreError::InvalidArgument(
                "dimension chain needs at least input and output".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(DenseLayer {
                weight: DenseMatrix::new(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
                activation: if l + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            });
        }
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    /// Forward over a batch of row vectors. Returns the output batch and the
    /// cache needed for one backward pass.
    pub fn forward(&self, input: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
        if input.cols() != self.input_dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "stack input has {} columns, expected {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut z = linalg::matmul(&current, &layer.weight.transpose())?;
            for r in 0..z.rows() {
                for c in 0..z.cols() {
                    z[(r, c)] = layer.activation.apply(z[(r, c)] + layer.bias[c]);
                }
            }
            outputs.push(z.clone());
            current = z;
        }
        Ok((
            current,
            ForwardCache {
                input: input.clone(),
                outputs,
            },
        ))
    }

    /// Backpropagate `grad_out` (gradient with respect to the stack output)
    /// through the cached pass. Returns the gradient with respect to the
    /// stack input and all parameter gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &DenseMatrix,
    ) -> Result<(DenseMatrix, StackGrads)> {
        let last = cache.outputs.last().expect("non-empty");
        if grad_out.rows() != last.rows() || grad_out.cols() != last.cols() {
            return Err(CoreError::DimensionMismatch(format!(
                "output gradient is {}x{}, forward output was {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                last.rows(),
                last.cols()
            )));
        }
        let mut weights = vec![DenseMatrix::zeros(1, 1); self.layers.len()];
        let mut biases = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[l];
            // through the activation
            let mut dz = DenseMatrix::zeros(grad.rows(), grad.cols());
            for r in 0..grad.rows() {
                for c in 0..grad.cols() {
                    dz[(r, c)] =
                        grad[(r, c)] * layer.activation.derivative_from_output(out[(r, c)]);
                }
            }
            let layer_input = if l == 0 {
                &cache.input
            } else {
                &cache.outputs[l - 1]
            };
            weights[l] = linalg::matmul(&dz.transpose(), layer_input)?;
            let mut db = vec![0.0; layer.output_dim()];
            for r in 0..dz.rows() {
                for (c, b) in db.iter_mut().enumerate() {
                    *b += dz[(r, c)];
                }
            }
            biases[l] = db;
            grad = linalg::matmul(&dz, &layer.weight)?;
        }
        Ok((grad, StackGrads { weights, biases }))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }
}

/// Mean-over-batch, sum-over-pixels squared error and its exact gradient
/// `2 (x_hat - x) / B` with respect to the estimate.
pub fn mse_loss(x_hat: &DenseMatrix, x: &ImageBatch) -> Result<(f64, DenseMatrix)> {
    let pixels = x.channels() * x.height() * x.width();
    if x_hat.rows() != x.batch() || x_hat.cols() != pixels {
        return Err(CoreError::DimensionMismatch(format!(
            "estimate is {}x{}, images are {}x{pixels}",
            x_hat.rows(),
            x_hat.cols(),
            x.batch()
        )));
    }
    let b = x.batch() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(x_hat.rows(), x_hat.cols());
    let target = x.values();
    for r in 0..x_hat.rows() {
        for c in 0..x_hat.cols() {
            let diff = x_hat[(r, c)] - target[r * pixels + c];
            loss += diff * diff;
            grad[(r, c)] = 2.0 * diff / b;
        }
    }
    Ok((loss / b, grad))
}

/// Adam hyperparameters. Defaults: learning rate 5e-4, betas (0.9, 0.999),
/// epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Standard Adam step with bias correction; `t` is the 1-based step count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || moments.m.len() != params.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            moments.m.len()
        )));
    }
    if t == 0 {
        return Err(CoreError::InvalidArgument(
            "adam step count starts at 1".into(),
        ));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
    for i in 0..params.len() {
        let g = grads[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Encoder/decoder pair with the image and latent shapes they map between.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAutoencoder {
    pub encoder: MlpStack,
    pub decoder: MlpStack,
    pub image_shape: (usize, usize, usize),
    pub latent_shape: (usize, usize, usize),
}

impl ToyAutoencoder {
    pub fn new(
        encoder: MlpStack,
        decoder: MlpStack,
        image_shape: (usize, usize, usize),
        latent_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let pixels = image_shape.0 * image_shape.1 * image_shape.2;
        let latent = latent_shape.0 * latent_shape.1 * latent_shape.2;
        if encoder.input_dim() != pixels || decoder.output_dim() != pixels {
            return Err(CoreError::DimensionMismatch(format!(
                "image shape needs {pixels} values, encoder takes {} and decoder emits {}",
                encoder.input_dim(),
                decoder.output_dim()
            )));
        }
        if encoder.output_dim() != latent || decoder.input_dim() != latent {
            return Err(CoreError::DimensionMismatch(format!(
                "latent shape needs {latent} values, encoder emits {} and decoder takes {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            image_shape,
            latent_shape,
        })
    }

    /// Encode a batch of images into the latent tensor shape.
    pub fn encode(&self, x: &ImageBatch) -> Result<(LatentTensor, ForwardCache)> {
        if (x.channels(), x.height(), x.width()) != self.image_shape {
            return Err(CoreError::DimensionMismatch(format!(
                "images are {}x{}x{}, model expects {}x{}x{}",
                x.channels(),
                x.height(),
                x.width(),
                self.image_shape.0,
                self.image_shape.1,
                self.image_shape.2
            )));
        }
        let (rows, cache) = self.encoder.forward(&x.to_rows())?;
        let (d, h, w) = self.latent_shape;
        Ok((LatentTensor::from_rows(&rows, d, h, w)?, cache))
    }

    /// Decode a latent tensor into flattened image estimates (one row per
    /// sample). Outputs are unconstrained reals; clamping is a consumer
    /// decision.
    pub fn decode(&self, h: &LatentTensor) -> Result<(DenseMatrix, ForwardCache)> {
        let (d, hh, ww) = self.latent_shape;
        if (h.channels(), h.height(), h.width()) != (d, hh, ww) {
            return Err(CoreError::DimensionMismatch(format!(
                "latents are {}x{}x{}, model expects {d}x{hh}x{ww}",
                h.channels(),
                h.height(),
                h.width()
            )));
        }
        self.decoder.forward(&h.to_rows())
    }
}

/// Everything one optimization step reports.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: f64,
    /// Mean `||dC||_F` across bottleneck states, zero if no update ran.
    pub mean_delta_norm: f64,
    /// Worst `||C^T C - I||_F` across states after the step.
    pub max_ortho_drift: f64,
    /// Names of every parameter tensor that received a gradient this step.
    /// Bottleneck parameters never appear here.
    pub grad_names: Vec<String>,
}

/// Training loop state: model, bottleneck layout and optimizer moments.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ToyAutoencoder,
    pub layout: BottleneckLayout,
    pub adam: AdamConfig,
    /// When true (default) the statistics update runs before the forward of
    /// the same minibatch, so the forward sees the freshest basis and mean.
    /// When false the update runs at the end of the step and the whole
    /// forward/backward uses the previous snapshot.
    pub update_before_forward: bool,
    enc_moments: Vec<(AdamMoments, AdamMoments)>,
    dec_moments: Vec<(AdamMoments, AdamMoments)>,
    adam_step: u64,
    global_step: u64,
}

impl Trainer {
    pub fn new(
        model: ToyAutoencoder,
        layout: BottleneckLayout,
        adam: AdamConfig,
        update_before_forward: bool,
    ) -> Result<Self> {
        if (layout.channels(), layout.height(), layout.width()) != model.latent_shape {
            return Err(CoreError::DimensionMismatch(format!(
                "layout covers {}x{}x{}, model produces {}x{}x{}",
                layout.channels(),
                layout.height(),
                layout.width(),
                model.latent_shape.0,
                model.latent_shape.1,
                model.latent_shape.2
            )));
        }
        let enc_moments = model
            .encoder
            .layers
            .iter()
            .map(|l| {
                (
                    AdamMoments::zeros(l.weight.data().len()),
                    AdamMoments::zeros(l.bias.len()),
                )
            })
            .collect();
        let dec_moments = model
            .decoder
            .layers
            .iter()
            .map(|l| {
                (
                    AdamMoments::zeros(l.weight.data().len()),
                    AdamMoments::zeros(l.bias.len()),
                )
            })
            .collect();
        Ok(Self {
            model,
            layout,
            adam,
            update_before_forward,
            enc_moments,
            dec_moments,
            adam_step: 0,
            global_step: 0,
        })
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    /// Forward pass with the bottleneck frozen; returns flattened image
    /// estimates, one row per sample.
    pub fn forward_frozen(&self, batch: &ImageBatch) -> Result<DenseMatrix> {
        let (h, _) = self.model.encode(batch)?;
        let h_hat = self.layout.forward(&h)?;
        let (x_hat, _) = self.model.decode(&h_hat)?;
        Ok(x_hat)
    }

    /// Loss of the frozen forward pass.
    pub fn loss_frozen(&self, batch: &ImageBatch) -> Result<f64> {
        let x_hat = self.forward_frozen(batch)?;
        Ok(mse_loss(&x_hat, batch)?.0)
    }

    /// Full gradient computation with the bottleneck frozen, nothing
    /// applied. Returns loss and per-stack gradients; pure, so repeated
    /// calls are bitwise identical.
    pub fn grads_frozen(&self, batch: &ImageBatch) -> Result<(f64, StackGrads, StackGrads)> {
        let (h, enc_cache) = self.model.encode(batch)?;
        let h_hat = self.layout.forward(&h)?;
        let (x_hat, dec_cache) = self.model.decode(&h_hat)?;
        let (loss, grad_xhat) = mse_loss(&x_hat, batch)?;

        let (grad_hhat_rows, dec_grads) = self.model.decoder.backward(&dec_cache, &grad_xhat)?;
        let (d, hh, ww) = self.model.latent_shape;
        let grad_hhat = LatentTensor::from_rows(&grad_hhat_rows, d, hh, ww)?;
        let grad_h = self.layout.backward(&grad_hhat)?;
        let (_, enc_grads) = self.model.encoder.backward(&enc_cache, &grad_h.to_rows())?;
        Ok((loss, enc_grads, dec_grads))
    }

    /// One full optimization step: encoder forward, bottleneck statistics
    /// update and quantization, decoder forward, loss, backward through
    /// decoder / stop-gradient bottleneck / encoder, Adam on encoder and
    /// decoder parameters only.
    pub fn train_step(&mut self, batch: &ImageBatch) -> Result<StepReport> {
        let (h, enc_cache) = self.model.encode(batch)?;

        let mut traces = Vec::new();
        if self.update_before_forward {
            traces = self.layout.update(&h)?;
        }
        let h_hat = self.layout.forward(&h)?;
        let (x_hat, dec_cache) = self.model.decode(&h_hat)?;
        let (loss, grad_xhat) = mse_loss(&x_hat, batch)?;
        if !loss.is_finite() {
            return Err(CoreError::Numerical(format!(
                "loss became non-finite at step {}",
                self.global_step
            )));
        }

        let (grad_hhat_rows, dec_grads) = self.model.decoder.backward(&dec_cache, &grad_xhat)?;
        let (d, hh, ww) = self.model.latent_shape;
        let grad_hhat = LatentTensor::from_rows(&grad_hhat_rows, d, hh, ww)?;
        let grad_h = self.layout.backward(&grad_hhat)?;
        let (_, enc_grads) = self.model.encoder.backward(&enc_cache, &grad_h.to_rows())?;

        self.adam_step += 1;
        let t = self.adam_step;
        let mut grad_names = Vec::new();
        for (l, layer) in self.model.encoder.layers.iter_mut().enumerate() {
            grad_names.push(format!("encoder.layer{l}.weight"));
            adam_update(
                layer.weight.data_mut(),
                enc_grads.weights[l].data(),
                &mut self.enc_moments[l].0,
                t,
                &self.adam,
            )?;
            grad_names.push(format!("encoder.layer{l}.bias"));
            adam_update(
                &mut layer.bias,
                &enc_grads.biases[l],
                &mut self.enc_moments[l].1,
                t,
                &self.adam,
            )?;
        }
        for (l, layer) in self.model.decoder.layers.iter_mut().enumerate() {
            grad_names.push(format!("decoder.layer{l}.weight"));
            adam_update(
                layer.weight.data_mut(),
                dec_grads.weights[l].data(),
                &mut self.dec_moments[l].0,
                t,
                &self.adam,
            )?;
            grad_names.push(format!("decoder.layer{l}.bias"));
            adam_update(
                &mut layer.bias,
                &dec_grads.biases[l],
                &mut self.dec_moments[l].1,
                t,
                &self.adam,
            )?;
        }

        if !self.update_before_forward {
            traces = self.layout.update(&h)?;
        }
        self.global_step += 1;

        let mean_delta_norm = if traces.is_empty() {
            0.0
        } else {
            traces.iter().map(|t| t.delta_norm).sum::<f64>() / traces.len() as f64
        };
        Ok(StepReport {
            loss,
            mean_delta_norm,
            max_ortho_drift: self.layout.max_ortho_drift(),
            grad_names,
        })
    }
}

//! Minimal 1-D neural network engine.
//!
//! Supports exactly the layer kinds the genome space can encode: Conv1D
//! (stride 1, 'same' zero padding), batch normalization, SELU/ReLU
//! activations, average/max pooling with independent size and stride,
//! flatten, dense layers, and a softmax output layer. Training runs
//! mini-batch gradient descent with Adam; every gradient is checked against
//! central finite differences in the test suite.
//!
//! Dense layers compute `phi(sum_i w_i x_i + b)`; batch normalization uses
//! batch statistics while training and running statistics (momentum 0.9)
//! at inference. All arithmetic is f64: at desk scale the memory cost is
//! irrelevant and a single precision path keeps finite-difference gradient
//! checks tight.

mod kernels;

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub use kernels::{pool_out_len, ActivationKind, PoolKind};

/// Probabilities below this are clamped before taking logarithms, both in
/// the loss and in attack-phase log-likelihood accumulation.
pub const PROB_CLAMP: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {layer} ({kind}): {reason}")]
    InvalidSpec {
        layer: usize,
        kind: String,
        reason: String,
    },
    #[error("input width mismatch: network expects {expected} samples, batch has {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("probability rows ({rows}) and labels ({labels}) disagree")]
    LabelCount { rows: usize, labels: usize },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt network file: {0}")]
    Corrupt(String),
    #[error("unsupported network file version {0}")]
    UnsupportedVersion(u32),
}

/// One layer of a network, as configuration only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1D { n_filters: usize, kernel_size: usize },
    BatchNorm,
    Activation(ActivationKind),
    Pool { kind: PoolKind, size: usize, stride: usize },
    Flatten,
    Dense { n_neurons: usize },
    SoftmaxOutput { n_classes: usize },
}

impl LayerSpec {
    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::BatchNorm => "BatchNorm",
            LayerSpec::Activation(ActivationKind::Selu) => "SELU",
            LayerSpec::Activation(ActivationKind::Relu) => "ReLU",
            LayerSpec::Pool { kind: PoolKind::Average, .. } => "AveragePool",
            LayerSpec::Pool { kind: PoolKind::Max, .. } => "MaxPool",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::SoftmaxOutput { .. } => "SoftmaxOutput",
        }
    }
}

/// Activations flowing between layers.
#[derive(Debug, Clone)]
enum Feature {
    Map(Array3<f64>),  // [batch, channels, length]
    Flat(Array2<f64>), // [batch, features]
}

/// Static shape between layers, resolved at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Map { channels: usize, length: usize },
    Flat { features: usize },
}

impl Shape {
    fn describe(&self) -> String {
        match self {
            Shape::Map { channels, length } => format!("{channels}x{length}"),
            Shape::Flat { features } => format!("{features}"),
        }
    }
}

/// Parameters of one layer.
#[derive(Debug, Clone)]
enum LayerState {
    Conv1D {
        weights: Array3<f64>, // [filters, in_channels, kernel]
        bias: Array1<f64>,
    },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    Activation(ActivationKind),
    Pool {
        kind: PoolKind,
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        weights: Array2<f64>, // [in, out]
        bias: Array1<f64>,
    },
    SoftmaxOutput {
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
}

enum Cache {
    Conv { input: Array3<f64> },
    Bn(kernels::BnCache),
    Act { input: Feature },
    Pool { in_dim: (usize, usize, usize), argmax: Option<Vec<usize>> },
    Flatten { channels: usize, length: usize },
    Dense { input: Array2<f64> },
    Softmax { input: Array2<f64>, probs: Array2<f64> },
}

/// Per-layer description for architecture summaries.
#[derive(Debug, Clone, Serialize)]
pub struct LayerSummary {
    pub kind: String,
    pub detail: String,
    pub output_shape: String,
    pub parameters: usize,
}

/// A network with concrete parameters and Adam optimizer state.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    specs: Vec<LayerSpec>,
    input_length: usize,
    n_classes: usize,
    layers: Vec<LayerState>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
    train_seed: u64,
}

/// Walks the spec list and returns the shape after every layer.
/// Errors name the offending layer.
fn resolve_shapes(specs: &[LayerSpec], input_length: usize) -> Result<Vec<Shape>, NetError> {
    if input_length == 0 {
        return Err(NetError::InvalidSpec {
            layer: 0,
            kind: "input".into(),
            reason: "input length must be positive".into(),
        });
    }
    let invalid = |layer: usize, spec: &LayerSpec, reason: String| NetError::InvalidSpec {
        layer,
        kind: spec.kind_name().into(),
        reason,
    };
    let mut shape = Shape::Map { channels: 1, length: input_length };
    let mut shapes = Vec::with_capacity(specs.len());
    for (idx, spec) in specs.iter().enumerate() {
        shape = match (spec, shape) {
            (LayerSpec::Conv1D { n_filters, kernel_size }, Shape::Map { length, .. }) => {
                if *n_filters == 0 || *kernel_size == 0 {
                    return Err(invalid(idx, spec, "filters and kernel size must be positive".into()));
                }
                Shape::Map { channels: *n_filters, length }
            }
            (LayerSpec::BatchNorm, Shape::Map { channels, length }) => {
                Shape::Map { channels, length }
            }
            (LayerSpec::Activation(_), any) => any,
            (LayerSpec::Pool { size, stride, .. }, Shape::Map { channels, length }) => {
                if *size < 2 || *stride < 2 {
                    return Err(invalid(idx, spec, "pool size and stride must be at least 2".into()));
                }
                match pool_out_len(length, *size, *stride) {
                    Some(out) => Shape::Map { channels, length: out },
                    None => {
                        return Err(invalid(
                            idx,
                            spec,
                            format!("pool size {size} exceeds input length {length}; output collapses below 1"),
                        ))
                    }
                }
            }
            (LayerSpec::Flatten, Shape::Map { channels, length }) => {
                Shape::Flat { features: channels * length }
            }
            (LayerSpec::Dense { n_neurons }, Shape::Flat { .. }) => {
                if *n_neurons == 0 {
                    return Err(invalid(idx, spec, "dense layer needs at least one neuron".into()));
                }
                Shape::Flat { features: *n_neurons }
            }
            (LayerSpec::SoftmaxOutput { n_classes }, Shape::Flat { .. }) => {
                if idx + 1 != specs.len() {
                    return Err(invalid(idx, spec, "softmax output must be the final layer".into()));
                }
                if *n_classes == 0 {
                    return Err(invalid(idx, spec, "needs at least one class".into()));
                }
                Shape::Flat { features: *n_classes }
            }
            (_, s) => {
                return Err(invalid(
                    idx,
                    spec,
                    format!("cannot apply to {} input", s.describe()),
                ))
            }
        };
        shapes.push(shape);
    }
    match shapes.last() {
        Some(Shape::Flat { .. }) if matches!(specs.last(), Some(LayerSpec::SoftmaxOutput { .. })) => {
            Ok(shapes)
        }
        _ => Err(NetError::InvalidSpec {
            layer: specs.len().saturating_sub(1),
            kind: specs.last().map(|s| s.kind_name()).unwrap_or("none").into(),
            reason: "network must end with a softmax output layer".into(),
        }),
    }
}

/// He-normal and Glorot-uniform initialization per layer kind: He for
/// conv and dense weights, Glorot uniform for the output layer, zero
/// biases, batch-norm scale 1 / shift 0. Deterministic by seed.
pub fn init_parameters(
    specs: Vec<LayerSpec>,
    input_length: usize,
    seed: u64,
) -> Result<TrainedNetwork, NetError> {
    let shapes = resolve_shapes(&specs, input_length)?;
    let mut rng = rng::from_seed(seed);
    let normal = StandardNormal;
    let he = |fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let z: f64 = normal.sample(rng);
        z * (2.0 / fan_in as f64).sqrt()
    };

    let mut layers = Vec::with_capacity(specs.len());
    let mut shape = Shape::Map { channels: 1, length: input_length };
    for (spec, out_shape) in specs.iter().zip(shapes.iter()) {
        let state = match spec {
            LayerSpec::Conv1D { n_filters, kernel_size } => {
                let in_c = match shape {
                    Shape::Map { channels, .. } => channels,
                    Shape::Flat { .. } => unreachable!("validated"),
                };
                let fan_in = in_c * kernel_size;
                let weights =
                    Array3::from_shape_fn((*n_filters, in_c, *kernel_size), |_| he(fan_in, &mut rng));
                LayerState::Conv1D { weights, bias: Array1::zeros(*n_filters) }
            }
            LayerSpec::BatchNorm => {
                let c = match shape {
                    Shape::Map { channels, .. } => channels,
                    Shape::Flat { .. } => unreachable!("validated"),
                };
                LayerState::BatchNorm {
                    gamma: Array1::ones(c),
                    beta: Array1::zeros(c),
                    running_mean: Array1::zeros(c),
                    running_var: Array1::ones(c),
                }
            }
            LayerSpec::Activation(kind) => LayerState::Activation(*kind),
            LayerSpec::Pool { kind, size, stride } => {
                LayerState::Pool { kind: *kind, size: *size, stride: *stride }
            }
            LayerSpec::Flatten => LayerState::Flatten,
            LayerSpec::Dense { n_neurons } => {
                let fan_in = match shape {
                    Shape::Flat { features } => features,
                    Shape::Map { .. } => unreachable!("validated"),
                };
                let weights =
                    Array2::from_shape_fn((fan_in, *n_neurons), |_| he(fan_in, &mut rng));
                LayerState::Dense { weights, bias: Array1::zeros(*n_neurons) }
            }
            LayerSpec::SoftmaxOutput { n_classes } => {
                let fan_in = match shape {
                    Shape::Flat { features } => features,
                    Shape::Map { .. } => unreachable!("validated"),
                };
                let limit = (6.0 / (fan_in + n_classes) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_in, *n_classes), |_| {
                    let u: f64 = rng.random();
                    (2.0 * u - 1.0) * limit
                });
                LayerState::SoftmaxOutput { weights, bias: Array1::zeros(*n_classes) }
            }
        };
        layers.push(state);
        shape = *out_shape;
    }

    let n_classes = match specs.last() {
        Some(LayerSpec::SoftmaxOutput { n_classes }) => *n_classes,
        _ => unreachable!("validated"),
    };
    let n_params = layers.iter().map(layer_param_count).sum();
    Ok(TrainedNetwork {
        specs,
        input_length,
        n_classes,
        layers,
        adam_m: vec![0.0; n_params],
        adam_v: vec![0.0; n_params],
        adam_t: 0,
        train_seed: seed,
    })
}

fn layer_param_count(layer: &LayerState) -> usize {
    match layer {
        LayerState::Conv1D { weights, bias } => weights.len() + bias.len(),
        LayerState::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
        LayerState::Dense { weights, bias } | LayerState::SoftmaxOutput { weights, bias } => {
            weights.len() + bias.len()
        }
        _ => 0,
    }
}

impl TrainedNetwork {
    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(layer_param_count).sum()
    }

    /// Layer-by-layer architecture summary with trainable parameter counts.
    pub fn summary(&self) -> Vec<LayerSummary> {
        let shapes = resolve_shapes(&self.specs, self.input_length).expect("built network");
        self.specs
            .iter()
            .zip(self.layers.iter())
            .zip(shapes.iter())
            .map(|((spec, layer), shape)| {
                let detail = match spec {
                    LayerSpec::Conv1D { n_filters, kernel_size } => {
                        format!("{n_filters} filters, kernel {kernel_size}, stride 1, same padding")
                    }
                    LayerSpec::Pool { size, stride, .. } => {
                        format!("size {size}, stride {stride}")
                    }
                    LayerSpec::Dense { n_neurons } => format!("{n_neurons} neurons"),
                    LayerSpec::SoftmaxOutput { n_classes } => format!("{n_classes} classes"),
                    _ => String::new(),
                };
                LayerSummary {
                    kind: spec.kind_name().into(),
                    detail,
                    output_shape: shape.describe(),
                    parameters: layer_param_count(layer),
                }
            })
            .collect()
    }

    /// All trainable parameters, flattened in layer order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                LayerState::Conv1D { weights, bias } => {
                    out.extend(weights.iter());
                    out.extend(bias.iter());
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.extend(gamma.iter());
                    out.extend(beta.iter());
                }
                LayerState::Dense { weights, bias }
                | LayerState::SoftmaxOutput { weights, bias } => {
                    out.extend(weights.iter());
                    out.extend(bias.iter());
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites all trainable parameters from a flat vector.
    pub fn assign_params(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::GradientShape {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            match layer {
                LayerState::Conv1D { weights, bias } => {
                    for w in weights.iter_mut() {
                        *w = *it.next().unwrap();
                    }
                    for b in bias.iter_mut() {
                        *b = *it.next().unwrap();
                    }
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    for g in gamma.iter_mut() {
                        *g = *it.next().unwrap();
                    }
                    for b in beta.iter_mut() {
                        *b = *it.next().unwrap();
                    }
                }
                LayerState::Dense { weights, bias }
                | LayerState::SoftmaxOutput { weights, bias } => {
                    for w in weights.iter_mut() {
                        *w = *it.next().unwrap();
                    }
                    for b in bias.iter_mut() {
                        *b = *it.next().unwrap();
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<(), NetError> {
        if batch.nrows() == 0 {
            return Err(NetError::EmptyBatch);
        }
        if batch.ncols() != self.input_length {
            return Err(NetError::InputWidth {
                expected: self.input_length,
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    fn input_to_map(batch: &Array2<f64>) -> Array3<f64> {
        let (b, l) = batch.dim();
        batch
            .to_shape((b, 1, l))
            .expect("row-major batch")
            .to_owned()
    }

    /// Inference forward pass: batch norm uses running statistics. Returns
    /// one probability row per input trace.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        self.check_input(batch)?;
        let mut feat = Feature::Map(Self::input_to_map(batch));
        for layer in &self.layers {
            feat = match (layer, feat) {
                (LayerState::Conv1D { weights, bias }, Feature::Map(x)) => {
                    Feature::Map(kernels::conv1d_forward(&x, weights, bias))
                }
                (
                    LayerState::BatchNorm { gamma, beta, running_mean, running_var },
                    Feature::Map(x),
                ) => Feature::Map(kernels::bn_forward_infer(&x, gamma, beta, running_mean, running_var)),
                (LayerState::Activation(kind), f) => apply_activation(*kind, f),
                (LayerState::Pool { kind, size, stride }, Feature::Map(x)) => {
                    Feature::Map(kernels::pool_forward(&x, *kind, *size, *stride).0)
                }
                (LayerState::Flatten, Feature::Map(x)) => Feature::Flat(flatten_map(&x)),
                (LayerState::Dense { weights, bias }, Feature::Flat(x)) => {
                    Feature::Flat(kernels::dense_forward(&x, weights, bias))
                }
                (LayerState::SoftmaxOutput { weights, bias }, Feature::Flat(x)) => {
                    Feature::Flat(kernels::softmax(&kernels::dense_forward(&x, weights, bias)))
                }
                _ => unreachable!("shapes validated at build time"),
            };
        }
        match feat {
            Feature::Flat(p) => Ok(p),
            Feature::Map(_) => unreachable!("network ends with softmax"),
        }
    }

    /// Training-mode forward pass (batch-norm batch statistics). Does not
    /// mutate the network; running statistics are updated separately from
    /// the returned caches.
    fn forward_training(&self, batch: &Array2<f64>) -> Result<(Vec<Cache>, Array2<f64>), NetError> {
        self.check_input(batch)?;
        let mut feat = Feature::Map(Self::input_to_map(batch));
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match (layer, feat) {
                (LayerState::Conv1D { weights, bias }, Feature::Map(x)) => {
                    let out = kernels::conv1d_forward(&x, weights, bias);
                    (Feature::Map(out), Cache::Conv { input: x })
                }
                (LayerState::BatchNorm { gamma, beta, .. }, Feature::Map(x)) => {
                    let (out, cache) = kernels::bn_forward_train(&x, gamma, beta);
                    (Feature::Map(out), Cache::Bn(cache))
                }
                (LayerState::Activation(kind), f) => {
                    let out = apply_activation(*kind, f.clone());
                    (out, Cache::Act { input: f })
                }
                (LayerState::Pool { kind, size, stride }, Feature::Map(x)) => {
                    let (out, argmax) = kernels::pool_forward(&x, *kind, *size, *stride);
                    (Feature::Map(out), Cache::Pool { in_dim: x.dim(), argmax })
                }
                (LayerState::Flatten, Feature::Map(x)) => {
                    let (_, c, l) = x.dim();
                    (Feature::Flat(flatten_map(&x)), Cache::Flatten { channels: c, length: l })
                }
                (LayerState::Dense { weights, bias }, Feature::Flat(x)) => {
                    let out = kernels::dense_forward(&x, weights, bias);
                    (Feature::Flat(out), Cache::Dense { input: x })
                }
                (LayerState::SoftmaxOutput { weights, bias }, Feature::Flat(x)) => {
                    let probs = kernels::softmax(&kernels::dense_forward(&x, weights, bias));
                    let cache = Cache::Softmax { input: x, probs: probs.clone() };
                    (Feature::Flat(probs), cache)
                }
                _ => unreachable!("shapes validated at build time"),
            };
            caches.push(cache);
            feat = next;
        }
        match feat {
            Feature::Flat(p) => Ok((caches, p)),
            Feature::Map(_) => unreachable!("network ends with softmax"),
        }
    }

    /// Training-mode loss; the quantity `backward` differentiates.
    pub fn training_loss(&self, batch: &Array2<f64>, labels: &[u8]) -> Result<f64, NetError> {
        let (_, probs) = self.forward_training(batch)?;
        cce_loss(&probs, labels)
    }

    /// Loss and d(loss)/d(parameter) for every trainable parameter,
    /// flattened in the same order as [`Self::flatten_params`].
    pub fn backward(&self, batch: &Array2<f64>, labels: &[u8]) -> Result<(f64, Vec<f64>), NetError> {
        let (caches, probs) = self.forward_training(batch)?;
        let loss = cce_loss(&probs, labels)?;
        let grads = self.backprop(&caches, &probs, labels);
        Ok((loss, grads))
    }

    fn backprop(&self, caches: &[Cache], probs: &Array2<f64>, labels: &[u8]) -> Vec<f64> {
        let n = probs.nrows() as f64;
        // dL/dp of the clamped cross-entropy
        let mut d_probs = Array2::<f64>::zeros(probs.raw_dim());
        for (i, &label) in labels.iter().enumerate() {
            let p = probs[[i, label as usize]];
            if p >= PROB_CLAMP {
                d_probs[[i, label as usize]] = -1.0 / (n * p);
            }
        }

        let mut grads_rev: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut d_feat = Feature::Flat(d_probs);
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            let (grad, d_prev) = match (layer, cache, d_feat) {
                (
                    LayerState::SoftmaxOutput { weights, .. },
                    Cache::Softmax { input, probs },
                    Feature::Flat(dp),
                ) => {
                    let dz = kernels::softmax_backward(probs, &dp);
                    let (dw, db, dx) = kernels::dense_backward(input, weights, &dz);
                    let mut g: Vec<f64> = dw.iter().cloned().collect();
                    g.extend(db.iter());
                    (g, Feature::Flat(dx))
                }
                (LayerState::Dense { weights, .. }, Cache::Dense { input }, Feature::Flat(dy)) => {
                    let (dw, db, dx) = kernels::dense_backward(input, weights, &dy);
                    let mut g: Vec<f64> = dw.iter().cloned().collect();
                    g.extend(db.iter());
                    (g, Feature::Flat(dx))
                }
                (LayerState::Flatten, Cache::Flatten { channels, length }, Feature::Flat(dy)) => {
                    let b = dy.nrows();
                    let dx = dy
                        .into_shape_with_order((b, *channels, *length))
                        .expect("flatten preserves element count");
                    (Vec::new(), Feature::Map(dx))
                }
                (LayerState::Pool { kind, size, stride }, Cache::Pool { in_dim, argmax }, Feature::Map(dy)) => {
                    let dx = kernels::pool_backward(*in_dim, *kind, *size, *stride, argmax.as_deref(), &dy);
                    (Vec::new(), Feature::Map(dx))
                }
                (LayerState::Activation(kind), Cache::Act { input }, dy) => {
                    (Vec::new(), activation_backward(*kind, input, dy))
                }
                (LayerState::BatchNorm { gamma, .. }, Cache::Bn(cache), Feature::Map(dy)) => {
                    let (dg, db, dx) = kernels::bn_backward(cache, gamma, &dy);
                    let mut g: Vec<f64> = dg.iter().cloned().collect();
                    g.extend(db.iter());
                    (g, Feature::Map(dx))
                }
                (LayerState::Conv1D { weights, .. }, Cache::Conv { input }, Feature::Map(dy)) => {
                    let (dw, db, dx) = kernels::conv1d_backward(input, weights, &dy);
                    let mut g: Vec<f64> = dw.iter().cloned().collect();
                    g.extend(db.iter());
                    (g, Feature::Map(dx))
                }
                _ => unreachable!("cache kinds align with layers"),
            };
            grads_rev.push(grad);
            d_feat = d_prev;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for g in grads_rev.into_iter().rev() {
            flat.extend(g);
        }
        flat
    }

    /// Blends batch statistics from a training forward pass into the
    /// running statistics (momentum 0.9).
    fn update_running_stats(&mut self, caches: &[Cache]) {
        for (layer, cache) in self.layers.iter_mut().zip(caches.iter()) {
            if let (LayerState::BatchNorm { running_mean, running_var, .. }, Cache::Bn(bn)) =
                (layer, cache)
            {
                for (rm, &bm) in running_mean.iter_mut().zip(bn.batch_mean.iter()) {
                    *rm = kernels::BN_MOMENTUM * *rm + (1.0 - kernels::BN_MOMENTUM) * bm;
                }
                for (rv, &bv) in running_var.iter_mut().zip(bn.batch_var.iter()) {
                    *rv = kernels::BN_MOMENTUM * *rv + (1.0 - kernels::BN_MOMENTUM) * bv;
                }
            }
        }
    }

    /// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected).
    pub fn adam_step(&mut self, grads: &[f64], lr: f64) -> Result<(), NetError> {
        let n_params = self.param_count();
        if grads.len() != n_params {
            return Err(NetError::GradientShape { expected: n_params, got: grads.len() });
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let corr1 = 1.0 - ADAM_BETA1.powi(t);
        let corr2 = 1.0 - ADAM_BETA2.powi(t);
        let mut params = self.flatten_params();
        for i in 0..n_params {
            let g = grads[i];
            self.adam_m[i] = ADAM_BETA1 * self.adam_m[i] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[i] = ADAM_BETA2 * self.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.adam_m[i] / corr1;
            let v_hat = self.adam_v[i] / corr2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        self.assign_params(&params)
    }

    /// Mini-batch training: shuffles per epoch with the given seed, then
    /// runs forward/backward/adam per batch. Deterministic in
    /// (initial parameters, data, seed).
    pub fn train(
        &mut self,
        traces: &Array2<f64>,
        labels: &[u8],
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> Result<(), NetError> {
        if traces.nrows() == 0 {
            return Err(NetError::EmptyBatch);
        }
        if traces.nrows() != labels.len() {
            return Err(NetError::LabelCount { rows: traces.nrows(), labels: labels.len() });
        }
        self.check_input(traces)?;
        let batch_size = batch_size.max(1);
        self.train_seed = seed;
        let mut rng = rng::from_seed(seed);
        let n = traces.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(batch_size) {
                let mut batch = Array2::<f64>::zeros((chunk.len(), self.input_length));
                let mut batch_labels = Vec::with_capacity(chunk.len());
                for (row, &idx) in chunk.iter().enumerate() {
                    batch.slice_mut(s![row, ..]).assign(&traces.slice(s![idx, ..]));
                    batch_labels.push(labels[idx]);
                }
                let (caches, probs) = self.forward_training(&batch)?;
                let grads = self.backprop(&caches, &probs, &batch_labels);
                self.update_running_stats(&caches);
                self.adam_step(&grads, lr)?;
            }
        }
        Ok(())
    }
}

fn flatten_map(x: &Array3<f64>) -> Array2<f64> {
    let (b, c, l) = x.dim();
    x.to_shape((b, c * l)).expect("row-major map").to_owned()
}

fn apply_activation(kind: ActivationKind, feat: Feature) -> Feature {
    match feat {
        Feature::Map(x) => Feature::Map(x.mapv(|v| kernels::activate(kind, v))),
        Feature::Flat(x) => Feature::Flat(x.mapv(|v| kernels::activate(kind, v))),
    }
}

fn activation_backward(kind: ActivationKind, input: &Feature, d_out: Feature) -> Feature {
    match (input, d_out) {
        (Feature::Map(x), Feature::Map(dy)) => {
            let mut dx = dy;
            dx.zip_mut_with(x, |d, &xv| *d *= kernels::activate_grad(kind, xv));
            Feature::Map(dx)
        }
        (Feature::Flat(x), Feature::Flat(dy)) => {
            let mut dx = dy;
            dx.zip_mut_with(x, |d, &xv| *d *= kernels::activate_grad(kind, xv));
            Feature::Flat(dx)
        }
        _ => unreachable!("activation preserves feature kind"),
    }
}

/// Mean categorical cross-entropy with one-hot targets; logarithms are
/// clamped below at [`PROB_CLAMP`].
pub fn cce_loss(probs: &Array2<f64>, labels: &[u8]) -> Result<f64, NetError> {
    if probs.nrows() != labels.len() {
        return Err(NetError::LabelCount { rows: probs.nrows(), labels: labels.len() });
    }
    if probs.nrows() == 0 {
        return Err(NetError::EmptyBatch);
    }
    let n_classes = probs.ncols();
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels.iter()) {
        let label = label as usize;
        if label >= n_classes {
            return Err(NetError::LabelOutOfRange { label, n_classes });
        }
        total -= row[label].max(PROB_CLAMP).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &Array2<f64>, labels: &[u8]) -> f64 {
    let mut hits = 0usize;
    for (row, &label) in probs.rows().into_iter().zip(labels.iter()) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            hits += 1;
        }
    }
    hits as f64 / labels.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// Serialization: JSON header + little-endian f64 tensor blobs
// ---------------------------------------------------------------------------

const NET_MAGIC: &[u8; 8] = b"NASCTYNN";
const NET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetHeader {
    version: u32,
    input_length: usize,
    specs: Vec<LayerSpec>,
    train_seed: u64,
    adam_t: u64,
    n_params: usize,
    n_running_stats: usize,
}

impl TrainedNetwork {
    fn running_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let LayerState::BatchNorm { running_mean, running_var, .. } = layer {
                out.extend(running_mean.iter());
                out.extend(running_var.iter());
            }
        }
        out
    }

    fn assign_running_stats(&mut self, stats: &[f64]) -> Result<(), NetError> {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let LayerState::BatchNorm { running_mean, running_var, .. } = layer {
                for v in running_mean.iter_mut().chain(running_var.iter_mut()) {
                    *v = *it
                        .next()
                        .copied()
                        .as_ref()
                        .ok_or_else(|| NetError::Corrupt("running stats blob too short".into()))?;
                }
            }
        }
        if it.next().is_some() {
            return Err(NetError::Corrupt("running stats blob too long".into()));
        }
        Ok(())
    }

    /// Writes the network: JSON header describing the specs plus raw
    /// little-endian f64 blobs for parameters, running statistics, and
    /// optimizer moments.
    pub fn save(&self, path: &std::path::Path) -> Result<(), NetError> {
        use std::io::Write;
        let header = NetHeader {
            version: NET_VERSION,
            input_length: self.input_length,
            specs: self.specs.clone(),
            train_seed: self.train_seed,
            adam_t: self.adam_t,
            n_params: self.param_count(),
            n_running_stats: self.running_stats().len(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| NetError::Corrupt(e.to_string()))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(NET_MAGIC)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        let write_blob = |values: &[f64], w: &mut dyn Write| -> std::io::Result<()> {
            let mut buf = Vec::with_capacity(values.len() * 8);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)
        };
        write_blob(&self.flatten_params(), &mut w)?;
        write_blob(&self.running_stats(), &mut w)?;
        write_blob(&self.adam_m, &mut w)?;
        write_blob(&self.adam_v, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TrainedNetwork, NetError> {
        use std::io::Read;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| NetError::Corrupt("missing magic".into()))?;
        if &magic != NET_MAGIC {
            return Err(NetError::Corrupt(format!("bad magic {magic:02x?}")));
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)
            .map_err(|_| NetError::Corrupt("missing header length".into()))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json)
            .map_err(|_| NetError::Corrupt("truncated header".into()))?;
        let header: NetHeader = serde_json::from_slice(&header_json)
            .map_err(|e| NetError::Corrupt(format!("header parse: {e}")))?;
        if header.version != NET_VERSION {
            return Err(NetError::UnsupportedVersion(header.version));
        }

        let mut net = init_parameters(header.specs, header.input_length, header.train_seed)?;
        if net.param_count() != header.n_params {
            return Err(NetError::Corrupt("parameter count mismatch".into()));
        }
        let read_blob = |n: usize, r: &mut dyn Read| -> Result<Vec<f64>, NetError> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)
                .map_err(|_| NetError::Corrupt("truncated tensor blob".into()))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let params = read_blob(header.n_params, &mut r)?;
        let stats = read_blob(header.n_running_stats, &mut r)?;
        let m = read_blob(header.n_params, &mut r)?;
        let v = read_blob(header.n_params, &mut r)?;
        let mut trailing = Vec::new();
        r.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(NetError::Corrupt(format!("{} trailing bytes", trailing.len())));
        }
        net.assign_params(&params)?;
        net.assign_running_stats(&stats)?;
        net.adam_m = m;
        net.adam_v = v;
        net.adam_t = header.adam_t;
        net.train_seed = header.train_seed;
        Ok(net)
    }
}

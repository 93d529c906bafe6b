use serde::{Deserialize, Serialize};

use super::layers::{Cache, Layer, LayerSpec, Mode};
use super::tensor::{Real, Tensor};
use super::LearnerError;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CoughNet,
    ContextNet,
}

/// Feed-forward stack producing two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub kind: ModelKind,
    /// Per-example input shape (no batch axis).
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
}

/// Forward-pass record needed for backpropagation.
pub struct Trace<T> {
    pub caches: Vec<Cache<T>>,
    /// Output of every layer, kept only on request.
    pub outputs: Vec<Tensor<T>>,
    pub logits: Tensor<T>,
}

/// Parameter gradients, one weight and one bias buffer per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            weight: net.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    /// Flattened in parameter order (layer by layer, weight then bias).
    pub fn flat(&self) -> Vec<T> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

pub const COUGH_INPUT: [usize; 3] = [1, 64, 201];
pub const COUGH_CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const DROPOUT: f64 = 0.4;
const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 1.0;

impl<T: Real> Network<T> {
    /// Convolutional cough classifier: conv blocks (3×3 conv, ReLU, 2×2
    /// max-pool) over `channels`, global average pool, then
    /// `C→32→16→2` linear layers with ReLU and dropout after the hidden ones.
    pub fn cough_net_with(input_shape: [usize; 3], channels: &[usize], head: [usize; 2], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut specs = Vec::new();
        let mut c_in = input_shape[0];
        for &c in channels {
            specs.push(LayerSpec::Conv2d {
                in_channels: c_in,
                out_channels: c,
                kernel: 3,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool2);
            c_in = c;
        }
        specs.push(LayerSpec::GlobalAvgPool);
        let mut width = c_in;
        for &h in &head {
            specs.push(LayerSpec::Linear { inputs: width, outputs: h });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout { p: DROPOUT });
            width = h;
        }
        specs.push(LayerSpec::Linear { inputs: width, outputs: 2 });
        let last = specs.len() - 1;
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| Layer::init(s, if i == last { LINEAR_GAIN } else { RELU_GAIN }, &mut rng))
            .collect();
        Self {
            kind: ModelKind::CoughNet,
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// Full-size cough model for 64 × 201 patches.
    pub fn cough_net(seed: u64) -> Self {
        Self::cough_net_with(COUGH_INPUT, &COUGH_CHANNELS, [32, 16], seed)
    }

    /// Linear (or one-hidden-layer) context classifier.
    pub fn context_net(dim: usize, hidden: Option<usize>, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let layers = match hidden {
            None => vec![Layer::init(LayerSpec::Linear { inputs: dim, outputs: 2 }, LINEAR_GAIN, &mut rng)],
            Some(h) => vec![
                Layer::init(LayerSpec::Linear { inputs: dim, outputs: h }, RELU_GAIN, &mut rng),
                Layer::init(LayerSpec::Relu, 0.0, &mut rng),
                Layer::init(LayerSpec::Linear { inputs: h, outputs: 2 }, LINEAR_GAIN, &mut rng),
            ],
        };
        Self {
            kind: ModelKind::ContextNet,
            input_shape: vec![dim],
            layers,
        }
    }

    pub fn from_specs(kind: ModelKind, input_shape: Vec<usize>, specs: &[LayerSpec]) -> Result<Self, LearnerError> {
        let net = Self {
            kind,
            input_shape,
            layers: specs.iter().map(|&s| Layer::zeros(s)).collect(),
        };
        net.output_shape()?;
        Ok(net)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, LearnerError> {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l.output_shape(&shape).map_err(LearnerError::Architecture)?;
        }
        if shape != [2] {
            return Err(LearnerError::Architecture(format!("network ends in {shape:?}, expected [2]")));
        }
        Ok(shape)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters flattened in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<(), LearnerError> {
        if flat.len() != self.param_count() {
            return Err(LearnerError::ShapeMismatch {
                expected: vec![self.param_count()],
                got: vec![flat.len()],
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            kind: self.kind,
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    weight: l.weight.iter().map(|v| U::of(v.f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), LearnerError> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] || x.batch() == 0 {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(LearnerError::ShapeMismatch {
                expected,
                got: x.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &Tensor<T>, mut mode: Mode<'_>, keep_outputs: bool) -> Result<Trace<T>, LearnerError> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::new();
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, &mut mode);
            caches.push(cache);
            if keep_outputs {
                outputs.push(next.clone());
            }
            h = next;
        }
        Ok(Trace {
            caches,
            outputs,
            logits: h,
        })
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>, LearnerError> {
        Ok(self.forward_trace(x, Mode::Eval, false)?.logits)
    }

    /// Eval-mode class probabilities, `[B × 2]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LearnerError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Backpropagates `grad_logits` through every layer.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> (Tensor<T>, Grads<T>) {
        let mut grads = Grads::zeros_like(self);
        let g = self.backward_until(trace, grad_logits, 0, &mut grads);
        (g, grads)
    }

    /// Backpropagates down to (and including) layer `stop`, returning the
    /// gradient w.r.t. that layer's input.
    pub fn backward_until(&self, trace: &Trace<T>, grad_logits: &Tensor<T>, stop: usize, grads: &mut Grads<T>) -> Tensor<T> {
        let mut g = grad_logits.clone();
        for i in (stop..self.layers.len()).rev() {
            g = self.layers[i].backward(&trace.caches[i], &g, &mut grads.weight[i], &mut grads.bias[i]);
        }
        g
    }

    /// Mean cross-entropy and its parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor<T>, labels: &[usize], mode: Mode<'_>) -> Result<(f64, Grads<T>), LearnerError> {
        if labels.len() != x.batch() {
            return Err(LearnerError::ShapeMismatch {
                expected: vec![x.batch()],
                got: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(LearnerError::BadLabel(bad));
        }
        let trace = self.forward_trace(x, mode, false)?;
        let (loss, grad) = cross_entropy(&trace.logits, labels);
        let (_, grads) = self.backward(&trace, &grad);
        Ok((loss, grads))
    }

    /// Index of the ReLU that follows the last convolution.
    pub fn last_conv_activation(&self) -> Option<usize> {
        let conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l.spec, LayerSpec::Conv2d { .. }))?;
        match self.layers.get(conv + 1).map(|l| l.spec) {
            Some(LayerSpec::Relu) => Some(conv + 1),
            _ => Some(conv),
        }
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.stride();
    let mut out = logits.clone();
    for row in out.data.chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean `−ln p(y)` over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> (f64, Tensor<T>) {
    let b = logits.batch();
    let k = logits.stride();
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let inv_b = T::one() / T::of(b as f64);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m.f64() + row.iter().map(|&v| (v - m).f64().exp()).sum::<f64>().ln();
        loss += lse - row[y].f64();
        let g = &mut grad.data[i * k..(i + 1) * k];
        g[y] = g[y] - T::one();
        for v in g.iter_mut() {
            *v = *v * inv_b;
        }
    }
    (loss / b as f64, grad)
}

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

/// Serializable description of a layer; weights are stored separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Square kernel, stride 1, zero "same" padding.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    /// 2 × 2 window, stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    GlobalAvgPool,
    Linear { inputs: usize, outputs: usize },
    /// Inverted dropout.
    Dropout { p: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Mask(Vec<bool>),
    Argmax { input_shape: Vec<usize>, index: Vec<usize> },
    Shape(Vec<usize>),
    Scale(Option<Vec<T>>),
}

impl<T: Real> Layer<T> {
    pub fn zeros(spec: LayerSpec) -> Self {
        let (w, b) = match spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                (out_channels * in_channels * kernel * kernel, out_channels)
            }
            LayerSpec::Linear { inputs, outputs } => (inputs * outputs, outputs),
            _ => (0, 0),
        };
        Self {
            spec,
            weight: vec![T::zero(); w],
            bias: vec![T::zero(); b],
        }
    }

    /// Uniform init with bound `sqrt(gain / fan_in)`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, gain: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(spec);
        let fan_in = match spec {
            LayerSpec::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            LayerSpec::Linear { inputs, .. } => inputs,
            _ => return layer,
        };
        let bound = (gain / fan_in as f64).sqrt();
        for w in &mut layer.weight {
            *w = T::of(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: &mut Mode<'_>) -> (Tensor<T>, Cache<T>) {
        match self.spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                assert_eq!(x.shape.len(), 4, "conv input must be [B, C, H, W]");
                assert_eq!(x.shape[1], in_channels, "conv input channels");
                let y = conv_forward(x, &self.weight, &self.bias, out_channels, kernel);
                (y, Cache::Input(x.clone()))
            }
            LayerSpec::Relu => {
                let mask: Vec<bool> = x.data.iter().map(|&v| v > T::zero()).collect();
                let data = x
                    .data
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { T::zero() })
                    .collect();
                (Tensor::from_vec(&x.shape, data), Cache::Mask(mask))
            }
            LayerSpec::MaxPool2 => {
                let (y, index) = maxpool_forward(x);
                (
                    y,
                    Cache::Argmax {
                        input_shape: x.shape.clone(),
                        index,
                    },
                )
            }
            LayerSpec::GlobalAvgPool => {
                assert_eq!(x.shape.len(), 4, "pool input must be [B, C, H, W]");
                let (b, c) = (x.shape[0], x.shape[1]);
                let area = x.shape[2] * x.shape[3];
                let inv = T::one() / T::of(area as f64);
                let data = x.data.chunks(area).map(|p| p.iter().copied().sum::<T>() * inv).collect();
                (Tensor::from_vec(&[b, c], data), Cache::Shape(x.shape.clone()))
            }
            LayerSpec::Linear { inputs, outputs } => {
                assert_eq!(x.stride(), inputs, "linear input width");
                let b = x.batch();
                let mut y = Tensor::zeros(&[b, outputs]);
                for i in 0..b {
                    let xi = x.row(i);
                    for o in 0..outputs {
                        let w = &self.weight[o * inputs..(o + 1) * inputs];
                        y.data[i * outputs + o] = self.bias[o] + dot(w, xi);
                    }
                }
                (y, Cache::Input(x.clone()))
            }
            LayerSpec::Dropout { p } => match mode {
                Mode::Train(rng) if p > 0.0 => {
                    let keep = T::one() / T::of(1.0 - p);
                    let scale: Vec<T> = (0..x.len())
                        .map(|_| if rng.random_bool(p) { T::zero() } else { keep })
                        .collect();
                    let data = x.data.iter().zip(&scale).map(|(&v, &s)| v * s).collect();
                    (Tensor::from_vec(&x.shape, data), Cache::Scale(Some(scale)))
                }
                _ => (x.clone(), Cache::Scale(None)),
            },
        }
    }

    /// Returns the gradient w.r.t. the layer input; parameter gradients are
    /// accumulated into `grad_w` / `grad_b`.
    pub fn backward(&self, cache: &Cache<T>, g: &Tensor<T>, grad_w: &mut [T], grad_b: &mut [T]) -> Tensor<T> {
        match (self.spec, cache) {
            (LayerSpec::Conv2d { kernel, .. }, Cache::Input(x)) => {
                conv_backward(x, g, &self.weight, kernel, grad_w, grad_b)
            }
            (LayerSpec::Relu, Cache::Mask(mask)) => {
                let data = g
                    .data
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { T::zero() })
                    .collect();
                Tensor::from_vec(&g.shape, data)
            }
            (LayerSpec::MaxPool2, Cache::Argmax { input_shape, index }) => {
                let mut gx = Tensor::zeros(input_shape);
                for (&i, &v) in index.iter().zip(&g.data) {
                    gx.data[i] += v;
                }
                gx
            }
            (LayerSpec::GlobalAvgPool, Cache::Shape(shape)) => {
                let area = shape[2] * shape[3];
                let inv = T::one() / T::of(area as f64);
                let mut gx = Tensor::zeros(shape);
                for (plane, &v) in gx.data.chunks_mut(area).zip(&g.data) {
                    plane.fill(v * inv);
                }
                gx
            }
            (LayerSpec::Linear { inputs, outputs }, Cache::Input(x)) => {
                let b = x.batch();
                let mut gx = Tensor::zeros(&x.shape);
                for i in 0..b {
                    let xi = x.row(i);
                    let gi = &g.data[i * outputs..(i + 1) * outputs];
                    let gxi = &mut gx.data[i * inputs..(i + 1) * inputs];
                    for (o, &go) in gi.iter().enumerate() {
                        grad_b[o] += go;
                        let w = &self.weight[o * inputs..(o + 1) * inputs];
                        let gw = &mut grad_w[o * inputs..(o + 1) * inputs];
                        for k in 0..inputs {
                            gw[k] += go * xi[k];
                            gxi[k] += go * w[k];
                        }
                    }
                }
                gx
            }
            (LayerSpec::Dropout { .. }, Cache::Scale(scale)) => match scale {
                Some(s) => Tensor::from_vec(&g.shape, g.data.iter().zip(s).map(|(&v, &k)| v * k).collect()),
                None => g.clone(),
            },
            (spec, _) => panic!("cache does not belong to layer {spec:?}"),
        }
    }

    /// Output shape (without batch) for a given input shape (without batch).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self.spec {
            LayerSpec::Conv2d { in_channels, out_channels, .. } => match input {
                [c, h, w] if *c == in_channels => Ok(vec![out_channels, *h, *w]),
                _ => Err(format!("conv expects [{in_channels}, H, W], got {input:?}")),
            },
            LayerSpec::MaxPool2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(format!("max-pool expects [C, H>=2, W>=2], got {input:?}")),
            },
            LayerSpec::GlobalAvgPool => match input {
                [c, _, _] => Ok(vec![*c]),
                _ => Err(format!("global pool expects [C, H, W], got {input:?}")),
            },
            LayerSpec::Linear { inputs, outputs } => {
                if input.iter().product::<usize>() == inputs && input.len() == 1 {
                    Ok(vec![outputs])
                } else {
                    Err(format!("linear expects [{inputs}], got {input:?}"))
                }
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid output range `[lo, hi)` along one axis for tap offset `d`.
#[inline]
fn valid(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Tensor<T> {
    let (b, cin, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut y = Tensor::zeros(&[b, cout, h, w]);
    for n in 0..b {
        let xin = &x.data[n * cin * plane..(n + 1) * cin * plane];
        let yout = &mut y.data[n * cout * plane..(n + 1) * cout * plane];
        for co in 0..cout {
            let o = &mut yout[co * plane..(co + 1) * plane];
            o.fill(bias[co]);
            for ci in 0..cin {
                let src = &xin[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(w, dx);
                        let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                        for row in y0..y1 {
                            let srow = (row as isize + dy) as usize * w;
                            let s = &src[(srow as isize + x0 as isize + dx) as usize..(srow as isize + x1 as isize + dx) as usize];
                            axpy(wv, s, &mut o[row * w + x0..row * w + x1]);
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    weight: &[T],
    k: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
) -> Tensor<T> {
    let (b, cin, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let cout = g.shape[1];
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut gx = Tensor::zeros(&x.shape);
    for n in 0..b {
        let xin = &x.data[n * cin * plane..(n + 1) * cin * plane];
        let gout = &g.data[n * cout * plane..(n + 1) * cout * plane];
        let gin = &mut gx.data[n * cin * plane..(n + 1) * cin * plane];
        for co in 0..cout {
            let go = &gout[co * plane..(co + 1) * plane];
            grad_b[co] += go.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = &xin[ci * plane..(ci + 1) * plane];
                let dst = &mut gin[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(w, dx);
                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                        let wv = weight[widx];
                        let mut acc = T::zero();
                        for row in y0..y1 {
                            let grow = &go[row * w + x0..row * w + x1];
                            let base = ((row as isize + dy) as usize * w) as isize + dx;
                            let range = (base + x0 as isize) as usize..(base + x1 as isize) as usize;
                            acc += dot(grow, &src[range.clone()]);
                            axpy(wv, grow, &mut dst[range]);
                        }
                        grad_w[widx] += acc;
                    }
                }
            }
        }
    }
    gx
}

fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    let mut index = vec![0usize; y.len()];
    for p in 0..b * c {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + (2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * i + di) * w + 2 * j + dj;
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                y.data[o] = x.data[best];
                index[o] = best;
            }
        }
    }
    (y, index)
}

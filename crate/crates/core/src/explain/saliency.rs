use serde::Serialize;

use super::ExplainError;
use crate::dsp::LogMelPatch;
use crate::learner::{Grads, Mode, Network, Tensor};
use crate::tensor_file::StoredTensor;

/// Non-negative map over the mel × frame grid, max-normalized to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Mean over the frame columns in `frames`, all mel rows.
    pub fn mean_in_frames(&self, frames: std::ops::Range<usize>) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for r in 0..self.rows {
            for c in frames.clone() {
                s += self.get(r, c);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    pub fn mean_outside_frames(&self, frames: std::ops::Range<usize>) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for r in 0..self.rows {
            for c in (0..self.cols).filter(|c| !frames.contains(c)) {
                s += self.get(r, c);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    pub fn to_tensor(&self) -> StoredTensor {
        StoredTensor {
            dims: vec![self.rows as u64, self.cols as u64],
            data: self.values.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Binary greyscale PGM, low mel bins at the bottom.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        for r in (0..self.rows).rev() {
            for c in 0..self.cols {
                out.push((self.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        let (r0, r1, fr) = coord(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = coord(c, w, out_w);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out[r * out_w + c] = top * (1.0 - fr) + bot * fr;
        }
    }
    out
}

/// GradCAM++ combination of activations `a` and score gradients `g`, both
/// `[K, h, w]`, into a `[h, w]` map (before upsampling and normalization).
pub fn saliency_from_activations(a: &[f64], g: &[f64], k: usize, h: usize, w: usize) -> Vec<f64> {
    let area = h * w;
    let mut map = vec![0.0; area];
    for ch in 0..k {
        let ak = &a[ch * area..(ch + 1) * area];
        let gk = &g[ch * area..(ch + 1) * area];
        let sum_a: f64 = ak.iter().sum();
        let mut weight = 0.0;
        for &gij in gk {
            let g2 = gij * gij;
            let denom = 2.0 * g2 + sum_a * g2 * gij;
            let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
            weight += alpha * gij.max(0.0);
        }
        for (m, &v) in map.iter_mut().zip(ak) {
            *m += weight * v;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    map
}

/// Saliency of `target_class`'s logit over the activations of the last
/// convolutional block, upsampled to the patch shape.
pub fn saliency(net: &Network<f32>, patch: &LogMelPatch, target_class: usize) -> Result<SaliencyMap, ExplainError> {
    if net.has_non_finite() {
        return Err(ExplainError::NonFiniteModel);
    }
    if target_class > 1 {
        return Err(ExplainError::BadClass(target_class));
    }
    let layer = net.last_conv_activation().ok_or(ExplainError::NoConvLayer)?;
    let net64: Network<f64> = net.cast();
    let x = Tensor::from_vec(
        &[1, 1, patch.n_mels, patch.frames],
        patch.values.iter().map(|&v| v as f64).collect(),
    );
    let trace = net64.forward_trace(&x, Mode::Eval, true)?;
    let mut onehot = Tensor::zeros(&trace.logits.shape);
    onehot.data[target_class] = 1.0;
    let mut grads = Grads::zeros_like(&net64);
    let g = net64.backward_until(&trace, &onehot, layer + 1, &mut grads);
    let act = &trace.outputs[layer];
    let (k, h, w) = (act.shape[1], act.shape[2], act.shape[3]);
    let coarse = saliency_from_activations(&act.data, &g.data, k, h, w);
    let mut values = bilinear_resize(&coarse, h, w, patch.n_mels, patch.frames);
    let m = values.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v / m).clamp(0.0, 1.0));
    }
    Ok(SaliencyMap {
        rows: patch.n_mels,
        cols: patch.frames,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{Layer, LayerSpec, ModelKind};

    /// conv(1→2) → relu → GAP → linear whose class-1 logit reads channel 0.
    fn readout_net() -> Network<f32> {
        let mut conv = Layer::<f32>::zeros(LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3 });
        conv.weight[4] = 1.0; // centre tap of channel 0: identity
        conv.weight[9 + 4] = 1.0; // channel 1 also identity
        let mut lin = Layer::<f32>::zeros(LayerSpec::Linear { inputs: 2, outputs: 2 });
        lin.weight[2] = 3.0; // class 1 ← channel 0
        Network {
            kind: ModelKind::CoughNet,
            input_shape: vec![1, 8, 10],
            layers: vec![
                conv,
                Layer::zeros(LayerSpec::Relu),
                Layer::zeros(LayerSpec::GlobalAvgPool),
                lin,
            ],
        }
    }

    #[test]
    fn zero_activations_give_zero_map() {
        let net = readout_net();
        let patch = LogMelPatch::new(8, 10, vec![-0.5; 80]);
        let s = saliency(&net, &patch, 1).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_readout_concentrates_on_active_region() {
        let net = readout_net();
        let mut vals = vec![0.0f32; 80];
        for r in 2..5 {
            for c in 6..9 {
                vals[r * 10 + c] = 1.0;
            }
        }
        let patch = LogMelPatch::new(8, 10, vals.clone());
        let s = saliency(&net, &patch, 1).unwrap();
        assert_eq!(s.max(), 1.0);
        // same grid size, so the map is the normalized channel-0 activation
        for (i, &v) in vals.iter().enumerate() {
            assert!((s.values[i] - v as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_alpha_for_constant_gradient() {
        // g = c everywhere: α = 1/(2 + S·c), weight = area·c/(2 + S·c)
        let a = vec![0.0, 1.0, 2.0, 1.0];
        let c = 0.25;
        let g = vec![c; 4];
        let map = saliency_from_activations(&a, &g, 1, 2, 2);
        let w = 4.0 * c / (2.0 + 4.0 * c);
        for (m, &av) in map.iter().zip(&a) {
            assert!((m - w * av).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_preserves_constants_and_identity() {
        let src = vec![0.7; 6];
        assert!(bilinear_resize(&src, 2, 3, 64, 201).iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let src: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(bilinear_resize(&src, 3, 4, 3, 4), src);
    }

    #[test]
    fn non_finite_model_rejected() {
        let mut net = readout_net();
        net.layers[0].weight[0] = f32::NAN;
        let patch = LogMelPatch::new(8, 10, vec![0.0; 80]);
        assert!(matches!(saliency(&net, &patch, 1), Err(ExplainError::NonFiniteModel)));
    }

    #[test]
    fn pgm_header_and_size() {
        let m = SaliencyMap { rows: 2, cols: 3, values: vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0] };
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 6);
    }
}

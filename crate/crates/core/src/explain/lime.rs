use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::cohort::{EncoderState, FeatureVector};
use crate::inference::ContextModel;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub samples: usize,
    /// Defaults to `0.75·√D` when unset.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    /// Per-feature probability of resampling a categorical value.
    pub categorical_resample: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            kernel_width: None,
            ridge: 1e-3,
            categorical_resample: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on its own samples.
    pub fidelity_r2: f64,
    pub samples: usize,
    pub kernel_width: f64,
}

#[derive(Serialize)]
struct Ranked<'a> {
    feature: &'a str,
    weight: f64,
}

impl FeatureAttribution {
    /// `(feature, weight)` pairs by descending |weight|.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.features.iter().map(String::as_str).zip(self.weights.iter().copied()).collect();
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        let ranked: Vec<Ranked> = self
            .ranked()
            .into_iter()
            .map(|(feature, weight)| Ranked { feature, weight })
            .collect();
        serde_json::json!({
            "attributions": ranked,
            "intercept": self.intercept,
            "fidelity_r2": self.fidelity_r2,
            "samples": self.samples,
            "kernel_width": self.kernel_width,
        })
    }
}

/// Local weighted-ridge surrogate around `instance` of the model's
/// positive-class probability.
pub fn lime_explain(
    model: &ContextModel,
    instance: &FeatureVector,
    encoder: &EncoderState,
    cfg: &LimeConfig,
) -> Result<FeatureAttribution, ExplainError> {
    let d = encoder.dim();
    if instance.len() != d {
        return Err(ExplainError::DimensionMismatch { expected: d, got: instance.len() });
    }
    if cfg.samples < 2 || cfg.ridge < 0.0 || !(0.0..=1.0).contains(&cfg.categorical_resample) {
        return Err(ExplainError::Config(format!("{cfg:?}")));
    }
    if model.net.has_non_finite() {
        return Err(ExplainError::NonFiniteModel);
    }
    let kernel = cfg.kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    if !(kernel > 0.0) {
        return Err(ExplainError::Config(format!("kernel width {kernel}")));
    }
    let cat = encoder.categorical_range();
    let samplers = encoder
        .categorical
        .iter()
        .map(|t| WeightedIndex::new(&t.marginals).map_err(|e| ExplainError::Config(format!("{}: {e}", t.name))))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = seeded_rng(cfg.seed);
    let n = cfg.samples;
    let mut xs = DMatrix::<f64>::zeros(n, d + 1);
    let mut y = DVector::<f64>::zeros(n);
    let mut w = DVector::<f64>::zeros(n);
    let x0 = instance.as_slice();
    for i in 0..n {
        let mut z = x0.to_vec();
        for (j, v) in z.iter_mut().enumerate() {
            if cat.contains(&j) {
                if rng.random_bool(cfg.categorical_resample) {
                    *v = samplers[j - cat.start].sample(&mut rng) as f64;
                }
            } else {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += e;
            }
        }
        let dist2: f64 = z.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum();
        w[i] = (-dist2 / (kernel * kernel)).exp();
        y[i] = model.score_vector(&z).map_err(|_| ExplainError::NonFiniteModel)?;
        xs[(i, 0)] = 1.0;
        for (j, v) in z.into_iter().enumerate() {
            xs[(i, j + 1)] = v;
        }
    }
    if w.sum() < 1e-12 {
        return Err(ExplainError::DegenerateWeights(kernel));
    }

    // (XᵀWX + λI')β = XᵀWy, intercept unpenalized
    let xtw = {
        let mut m = xs.transpose();
        for i in 0..n {
            m.column_mut(i).scale_mut(w[i]);
        }
        m
    };
    let mut gram = &xtw * &xs;
    for j in 1..=d {
        gram[(j, j)] += cfg.ridge;
    }
    let rhs = &xtw * &y;
    let beta = gram.cholesky().ok_or(ExplainError::Singular)?.solve(&rhs);

    let pred = &xs * &beta;
    let wsum = w.sum();
    let ybar = w.dot(&y) / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        ss_res += w[i] * (y[i] - pred[i]).powi(2);
        ss_tot += w[i] * (y[i] - ybar).powi(2);
    }
    let fidelity_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(FeatureAttribution {
        features: encoder.feature_names(),
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        fidelity_r2,
        samples: n,
        kernel_width: kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CategoricalTable, ContinuousStat};
    use crate::learner::{Layer, LayerSpec, ModelKind, Network};

    fn encoder(n_cont: usize) -> EncoderState {
        EncoderState {
            continuous: (0..n_cont)
                .map(|i| ContinuousStat { name: format!("c{i}"), mean: 0.0, std: 1.0, kept: true })
                .collect(),
            categorical: vec![CategoricalTable {
                name: "fever".into(),
                labels: vec!["no".into(), "yes".into()],
                marginals: vec![0.6, 0.4, 0.0],
                impute: "no".into(),
            }],
        }
    }

    fn linear_model(w1: &[f32], enc: &EncoderState) -> ContextModel {
        let d = w1.len();
        let mut lin = Layer::<f32>::zeros(LayerSpec::Linear { inputs: d, outputs: 2 });
        lin.weight[d..].copy_from_slice(w1);
        ContextModel {
            net: Network { kind: ModelKind::ContextNet, input_shape: vec![d], layers: vec![lin] },
            encoder: enc.clone(),
        }
    }

    #[test]
    fn ignored_feature_gets_near_zero_weight() {
        let enc = encoder(3);
        let model = linear_model(&[0.3, 0.0, -0.2, 0.25], &enc);
        let x = FeatureVector(vec![0.1, -0.2, 0.3, 1.0]);
        let cfg = LimeConfig { samples: 5000, seed: 4, ..Default::default() };
        let a = lime_explain(&model, &x, &enc, &cfg).unwrap();
        assert!(a.weights[1].abs() < 0.01, "{:?}", a.weights);
        assert!(a.weights[0] > 0.0 && a.weights[2] < 0.0 && a.weights[3] > 0.0);
    }

    #[test]
    fn near_linear_model_is_recovered_with_high_fidelity() {
        let enc = encoder(3);
        let true_w = [0.02f32, -0.01, 0.015, 0.01];
        let model = linear_model(&true_w, &enc);
        let x = FeatureVector(vec![0.0, 0.0, 0.0, 0.0]);
        let a = lime_explain(&model, &x, &enc, &LimeConfig::default()).unwrap();
        assert!(a.fidelity_r2 > 0.99, "r2 {}", a.fidelity_r2);
        // sigmoid slope at 0 is 1/4
        for (got, &w) in a.weights.iter().zip(&true_w) {
            assert!((got - 0.25 * w as f64).abs() < 2e-4, "{got} vs {w}");
        }
    }

    #[test]
    fn seeded_and_sorted() {
        let enc = encoder(2);
        let model = linear_model(&[0.5, -1.0, 0.1], &enc);
        let x = FeatureVector(vec![0.0, 0.0, 1.0]);
        let cfg = LimeConfig::default();
        let a = lime_explain(&model, &x, &enc, &cfg).unwrap();
        assert_eq!(a, lime_explain(&model, &x, &enc, &cfg).unwrap());
        assert_eq!(a.ranked()[0].0, "c1");
        let json = a.to_json();
        assert_eq!(json["attributions"][0]["feature"], "c1");
    }

    #[test]
    fn degenerate_kernel_rejected() {
        let enc = encoder(2);
        let model = linear_model(&[0.5, -1.0, 0.1], &enc);
        let x = FeatureVector(vec![0.0, 0.0, 1.0]);
        let cfg = LimeConfig { kernel_width: Some(1e-6), ..Default::default() };
        assert!(matches!(lime_explain(&model, &x, &enc, &cfg), Err(ExplainError::DegenerateWeights(_))));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let enc = encoder(2);
        let model = linear_model(&[0.5, -1.0, 0.1], &enc);
        let err = lime_explain(&model, &FeatureVector(vec![0.0]), &enc, &LimeConfig::default()).unwrap_err();
        assert!(matches!(err, ExplainError::DimensionMismatch { expected: 3, got: 1 }));
    }
}

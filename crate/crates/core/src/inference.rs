//! Individual-level scoring: 2 s sliding-window segmentation with a 500 ms
//! hop, median over segment probabilities per recording, max over an
//! individual's recordings, and the cough/context probability average.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{encode_context, is_symptomatic, Cohort, ContextRecord, EncoderState, IndividualRecord, Label, SplitAssignment, Subset};
use crate::dsp::{load_and_normalize, AudioBuffer, AudioError, DspError, FeatureConfig, Featurizer, LogMelPatch};
use crate::learner::{LearnerError, Network, Tensor};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] LearnerError),
    #[error("no audio samples supplied")]
    NoSamples,
    #[error("audio buffer is empty")]
    EmptyBuffer,
    #[error("model produced a non-finite probability")]
    NonFinite,
}

/// Produces per-segment positive-class probabilities for one recording.
pub trait SampleScorer: Sync {
    fn segment_scores(&self, buf: &AudioBuffer) -> Result<Vec<f64>, InferenceError>;
}

/// Produces a positive-class probability from context answers.
pub trait ContextScorer: Sync {
    fn score_context(&self, ctx: &ContextRecord) -> Result<f64, InferenceError>;
}

/// Segment start offsets: window `segment_samples`, hop
/// `segment_hop_samples`; inputs shorter than one window give a single
/// zero-padded segment.
pub fn segment_starts(len: usize, cfg: &FeatureConfig) -> Vec<usize> {
    let (win, hop) = (cfg.segment_samples, cfg.segment_hop_samples);
    if len <= win {
        return vec![0];
    }
    (0..=(len - win) / hop).map(|i| i * hop).collect()
}

pub fn segment_count(len: usize, cfg: &FeatureConfig) -> usize {
    if len <= cfg.segment_samples {
        1
    } else {
        1 + (len - cfg.segment_samples) / cfg.segment_hop_samples
    }
}

/// Raw waveform segments, each exactly `segment_samples` long.
pub fn segment_waveform(buf: &AudioBuffer, cfg: &FeatureConfig) -> Vec<AudioBuffer> {
    segment_starts(buf.len(), cfg)
        .into_iter()
        .map(|s| {
            let end = (s + cfg.segment_samples).min(buf.len());
            let mut samples = buf.samples[s..end].to_vec();
            samples.resize(cfg.segment_samples, 0.0);
            AudioBuffer::new(samples, buf.sample_rate_hz)
        })
        .collect()
}

pub fn segment_sample(buf: &AudioBuffer, featurizer: &Featurizer) -> Result<Vec<LogMelPatch>, InferenceError> {
    if buf.is_empty() {
        return Err(InferenceError::EmptyBuffer);
    }
    segment_waveform(buf, featurizer.config())
        .iter()
        .map(|seg| featurizer.featurize(seg).map_err(InferenceError::from))
        .collect()
}

/// Median; even counts average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn score_sample(model: &dyn SampleScorer, buf: &AudioBuffer) -> Result<f64, InferenceError> {
    let scores = model.segment_scores(buf)?;
    median(&scores).ok_or(InferenceError::NoSamples)
}

pub fn score_individual(model: &dyn SampleScorer, samples: &[AudioBuffer]) -> Result<f64, InferenceError> {
    if samples.is_empty() {
        return Err(InferenceError::NoSamples);
    }
    let mut best = f64::NEG_INFINITY;
    for s in samples {
        best = best.max(score_sample(model, s)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleSource {
    Both,
    CoughOnly,
    ContextOnly,
}

/// Average of the two modality probabilities; a missing modality passes the
/// other through with a flag.
pub fn ensemble(p_cough: Option<f64>, p_context: Option<f64>) -> Option<(f64, EnsembleSource)> {
    match (p_cough, p_context) {
        (Some(a), Some(b)) => Some(((a + b) / 2.0, EnsembleSource::Both)),
        (Some(a), None) => Some((a, EnsembleSource::CoughOnly)),
        (None, Some(b)) => Some((b, EnsembleSource::ContextOnly)),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualPrediction {
    pub individual_id: String,
    pub p_cough: Option<f64>,
    pub p_context: Option<f64>,
    pub p_ensemble: Option<f64>,
    pub source: Option<EnsembleSource>,
    pub label: Label,
    pub symptomatic: bool,
    /// Set when the individual could not be scored; such rows are excluded from metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn load_samples(cohort: &Cohort, rec: &IndividualRecord) -> Result<Vec<AudioBuffer>, InferenceError> {
    cohort
        .sample_paths(rec)
        .iter()
        .map(|p| load_and_normalize(p).map_err(InferenceError::from))
        .collect()
}

fn predict_one(
    cough: Option<&dyn SampleScorer>,
    context: Option<&dyn ContextScorer>,
    cohort: &Cohort,
    rec: &IndividualRecord,
) -> IndividualPrediction {
    let mut pred = IndividualPrediction {
        individual_id: rec.individual_id.clone(),
        p_cough: None,
        p_context: None,
        p_ensemble: None,
        source: None,
        label: rec.label,
        symptomatic: is_symptomatic(&rec.context),
        error: None,
    };
    let outcome = (|| -> Result<(), InferenceError> {
        if let Some(model) = cough {
            let samples = load_samples(cohort, rec)?;
            pred.p_cough = Some(score_individual(model, &samples)?);
        }
        if let Some(model) = context {
            pred.p_context = Some(model.score_context(&rec.context)?);
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => {
            if let Some((p, src)) = ensemble(pred.p_cough, pred.p_context) {
                pred.p_ensemble = Some(p);
                pred.source = Some(src);
            }
        }
        Err(e) => {
            pred.p_cough = None;
            pred.p_context = None;
            pred.error = Some(e.to_string());
        }
    }
    pred
}

/// One prediction per member of `subset`, in cohort order.
pub fn predict_cohort(
    cough: Option<&dyn SampleScorer>,
    context: Option<&dyn ContextScorer>,
    cohort: &Cohort,
    assignment: &SplitAssignment,
    subset: Subset,
) -> Vec<IndividualPrediction> {
    let members = assignment.members(cohort, subset);
    members
        .par_iter()
        .map(|rec| predict_one(cough, context, cohort, rec))
        .collect()
}

pub fn predictions_to_jsonl(preds: &[IndividualPrediction]) -> String {
    preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
        .collect()
}

pub fn read_predictions(path: &Path) -> std::io::Result<Vec<IndividualPrediction>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Positive-class probabilities for a batch of patches.
pub fn patch_probabilities(net: &Network<f32>, patches: &[LogMelPatch]) -> Result<Vec<f64>, InferenceError> {
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    let (m, f) = patches[0].shape();
    let rows: Vec<&[f32]> = patches.iter().map(|p| p.values.as_slice()).collect();
    let x = Tensor::stack(&[1, m, f], &rows);
    let probs = net.forward(&x)?;
    let out: Vec<f64> = (0..patches.len()).map(|i| probs.data[i * 2 + 1] as f64).collect();
    if out.iter().any(|p| !p.is_finite()) {
        return Err(InferenceError::NonFinite);
    }
    Ok(out)
}

/// Borrowed cough network plus the featurizer it was trained with.
pub struct NetScorer<'a> {
    pub net: &'a Network<f32>,
    pub featurizer: &'a Featurizer,
}

impl SampleScorer for NetScorer<'_> {
    fn segment_scores(&self, buf: &AudioBuffer) -> Result<Vec<f64>, InferenceError> {
        let patches = segment_sample(buf, self.featurizer)?;
        patch_probabilities(self.net, &patches)
    }
}

/// Loaded cough classifier.
#[derive(Debug, Clone)]
pub struct CoughModel {
    pub net: Network<f32>,
    pub featurizer: Featurizer,
}

impl SampleScorer for CoughModel {
    fn segment_scores(&self, buf: &AudioBuffer) -> Result<Vec<f64>, InferenceError> {
        NetScorer {
            net: &self.net,
            featurizer: &self.featurizer,
        }
        .segment_scores(buf)
    }
}

/// Loaded context classifier.
#[derive(Debug, Clone)]
pub struct ContextModel {
    pub net: Network<f32>,
    pub encoder: EncoderState,
}

impl ContextModel {
    pub fn score_vector(&self, x: &[f64]) -> Result<f64, InferenceError> {
        let row: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let probs = self.net.forward(&Tensor::from_vec(&[1, row.len()], row))?;
        let p = probs.data[1] as f64;
        if !p.is_finite() {
            return Err(InferenceError::NonFinite);
        }
        Ok(p)
    }
}

impl ContextScorer for ContextModel {
    fn score_context(&self, ctx: &ContextRecord) -> Result<f64, InferenceError> {
        self.score_vector(encode_context(ctx, &self.encoder).as_slice())
    }
}

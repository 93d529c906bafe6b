//! Single-request scoring shared by the `score` subcommand and the HTTP
//! service, so both produce identical numbers for identical bytes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use cac_core::cohort::{is_symptomatic, ContextRecord};
use cac_core::dsp::{decode_wav_bytes, AudioError};
use cac_core::inference::{ensemble, score_individual, ContextModel, ContextScorer, CoughModel, EnsembleSource, InferenceError};
use cac_core::learner::Checkpoint;
use serde::{Deserialize, Serialize};

pub const MAX_AUDIO_PARTS: usize = 3;
pub const COUGH_CHECKPOINT: &str = "cough.ckpt";
pub const CONTEXT_CHECKPOINT: &str = "context.ckpt";
pub const MODEL_DIR_ENV: &str = "CAC_MODEL_DIR";

/// Loaded, immutable models with their content versions.
#[derive(Debug)]
pub struct Models {
    pub cough: Option<(CoughModel, String)>,
    pub context: Option<(ContextModel, String)>,
}

impl Models {
    pub fn from_checkpoints(cough: Option<&Checkpoint>, context: Option<&Checkpoint>) -> anyhow::Result<Self> {
        let cough = cough
            .map(|c| anyhow::Ok((c.cough_model()?, c.version_id())))
            .transpose()
            .context("cough checkpoint")?;
        let context = context
            .map(|c| anyhow::Ok((c.context_model()?, c.version_id())))
            .transpose()
            .context("context checkpoint")?;
        anyhow::ensure!(cough.is_some() || context.is_some(), "no model checkpoint given");
        Ok(Self { cough, context })
    }

    pub fn load(cough: Option<&Path>, context: Option<&Path>) -> anyhow::Result<Self> {
        let read = |p: &Path| Checkpoint::load(p).with_context(|| format!("loading {}", p.display()));
        let cough = cough.map(read).transpose()?;
        let context = context.map(read).transpose()?;
        Self::from_checkpoints(cough.as_ref(), context.as_ref())
    }

    pub fn versions(&self) -> ModelVersions {
        ModelVersions {
            cough: self.cough.as_ref().map(|c| c.1.clone()),
            context: self.context.as_ref().map(|c| c.1.clone()),
        }
    }
}

/// Explicit paths win; otherwise fall back to the model directory
/// (`CAC_MODEL_DIR`) when it holds the conventional file names.
pub fn resolve_checkpoints(cough: Option<PathBuf>, context: Option<PathBuf>) -> (Option<PathBuf>, Option<PathBuf>) {
    if cough.is_some() || context.is_some() {
        return (cough, context);
    }
    let Some(dir) = std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from) else {
        return (None, None);
    };
    let pick = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
    (pick(COUGH_CHECKPOINT), pick(CONTEXT_CHECKPOINT))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub cough: Option<String>,
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub request_id: Option<String>,
    pub p_cough: Option<f64>,
    pub p_context: Option<f64>,
    pub p_ensemble: Option<f64>,
    pub source: Option<EnsembleSource>,
    /// Present when a context block was supplied.
    pub symptomatic: Option<bool>,
    pub model_versions: ModelVersions,
    pub timing_ms: f64,
}

#[derive(Debug)]
pub enum ScoreError {
    /// Request shape problems (maps to 400).
    BadRequest(String),
    /// Audio bytes that are not a decodable WAV (maps to 422).
    Undecodable { part: usize, error: AudioError },
    /// Model evaluation failed.
    Inference(InferenceError),
}

impl std::fmt::Display for ScoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreError::BadRequest(m) => write!(f, "{m}"),
            ScoreError::Undecodable { part, error } => write!(f, "audio part {part}: {error}"),
            ScoreError::Inference(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScoreError {}

/// Scores up to three WAV recordings and/or a context block.
///
/// A modality is scored when its input is present and its model loaded;
/// the ensemble follows the inference-module passthrough policy.
pub fn score_request(
    models: &Models,
    audio: &[Vec<u8>],
    context: Option<&ContextRecord>,
    request_id: Option<String>,
) -> Result<ScoreResponse, ScoreError> {
    let started = Instant::now();
    if audio.is_empty() && context.is_none() {
        return Err(ScoreError::BadRequest("request needs at least one audio part or a context block".into()));
    }
    if audio.len() > MAX_AUDIO_PARTS {
        return Err(ScoreError::BadRequest(format!(
            "at most {MAX_AUDIO_PARTS} audio parts allowed, got {}",
            audio.len()
        )));
    }
    let buffers = audio
        .iter()
        .enumerate()
        .map(|(part, bytes)| decode_wav_bytes(bytes).map_err(|error| ScoreError::Undecodable { part, error }))
        .collect::<Result<Vec<_>, _>>()?;

    let p_cough = match (&models.cough, buffers.is_empty()) {
        (Some((m, _)), false) => Some(score_individual(m, &buffers).map_err(ScoreError::Inference)?),
        _ => None,
    };
    let p_context = match (&models.context, context) {
        (Some((m, _)), Some(ctx)) => Some(m.score_context(ctx).map_err(ScoreError::Inference)?),
        _ => None,
    };
    if p_cough.is_none() && p_context.is_none() {
        return Err(ScoreError::BadRequest(
            "no loaded model matches the supplied inputs".into(),
        ));
    }
    let combined = ensemble(p_cough, p_context);
    Ok(ScoreResponse {
        request_id,
        p_cough,
        p_context,
        p_ensemble: combined.map(|c| c.0),
        source: combined.map(|c| c.1),
        symptomatic: context.map(is_symptomatic),
        model_versions: models.versions(),
        timing_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Parses a context block with the manifest's schema.
pub fn parse_context(text: &str) -> Result<ContextRecord, ScoreError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ScoreError::BadRequest(format!("context is not JSON: {e}")))?;
    ContextRecord::from_json(&value, 1).map_err(|e| ScoreError::BadRequest(format!("context: {e}")))
}

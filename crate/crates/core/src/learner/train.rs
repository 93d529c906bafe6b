use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::{Checkpoint, TrainingMetadata};
use super::layers::Mode;
use super::network::Network;
use super::optim::{step_decay_lr, Optimizer, OptimizerKind};
use super::tensor::{Real, Tensor};
use super::LearnerError;
use crate::augment::{AugmentError, Augmenter};
use crate::cohort::{encode_context, Cohort, CohortError, EncoderState, SplitAssignment, Subset};
use crate::dsp::{fit_rescale, load_and_normalize, AudioBuffer, AudioError, DspError, FeatureConfig, Featurizer};
use crate::evaluation::{roc_auc, EvalError};
use crate::inference::{score_individual, segment_waveform, InferenceError, NetScorer};
use crate::{seeded_rng, SeededRng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("validation metric: {0}")]
    Validation(#[from] EvalError),
    #[error("the {0} set is empty")]
    EmptySet(Subset),
    #[error("training labels are all class {0}")]
    SingleClass(usize),
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training config: {0}")]
    Config(String),
}

/// What the labels mean; the loop itself is label-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainTask {
    CovidCough,
    CovidContext,
    /// Cough vs. non-cough sound classification.
    CoughPretrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Epochs between decays; 0 disables decay.
    pub lr_decay_period: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation AUC.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// AdamW 1e-4, ×0.95 every 10 epochs, batch 128, 200 epochs.
    pub fn cough_default() -> Self {
        Self {
            optimizer: OptimizerKind::AdamW,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            lr_decay_factor: 0.95,
            lr_decay_period: 10,
            batch_size: 128,
            max_epochs: 200,
            seed: 0,
            patience: None,
        }
    }

    /// SGD 1e-2, batch 128, early stopping on validation AUC.
    pub fn context_default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            lr_decay_factor: 1.0,
            lr_decay_period: 0,
            batch_size: 128,
            max_epochs: 200,
            seed: 0,
            patience: Some(10),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config("batch size and epochs must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(TrainError::Config("weight decay and decay factor must be non-negative".into()));
        }
        if self.patience == Some(0) {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay_lr(self.learning_rate, self.lr_decay_factor, self.lr_decay_period, epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Network<T>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch training with best-validation-AUC model selection.
///
/// `make_batch` turns example indices into an input batch (drawing any
/// augmentation randomness from the shared generator); `validate` returns the
/// validation AUC of the current weights after each epoch.
pub fn run_training<T, B, V>(
    mut net: Network<T>,
    cfg: &TrainConfig,
    labels: &[usize],
    mut make_batch: B,
    mut validate: V,
) -> Result<TrainOutcome<T>, TrainError>
where
    T: Real,
    B: FnMut(&[usize], &mut SeededRng) -> Result<Tensor<T>, TrainError>,
    V: FnMut(&Network<T>) -> Result<f64, TrainError>,
{
    cfg.validate()?;
    if labels.is_empty() {
        return Err(TrainError::EmptySet(Subset::Train));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(LearnerError::BadLabel(bad).into());
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(TrainError::SingleClass(labels[0]));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.weight_decay, net.param_count());
    let batch = cfg.batch_size.min(labels.len());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Network<T>, usize, f64)> = None;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(batch) {
            let x = make_batch(idx, &mut rng)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.loss_and_grads(&x, &y, Mode::Train(&mut rng))?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss(epoch));
            }
            optimizer.step(&mut net, &grads, lr)?;
            loss_sum += loss * idx.len() as f64;
        }
        let val_auc = validate(&net)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / labels.len() as f64,
            val_auc,
        });
        tracing::debug!(epoch, lr, train_loss = loss_sum / labels.len() as f64, val_auc, "epoch done");
        if best.as_ref().is_none_or(|b| val_auc > b.2) {
            best = Some((net.clone(), epoch, val_auc));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (best, best_epoch, best_val_auc) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_auc,
        history,
    })
}

/// Decoded audio for cough training: one example per recording for
/// training, grouped per individual for validation.
#[derive(Debug, Clone, Default)]
pub struct CoughData {
    pub train: Vec<(AudioBuffer, usize)>,
    pub validation: Vec<(Vec<AudioBuffer>, usize)>,
}

pub fn load_cough_data(cohort: &Cohort, split: &SplitAssignment) -> Result<CoughData, TrainError> {
    let mut data = CoughData::default();
    for rec in split.members(cohort, Subset::Train) {
        for p in cohort.sample_paths(rec) {
            data.train.push((load_and_normalize(&p)?, rec.label.as_class()));
        }
    }
    for rec in split.members(cohort, Subset::Validation) {
        let bufs = cohort
            .sample_paths(rec)
            .iter()
            .map(load_and_normalize)
            .collect::<Result<Vec<_>, _>>()?;
        data.validation.push((bufs, rec.label.as_class()));
    }
    Ok(data)
}

fn validation_auc(scores: &[f64], labels: &[usize]) -> Result<f64, TrainError> {
    let labels: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    Ok(roc_auc(scores, &labels)?)
}

/// Trains the cough classifier and returns the best-validation checkpoint.
///
/// The rescale divisor is fitted on the unaugmented sliding-window segments
/// of the training recordings. `init` warm-starts from earlier weights (for
/// example a cough/non-cough pretraining run); all weights are updated.
pub fn train_cough(
    cfg: &TrainConfig,
    data: &CoughData,
    feature_config: FeatureConfig,
    augmenter: &Augmenter,
    init: Option<Network<f32>>,
    task: TrainTask,
) -> Result<(Checkpoint, TrainOutcome<f32>), TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptySet(Subset::Train));
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptySet(Subset::Validation));
    }
    let val_labels: Vec<usize> = data.validation.iter().map(|v| v.1).collect();
    if val_labels.iter().all(|&l| l == val_labels[0]) {
        return Err(EvalError::SingleClass {
            positives: val_labels.iter().filter(|&&l| l == 1).count(),
            negatives: val_labels.iter().filter(|&&l| l == 0).count(),
        }
        .into());
    }
    let base = Featurizer::new(feature_config)?;
    let mut raw = Vec::new();
    for (buf, _) in &data.train {
        for seg in segment_waveform(buf, &feature_config) {
            raw.push(base.log_mel(&seg)?);
        }
    }
    let scale = fit_rescale(raw.iter())?;
    drop(raw);
    let featurizer = base.with_scale(scale)?;
    let (_, mels, frames) = (1, feature_config.mel.n_mels, feature_config.stft.frame_count(feature_config.segment_samples));

    let net = match init {
        Some(n) => n,
        None => {
            let mut n = Network::<f32>::cough_net(cfg.seed);
            n.input_shape = vec![1, mels, frames];
            n.output_shape()?;
            n
        }
    };
    let labels: Vec<usize> = data.train.iter().map(|t| t.1).collect();
    let outcome = run_training(
        net,
        cfg,
        &labels,
        |idx, rng| {
            let mut rows = Vec::with_capacity(idx.len());
            for &i in idx {
                let wave = augmenter.waveform(&data.train[i].0, rng)?;
                let patch = featurizer.featurize(&wave)?;
                rows.push(augmenter.patch(&patch, rng).values);
            }
            let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
            Ok(Tensor::stack(&[1, mels, frames], &refs))
        },
        |net| {
            let scorer = NetScorer { net, featurizer: &featurizer };
            let scores = data
                .validation
                .iter()
                .map(|(bufs, _)| score_individual(&scorer, bufs))
                .collect::<Result<Vec<_>, _>>()?;
            validation_auc(&scores, &val_labels)
        },
    )?;
    let ckpt = Checkpoint {
        network: outcome.best.clone(),
        feature_config: Some(feature_config),
        rescale: Some(scale),
        encoder: None,
        metadata: TrainingMetadata::from_outcome(task, cfg, &outcome),
    };
    Ok((ckpt, outcome))
}

/// Encoded context rows and labels for training and validation.
#[derive(Debug, Clone, Default)]
pub struct ContextData {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub val_x: Vec<Vec<f64>>,
    pub val_y: Vec<usize>,
}

pub fn build_context_data(cohort: &Cohort, split: &SplitAssignment, encoder: &EncoderState) -> ContextData {
    let mut d = ContextData::default();
    for (subset, xs, ys) in [
        (Subset::Train, &mut d.train_x, &mut d.train_y),
        (Subset::Validation, &mut d.val_x, &mut d.val_y),
    ] {
        for rec in split.members(cohort, subset) {
            xs.push(encode_context(&rec.context, encoder).0);
            ys.push(rec.label.as_class());
        }
    }
    d
}

fn rows_f32(rows: &[Vec<f64>], idx: impl Iterator<Item = usize>, dim: usize) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut n = 0;
    for i in idx {
        data.extend(rows[i].iter().map(|&v| v as f32));
        n += 1;
    }
    Tensor::from_vec(&[n, dim], data)
}

/// Trains the context classifier (linear, or one hidden layer when
/// `hidden` is set) with early stopping on validation AUC.
pub fn train_context(
    cfg: &TrainConfig,
    data: &ContextData,
    encoder: &EncoderState,
    hidden: Option<usize>,
) -> Result<(Checkpoint, TrainOutcome<f32>), TrainError> {
    let dim = encoder.dim();
    if data.val_x.is_empty() {
        return Err(TrainError::EmptySet(Subset::Validation));
    }
    if let Some(bad) = data.train_x.iter().chain(&data.val_x).find(|r| r.len() != dim) {
        return Err(LearnerError::ShapeMismatch {
            expected: vec![dim],
            got: vec![bad.len()],
        }
        .into());
    }
    let net = Network::<f32>::context_net(dim, hidden, cfg.seed);
    let val_tensor = rows_f32(&data.val_x, 0..data.val_x.len(), dim);
    let outcome = run_training(
        net,
        cfg,
        &data.train_y,
        |idx, _| Ok(rows_f32(&data.train_x, idx.iter().copied(), dim)),
        |net| {
            let probs = net.forward(&val_tensor)?;
            let scores: Vec<f64> = (0..data.val_y.len()).map(|i| probs.data[2 * i + 1] as f64).collect();
            validation_auc(&scores, &data.val_y)
        },
    )?;
    let ckpt = Checkpoint {
        network: outcome.best.clone(),
        feature_config: None,
        rescale: None,
        encoder: Some(encoder.clone()),
        metadata: TrainingMetadata::from_outcome(TrainTask::CovidContext, cfg, &outcome),
    };
    Ok((ckpt, outcome))
}

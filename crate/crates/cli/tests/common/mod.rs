#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use cac_cli::service::{router, AppState};
use cac_core::cohort::{fit_context_encoder, ContextRecord, TravelHistory};
use cac_core::dsp::{AudioBuffer, FeatureConfig};
use cac_core::learner::{Checkpoint, Network, TrainConfig, TrainTask, TrainingMetadata};
use cac_core::seeded_rng;
use cac_core::synth::{synth_recording, SynthConfig};

fn metadata(task: TrainTask) -> TrainingMetadata {
    TrainingMetadata {
        task,
        best_epoch: 0,
        val_auc: 0.5,
        epochs_run: 1,
        config: TrainConfig::context_default(),
        history: vec![],
    }
}

pub fn context_record(fever: bool, temperature: f64) -> ContextRecord {
    ContextRecord {
        age: Some(40.0),
        temperature: Some(temperature),
        days_cough: Some(2.0),
        days_sob: Some(0.0),
        days_fever: Some(if fever { 3.0 } else { 0.0 }),
        has_cough: Some(true),
        has_sob: Some(false),
        has_fever: Some(fever),
        contact_confirmed: Some(false),
        is_health_worker: Some(false),
        travel_history: Some(TravelHistory::No),
    }
}

/// Untrained but fully valid checkpoints for both modalities.
pub fn checkpoints() -> (Checkpoint, Checkpoint) {
    let train: Vec<ContextRecord> = (0..20)
        .map(|i| context_record(i % 2 == 0, 36.5 + 0.1 * i as f64))
        .collect();
    let encoder = fit_context_encoder(&train).unwrap();
    let cough = Checkpoint {
        network: Network::<f32>::cough_net(5),
        feature_config: Some(FeatureConfig::default()),
        rescale: Some(20.0),
        encoder: None,
        metadata: metadata(TrainTask::CovidCough),
    };
    let context = Checkpoint {
        network: Network::<f32>::context_net(encoder.dim(), Some(8), 6),
        feature_config: None,
        rescale: None,
        encoder: Some(encoder),
        metadata: metadata(TrainTask::CovidContext),
    };
    (cough, context)
}

pub fn wav_bytes(seed: u64, positive: bool, secs: f64) -> Vec<u8> {
    let cfg = SynthConfig {
        duration_secs: (secs, secs),
        ..SynthConfig::default()
    };
    let rec = synth_recording(positive, &cfg, &mut seeded_rng(seed));
    AudioBuffer::new(rec.buffer.samples, 16000).to_wav_bytes()
}

pub async fn spawn(state: Arc<AppState>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state)).await.unwrap();
    });
    addr
}

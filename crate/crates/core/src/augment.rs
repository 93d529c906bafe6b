//! Training-time augmentations: 2 s cropping, background-noise mixing, and
//! time/frequency masking of the rescaled log-mel patch.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{AudioBuffer, LogMelPatch};

/// Length of the model input window (2 s at 16 kHz).
pub const CROP_SAMPLES: usize = 32_000;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("noise buffer is empty")]
    EmptyNoise,
    #[error("invalid augmentation config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMixConfig {
    pub factor_min: f32,
    pub factor_max: f32,
    pub apply_probability: f64,
}

impl Default for NoiseMixConfig {
    fn default() -> Self {
        Self {
            factor_min: 0.4,
            factor_max: 0.75,
            apply_probability: 0.5,
        }
    }
}

impl NoiseMixConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0 <= self.factor_min && self.factor_min <= self.factor_max) {
            return Err(AugmentError::BadConfig(format!(
                "noise factor range [{}, {}]",
                self.factor_min, self.factor_max
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(AugmentError::BadConfig(format!(
                "apply_probability {}",
                self.apply_probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            n_time_masks: 2,
            max_time_width: 20,
            n_freq_masks: 2,
            max_freq_width: 8,
        }
    }
}

impl MaskConfig {
    pub fn none() -> Self {
        Self {
            n_time_masks: 0,
            max_time_width: 0,
            n_freq_masks: 0,
            max_freq_width: 0,
        }
    }

    pub fn validate(&self, n_mels: usize, frames: usize) -> Result<(), AugmentError> {
        if self.max_time_width >= frames || self.max_freq_width >= n_mels {
            return Err(AugmentError::BadConfig(format!(
                "mask widths ({}, {}) must be below patch dims ({frames}, {n_mels})",
                self.max_time_width, self.max_freq_width
            )));
        }
        Ok(())
    }
}

/// Exactly [`CROP_SAMPLES`] samples: right-padded with zeros when short,
/// a uniformly placed contiguous slice when long.
pub fn random_crop_2s<R: Rng + ?Sized>(buf: &AudioBuffer, rng: &mut R) -> AudioBuffer {
    crop_or_pad(buf, CROP_SAMPLES, rng)
}

pub fn crop_or_pad<R: Rng + ?Sized>(buf: &AudioBuffer, len: usize, rng: &mut R) -> AudioBuffer {
    let samples = if buf.len() <= len {
        let mut s = buf.samples.clone();
        s.resize(len, 0.0);
        s
    } else {
        let start = rng.random_range(0..=buf.len() - len);
        buf.samples[start..start + len].to_vec()
    };
    AudioBuffer::new(samples, buf.sample_rate_hz)
}

pub fn draw_noise_factor<R: Rng + ?Sized>(rng: &mut R, cfg: &NoiseMixConfig) -> f32 {
    if cfg.factor_min == cfg.factor_max {
        cfg.factor_min
    } else {
        rng.random_range(cfg.factor_min..=cfg.factor_max)
    }
}

/// `clean + α · noise′`, clipped to `[-1, 1]`, with `α` drawn from the
/// configured range and `noise′` tiled or randomly cropped to `clean`'s length.
pub fn mix_noise<R: Rng + ?Sized>(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    rng: &mut R,
    cfg: &NoiseMixConfig,
) -> Result<AudioBuffer, AugmentError> {
    if noise.is_empty() {
        return Err(AugmentError::EmptyNoise);
    }
    let alpha = draw_noise_factor(rng, cfg);
    let n = clean.len();
    let offset = if noise.len() > n {
        rng.random_range(0..=noise.len() - n)
    } else {
        0
    };
    let samples = clean
        .samples
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let nz = noise.samples[(offset + i) % noise.len()];
            (c + alpha * nz).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioBuffer::new(samples, clean.sample_rate_hz))
}

/// Replaces random row and column bands of the patch with its mean.
pub fn spec_augment<R: Rng + ?Sized>(
    patch: &LogMelPatch,
    cfg: &MaskConfig,
    rng: &mut R,
) -> LogMelPatch {
    let mut out = patch.clone();
    if cfg.n_time_masks == 0 && cfg.n_freq_masks == 0 {
        return out;
    }
    let fill = patch.mean();
    let (rows, cols) = patch.shape();
    for _ in 0..cfg.n_time_masks {
        let w = rng.random_range(0..=cfg.max_time_width.min(cols));
        let start = rng.random_range(0..=cols - w);
        for r in 0..rows {
            out.values[r * cols + start..r * cols + start + w].fill(fill);
        }
    }
    for _ in 0..cfg.n_freq_masks {
        let w = rng.random_range(0..=cfg.max_freq_width.min(rows));
        let start = rng.random_range(0..=rows - w);
        out.values[start * cols..(start + w) * cols].fill(fill);
    }
    out
}

/// Waveform-level augmentation pipeline used by the training loop.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    pub noise: NoiseMixConfig,
    pub mask: MaskConfig,
    pub noise_bank: Vec<AudioBuffer>,
}

impl Augmenter {
    /// Identity augmentation apart from the 2 s crop.
    pub fn crop_only() -> Self {
        Self {
            noise: NoiseMixConfig {
                apply_probability: 0.0,
                ..NoiseMixConfig::default()
            },
            mask: MaskConfig::none(),
            noise_bank: Vec::new(),
        }
    }

    pub fn waveform<R: Rng + ?Sized>(
        &self,
        buf: &AudioBuffer,
        rng: &mut R,
    ) -> Result<AudioBuffer, AugmentError> {
        let crop = random_crop_2s(buf, rng);
        if self.noise_bank.is_empty() || !rng.random_bool(self.noise.apply_probability) {
            return Ok(crop);
        }
        let noise = &self.noise_bank[rng.random_range(0..self.noise_bank.len())];
        mix_noise(&crop, noise, rng, &self.noise)
    }

    pub fn patch<R: Rng + ?Sized>(&self, patch: &LogMelPatch, rng: &mut R) -> LogMelPatch {
        spec_augment(patch, &self.mask, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buf(n: usize) -> AudioBuffer {
        AudioBuffer::new((0..n).map(|i| ((i % 200) as f32 / 200.0) - 0.5).collect(), 16_000)
    }

    #[test]
    fn short_input_is_zero_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf(24_000);
        let out = random_crop_2s(&b, &mut rng);
        assert_eq!(out.len(), 32_000);
        assert_eq!(&out.samples[..24_000], &b.samples[..]);
        assert!(out.samples[24_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_length_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf(32_000);
        assert_eq!(random_crop_2s(&b, &mut rng), b);
    }

    #[test]
    fn long_input_gives_contiguous_slice_deterministically() {
        let b = AudioBuffer::new((0..80_000).map(|i| i as f32 / 80_000.0).collect(), 16_000);
        let a1 = random_crop_2s(&b, &mut ChaCha8Rng::seed_from_u64(9));
        let a2 = random_crop_2s(&b, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a1, a2);
        let start = (a1.samples[0] * 80_000.0).round() as usize;
        assert_eq!(&a1.samples[..], &b.samples[start..start + 32_000]);
    }

    #[test]
    fn zero_noise_leaves_clean_untouched() {
        let clean = buf(1000);
        let noise = AudioBuffer::new(vec![0.0; 300], 16_000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = mix_noise(&clean, &noise, &mut rng, &NoiseMixConfig::default()).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn silent_clean_yields_scaled_noise() {
        let clean = AudioBuffer::new(vec![0.0; 500], 16_000);
        let noise = AudioBuffer::new((0..200).map(|i| (i as f32 / 200.0) - 0.5).collect(), 16_000);
        let cfg = NoiseMixConfig::default();
        let alpha = draw_noise_factor(&mut ChaCha8Rng::seed_from_u64(4), &cfg);
        let out = mix_noise(&clean, &noise, &mut ChaCha8Rng::seed_from_u64(4), &cfg).unwrap();
        for (i, v) in out.samples.iter().enumerate() {
            assert_eq!(*v, alpha * noise.samples[i % 200]);
        }
    }

    #[test]
    fn factor_stays_in_range() {
        let cfg = NoiseMixConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let a = draw_noise_factor(&mut rng, &cfg);
            assert!((0.4..=0.75).contains(&a));
        }
    }

    #[test]
    fn empty_noise_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = AudioBuffer::new(vec![], 16_000);
        assert_eq!(
            mix_noise(&buf(10), &empty, &mut rng, &NoiseMixConfig::default()),
            Err(AugmentError::EmptyNoise)
        );
    }

    fn ramp_patch() -> LogMelPatch {
        LogMelPatch::new(64, 201, (0..64 * 201).map(|i| (i as f32 * 0.001).sin()).collect())
    }

    #[test]
    fn no_masks_is_identity() {
        let p = ramp_patch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(spec_augment(&p, &MaskConfig::none(), &mut rng), p);
    }

    #[test]
    fn single_time_mask_touches_whole_columns() {
        let p = ramp_patch();
        let cfg = MaskConfig {
            n_time_masks: 1,
            max_time_width: 20,
            n_freq_masks: 0,
            max_freq_width: 0,
        };
        for seed in 0..20 {
            let out = spec_augment(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let mean = p.mean();
            let changed_cols: Vec<usize> = (0..201)
                .filter(|&c| (0..64).any(|r| out.get(r, c) != p.get(r, c)))
                .collect();
            for &c in &changed_cols {
                assert!((0..64).all(|r| out.get(r, c) == mean));
            }
            let diffs = out.values.iter().zip(&p.values).filter(|(a, b)| a != b).count();
            assert_eq!(diffs, changed_cols.len() * 64);
            assert!(changed_cols.len() <= 20);
            if let (Some(first), Some(last)) = (changed_cols.first(), changed_cols.last()) {
                assert_eq!(last - first + 1, changed_cols.len());
            }
        }
    }

    proptest! {
        #[test]
        fn masked_cells_bounded(seed in 0u64..500, nt in 0usize..4, nf in 0usize..4) {
            let p = ramp_patch();
            let cfg = MaskConfig { n_time_masks: nt, max_time_width: 20, n_freq_masks: nf, max_freq_width: 8 };
            let out = spec_augment(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let diffs = out.values.iter().zip(&p.values).filter(|(a, b)| a != b).count();
            prop_assert!(diffs <= nt * 20 * 64 + nf * 8 * 201);
            prop_assert_eq!(out.shape(), p.shape());
        }

        #[test]
        fn mixing_stays_in_unit_range(seed in 0u64..1000, amp in 0.0f32..1.0) {
            let clean = AudioBuffer::new((0..300).map(|i| ((i as f32) * 0.3).sin() * amp).collect(), 16_000);
            let noise = AudioBuffer::new((0..77).map(|i| ((i as f32) * 1.7).cos()).collect(), 16_000);
            let out = mix_noise(&clean, &noise, &mut ChaCha8Rng::seed_from_u64(seed), &NoiseMixConfig::default()).unwrap();
            prop_assert!(out.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(out.len(), clean.len());
        }
    }
}

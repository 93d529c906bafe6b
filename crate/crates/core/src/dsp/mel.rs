use serde::{Deserialize, Serialize};

use super::featurizer::LogMelPatch;
use super::{DspError, Spectrogram};

/// Floor added before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    /// `2595 · log10(1 + f / 700)`
    #[default]
    Htk,
    /// Linear below 1 kHz, logarithmic above.
    Slaney,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub sample_rate_hz: u32,
    #[serde(default)]
    pub scale: MelScale,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            f_min_hz: 125.0,
            f_max_hz: 7500.0,
            sample_rate_hz: 16_000,
            scale: MelScale::Htk,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(DspError::BadMelConfig("n_mels must be at least 1".into()));
        }
        if !(0.0 <= self.f_min_hz && self.f_min_hz < self.f_max_hz && self.f_max_hz <= nyquist) {
            return Err(DspError::BadMelConfig(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= {}",
                self.f_min_hz, self.f_max_hz, nyquist
            )));
        }
        Ok(())
    }
}

const SLANEY_F_SP: f64 = 200.0 / 3.0;
const SLANEY_MIN_LOG_HZ: f64 = 1000.0;
const SLANEY_MIN_LOG_MEL: f64 = SLANEY_MIN_LOG_HZ / SLANEY_F_SP;

fn slaney_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
        MelScale::Slaney => {
            if hz < SLANEY_MIN_LOG_HZ {
                hz / SLANEY_F_SP
            } else {
                SLANEY_MIN_LOG_MEL + (hz / SLANEY_MIN_LOG_HZ).ln() / slaney_logstep()
            }
        }
    }
}

pub fn mel_to_hz(mel: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
        MelScale::Slaney => {
            if mel < SLANEY_MIN_LOG_MEL {
                mel * SLANEY_F_SP
            } else {
                SLANEY_MIN_LOG_HZ * ((mel - SLANEY_MIN_LOG_MEL) * slaney_logstep()).exp()
            }
        }
    }
}

/// Triangular mel filterbank, row-major `[n_mels × freq_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub freq_bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.freq_bins..(m + 1) * self.freq_bins]
    }
}

pub fn mel_filterbank(cfg: &MelConfig, freq_bins: usize) -> Result<MelFilterbank, DspError> {
    cfg.validate()?;
    if freq_bins < 2 {
        return Err(DspError::BadMelConfig(format!("{freq_bins} frequency bins")));
    }
    let fft_size = 2 * (freq_bins - 1);
    let bin_hz = cfg.sample_rate_hz as f64 / fft_size as f64;
    let mel_lo = hz_to_mel(cfg.f_min_hz, cfg.scale);
    let mel_hi = hz_to_mel(cfg.f_max_hz, cfg.scale);
    let step = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64, cfg.scale))
        .collect();

    let mut weights = vec![0.0; cfg.n_mels * freq_bins];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * freq_bins..(m + 1) * freq_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(DspError::EmptyFilter { index: m });
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        freq_bins,
        weights,
    })
}

/// `ln(filterbank · magnitudes + ε)` per frame; result is not yet rescaled.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<LogMelPatch, DspError> {
    if spec.freq_bins != fb.freq_bins {
        return Err(DspError::DimensionMismatch {
            expected: fb.freq_bins,
            actual: spec.freq_bins,
        });
    }
    let frames = spec.frames;
    let mut values = vec![0.0f32; fb.n_mels * frames];
    let mut acc = vec![0.0f64; frames];
    for m in 0..fb.n_mels {
        acc.fill(0.0);
        for (k, &w) in fb.row(m).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mags = &spec.magnitudes[k * frames..(k + 1) * frames];
            for (a, &v) in acc.iter_mut().zip(mags) {
                *a += w * v;
            }
        }
        for (t, a) in acc.iter().enumerate() {
            values[m * frames + t] = (a + LOG_FLOOR).ln() as f32;
        }
    }
    Ok(LogMelPatch::new(fb.n_mels, frames, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn htk_fixed_points() {
        assert_eq!(hz_to_mel(0.0, MelScale::Htk), 0.0);
        let expected = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0, MelScale::Htk) - expected).abs() < 1e-12);
        for f in [0.0, 125.0, 1000.0, 7500.0] {
            for s in [MelScale::Htk, MelScale::Slaney] {
                assert!((mel_to_hz(hz_to_mel(f, s), s) - f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_bank_rows_are_positive_and_contiguous() {
        let fb = mel_filterbank(&MelConfig::default(), 257).unwrap();
        assert_eq!((fb.n_mels, fb.freq_bins), (64, 257));
        for m in 0..64 {
            let row = fb.row(m);
            assert!(row.iter().sum::<f64>() > 0.0);
            assert!(row.iter().all(|&w| w >= 0.0));
            let nz: Vec<usize> = (0..257).filter(|&k| row[k] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "row {m} not contiguous");
        }
        // Nothing below f_min or above f_max.
        let bin_hz = 16_000.0 / 512.0;
        for m in 0..64 {
            for k in 0..257 {
                let f = k as f64 * bin_hz;
                if f <= 125.0 || f >= 7500.0 {
                    assert_eq!(fb.row(m)[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn too_many_mels_is_degenerate() {
        let cfg = MelConfig {
            n_mels: 400,
            ..MelConfig::default()
        };
        assert!(matches!(
            mel_filterbank(&cfg, 257),
            Err(DspError::EmptyFilter { .. })
        ));
    }

    #[test]
    fn bad_ranges_rejected() {
        let cfg = MelConfig {
            f_max_hz: 9000.0,
            ..MelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(DspError::BadMelConfig(_))));
    }

    #[test]
    fn log_mel_of_zeros_is_log_floor() {
        let fb = mel_filterbank(&MelConfig::default(), 257).unwrap();
        let spec = Spectrogram {
            freq_bins: 257,
            frames: 3,
            magnitudes: vec![0.0; 257 * 3],
        };
        let p = log_mel(&spec, &fb).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(p.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_magnitudes_shifts_by_ln2() {
        let fb = mel_filterbank(&MelConfig::default(), 257).unwrap();
        let mags: Vec<f64> = (0..257).map(|k| 1.0 + (k as f64 * 0.37).sin().abs()).collect();
        let spec = Spectrogram {
            freq_bins: 257,
            frames: 1,
            magnitudes: mags.clone(),
        };
        let doubled = Spectrogram {
            magnitudes: mags.iter().map(|m| m * 2.0).collect(),
            ..spec.clone()
        };
        let a = log_mel(&spec, &fb).unwrap();
        let b = log_mel(&doubled, &fb).unwrap();
        assert_eq!((a.n_mels, a.frames), (64, 1));
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(((y - x) as f64 - 2f64.ln()).abs() < 1e-5);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let fb = mel_filterbank(&MelConfig::default(), 257).unwrap();
        let spec = Spectrogram {
            freq_bins: 129,
            frames: 1,
            magnitudes: vec![0.0; 129],
        };
        assert_eq!(
            log_mel(&spec, &fb).unwrap_err(),
            DspError::DimensionMismatch {
                expected: 257,
                actual: 129
            }
        );
    }
}

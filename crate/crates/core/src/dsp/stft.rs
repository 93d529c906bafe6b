use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioBuffer, DspError};

/// Short-time Fourier transform parameters. Defaults are 32 ms windows with a
/// 10 ms hop at 16 kHz and a 512-point FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub centered: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len_samples: 512,
            hop_samples: 160,
            fft_size: 512,
            centered: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.window_len_samples == 0 || self.window_len_samples > self.fft_size {
            return Err(DspError::BadStftConfig(format!(
                "window length {} must be in 1..={}",
                self.window_len_samples, self.fft_size
            )));
        }
        if self.hop_samples == 0 {
            return Err(DspError::BadStftConfig("hop must be at least 1".into()));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        if self.centered {
            1 + n_samples / self.hop_samples
        } else if n_samples < self.window_len_samples {
            0
        } else {
            1 + (n_samples - self.window_len_samples) / self.hop_samples
        }
    }

    /// Periodic Hamming window of `window_len_samples` points.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len_samples as f64;
        (0..self.window_len_samples)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }
}

/// Magnitude spectrogram stored row-major as `[freq_bins × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub freq_bins: usize,
    pub frames: usize,
    pub magnitudes: Vec<f64>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.freq_bins).map(|b| self.get(b, frame)).collect()
    }
}

/// Mirror index into `[0, len)` without repeating the edge sample.
fn reflect(i: i64, len: usize) -> usize {
    let len = len as i64;
    let period = 2 * (len - 1);
    let m = i.rem_euclid(period);
    (if m >= len { period - m } else { m }) as usize
}

pub fn stft(buf: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    let samples: Vec<f64> = buf.samples.iter().map(|&v| v as f64).collect();
    stft_samples(&samples, cfg)
}

pub(crate) fn stft_samples(samples: &[f64], cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(DspError::TooShort(samples.len()));
    }
    let n = samples.len();
    let frames = cfg.frame_count(n);
    let bins = cfg.freq_bins();
    let window = cfg.window();
    let pad = if cfg.centered {
        (cfg.window_len_samples / 2) as i64
    } else {
        0
    };

    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut frame_buf = vec![Complex::default(); cfg.fft_size];
    let mut magnitudes = vec![0.0; bins * frames];

    for t in 0..frames {
        let start = (t * cfg.hop_samples) as i64 - pad;
        frame_buf.fill(Complex::default());
        for (k, w) in window.iter().enumerate() {
            let idx = start + k as i64;
            frame_buf[k].re = samples[reflect(idx, n)] * w;
        }
        fft.process_with_scratch(&mut frame_buf, &mut scratch);
        for (b, c) in frame_buf.iter().take(bins).enumerate() {
            magnitudes[b * frames + t] = c.norm();
        }
    }
    Ok(Spectrogram {
        freq_bins: bins,
        frames,
        magnitudes,
    })
}

/// Magnitude of the full FFT of a single frame, no windowing.
#[cfg(test)]
pub(crate) fn fft_magnitudes(frame: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame.len());
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

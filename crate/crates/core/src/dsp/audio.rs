use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::resample::resample;

/// Sample rate every buffer is normalized to before featurization.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Writes the buffer as a 16-bit PCM mono WAV.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), AudioError> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let to_err = |e: hound::Error| AudioError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(to_err)?;
        }
        writer.finalize().map_err(to_err)
    }

    /// Encodes the buffer as in-memory 16-bit PCM WAV bytes.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer =
                hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV header");
            for &s in &self.samples {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(v).expect("in-memory WAV write");
            }
            writer.finalize().expect("in-memory WAV finalize");
        }
        cursor.into_inner()
    }
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read audio {path:?}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    Empty,
    #[error("audio contains non-finite sample values")]
    NonFinite,
}

/// Reads a PCM WAV file and returns a mono 16 kHz buffer.
pub fn load_and_normalize(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AudioError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_from(Cursor::new(bytes), path)
}

/// Same as [`load_and_normalize`] but over an in-memory WAV file.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    decode_from(Cursor::new(bytes), Path::new("<memory>"))
}

fn decode_from<R: Read>(reader: R, origin: &Path) -> Result<AudioBuffer, AudioError> {
    let reader = hound::WavReader::new(reader).map_err(|e| map_hound(e, origin))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels (expected 1 or 2)",
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if !matches!(spec.bits_per_sample, 8 | 16 | 24 | 32) {
                return Err(AudioError::UnsupportedEncoding(format!(
                    "{}-bit integer PCM",
                    spec.bits_per_sample
                )));
            }
            let full_scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(e, origin))?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(AudioError::UnsupportedEncoding(format!(
                    "{}-bit float PCM",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(e, origin))?
        }
    };
    if interleaved.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::NonFinite);
    }
    let channels = spec.channels as usize;
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    if mono.is_empty() {
        return Err(AudioError::Empty);
    }
    let resampled = if spec.sample_rate == TARGET_SAMPLE_RATE {
        mono
    } else {
        resample(&mono, spec.sample_rate, TARGET_SAMPLE_RATE)
    };
    if resampled.is_empty() {
        return Err(AudioError::Empty);
    }
    Ok(AudioBuffer {
        samples: resampled
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0) as f32)
            .collect(),
        sample_rate_hz: TARGET_SAMPLE_RATE,
    })
}

fn map_hound(err: hound::Error, origin: &Path) -> AudioError {
    match err {
        hound::Error::Unsupported => {
            AudioError::UnsupportedEncoding("format not supported by the WAV decoder".into())
        }
        other => AudioError::Unreadable {
            path: origin.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav<S: hound::Sample + Copy>(
        path: &Path,
        channels: u16,
        rate: u32,
        bits: u16,
        format: hound::SampleFormat,
        samples: &[S],
    ) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: format,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn mono_16k_int16_is_identity_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let raw: Vec<i16> = vec![0, 1, -1, 32767, -32768, 12345, -4321];
        write_wav(&p, 1, 16_000, 16, hound::SampleFormat::Int, &raw);
        let buf = load_and_normalize(&p).unwrap();
        assert_eq!(buf.sample_rate_hz, 16_000);
        let expected: Vec<f32> = raw.iter().map(|&v| v as f32 / 32768.0).collect();
        assert_eq!(buf.samples, expected);
    }

    #[test]
    fn stereo_44k_two_seconds_becomes_32000_mono_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let n = 88_200;
        let mut raw = Vec::with_capacity(n * 2);
        for i in 0..n {
            let v = ((i as f64 * 0.01).sin() * 8000.0) as i16;
            raw.push(v);
            raw.push(v / 2);
        }
        write_wav(&p, 2, 44_100, 16, hound::SampleFormat::Int, &raw);
        let buf = load_and_normalize(&p).unwrap();
        assert_eq!(buf.len(), 32_000);
        assert!(buf.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn stereo_channels_are_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let raw: Vec<i16> = vec![1000, 3000, -2000, 0];
        write_wav(&p, 2, 16_000, 16, hound::SampleFormat::Int, &raw);
        let buf = load_and_normalize(&p).unwrap();
        assert_eq!(buf.samples, vec![2000.0 / 32768.0, -1000.0 / 32768.0]);
    }

    #[test]
    fn supports_float_and_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        write_wav(&p, 1, 16_000, 32, hound::SampleFormat::Float, &[0.25f32, -0.5]);
        assert_eq!(load_and_normalize(&p).unwrap().samples, vec![0.25, -0.5]);

        let p = dir.path().join("i24.wav");
        write_wav(&p, 1, 16_000, 24, hound::SampleFormat::Int, &[1 << 22, -(1 << 21)]);
        assert_eq!(load_and_normalize(&p).unwrap().samples, vec![0.5, -0.25]);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        assert!(matches!(
            load_and_normalize(&missing),
            Err(AudioError::Unreadable { .. })
        ));

        let garbage = dir.path().join("g.wav");
        std::fs::write(&garbage, b"not a wav file at all").unwrap();
        assert!(matches!(
            load_and_normalize(&garbage),
            Err(AudioError::Unreadable { .. })
        ));

        let empty = dir.path().join("e.wav");
        write_wav::<i16>(&empty, 1, 16_000, 16, hound::SampleFormat::Int, &[]);
        assert!(matches!(load_and_normalize(&empty), Err(AudioError::Empty)));

        let many = dir.path().join("c3.wav");
        write_wav::<i16>(&many, 3, 16_000, 16, hound::SampleFormat::Int, &[0, 0, 0]);
        assert!(matches!(
            load_and_normalize(&many),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn wav_bytes_round_trip() {
        let buf = AudioBuffer::new(vec![0.0, 0.5, -0.5, 0.25], 16_000);
        let back = decode_wav_bytes(&buf.to_wav_bytes()).unwrap();
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

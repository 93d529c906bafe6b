//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;
/// Fraction of the lower Nyquist frequency kept as passband.
const ROLLOFF: f64 = 0.95;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(offset: f64, half_width: f64) -> f64 {
    let r = offset / half_width;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples `input` from `from_hz` to `to_hz`.
///
/// Output length is `ceil(len · to / from)`. Each polyphase branch is
/// normalized to unit DC gain.
pub fn resample(input: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz || input.is_empty() {
        return input.to_vec();
    }
    let (from, to) = (from_hz as u64, to_hz as u64);
    let g = gcd(from, to);
    let (up, down) = (to / g, from / g);
    let out_len = ((input.len() as u64 * up).div_ceil(down)) as usize;
    let cutoff = ROLLOFF * (to as f64 / from as f64).min(1.0);
    let half = (TAPS / 2) as f64;
    let left = TAPS / 2 - 1;

    // One branch per fractional phase p/up.
    let phases: Vec<[f64; TAPS]> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut taps = [0.0; TAPS];
            for (j, tap) in taps.iter_mut().enumerate() {
                let dist = frac + left as f64 - j as f64;
                *tap = cutoff * sinc(cutoff * dist) * kaiser(dist, half);
            }
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            taps
        })
        .collect();

    let n_in = input.len() as i64;
    (0..out_len as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &phases[(pos % up) as usize];
            let start = base - left as i64;
            taps.iter()
                .enumerate()
                .filter_map(|(j, &w)| {
                    let idx = start + j as i64;
                    (0..n_in).contains(&idx).then(|| w * input[idx as usize])
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_peak(x: &[f64]) -> usize {
        let n = x.len();
        (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn sine_440_at_48k_keeps_its_frequency() {
        let x: Vec<f64> = (0..48_000 / 4)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 48_000.0).sin() * 0.5)
            .collect();
        let y = resample(&x, 48_000, 16_000);
        assert_eq!(y.len(), 4000);
        let n = y.len();
        let bin_hz = 16_000.0 / n as f64;
        let peak = naive_dft_peak(&y);
        let expected = 440.0 / bin_hz;
        assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}, expected {expected}");
    }

    #[test]
    fn dc_is_preserved_in_the_interior() {
        let x = vec![0.3; 4410];
        let y = resample(&x, 44_100, 16_000);
        assert_eq!(y.len(), 1600);
        for v in &y[40..1560] {
            assert!((v - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn upsampling_length() {
        let x = vec![0.0; 8000];
        assert_eq!(resample(&x, 8000, 16_000).len(), 16_000);
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }
}

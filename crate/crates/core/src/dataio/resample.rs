//! Band-limited resampling by direct windowed-sinc interpolation.

/// Zero crossings of the sinc kernel on each side of the centre.
const HALF_TAPS: f64 = 32.0;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples `input` from `from` Hz to `to` Hz. Equal rates return the input
/// unchanged.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to as f64 / from as f64;
    // cutoff relative to the input Nyquist, lowered when downsampling
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = HALF_TAPS / cutoff;
    let out_len = ((input.len() as f64) * ratio).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / ratio;
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
        let mut acc = 0.0f64;
        for (i, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - i as f64;
            acc += x as f64 * cutoff * sinc(cutoff * d) * blackman(d / half_width);
        }
        out.push(acc as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft_magnitude, Framing};

    fn tone(rate: u32, secs: f64, freq: f64) -> Vec<f32> {
        (0..(secs * rate as f64) as usize)
            .map(|n| (0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin()) as f32)
            .collect()
    }

    fn peak_bin(x: &[f32]) -> usize {
        let spec = stft_magnitude(x, 4096, 2048, Framing::Valid);
        let mid = &spec[spec.len() / 2];
        mid.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    #[test]
    fn identity_when_rates_match() {
        let x = tone(44_100, 0.1, 440.0);
        assert_eq!(resample(&x, 44_100, 44_100), x);
    }

    #[test]
    fn half_rate_tone_keeps_frequency() {
        let x = tone(22_050, 1.0, 440.0);
        let y = resample(&x, 22_050, 44_100);
        assert_eq!(y.len(), 44_100);
        let expect = (440.0 * 4096.0 / 44_100.0_f64).round() as i64;
        assert!((peak_bin(&y) as i64 - expect).abs() <= 1);
    }

    #[test]
    fn tones_survive_common_rate_pairs() {
        for from in [22_050u32, 32_000, 48_000] {
            for freq in [100.0, 440.0, 1000.0, 5000.0] {
                let y = resample(&tone(from, 0.5, freq), from, 44_100);
                let expect = (freq * 4096.0 / 44_100.0).round() as i64;
                assert!((peak_bin(&y) as i64 - expect).abs() <= 1, "{from} Hz, {freq} Hz tone");
            }
        }
    }
}

//! Framing, windows and short-time Fourier transforms.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| {
            let x = std::f64::consts::PI * n as f64 / len as f64;
            (x.sin() * x.sin()) as f32
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framing {
    /// Frame `i` covers `[i*hop, i*hop + window)`; only full frames.
    Valid,
    /// Frame `i` is centred on sample `i*hop`; the signal is zero-padded by
    /// `window/2` on both sides.
    Centered,
}

pub fn frame_count(len: usize, window: usize, hop: usize, framing: Framing) -> usize {
    match framing {
        Framing::Valid if len < window => 0,
        Framing::Valid => 1 + (len - window) / hop,
        Framing::Centered => 1 + len / hop,
    }
}

/// Copies frame `i` of `signal` into `out` (length `window`), zero-filling
/// outside the signal.
pub fn frame_into(signal: &[f32], i: usize, window: usize, hop: usize, framing: Framing, out: &mut [f32]) {
    let start = match framing {
        Framing::Valid => (i * hop) as isize,
        Framing::Centered => (i * hop) as isize - (window / 2) as isize,
    };
    for (n, v) in out.iter_mut().enumerate().take(window) {
        let idx = start + n as isize;
        *v = if idx >= 0 && (idx as usize) < signal.len() {
            signal[idx as usize]
        } else {
            0.0
        };
    }
}

/// Magnitude STFT with a Hann window. Returns `frames x (window/2 + 1)`.
pub fn stft_magnitude(signal: &[f32], window: usize, hop: usize, framing: Framing) -> Vec<Vec<f32>> {
    let n_frames = frame_count(signal.len(), window, hop, framing);
    let win = hann(window);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(window);
    let mut frame = vec![0.0f32; window];
    let mut buf = vec![Complex::new(0.0f32, 0.0); window];
    let mut out = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        frame_into(signal, i, window, hop, framing, &mut frame);
        for ((b, x), w) in buf.iter_mut().zip(&frame).zip(&win) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..window / 2 + 1].iter().map(|c| c.norm()).collect());
    }
    out
}

/// Centre frequency of STFT bin `k`.
pub fn bin_frequency(k: usize, window: usize, sample_rate: f64) -> f64 {
    k as f64 * sample_rate / window as f64
}

/// Linear interpolation of a sequence of frames onto `target` frames with
/// half-sample (align-corners = false) alignment.
pub fn interpolation_weights(source: usize, target: usize) -> Vec<(usize, usize, f32)> {
    (0..target)
        .map(|j| {
            if source == 1 {
                return (0, 0, 0.0);
            }
            let x = ((j as f64 + 0.5) * source as f64 / target as f64 - 0.5).clamp(0.0, (source - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(source - 1);
            (lo, hi, (x - lo as f64) as f32)
        })
        .collect()
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n == 0 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

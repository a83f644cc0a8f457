//! Constant-Q melody activations computed with one windowed DFT kernel per
//! bin.

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::conditioners::{Condition, ConditionKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyConfig {
    /// Frequency of bin 0 (C1).
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub n_bins: usize,
    pub hop: usize,
    /// Activations kept per frame.
    pub top_k: usize,
    /// Bins below this frequency are always zero.
    pub cutoff_hz: f64,
    /// Minimum kernel response for a bin to count as a pitch at all.
    pub floor: f32,
    /// Analyse left and right separately (`2 * n_bins` columns).
    pub per_channel: bool,
}

impl Default for MelodyConfig {
    fn default() -> Self {
        Self {
            fmin: 32.703_195_662_574_83,
            bins_per_octave: 24,
            n_bins: 128,
            hop: 512,
            top_k: 4,
            cutoff_hz: 261.2,
            floor: 1e-3,
            per_channel: false,
        }
    }
}

impl MelodyConfig {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.fmin * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    /// Nearest bin for a frequency, if inside the bin range.
    pub fn frequency_to_bin(&self, hz: f64) -> Option<usize> {
        let k = (self.bins_per_octave as f64 * (hz / self.fmin).log2()).round();
        (k >= 0.0 && (k as usize) < self.n_bins).then_some(k as usize)
    }

    pub fn frame_rate(&self, sample_rate: u32) -> f64 {
        sample_rate as f64 / self.hop as f64
    }

    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }
}

struct Kernel {
    re: Vec<f32>,
    im: Vec<f32>,
}

fn kernels(cfg: &MelodyConfig, sample_rate: f64) -> Vec<Kernel> {
    let q = cfg.q_factor();
    (0..cfg.n_bins)
        .map(|k| {
            let f = cfg.bin_frequency(k);
            let len = ((q * sample_rate / f).ceil() as usize).max(1);
            let win: Vec<f64> = (0..len)
                .map(|n| {
                    let x = std::f64::consts::PI * (n as f64 + 0.5) / len as f64;
                    x.sin() * x.sin()
                })
                .collect();
            // Scaled so a unit-amplitude sinusoid at f responds with 1.
            let norm = 2.0 / win.iter().sum::<f64>();
            let (mut re, mut im) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for (n, w) in win.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * f * (n as f64 - len as f64 / 2.0) / sample_rate;
                re.push((w * norm * ph.cos()) as f32);
                im.push((w * norm * ph.sin()) as f32);
            }
            Kernel { re, im }
        })
        .collect()
}

fn dot_centered(signal: &[f32], centre: usize, k: &Kernel) -> f32 {
    let len = k.re.len();
    let start = centre as isize - (len / 2) as isize;
    let lo = (-start).max(0) as usize;
    let hi = ((signal.len() as isize - start).max(0) as usize).min(len);
    if lo >= hi {
        return 0.0;
    }
    let s = &signal[(start + lo as isize) as usize..(start + hi as isize) as usize];
    let (mut re, mut im) = (0.0f32, 0.0f32);
    for ((x, a), b) in s.iter().zip(&k.re[lo..hi]).zip(&k.im[lo..hi]) {
        re += x * a;
        im += x * b;
    }
    (re * re + im * im).sqrt()
}

/// Constant-Q magnitudes, `frames x n_bins`.
pub fn cqt_magnitude(signal: &[f32], sample_rate: u32, cfg: &MelodyConfig) -> Vec<Vec<f32>> {
    let ks = kernels(cfg, sample_rate as f64);
    let n_frames = 1 + signal.len() / cfg.hop;
    (0..n_frames)
        .map(|i| ks.iter().map(|k| dot_centered(signal, i * cfg.hop, k)).collect())
        .collect()
}

fn activations(mags: &[Vec<f32>], cfg: &MelodyConfig) -> Vec<f32> {
    let cut = (0..cfg.n_bins)
        .find(|&k| cfg.bin_frequency(k) >= cfg.cutoff_hz)
        .unwrap_or(cfg.n_bins);
    let mut out = Vec::with_capacity(mags.len() * cfg.n_bins);
    let mut order: Vec<usize> = (0..cfg.n_bins).collect();
    for frame in mags {
        let mut row = vec![0.0f32; cfg.n_bins];
        order.sort_by(|&a, &b| frame[b].total_cmp(&frame[a]));
        for &k in order.iter().take(cfg.top_k) {
            if frame[k] > cfg.floor && k >= cut {
                row[k] = 1.0;
            }
        }
        out.extend(row);
    }
    out
}

/// Binary melody activations: the `top_k` strongest constant-Q bins per
/// frame, with everything below the cutoff removed.
pub fn extract_melody(audio: &StereoAudio, cfg: &MelodyConfig) -> Result<Condition> {
    audio.check(SAMPLE_RATE)?;
    let rate = cfg.frame_rate(audio.sample_rate);
    if !cfg.per_channel {
        let data = activations(&cqt_magnitude(&audio.mono(), audio.sample_rate, cfg), cfg);
        return Condition::new(ConditionKind::Melody, cfg.n_bins, rate, data);
    }
    let l = activations(&cqt_magnitude(&audio.left, audio.sample_rate, cfg), cfg);
    let r = activations(&cqt_magnitude(&audio.right, audio.sample_rate, cfg), cfg);
    let data = l
        .chunks(cfg.n_bins)
        .zip(r.chunks(cfg.n_bins))
        .flat_map(|(a, b)| a.iter().chain(b).copied())
        .collect();
    Condition::new(ConditionKind::Melody, 2 * cfg.n_bins, rate, data)
}

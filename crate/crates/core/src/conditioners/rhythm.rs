//! Beat and downbeat probabilities from a spectral-flux onset envelope, or
//! loaded from an external condition file.

use std::path::{Path, PathBuf};

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::conditioners::{Condition, ConditionKind};
use crate::dsp::{stft_magnitude, Framing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RhythmConfig {
    pub window: usize,
    pub hop: usize,
    /// Log compression `ln(1 + gamma * |X|)`.
    pub gamma: f32,
    /// Beats per bar for the downbeat comb.
    pub beats_per_bar: usize,
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl Default for RhythmConfig {
    fn default() -> Self {
        Self {
            window: 1024,
            hop: 256,
            gamma: 100.0,
            beats_per_bar: 4,
            min_bpm: 40.0,
            max_bpm: 240.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhythmProvider {
    Builtin,
    File(PathBuf),
}

/// Half-wave rectified log spectral flux scaled into [0, 1]. Envelopes of
/// (near) silent audio stay at zero.
pub fn onset_envelope(signal: &[f32], cfg: &RhythmConfig) -> Vec<f32> {
    let spec = stft_magnitude(signal, cfg.window, cfg.hop, Framing::Centered);
    let logs: Vec<Vec<f32>> = spec
        .iter()
        .map(|f| f.iter().map(|m| (1.0 + cfg.gamma * m).ln()).collect())
        .collect();
    let mut flux = vec![0.0f32; logs.len()];
    for i in 1..logs.len() {
        flux[i] = logs[i]
            .iter()
            .zip(&logs[i - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    let max = flux.iter().copied().fold(0.0f32, f32::max);
    if max > 1e-3 {
        flux.iter_mut().for_each(|v| *v /= max);
    } else {
        flux.fill(0.0);
    }
    flux
}

/// Beat period in frames from the envelope autocorrelation.
fn beat_period(env: &[f32], frame_rate: f64, cfg: &RhythmConfig) -> Option<usize> {
    let lo = (60.0 * frame_rate / cfg.max_bpm).floor().max(1.0) as usize;
    let hi = ((60.0 * frame_rate / cfg.min_bpm).ceil() as usize).min(env.len().saturating_sub(1));
    let mean = env.iter().sum::<f32>() / env.len().max(1) as f32;
    let centred: Vec<f32> = env.iter().map(|v| v - mean).collect();
    (lo..=hi)
        .map(|lag| {
            let r: f32 = centred.iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum();
            (lag, r / (env.len() - lag) as f32)
        })
        .filter(|(_, r)| *r > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(lag, _)| lag)
}

/// Downbeat weighting: the envelope under a comb with one tooth per bar, at
/// the phase that collects the most onset energy.
fn downbeats(env: &[f32], period: usize, cfg: &RhythmConfig) -> Vec<f32> {
    let bar = period * cfg.beats_per_bar;
    let sigma = (period as f32 / 8.0).max(1.0);
    let comb = |phase: usize, i: usize| {
        let d = (i as isize - phase as isize).rem_euclid(bar as isize) as f32;
        let d = d.min(bar as f32 - d);
        (-0.5 * (d / sigma).powi(2)).exp()
    };
    let best = (0..bar.min(env.len()))
        .max_by(|&a, &b| {
            let sa: f32 = env.iter().enumerate().map(|(i, v)| v * comb(a, i)).sum();
            let sb: f32 = env.iter().enumerate().map(|(i, v)| v * comb(b, i)).sum();
            sa.total_cmp(&sb)
        })
        .unwrap_or(0);
    env.iter().enumerate().map(|(i, v)| v * comb(best, i)).collect()
}

fn builtin(audio: &StereoAudio, cfg: &RhythmConfig) -> Result<Condition> {
    let rate = audio.sample_rate as f64 / cfg.hop as f64;
    let env = onset_envelope(&audio.mono(), cfg);
    let down = match beat_period(&env, rate, cfg) {
        Some(p) => downbeats(&env, p, cfg),
        None => vec![0.0; env.len()],
    };
    let data = env.iter().zip(&down).flat_map(|(b, d)| [*b, d.clamp(0.0, 1.0)]).collect();
    Condition::new(ConditionKind::Rhythm, 2, rate, data)
}

fn from_file(path: &Path) -> Result<Condition> {
    let c = Condition::read(path)?;
    if c.kind != ConditionKind::Rhythm || c.channels != 2 {
        return Err(Error::parse(format!(
            "{}: expected a rhythm condition with 2 columns",
            path.display()
        )));
    }
    if c.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::parse(format!("{}: probabilities outside [0, 1]", path.display())));
    }
    Ok(c)
}

pub fn extract_rhythm(audio: &StereoAudio, provider: &RhythmProvider, cfg: &RhythmConfig) -> Result<Condition> {
    match provider {
        RhythmProvider::Builtin => {
            audio.check(SAMPLE_RATE)?;
            builtin(audio, cfg)
        }
        RhythmProvider::File(p) => from_file(p),
    }
}

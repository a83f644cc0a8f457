use rand::Rng;

use crate::error::{Error, Result};

/// Frame-wise visibility of a condition (`true` = visible).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionMask {
    pub keep: Vec<bool>,
}

impl ConditionMask {
    pub fn new(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn all(len: usize) -> Self {
        Self { keep: vec![true; len] }
    }

    pub fn none(len: usize) -> Self {
        Self { keep: vec![false; len] }
    }

    /// Visible only on frames whose span `[i, i+1) / frame_rate` overlaps one
    /// of the given second ranges.
    pub fn from_spans(len: usize, frame_rate: f64, spans: &[(f64, f64)]) -> Result<Self> {
        for &(a, b) in spans {
            if !(a.is_finite() && b.is_finite()) || a < 0.0 || b <= a {
                return Err(Error::InvalidInput(format!("invalid span [{a}, {b})")));
            }
        }
        let keep = (0..len)
            .map(|i| {
                let (t0, t1) = (i as f64 / frame_rate, (i + 1) as f64 / frame_rate);
                spans.iter().any(|&(a, b)| t0 < b && t1 > a)
            })
            .collect();
        Ok(Self { keep })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn visible(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            (self.keep.len() - self.visible()) as f64 / self.keep.len() as f64
        }
    }

    /// Nearest-neighbour resampling onto a grid of `len` frames.
    pub fn resample(&self, len: usize) -> Self {
        let n = self.keep.len();
        if n == 0 {
            return Self::none(len);
        }
        let keep = (0..len)
            .map(|j| {
                let src = ((j as f64 + 0.5) * n as f64 / len as f64).floor() as usize;
                self.keep[src.min(n - 1)]
            })
            .collect();
        Self { keep }
    }

    pub fn not(&self) -> Self {
        Self {
            keep: self.keep.iter().map(|k| !k).collect(),
        }
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }
}

/// Hides one contiguous segment covering a uniform fraction in [0.1, 0.9].
pub fn training_mask<R: Rng>(rng: &mut R, len: usize) -> ConditionMask {
    if len == 0 {
        return ConditionMask::all(0);
    }
    let frac: f64 = rng.random_range(0.1..=0.9);
    // Round into the frames that keep the realised fraction inside the range.
    let lo = (0.1 * len as f64).ceil() as usize;
    let hi = ((0.9 * len as f64).floor() as usize).max(lo);
    let masked = ((frac * len as f64).round() as usize).clamp(lo, hi).min(len);
    let offset = rng.random_range(0..=len - masked);
    let keep = (0..len).map(|i| i < offset || i >= offset + masked).collect();
    ConditionMask { keep }
}

/// Independent training masks for the melody, dynamics and rhythm conditions.
pub fn sample_training_masks<R: Rng>(rng: &mut R, lengths: [usize; 3]) -> [ConditionMask; 3] {
    lengths.map(|len| training_mask(rng, len))
}

/// The audio-condition mask that exactly complements `attr_mask` on a latent
/// grid of `audio_len` frames.
pub fn complementary_mask(attr_mask: &ConditionMask, audio_len: usize) -> ConditionMask {
    attr_mask.resample(audio_len).not()
}

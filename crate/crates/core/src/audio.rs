use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;

/// A two-channel waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoAudio {
    pub sample_rate: u32,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

impl StereoAudio {
    pub fn new(sample_rate: u32, left: Vec<f32>, right: Vec<f32>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::InvalidInput(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        Ok(Self {
            sample_rate,
            left,
            right,
        })
    }

    pub fn from_mono(sample_rate: u32, mono: Vec<f32>) -> Self {
        Self {
            sample_rate,
            left: mono.clone(),
            right: mono,
        }
    }

    pub fn silence(sample_rate: u32, len: usize) -> Self {
        Self::from_mono(sample_rate, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Mean of the two channels.
    pub fn mono(&self) -> Vec<f32> {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            sample_rate: self.sample_rate,
            left: self.left[start..end].to_vec(),
            right: self.right[start..end].to_vec(),
        }
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            sample_rate: self.sample_rate,
            left: self.left.iter().map(|v| v * gain).collect(),
            right: self.right.iter().map(|v| v * gain).collect(),
        }
    }

    /// Rejects empty audio and anything not at `expected` Hz.
    pub fn check(&self, expected: u32) -> Result<()> {
        if self.sample_rate != expected {
            return Err(Error::SampleRate {
                got: self.sample_rate,
                expected,
            });
        }
        if self.is_empty() {
            return Err(Error::InvalidInput("audio is empty".into()));
        }
        Ok(())
    }
}

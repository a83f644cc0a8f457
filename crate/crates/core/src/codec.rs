//! Linear latent codec standing in for a learned audio VAE.
//!
//! Each non-overlapping frame of `frame_size` stereo samples is projected onto
//! `channels` orthonormal basis vectors: the lowest `channels / 2` DCT-II
//! functions of each channel, mixed by a seeded random orthogonal matrix.
//! The rows of the basis are orthonormal, so `encode(decode(z)) == z` and
//! `||decode(z)|| == ||z||`. Signals inside the codec's band-limited range
//! round-trip exactly; anything outside is projected onto that range.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const FRAME_SIZE: usize = 1024;
pub const LATENT_CHANNELS: usize = 64;
pub const DEFAULT_BASIS_SEED: u64 = 0x5eed_c0de;

/// Clean latent: `n_frames x channels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioLatent {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub channels: usize,
    pub sample_rate: u32,
    pub frame_size: usize,
}

impl AudioLatent {
    pub fn zeros(n_frames: usize, channels: usize) -> Self {
        Self {
            frames: vec![0.0; n_frames * channels],
            n_frames,
            channels,
            sample_rate: SAMPLE_RATE,
            frame_size: FRAME_SIZE,
        }
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.channels..(i + 1) * self.channels]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.frames[i * self.channels..(i + 1) * self.channels]
    }

    pub fn norm(&self) -> f64 {
        self.frames.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    frame_size: usize,
    channels: usize,
    /// `channels x (2 * frame_size)`, row-major; rows are orthonormal.
    basis: Vec<f32>,
}

impl LatentCodec {
    pub fn new(seed: u64) -> Self {
        Self::with_shape(FRAME_SIZE, LATENT_CHANNELS, seed).expect("default codec shape is valid")
    }

    pub fn with_shape(frame_size: usize, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 || channels / 2 > frame_size {
            return Err(Error::InvalidDimension(format!(
                "{channels} latent channels cannot be drawn from {frame_size}-sample frames"
            )));
        }
        let per_channel = channels / 2;
        let width = 2 * frame_size;
        // DCT-II rows for the lowest bands of left then right.
        let mut dct = vec![0.0f64; channels * width];
        for ch in 0..2 {
            for k in 0..per_channel {
                let row = ch * per_channel + k;
                let scale = if k == 0 {
                    (1.0 / frame_size as f64).sqrt()
                } else {
                    (2.0 / frame_size as f64).sqrt()
                };
                for n in 0..frame_size {
                    let v = scale
                        * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / frame_size as f64)
                            .cos();
                    dct[row * width + ch * frame_size + n] = v;
                }
            }
        }
        let mix = random_orthogonal(channels, seed);
        let mut basis = vec![0.0f32; channels * width];
        for i in 0..channels {
            for j in 0..channels {
                let w = mix[i * channels + j];
                if w == 0.0 {
                    continue;
                }
                let src = &dct[j * width..(j + 1) * width];
                for (dst, s) in basis[i * width..(i + 1) * width].iter_mut().zip(src) {
                    *dst += (w * s) as f32;
                }
            }
        }
        Ok(Self {
            frame_size,
            channels,
            basis,
        })
    }

    /// Restores a codec from a stored basis (checkpoint path).
    pub fn from_basis(frame_size: usize, channels: usize, basis: Vec<f32>) -> Result<Self> {
        if basis.len() != channels * 2 * frame_size {
            return Err(Error::InvalidDimension(format!(
                "basis has {} entries, expected {}",
                basis.len(),
                channels * 2 * frame_size
            )));
        }
        Ok(Self {
            frame_size,
            channels,
            basis,
        })
    }

    pub fn basis(&self) -> &[f32] {
        &self.basis
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of latent frames covering `samples` samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.frame_size)
    }

    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.frame_size as f64
    }

    pub fn encode(&self, audio: &StereoAudio) -> Result<AudioLatent> {
        if audio.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate {
                got: audio.sample_rate,
                expected: SAMPLE_RATE,
            });
        }
        let n_frames = self.frames_for(audio.len());
        let width = 2 * self.frame_size;
        let mut frames = vec![0.0f32; n_frames * self.channels];
        let mut block = vec![0.0f64; width];
        for f in 0..n_frames {
            let start = f * self.frame_size;
            for n in 0..self.frame_size {
                let idx = start + n;
                let (l, r) = if idx < audio.len() {
                    (audio.left[idx], audio.right[idx])
                } else {
                    (0.0, 0.0)
                };
                block[n] = l as f64;
                block[self.frame_size + n] = r as f64;
            }
            for c in 0..self.channels {
                let row = &self.basis[c * width..(c + 1) * width];
                let acc: f64 = row.iter().zip(&block).map(|(b, x)| *b as f64 * x).sum();
                frames[f * self.channels + c] = acc as f32;
            }
        }
        Ok(AudioLatent {
            frames,
            n_frames,
            channels: self.channels,
            sample_rate: SAMPLE_RATE,
            frame_size: self.frame_size,
        })
    }

    pub fn decode(&self, latent: &AudioLatent) -> Result<StereoAudio> {
        if latent.channels != self.channels {
            return Err(Error::InvalidDimension(format!(
                "latent has {} channels, codec expects {}",
                latent.channels, self.channels
            )));
        }
        let width = 2 * self.frame_size;
        let len = latent.n_frames * self.frame_size;
        let mut left = vec![0.0f32; len];
        let mut right = vec![0.0f32; len];
        let mut block = vec![0.0f64; width];
        for f in 0..latent.n_frames {
            block.iter_mut().for_each(|v| *v = 0.0);
            for (c, &z) in latent.frame(f).iter().enumerate() {
                if z == 0.0 {
                    continue;
                }
                let row = &self.basis[c * width..(c + 1) * width];
                for (acc, b) in block.iter_mut().zip(row) {
                    *acc += z as f64 * *b as f64;
                }
            }
            let start = f * self.frame_size;
            for n in 0..self.frame_size {
                left[start + n] = block[n] as f32;
                right[start + n] = block[self.frame_size + n] as f32;
            }
        }
        StereoAudio::new(SAMPLE_RATE, left, right)
    }
}

/// Seeded Haar-ish random orthogonal matrix via Gram-Schmidt.
fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two passes keep the result orthogonal to machine precision
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, a)| *x -= d * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

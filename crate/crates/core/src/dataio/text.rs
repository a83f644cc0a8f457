//! Deterministic toy text encoder: each whitespace token hashes to a seed
//! that draws a unit-norm Gaussian vector.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub width: usize,
    /// `tokens.len() x width`, row-major.
    pub tokens: Vec<f32>,
}

impl TextEmbedding {
    /// The unconditional input: a single all-zero token.
    pub fn null(width: usize) -> Self {
        Self {
            width,
            tokens: vec![0.0; width],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.len() == 1 && self.tokens.iter().all(|&v| v == 0.0)
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.tokens.clone(), (1, self.len(), self.width), device)?.to_dtype(dtype)?)
    }
}

fn token_vector(token: &str, width: usize) -> Vec<f32> {
    let digest = Sha256::digest(token.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / norm) as f32).collect()
}

pub fn encode_text(caption: &str, width: usize) -> TextEmbedding {
    let tokens: Vec<&str> = caption.split_whitespace().take(MAX_TOKENS).collect();
    if tokens.is_empty() {
        return TextEmbedding::null(width);
    }
    TextEmbedding {
        width,
        tokens: tokens.iter().flat_map(|t| token_vector(t, width)).collect(),
    }
}

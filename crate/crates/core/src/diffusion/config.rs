use serde::{Deserialize, Serialize};

use crate::attention::CombineMode;
use crate::codec::LATENT_CHANNELS;
use crate::error::{Error, Result};
use crate::rope::DEFAULT_BASE;

/// Switches that remove or alter one piece of the adapter design.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub disable_rope: bool,
    pub disable_extractor: bool,
    pub disable_zero_cnn: bool,
    pub double_heads: bool,
    pub literal_combiner: bool,
    pub no_value_rotation: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 6] = [
        "no-rope",
        "no-extractor",
        "no-cnn",
        "double-heads",
        "literal-combiner",
        "no-value-rotation",
    ];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no-rope" => self.disable_rope = true,
            "no-extractor" => self.disable_extractor = true,
            "no-cnn" => self.disable_zero_cnn = true,
            "double-heads" => self.double_heads = true,
            "literal-combiner" => self.literal_combiner = true,
            "no-value-rotation" => self.no_value_rotation = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let flags = [
            self.disable_rope,
            self.disable_extractor,
            self.disable_zero_cnn,
            self.double_heads,
            self.literal_combiner,
            self.no_value_rotation,
        ];
        Self::NAMES.into_iter().zip(flags).filter(|(_, on)| *on).map(|(n, _)| n).collect()
    }

    pub fn combine_mode(&self) -> CombineMode {
        if self.literal_combiner {
            CombineMode::Literal
        } else if self.disable_zero_cnn {
            CombineMode::NoConv
        } else {
            CombineMode::PerBranch
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub blocks: usize,
    pub model_dim: usize,
    /// Width of the condition sequences and of the cross-attention heads.
    pub cond_dim: usize,
    pub head_count: usize,
    pub mlp_ratio: usize,
    pub latent_channels: usize,
    pub melody_channels: usize,
    pub rope_base: f64,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            model_dim: 256,
            cond_dim: 192,
            head_count: 4,
            mlp_ratio: 4,
            latent_channels: LATENT_CHANNELS,
            melody_channels: 128,
            rope_base: DEFAULT_BASE,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.blocks == 0 || self.model_dim == 0 || self.head_count == 0 || self.latent_channels == 0 {
            return fail("blocks, model_dim, head_count and latent_channels must be positive".into());
        }
        if self.cond_dim == 0 || self.cond_dim % 3 != 0 {
            return fail(format!("cond_dim {} must be a positive multiple of 3", self.cond_dim));
        }
        if self.cond_dim % self.head_count != 0 || (self.cond_dim / self.head_count) % 2 != 0 {
            return fail(format!(
                "cond_dim {} must split into {} heads of even width",
                self.cond_dim, self.head_count
            ));
        }
        if self.model_dim % self.head_count != 0 || (self.model_dim / self.head_count) % 2 != 0 {
            return fail(format!(
                "model_dim {} must split into {} heads of even width",
                self.model_dim, self.head_count
            ));
        }
        if !(self.rope_base > 0.0) {
            return fail(format!("rope_base must be positive, got {}", self.rope_base));
        }
        Ok(())
    }

    pub fn cross_head_dim(&self) -> usize {
        self.cond_dim / self.head_count
    }

    pub fn self_head_dim(&self) -> usize {
        self.model_dim / self.head_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&s).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&j).unwrap(), c);
    }

    #[test]
    fn rejects_bad_widths() {
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        };
        bad(|c| c.cond_dim = 190);
        bad(|c| c.head_count = 5);
        bad(|c| c.cond_dim = 12 * 3 * 1 + 6);
        bad(|c| c.blocks = 0);
    }

    #[test]
    fn ablation_names() {
        let mut a = Ablations::default();
        for n in Ablations::NAMES {
            a.enable(n).unwrap();
        }
        assert_eq!(a.active().len(), 6);
        assert!(a.enable("no-such").is_err());
        assert_eq!(a.combine_mode(), CombineMode::Literal);
    }
}

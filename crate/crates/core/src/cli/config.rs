//! Run configuration shared by the subcommands. Values come from an optional
//! TOML file; explicit command-line flags take precedence.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cadenza_core::diffusion::ModelConfig;
use cadenza_core::guidance::{GuidanceScales, Task};

/// A time range `start:end` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl FromStr for Span {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let (a, b) = s.split_once(':').with_context(|| format!("span '{s}' is not of the form start:end"))?;
        let start: f64 = a.trim().parse().with_context(|| format!("bad span start in '{s}'"))?;
        let end: f64 = b.trim().parse().with_context(|| format!("bad span end in '{s}'"))?;
        if !(start >= 0.0 && end > start && end.is_finite()) {
            bail!("span '{s}' must satisfy 0 <= start < end");
        }
        Ok(Self { start, end })
    }
}

impl TryFrom<String> for Span {
    type Error = anyhow::Error;

    fn try_from(s: String) -> anyhow::Result<Self> {
        s.parse()
    }
}

impl From<Span> for String {
    fn from(s: Span) -> String {
        format!("{}:{}", s.start, s.end)
    }
}

impl Span {
    pub fn pair(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Plain,
    NaiveMasking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scales: Option<GuidanceScales>,
    pub seed: u64,
    pub steps: usize,
    pub task: Task,
    pub mode: Mode,
    /// Attribute-control spans.
    pub attr_spans: Vec<Span>,
    /// Reference spans kept for inpainting and outpainting.
    pub keep: Vec<Span>,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            scales: None,
            seed: 0,
            steps: 50,
            task: Task::Generate,
            mode: Mode::Plain,
            attr_spans: Vec::new(),
            keep: Vec::new(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub segment_s: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 1e-4,
            weight_decay: 1e-2,
            segment_s: 4.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

/// Checks that every span lies inside a clip of `duration` seconds.
pub fn check_spans(spans: &[Span], duration: f64, what: &str) -> anyhow::Result<()> {
    for s in spans {
        if s.end > duration + 1e-9 {
            bail!("{what} span {}:{} exceeds the clip duration of {duration:.3} s", s.start, s.end);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_parse_and_reject() {
        assert_eq!("0:2.5".parse::<Span>().unwrap(), Span { start: 0.0, end: 2.5 });
        for bad in ["2", "3:1", "a:b", "-1:2", "1:1"] {
            assert!(bad.parse::<Span>().is_err(), "{bad}");
        }
        assert!(check_spans(&["0:11".parse().unwrap()], 10.0, "keep").is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.task = Task::Outpaint;
        c.mode = Mode::NaiveMasking;
        c.keep = vec!["0:2.5".parse().unwrap()];
        c.scales = Some(GuidanceScales::new(3.0, 1.5, 0.5).unwrap());
        c.model.ablations.disable_rope = true;
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&s).unwrap(), c);
    }
}

//! Classifier-free guidance over a chain of nested condition sets with one
//! scale per condition.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceScales {
    pub lambda_text: f64,
    pub lambda_attr: f64,
    pub lambda_audio: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self {
            lambda_text: 7.0,
            lambda_attr: 2.0,
            lambda_audio: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Generate,
    Inpaint,
    Outpaint,
}

impl GuidanceScales {
    pub fn new(lambda_text: f64, lambda_attr: f64, lambda_audio: f64) -> Result<Self> {
        let s = Self {
            lambda_text,
            lambda_attr,
            lambda_audio,
        };
        s.validate()?;
        Ok(s)
    }

    /// Attribute control leaves the audio scale unused; inpainting and
    /// outpainting use all three.
    pub fn preset(task: Task) -> Self {
        match task {
            Task::Generate => Self {
                lambda_audio: 0.0,
                ..Self::default()
            },
            Task::Inpaint | Task::Outpaint => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_text", self.lambda_text),
            ("lambda_attr", self.lambda_attr),
            ("lambda_audio", self.lambda_audio),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scale(&self, c: Cond) -> f64 {
        match c {
            Cond::Text => self.lambda_text,
            Cond::Attr => self.lambda_attr,
            Cond::Audio => self.lambda_audio,
        }
    }
}

/// Conditions in their fixed chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Text,
    Attr,
    Audio,
}

impl Cond {
    pub const ORDER: [Cond; 3] = [Cond::Text, Cond::Attr, Cond::Audio];
}

/// A subset of {text, attr, audio}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ConditionSet {
    pub text: bool,
    pub attr: bool,
    pub audio: bool,
}

impl ConditionSet {
    pub const EMPTY: ConditionSet = ConditionSet {
        text: false,
        attr: false,
        audio: false,
    };

    pub fn new(text: bool, attr: bool, audio: bool) -> Self {
        Self { text, attr, audio }
    }

    pub fn contains(&self, c: Cond) -> bool {
        match c {
            Cond::Text => self.text,
            Cond::Attr => self.attr,
            Cond::Audio => self.audio,
        }
    }

    pub fn with(mut self, c: Cond) -> Self {
        match c {
            Cond::Text => self.text = true,
            Cond::Attr => self.attr = true,
            Cond::Audio => self.audio = true,
        }
        self
    }

    /// Present conditions in chain order.
    pub fn members(&self) -> Vec<Cond> {
        Cond::ORDER.into_iter().filter(|c| self.contains(*c)).collect()
    }

    pub fn len(&self) -> usize {
        self.members().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The nested condition sets the sampler must evaluate, starting from the
/// unconditional one and adding one present condition at a time.
pub fn required_passes(present: ConditionSet) -> Vec<ConditionSet> {
    let mut out = vec![ConditionSet::EMPTY];
    let mut cur = ConditionSet::EMPTY;
    for c in present.members() {
        cur = cur.with(c);
        out.push(cur);
    }
    out
}

/// `u + sum_i lambda_i (s_i - s_{i-1})` over the present conditions.
/// `estimates[0]` is the unconditional output; `estimates[i]` adds the
/// `i`-th present condition.
pub fn compose(estimates: &[Tensor], scales: &GuidanceScales, present: ConditionSet) -> Result<Tensor> {
    let members = present.members();
    if estimates.len() != members.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} conditions (expected {})",
            estimates.len(),
            members.len(),
            members.len() + 1
        )));
    }
    let shape = estimates[0].dims();
    if let Some(bad) = estimates.iter().find(|e| e.dims() != shape) {
        return Err(Error::InvalidDimension(format!(
            "estimate shapes differ: {:?} vs {:?}",
            shape,
            bad.dims()
        )));
    }
    let mut out = estimates[0].clone();
    for (i, c) in members.iter().enumerate() {
        let diff = (&estimates[i + 1] - &estimates[i])?;
        out = (out + (diff * scales.scale(*c))?)?;
    }
    Ok(out)
}

/// [`compose`] on plain slices, used where no tensor runtime is wanted.
pub fn compose_slices(estimates: &[&[f32]], scales: &GuidanceScales, present: ConditionSet) -> Result<Vec<f32>> {
    let members = present.members();
    if estimates.len() != members.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} conditions",
            estimates.len(),
            members.len()
        )));
    }
    let n = estimates[0].len();
    if estimates.iter().any(|e| e.len() != n) {
        return Err(Error::InvalidDimension("estimate lengths differ".into()));
    }
    let mut out: Vec<f64> = estimates[0].iter().map(|&v| v as f64).collect();
    for (i, c) in members.iter().enumerate() {
        let l = scales.scale(*c);
        for (o, (a, b)) in out.iter_mut().zip(estimates[i + 1].iter().zip(estimates[i])) {
            *o += l * (*a as f64 - *b as f64);
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

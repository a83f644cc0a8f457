//! Musical attribute conditions (melody, dynamics, rhythm), their fusion into
//! the attribute sequence, and the masking strategies.

pub mod dynamics;
pub mod featurize;
pub mod masks;
pub mod melody;
pub mod rhythm;

use std::path::Path;

use crate::dataio::TensorFile;
use crate::error::{Error, Result};

pub use dynamics::{extract_dynamics, savgol_filter, DynamicsConfig};
pub use featurize::{featurize, AttributeExtractors, ConvStack};
pub use masks::{complementary_mask, sample_training_masks, ConditionMask};
pub use melody::{extract_melody, MelodyConfig};
pub use rhythm::{extract_rhythm, RhythmConfig, RhythmProvider};

/// A frame-wise condition: `frames x channels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub kind: ConditionKind,
    pub n_frames: usize,
    pub channels: usize,
    pub frame_rate: f64,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionKind {
    Melody,
    Dynamics,
    Rhythm,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 3] = [Self::Melody, Self::Dynamics, Self::Rhythm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Melody => "melody",
            Self::Dynamics => "dynamics",
            Self::Rhythm => "rhythm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown condition kind '{s}'")))
    }
}

impl Condition {
    pub fn new(kind: ConditionKind, channels: usize, frame_rate: f64, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::InvalidDimension(format!(
                "{} values do not form rows of {channels}",
                data.len()
            )));
        }
        Ok(Self {
            kind,
            n_frames: data.len() / channels,
            channels,
            frame_rate,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.frame_rate
    }

    /// Zeroes the frames the mask hides.
    pub fn masked(&self, mask: &ConditionMask) -> Result<Self> {
        if mask.len() != self.n_frames {
            return Err(Error::InvalidDimension(format!(
                "mask of length {} for {} frames",
                mask.len(),
                self.n_frames
            )));
        }
        let mut out = self.clone();
        for (row, &keep) in out.data.chunks_mut(self.channels).zip(&mask.keep) {
            if !keep {
                row.fill(0.0);
            }
        }
        Ok(out)
    }

    pub fn to_file(&self) -> Result<TensorFile> {
        TensorFile::new(
            self.kind.as_str(),
            Some(self.frame_rate),
            vec![self.n_frames, self.channels],
            self.data.clone(),
        )
    }

    pub fn from_file(file: &TensorFile) -> Result<Self> {
        let kind = ConditionKind::parse(&file.kind).map_err(|e| Error::parse(e.to_string()))?;
        let (_, cols) = file.expect_matrix(&file.kind)?;
        let rate = file
            .frame_rate
            .filter(|r| *r > 0.0)
            .ok_or_else(|| Error::parse("condition file lacks a positive frame_rate"))?;
        if file.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse("condition file contains non-finite values"));
        }
        Self::new(kind, cols, rate, file.data.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::read(path)?)
    }
}

/// The three attribute conditions of one clip. Any of them may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeConditions {
    pub melody: Option<Condition>,
    pub dynamics: Option<Condition>,
    pub rhythm: Option<Condition>,
}

impl AttributeConditions {
    pub fn get(&self, kind: ConditionKind) -> Option<&Condition> {
        match kind {
            ConditionKind::Melody => self.melody.as_ref(),
            ConditionKind::Dynamics => self.dynamics.as_ref(),
            ConditionKind::Rhythm => self.rhythm.as_ref(),
        }
    }

    pub fn set(&mut self, c: Condition) {
        match c.kind {
            ConditionKind::Melody => self.melody = Some(c),
            ConditionKind::Dynamics => self.dynamics = Some(c),
            ConditionKind::Rhythm => self.rhythm = Some(c),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.melody.is_none() && self.dynamics.is_none() && self.rhythm.is_none()
    }

    /// Reads every `<kind>.cond` present in `dir`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut out = Self::default();
        for kind in ConditionKind::ALL {
            let p = dir.join(format!("{}.cond", kind.as_str()));
            if p.exists() {
                out.set(Condition::read(&p)?);
            }
        }
        Ok(out)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for c in [&self.melody, &self.dynamics, &self.rhythm].into_iter().flatten() {
            c.write(&dir.join(format!("{}.cond", c.kind.as_str())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Condition::new(ConditionKind::Rhythm, 2, 172.265625, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let p = dir.path().join("rhythm.cond");
        c.write(&p).unwrap();
        assert_eq!(Condition::read(&p).unwrap(), c);
    }

    #[test]
    fn malformed_condition_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cond");
        std::fs::write(&p, b"{\"kind\": \"rhythm\"}\n").unwrap();
        assert!(matches!(Condition::read(&p), Err(Error::Parse { .. })));
        let t = TensorFile::new("tempo", Some(10.0), vec![1, 1], vec![0.0]).unwrap();
        assert!(matches!(Condition::from_file(&t), Err(Error::Parse { .. })));
    }

    #[test]
    fn masking_zeroes_hidden_frames() {
        let c = Condition::new(ConditionKind::Dynamics, 1, 10.0, vec![-3.0, -4.0, -5.0]).unwrap();
        let m = ConditionMask::new(vec![true, false, true]);
        assert_eq!(c.masked(&m).unwrap().data, vec![-3.0, 0.0, -5.0]);
        assert!(c.masked(&ConditionMask::all(2)).is_err());
    }
}

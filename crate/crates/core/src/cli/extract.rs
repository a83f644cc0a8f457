use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;

use cadenza_core::conditioners::{
    extract_dynamics, extract_melody, extract_rhythm, AttributeConditions, DynamicsConfig, MelodyConfig,
    RhythmConfig, RhythmProvider,
};
use cadenza_core::audio::StereoAudio;
use cadenza_core::dataio::load_audio_44k;

use super::{require, rhythm_provider, usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// A WAV file or a directory of WAV files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory; a directory input gets one subdirectory per file.
    #[arg(long)]
    pub out: PathBuf,
    /// `builtin` or a rhythm condition file to copy through.
    #[arg(long, default_value = "builtin")]
    pub rhythm_provider: String,
    /// Keep left and right melody activations separate.
    #[arg(long)]
    pub per_channel_melody: bool,
}

/// All three conditions of one audio file.
pub fn extract_all(path: &Path, provider: &RhythmProvider, per_channel: bool) -> anyhow::Result<AttributeConditions> {
    extract_audio(&load_audio_44k(path)?, provider, per_channel)
}

pub fn extract_audio(audio: &StereoAudio, provider: &RhythmProvider, per_channel: bool) -> anyhow::Result<AttributeConditions> {
    let mut out = AttributeConditions::default();
    let melody_cfg = MelodyConfig {
        per_channel,
        ..MelodyConfig::default()
    };
    out.set(extract_melody(audio, &melody_cfg)?);
    out.set(extract_dynamics(audio, &DynamicsConfig::default())?);
    out.set(extract_rhythm(audio, provider, &RhythmConfig::default())?);
    Ok(out)
}

/// WAV files of a directory in name order.
pub fn wav_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require(&a.input)?;
    let provider = rhythm_provider(&a.rhythm_provider);
    if let RhythmProvider::File(p) = &provider {
        require(p)?;
    }
    if a.input.is_dir() {
        let files = wav_files(&a.input)?;
        if files.is_empty() {
            return Err(usage(format!("no WAV files in {}", a.input.display())));
        }
        for f in files {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let conds = extract_all(&f, &provider, a.per_channel_melody)?;
            conds.write_dir(&a.out.join(&stem))?;
            info!("extracted {}", f.display());
        }
    } else {
        extract_all(&a.input, &provider, a.per_channel_melody)?.write_dir(&a.out)?;
        info!("extracted {}", a.input.display());
    }
    Ok(())
}

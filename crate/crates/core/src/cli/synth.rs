use std::path::PathBuf;

use log::info;

use cadenza_core::bench::{BenchConfig, MelodyBench, CAPTION};
use cadenza_core::dataio::{write_manifest, write_wav, ClipRecord, Split};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory for WAVs and `manifest.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub clips: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let bench = MelodyBench::new(BenchConfig {
        clips: a.clips,
        seed: a.seed,
        ..BenchConfig::default()
    })?;
    std::fs::create_dir_all(&a.out)?;
    let mut records = Vec::new();
    for (i, c) in bench.clips.iter().enumerate() {
        let name = format!("clip{i:03}.wav");
        write_wav(&a.out.join(&name), &c.audio)?;
        records.push(ClipRecord {
            audio_path: PathBuf::from(&name),
            caption: CAPTION.into(),
            split: Split::Train,
            duration_s: Some(c.audio.duration_s()),
        });
    }
    write_manifest(&a.out.join("manifest.jsonl"), &records)?;
    info!("wrote {} clips to {}", records.len(), a.out.display());
    Ok(())
}

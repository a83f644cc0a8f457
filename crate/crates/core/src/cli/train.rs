use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use candle_core::{DType, Device};
use log::{info, warn};
use serde_json::json;

use cadenza_core::attention::AdapterKind;
use cadenza_core::codec::{LatentCodec, DEFAULT_BASIS_SEED, FRAME_SIZE};
use cadenza_core::conditioners::{AttributeConditions, RhythmProvider};
use cadenza_core::dataio::{encode_text, load_audio, load_manifest, Split};
use cadenza_core::diffusion::{DiffusionModel, DropoutConfig, Stage, TrainConfig, Trainer, TrainingExample};
use cadenza_core::audio::SAMPLE_RATE;
use cadenza_core::Error;

use super::config::RunConfig;
use super::{require, rhythm_provider, usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AdapterArg {
    Attr,
    Audio,
    MelodyOnly,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON-lines manifest of training clips.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Adapter set to train; without it the backbone itself is trained.
    #[arg(long, value_enum)]
    pub adapter: Option<AdapterArg>,
    /// Start from the weights of this checkpoint.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue a run saved by an earlier invocation.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clip length in seconds; all clips are cut or padded to it.
    #[arg(long)]
    pub segment_s: Option<f64>,
    /// Remove or alter part of the adapter design (repeatable).
    #[arg(long = "ablate", value_parser = clap::builder::PossibleValuesParser::new(cadenza_core::diffusion::Ablations::NAMES))]
    pub ablate: Vec<String>,
    #[arg(long, default_value = "builtin")]
    pub rhythm_provider: String,
    /// Loss curve output (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn stage_name(a: Option<AdapterArg>) -> &'static str {
    match a {
        None => "backbone",
        Some(AdapterArg::Attr) => "attr",
        Some(AdapterArg::Audio) => "audio",
        Some(AdapterArg::MelodyOnly) => "melody-only",
    }
}

fn parse_stage(s: &str) -> anyhow::Result<Option<AdapterArg>> {
    Ok(match s {
        "backbone" => None,
        "attr" => Some(AdapterArg::Attr),
        "audio" => Some(AdapterArg::Audio),
        "melody-only" => Some(AdapterArg::MelodyOnly),
        other => return Err(usage(format!("checkpoint records unknown stage '{other}'"))),
    })
}

fn load_examples(
    manifest: &Path,
    segment_s: f64,
    codec: &LatentCodec,
    cond_dim: usize,
    adapter: Option<AdapterArg>,
    provider: &RhythmProvider,
) -> anyhow::Result<Vec<TrainingExample>> {
    require(manifest)?;
    let records = load_manifest(manifest, None)?;
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.split == Split::Train) {
        for seg in load_audio(&r.audio_path, SAMPLE_RATE, Some(segment_s))? {
            let attrs = match adapter {
                Some(AdapterArg::Attr) => super::extract::extract_audio(&seg, provider, false)?,
                Some(AdapterArg::MelodyOnly) => {
                    let mut a = AttributeConditions::default();
                    a.set(cadenza_core::conditioners::extract_melody(
                        &seg,
                        &cadenza_core::conditioners::MelodyConfig::default(),
                    )?);
                    a
                }
                _ => AttributeConditions::default(),
            };
            out.push(TrainingExample {
                x0: codec.encode(&seg)?,
                text: encode_text(&r.caption, cond_dim),
                attrs,
            });
        }
    }
    if out.is_empty() {
        return Err(usage(format!("{} has no training clips", manifest.display())));
    }
    Ok(out)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let dev = Device::Cpu;

    let (model, codec, meta, adapter, start_step) = match &a.resume {
        Some(p) => {
            require(p)?;
            let (m, codec, meta) = DiffusionModel::load(p, DType::F32, &dev)?;
            let adapter = parse_stage(meta["stage"].as_str().unwrap_or("backbone"))?;
            if a.adapter.is_some() && a.adapter != adapter {
                return Err(usage(format!(
                    "--adapter {} does not match the resumed run ({})",
                    stage_name(a.adapter),
                    stage_name(adapter)
                )));
            }
            let step = meta["step"].as_u64().unwrap_or(0);
            (m, codec, meta, adapter, step)
        }
        None => {
            let (mut m, codec) = match &a.init {
                Some(p) => {
                    require(p)?;
                    let (m, c, _) = DiffusionModel::load(p, DType::F32, &dev)?;
                    (m, c)
                }
                None => {
                    let seed = a.seed.unwrap_or(cfg.seed);
                    if a.adapter.is_some() {
                        warn!("training an adapter on a randomly initialised backbone");
                    }
                    (DiffusionModel::new(cfg.model.clone(), seed, DType::F32, &dev)?, None)
                }
            };
            m.config.ablations = cfg.model.ablations;
            for name in &a.ablate {
                m.config.ablations.enable(name)?;
            }
            let seed = a.seed.unwrap_or(cfg.seed);
            match a.adapter {
                Some(AdapterArg::Attr | AdapterArg::MelodyOnly) => m.add_adapter(AdapterKind::Attribute, seed + 1)?,
                Some(AdapterArg::Audio) => m.add_adapter(AdapterKind::Audio, seed + 1)?,
                None => {}
            }
            (m, codec, json!({}), a.adapter, 0)
        }
    };
    if a.resume.is_some() && !a.ablate.is_empty() {
        return Err(usage("ablations are fixed when a run is resumed"));
    }
    let codec = match codec {
        Some(c) => c,
        None => LatentCodec::with_shape(FRAME_SIZE, model.config.latent_channels, DEFAULT_BASIS_SEED)?,
    };

    let saved = |k: &str| meta.get("train").and_then(|t| t.get(k)).cloned();
    let pick_f = |flag: Option<f64>, key: &str, dflt: f64| flag.or(saved(key).and_then(|v| v.as_f64())).unwrap_or(dflt);
    let pick_u = |flag: Option<u64>, key: &str, dflt: u64| flag.or(saved(key).and_then(|v| v.as_u64())).unwrap_or(dflt);
    let train_cfg = TrainConfig {
        batch_size: pick_u(a.batch_size.map(|v| v as u64), "batch_size", cfg.train.batch_size as u64) as usize,
        lr: pick_f(a.lr, "lr", cfg.train.lr),
        weight_decay: pick_f(a.weight_decay, "weight_decay", cfg.train.weight_decay),
        seed: pick_u(a.seed, "seed", cfg.seed),
        dropout: DropoutConfig::default(),
    };
    let segment_s = a
        .segment_s
        .or(meta.get("segment_s").and_then(|v| v.as_f64()))
        .unwrap_or(cfg.train.segment_s);
    let steps = a.steps.unwrap_or(cfg.train.steps);
    let provider = rhythm_provider(&a.rhythm_provider);

    let data = load_examples(&a.manifest, segment_s, &codec, model.config.cond_dim, adapter, &provider)?;
    info!(
        "{} clips, stage {}, steps {}..{}, ablations {:?}",
        data.len(),
        stage_name(adapter),
        start_step,
        start_step + steps as u64,
        model.config.ablations.active()
    );
    let stage = match adapter {
        None => Stage::Backbone,
        Some(AdapterArg::Attr | AdapterArg::MelodyOnly) => Stage::Adapter(AdapterKind::Attribute),
        Some(AdapterArg::Audio) => Stage::Adapter(AdapterKind::Audio),
    };
    let mut trainer = Trainer::new(model, stage, train_cfg, start_step)?;

    let csv_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let mut csv = std::fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    if csv.metadata()?.len() == 0 {
        writeln!(csv, "step,loss")?;
    }

    let extra = |step: u64, ablations: Vec<&'static str>| {
        json!({
            "stage": stage_name(adapter),
            "step": step,
            "segment_s": segment_s,
            "ablations": ablations,
            "train": train_cfg,
        })
    };
    for _ in 0..steps {
        let step = trainer.step;
        match trainer.step(&data) {
            Ok(loss) => {
                writeln!(csv, "{step},{loss}")?;
                if step % 50 == 0 {
                    info!("step {step} loss {loss:.5}");
                }
            }
            Err(e @ Error::NumericDivergence(_)) => {
                let p = with_suffix(&a.out, ".diverged");
                let meta = extra(step, trainer.model.config.ablations.active());
                trainer.model.save(&p, Some(&codec), meta)?;
                return Err(anyhow::Error::new(e).context(format!("training diverged at step {step}; partial checkpoint {}", p.display())));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let meta = extra(trainer.step, trainer.model.config.ablations.active());
    trainer.model.save(&a.out, Some(&codec), meta)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

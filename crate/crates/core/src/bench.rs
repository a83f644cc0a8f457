//! Synthetic melody benchmark: sixteen clips, each the twelve pitch classes
//! of one octave in a different order, used to check that the attribute
//! adapter learns to follow a melody condition.

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::attention::AdapterKind;
use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::codec::{AudioLatent, LatentCodec, DEFAULT_BASIS_SEED};
use crate::conditioners::{extract_melody, AttributeConditions, ConditionKind, MelodyConfig};
use crate::dataio::{encode_text, TextEmbedding};
use crate::diffusion::model::{DiffusionModel, Stage};
use crate::diffusion::sampler::{sample, AttrInput, SampleRequest};
use crate::diffusion::train::{build_batch, batch_loss, step_rng, DropoutConfig, TrainConfig, Trainer, TrainingExample};
use crate::diffusion::ModelConfig;
use crate::error::Result;
use crate::guidance::GuidanceScales;
use crate::metrics::melody_accuracy;

pub const CAPTION: &str = "a slow sine melody";
/// Lowest note of the benchmark octave (C4).
pub const BASE_HZ: f64 = 261.625_565_300_598_6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub clips: usize,
    pub frames_per_note: usize,
    pub amplitude: f32,
    pub seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub adapter_steps: usize,
    pub adapter_lr: f64,
    pub batch_size: usize,
    pub sample_steps: usize,
    pub scales: GuidanceScales,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                blocks: 2,
                model_dim: 128,
                cond_dim: 96,
                head_count: 4,
                mlp_ratio: 4,
                ..ModelConfig::default()
            },
            clips: 16,
            frames_per_note: 8,
            amplitude: 0.35,
            seed: 7,
            pretrain_steps: 4000,
            pretrain_lr: 1e-3,
            adapter_steps: 2000,
            adapter_lr: 1e-2,
            batch_size: 8,
            sample_steps: 50,
            scales: GuidanceScales::preset(crate::guidance::Task::Generate),
        }
    }
}

/// One benchmark clip.
#[derive(Debug, Clone)]
pub struct BenchClip {
    pub pitches: Vec<usize>,
    pub audio: StereoAudio,
    pub latent: AudioLatent,
    pub attrs: AttributeConditions,
}

/// Sine notes, one pitch class per note. Each note starts at phase zero,
/// so a pitch always encodes to the same run of latent frames.
pub fn note_audio(pitches: &[usize], frames_per_note: usize, frame_size: usize, amplitude: f32) -> StereoAudio {
    let len = frames_per_note * frame_size;
    let mut mono = Vec::with_capacity(pitches.len() * len);
    for &p in pitches {
        let hz = BASE_HZ * 2f64.powf(p as f64 / 12.0);
        mono.extend(
            (0..len).map(|n| amplitude * (2.0 * std::f64::consts::PI * hz * n as f64 / SAMPLE_RATE as f64).sin() as f32),
        );
    }
    StereoAudio::from_mono(SAMPLE_RATE, mono)
}

pub struct MelodyBench {
    pub config: BenchConfig,
    pub codec: LatentCodec,
    pub text: TextEmbedding,
    pub clips: Vec<BenchClip>,
}

impl MelodyBench {
    pub fn new(config: BenchConfig) -> Result<Self> {
        let codec = LatentCodec::with_shape(crate::codec::FRAME_SIZE, config.model.latent_channels, DEFAULT_BASIS_SEED)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let clips = (0..config.clips)
            .map(|_| {
                let mut p: Vec<usize> = (0..12).collect();
                p.shuffle(&mut rng);
                Self::clip(&codec, &config, p, true)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text: encode_text(CAPTION, config.model.cond_dim),
            codec,
            clips,
            config,
        })
    }

    fn clip(codec: &LatentCodec, cfg: &BenchConfig, pitches: Vec<usize>, with_melody: bool) -> Result<BenchClip> {
        let raw = note_audio(&pitches, cfg.frames_per_note, codec.frame_size(), cfg.amplitude);
        let latent = codec.encode(&raw)?;
        let audio = codec.decode(&latent)?;
        let mut attrs = AttributeConditions::default();
        if with_melody {
            attrs.set(extract_melody(&audio, &MelodyConfig::default())?);
        }
        Ok(BenchClip {
            pitches,
            audio,
            latent,
            attrs,
        })
    }

    pub fn n_frames(&self) -> usize {
        12 * self.config.frames_per_note
    }

    pub fn training_examples(&self) -> Vec<TrainingExample> {
        self.clips
            .iter()
            .map(|c| TrainingExample {
                x0: c.latent.clone(),
                text: self.text.clone(),
                attrs: c.attrs.clone(),
            })
            .collect()
    }
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct RunLog {
    pub losses: Vec<f64>,
    /// Loss on a fixed probe batch before and after training.
    pub probe_initial: f64,
    pub probe_final: f64,
}

/// Deep copy through the checkpoint container.
pub fn clone_model(model: &DiffusionModel) -> Result<DiffusionModel> {
    let c = model.to_container(None, json!({}))?;
    Ok(DiffusionModel::from_container(&c, model.dtype(), model.device())?.0)
}

fn train_run(
    model: DiffusionModel,
    stage: Stage,
    data: &[TrainingExample],
    cfg: TrainConfig,
    steps: usize,
    mut progress: impl FnMut(usize, f64),
) -> Result<(DiffusionModel, RunLog)> {
    let mut trainer = Trainer::new(model, stage, cfg, 0)?;
    // rebuilt per measurement: batch features depend on the trainable extractors
    let probe = |m: &DiffusionModel| -> Result<f64> {
        let b = build_batch(m, data, stage, &cfg, &mut step_rng(cfg.seed ^ 0xfeed, u64::MAX))?;
        scalar(&batch_loss(m, &b)?)
    };
    let mut log = RunLog {
        probe_initial: probe(&trainer.model)?,
        ..Default::default()
    };
    for i in 0..steps {
        let l = trainer.step(data)?;
        progress(i, l);
        log.losses.push(l);
    }
    log.probe_final = probe(&trainer.model)?;
    Ok((trainer.model, log))
}

fn scalar(t: &candle_core::Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Trains the text-only backbone on the benchmark clips. Every clip shares
/// one caption, so the backbone learns the clips as an unlabelled mixture
/// and the adapter has to pick the right one.
pub fn pretrain_backbone(bench: &MelodyBench, progress: impl FnMut(usize, f64)) -> Result<(DiffusionModel, RunLog)> {
    let cfg = &bench.config;
    let model = DiffusionModel::new(cfg.model.clone(), cfg.seed, DType::F32, &Device::Cpu)?;
    let data: Vec<TrainingExample> = bench
        .training_examples()
        .into_iter()
        .map(|e| TrainingExample {
            attrs: AttributeConditions::default(),
            ..e
        })
        .collect();
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        lr: cfg.pretrain_lr,
        weight_decay: 0.0,
        seed: cfg.seed,
        dropout: DropoutConfig::default(),
    };
    train_run(model, Stage::Backbone, &data, tc, cfg.pretrain_steps, progress)
}

/// Trains a melody-only attribute adapter on a copy of `backbone`. Attribute
/// dropout and training masks are off: a dropped attribute condition closes
/// the branch gate, so it teaches the adapter nothing.
pub fn train_melody_adapter(
    bench: &MelodyBench,
    backbone: &DiffusionModel,
    rope: bool,
    progress: impl FnMut(usize, f64),
) -> Result<(DiffusionModel, RunLog)> {
    let cfg = &bench.config;
    let mut model = clone_model(backbone)?;
    model.config.ablations.disable_rope = !rope;
    model.add_adapter(AdapterKind::Attribute, cfg.seed + 1)?;
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        lr: cfg.adapter_lr,
        weight_decay: 0.0,
        seed: cfg.seed + 2,
        dropout: DropoutConfig {
            attr: 0.0,
            masking: false,
            ..DropoutConfig::default()
        },
    };
    let data = bench.training_examples();
    train_run(
        model,
        Stage::Adapter(AdapterKind::Attribute),
        &data,
        tc,
        cfg.adapter_steps,
        progress,
    )
}

/// Mean melody accuracy of clips regenerated from their own melody
/// conditions (or from text alone when `use_adapter` is false).
pub fn evaluate(bench: &MelodyBench, model: &DiffusionModel, use_adapter: bool) -> Result<Vec<f64>> {
    bench
        .clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let mut req = SampleRequest::new(bench.n_frames(), bench.text.clone());
            req.steps = bench.config.sample_steps;
            req.seed = 1000 + i as u64;
            req.scales = bench.config.scales;
            if use_adapter {
                let mut conds = AttributeConditions::default();
                conds.set(clip.attrs.get(ConditionKind::Melody).expect("benchmark clips carry melody").clone());
                req.attr = Some(AttrInput {
                    conds,
                    masks: [None, None, None],
                });
            }
            let out = sample(model, &req)?;
            melody_accuracy(&clip.audio, &bench.codec.decode(&out.latent)?)
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

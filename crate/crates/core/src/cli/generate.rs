use std::path::PathBuf;

use candle_core::{DType, Device};
use log::{info, warn};
use serde_json::json;

use cadenza_core::attention::AdapterKind;
use cadenza_core::audio::{StereoAudio, SAMPLE_RATE};
use cadenza_core::codec::{LatentCodec, DEFAULT_BASIS_SEED, FRAME_SIZE};
use cadenza_core::conditioners::{AttributeConditions, Condition, ConditionKind, ConditionMask};
use cadenza_core::dataio::{encode_text, load_audio_44k, write_wav};
use cadenza_core::diffusion::{sample, AttrInput, DiffusionModel, Reference, SampleRequest, SamplerMode};
use cadenza_core::guidance::{GuidanceScales, Task};

use super::config::{check_spans, Mode, RunConfig, Span};
use super::{require, rhythm_provider, usage, TaskArg};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "")]
    pub caption: String,
    /// Output WAV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Reference audio for inpainting and outpainting.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Reference span to keep, `start:end` seconds (repeatable).
    #[arg(long)]
    pub keep: Vec<Span>,
    /// Span where the attribute conditions apply (repeatable; default whole clip).
    #[arg(long = "attr-span")]
    pub attr_span: Vec<Span>,
    /// Directory with `melody.cond`, `dynamics.cond` and/or `rhythm.cond`.
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub melody: Option<PathBuf>,
    #[arg(long)]
    pub dynamics: Option<PathBuf>,
    #[arg(long)]
    pub rhythm: Option<PathBuf>,
    /// Extract the attribute conditions from this WAV.
    #[arg(long)]
    pub attr_from: Option<PathBuf>,
    #[arg(long, default_value = "builtin")]
    pub rhythm_provider: String,
    /// Length of the output when there is no reference.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub lambda_text: Option<f64>,
    #[arg(long)]
    pub lambda_attr: Option<f64>,
    #[arg(long)]
    pub lambda_audio: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Write the attention maps of the last step as JSON.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Default kept reference spans: the outer fifths for inpainting, the first
/// half for outpainting.
fn default_keep(task: Task, duration: f64) -> Vec<Span> {
    match task {
        Task::Inpaint => vec![
            Span { start: 0.0, end: 0.2 * duration },
            Span { start: 0.8 * duration, end: duration },
        ],
        Task::Outpaint => vec![Span { start: 0.0, end: 0.5 * duration }],
        Task::Generate => Vec::new(),
    }
}

fn load_conditions(a: &Args) -> anyhow::Result<AttributeConditions> {
    let mut conds = AttributeConditions::default();
    if let Some(p) = &a.attr_from {
        require(p)?;
        conds = super::extract::extract_all(p, &rhythm_provider(&a.rhythm_provider), false)?;
    }
    if let Some(dir) = &a.conditions {
        require(dir)?;
        let d = AttributeConditions::read_dir(dir)?;
        if d.is_empty() {
            return Err(usage(format!("no condition files in {}", dir.display())));
        }
        for c in [d.melody, d.dynamics, d.rhythm].into_iter().flatten() {
            conds.set(c);
        }
    }
    for (p, kind) in [
        (&a.melody, ConditionKind::Melody),
        (&a.dynamics, ConditionKind::Dynamics),
        (&a.rhythm, ConditionKind::Rhythm),
    ] {
        if let Some(p) = p {
            require(p)?;
            let c = Condition::read(p)?;
            if c.kind != kind {
                return Err(usage(format!("{} holds a {} condition, not {}", p.display(), c.kind.as_str(), kind.as_str())));
            }
            conds.set(c);
        }
    }
    Ok(conds)
}

fn fit(audio: StereoAudio, len: usize) -> StereoAudio {
    let mut a = audio.slice(0, len.min(audio.len()));
    a.left.resize(len, 0.0);
    a.right.resize(len, 0.0);
    a
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    require(&a.checkpoint)?;
    let (model, codec, _) = DiffusionModel::load(&a.checkpoint, DType::F32, &Device::Cpu)?;
    let codec = match codec {
        Some(c) => c,
        None => LatentCodec::with_shape(FRAME_SIZE, model.config.latent_channels, DEFAULT_BASIS_SEED)?,
    };
    let task: Task = a.task.map(Into::into).unwrap_or(cfg.task);
    let mode = a.mode.unwrap_or(cfg.mode);
    let preset = cfg.scales.unwrap_or_else(|| GuidanceScales::preset(task));
    let scales = GuidanceScales::new(
        a.lambda_text.unwrap_or(preset.lambda_text),
        a.lambda_attr.unwrap_or(preset.lambda_attr),
        a.lambda_audio.unwrap_or(preset.lambda_audio),
    )?;

    let reference = match (&a.reference, task) {
        (Some(p), _) => {
            require(p)?;
            Some(load_audio_44k(p)?)
        }
        (None, Task::Generate) => None,
        (None, _) => return Err(usage(format!("--task {task:?} needs --reference").to_lowercase())),
    };
    let samples = match (&reference, a.duration_s) {
        (_, Some(d)) if d > 0.0 => (d * SAMPLE_RATE as f64).round() as usize,
        (_, Some(d)) => return Err(usage(format!("--duration-s must be positive, got {d}"))),
        (Some(r), None) => r.len(),
        (None, None) => 4 * SAMPLE_RATE as usize,
    };
    let m = codec.frames_for(samples);
    let duration = (m * codec.frame_size()) as f64 / SAMPLE_RATE as f64;

    let attr_spans = if a.attr_span.is_empty() { cfg.attr_spans.clone() } else { a.attr_span.clone() };
    let keep_spans = match (a.keep.is_empty(), cfg.keep.is_empty()) {
        (false, _) => a.keep.clone(),
        (true, false) => cfg.keep.clone(),
        (true, true) => default_keep(task, duration),
    };
    check_spans(&attr_spans, duration, "attribute")?;
    check_spans(&keep_spans, duration, "keep")?;

    let mut req = SampleRequest::new(m, encode_text(&a.caption, model.config.cond_dim));
    req.scales = scales;
    req.steps = a.steps.unwrap_or(cfg.steps);
    req.seed = a.seed.unwrap_or(cfg.seed);
    req.mode = match mode {
        Mode::Plain => SamplerMode::Plain,
        Mode::NaiveMasking => SamplerMode::NaiveMasking,
    };
    req.capture = a.dump_attention.is_some();

    let pairs: Vec<(f64, f64)> = keep_spans.iter().map(Span::pair).collect();
    let audio_keep = if task == Task::Generate {
        ConditionMask::none(m)
    } else {
        ConditionMask::from_spans(m, codec.frame_rate(), &pairs)?
    };
    if let Some(r) = &reference {
        if task != Task::Generate {
            let latent = codec.encode(&fit(r.clone(), m * codec.frame_size()))?;
            req.reference = Some(Reference {
                latent,
                keep: audio_keep.clone(),
            });
            req.audio_condition = mode == Mode::Plain && model.has_adapter(AdapterKind::Audio);
            if mode == Mode::Plain && !req.audio_condition {
                warn!("checkpoint has no audio adapter; the reference only fills the kept spans");
            }
        }
    }

    let conds = load_conditions(&a)?;
    if !conds.is_empty() {
        if !model.has_adapter(AdapterKind::Attribute) {
            return Err(usage("attribute conditions given but the checkpoint has no attribute adapter"));
        }
        let span_mask = if attr_spans.is_empty() {
            ConditionMask::all(m)
        } else {
            let p: Vec<(f64, f64)> = attr_spans.iter().map(Span::pair).collect();
            ConditionMask::from_spans(m, codec.frame_rate(), &p)?
        };
        let attr_keep = ConditionMask::new(
            span_mask.keep.iter().zip(&audio_keep.keep).map(|(s, k)| *s && !*k).collect(),
        );
        let masks = ConditionKind::ALL.map(|k| conds.get(k).map(|c| attr_keep.resample(c.n_frames)));
        req.attr = Some(AttrInput { conds, masks });
    }

    info!(
        "{task:?}: {m} frames, {} steps, seed {}, scales ({}, {}, {})",
        req.steps, req.seed, scales.lambda_text, scales.lambda_attr, scales.lambda_audio
    );
    let out = sample(&model, &req)?;
    let audio = codec.decode(&out.latent)?;
    write_wav(&a.out, &fit(audio, samples))?;
    if let Some(p) = &a.dump_attention {
        let maps: Vec<_> = out
            .attention
            .iter()
            .map(|m| {
                json!({
                    "layer": m.layer_index, "head": m.head_index, "kind": m.kind.as_str(),
                    "rows": m.rows, "cols": m.cols, "weights": m.weights,
                })
            })
            .collect();
        cadenza_core::dataio::tensor_file::write_atomic(p, serde_json::to_string(&maps)?.as_bytes())?;
    }
    info!("wrote {}", a.out.display());
    Ok(())
}

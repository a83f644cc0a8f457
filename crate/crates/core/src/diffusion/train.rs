//! Velocity-prediction training with condition dropout.

use candle_core::{DType, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::AdapterKind;
use crate::codec::AudioLatent;
use crate::conditioners::{masks::training_mask, sample_training_masks, AttributeConditions, ConditionKind, ConditionMask};
use crate::dataio::TextEmbedding;
use crate::diffusion::model::{pad_text, Branch, DiffusionModel, ModelInput, Stage};
use crate::diffusion::schedule::{v_target_batch, NoiseSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DropoutConfig {
    pub text: f64,
    pub attr: f64,
    pub audio: f64,
    /// Hide a random contiguous part of each surviving condition.
    pub masking: bool,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            text: 0.3,
            attr: 0.5,
            audio: 0.5,
            masking: true,
        }
    }
}

/// `true` marks a dropped condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropoutRecord {
    pub text: bool,
    pub attr: bool,
    pub audio: bool,
}

/// The conditions of one training example after dropout and masking.
#[derive(Debug, Clone)]
pub struct DroppedConditions {
    pub text: TextEmbedding,
    pub attr: Option<(AttributeConditions, [ConditionMask; 3])>,
    pub audio: Option<(AudioLatent, ConditionMask)>,
    pub record: DropoutRecord,
}

/// Drops text with probability `cfg.text` and the attribute and audio
/// conditions independently with their own probabilities; survivors get
/// fresh training masks.
pub fn apply_condition_dropout<R: Rng>(
    rng: &mut R,
    cfg: &DropoutConfig,
    text: &TextEmbedding,
    attr: Option<&AttributeConditions>,
    audio: Option<&AudioLatent>,
) -> DroppedConditions {
    let record = DropoutRecord {
        text: rng.random_bool(cfg.text),
        attr: rng.random_bool(cfg.attr),
        audio: rng.random_bool(cfg.audio),
    };
    let attr = attr.filter(|_| !record.attr).map(|a| {
        let len = |k: ConditionKind| a.get(k).map_or(0, |c| c.n_frames);
        let lens = [len(ConditionKind::Melody), len(ConditionKind::Dynamics), len(ConditionKind::Rhythm)];
        let masks = if cfg.masking {
            sample_training_masks(rng, lens)
        } else {
            lens.map(ConditionMask::all)
        };
        (a.clone(), masks)
    });
    let audio = audio.filter(|_| !record.audio).map(|x| {
        let mask = if cfg.masking {
            training_mask(rng, x.n_frames)
        } else {
            ConditionMask::all(x.n_frames)
        };
        (x.clone(), mask)
    });
    DroppedConditions {
        text: if record.text { TextEmbedding::null(text.width) } else { text.clone() },
        attr,
        audio,
        record,
    }
}

/// One clip of the training set.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub x0: AudioLatent,
    pub text: TextEmbedding,
    pub attrs: AttributeConditions,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dropout: DropoutConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            weight_decay: 1e-2,
            seed: 0,
            dropout: DropoutConfig::default(),
        }
    }
}

/// Inputs and targets of one optimisation step.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x0: Tensor,
    pub eps: Tensor,
    pub t: Vec<f64>,
    pub text: Tensor,
    pub text_mask: Tensor,
    pub attr: Option<Branch>,
    pub audio: Option<Branch>,
    pub records: Vec<DropoutRecord>,
}

fn latent_tensor(model: &DiffusionModel, x: &AudioLatent) -> Result<Tensor> {
    Ok(Tensor::from_vec(x.frames.clone(), (x.n_frames, x.channels), model.device())?.to_dtype(model.dtype())?)
}

fn gate(model: &DiffusionModel, on: &[bool]) -> Result<Tensor> {
    let v: Vec<f32> = on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, (on.len(), 1, 1), model.device())?.to_dtype(model.dtype())?)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

/// Draws a batch: examples (with replacement), times, noise, dropout and
/// masks, all from `rng`.
pub fn build_batch(
    model: &DiffusionModel,
    data: &[TrainingExample],
    stage: Stage,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingBatch> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let m = data[0].x0.n_frames;
    if let Some(bad) = data.iter().find(|e| e.x0.n_frames != m) {
        return Err(Error::InvalidInput(format!(
            "training clips must share one length: {} vs {m} latent frames",
            bad.x0.n_frames
        )));
    }
    let a = data[0].x0.channels;
    let (mut x0s, mut epss, mut ts, mut texts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut attr_feats, mut audio_feats, mut attr_on, mut audio_on, mut records) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dcfg = cfg.dropout;
    for _ in 0..cfg.batch_size.max(1) {
        let ex = &data[rng.random_range(0..data.len())];
        let t: f64 = rng.random_range(0.0..1.0);
        let eps = gaussian(rng, m * a);
        let (use_attr, use_audio) = match stage {
            Stage::Backbone => (false, false),
            Stage::Adapter(AdapterKind::Attribute) => (true, false),
            Stage::Adapter(AdapterKind::Audio) => (false, true),
        };
        if !use_attr {
            dcfg.attr = 1.0;
        }
        if !use_audio {
            dcfg.audio = 1.0;
        }
        let d = apply_condition_dropout(
            rng,
            &dcfg,
            &ex.text,
            use_attr.then_some(&ex.attrs),
            use_audio.then_some(&ex.x0),
        );
        x0s.push(latent_tensor(model, &ex.x0)?);
        epss.push(Tensor::from_vec(eps, (m, a), model.device())?.to_dtype(model.dtype())?);
        ts.push(t);
        texts.push(d.text.to_tensor(model.dtype(), model.device())?.squeeze(0)?);
        if use_attr {
            attr_on.push(d.attr.is_some());
            attr_feats.push(match &d.attr {
                Some((c, masks)) => model.attr_features(c, [Some(&masks[0]), Some(&masks[1]), Some(&masks[2])], m)?,
                None => Tensor::zeros((1, m, model.config.cond_dim), model.dtype(), model.device())?,
            });
        }
        if use_audio {
            audio_on.push(d.audio.is_some());
            audio_feats.push(match &d.audio {
                Some((x, mask)) => model.audio_features(x, Some(mask))?,
                None => Tensor::zeros((1, m, model.config.cond_dim), model.dtype(), model.device())?,
            });
        }
        records.push(d.record);
    }
    let (text, text_mask) = pad_text(&texts)?;
    let attr = if attr_feats.is_empty() {
        None
    } else {
        Some(Branch {
            features: Tensor::cat(&attr_feats, 0)?,
            gate: Some(gate(model, &attr_on)?),
        })
    };
    let audio = if audio_feats.is_empty() {
        None
    } else {
        Some(Branch {
            features: Tensor::cat(&audio_feats, 0)?,
            gate: Some(gate(model, &audio_on)?),
        })
    };
    Ok(TrainingBatch {
        x0: Tensor::stack(&x0s, 0)?,
        eps: Tensor::stack(&epss, 0)?,
        t: ts,
        text,
        text_mask: text_mask.to_dtype(model.dtype())?,
        attr,
        audio,
        records,
    })
}

/// Mean squared error between prediction and target.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Noisy input for each item: `alpha(t_i) x0_i + sigma(t_i) eps_i`.
pub fn noisy_batch(x0: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    let s = NoiseSchedule;
    let items = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| s.noisy(&x0.get(i)?, &eps.get(i)?, ti))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items, 0)?)
}

/// The velocity loss of `model` on `batch` (a scalar tensor).
pub fn batch_loss(model: &DiffusionModel, batch: &TrainingBatch) -> Result<Tensor> {
    let x_t = noisy_batch(&batch.x0, &batch.eps, &batch.t)?;
    let input = ModelInput {
        x_t: &x_t,
        t: &batch.t,
        text: &batch.text,
        text_mask: Some(&batch.text_mask),
        attr: batch.attr.clone(),
        audio: batch.audio.clone(),
    };
    let pred = model.forward(&input, None)?;
    mse(&pred, &v_target_batch(&batch.x0, &batch.eps, &batch.t)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Computes the loss, checks it is finite, and applies one optimizer update.
pub fn training_step<O: Optimizer>(model: &DiffusionModel, batch: &TrainingBatch, opt: &mut O) -> Result<f64> {
    let loss = batch_loss(model, batch)?;
    let value = scalar(&loss)?;
    if !value.is_finite() {
        return Err(Error::NumericDivergence(format!("loss became {value}")));
    }
    opt.backward_step(&loss)?;
    Ok(value)
}

/// Per-step generator: the same `(seed, step)` always yields the same batch.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Owns the optimizer and the step counter of a training run.
pub struct Trainer {
    pub model: DiffusionModel,
    pub stage: Stage,
    pub cfg: TrainConfig,
    pub step: u64,
    opt: AdamW,
}

impl Trainer {
    pub fn new(model: DiffusionModel, stage: Stage, cfg: TrainConfig, start_step: u64) -> Result<Self> {
        model.set_stage(stage)?;
        let vars = model.trainable().into_iter().map(|(_, p)| p.var().clone()).collect();
        let opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..ParamsAdamW::default()
            },
        )?;
        Ok(Self {
            model,
            stage,
            cfg,
            step: start_step,
            opt,
        })
    }

    /// The batch the next call to [`Trainer::step`] will use.
    pub fn next_batch(&self, data: &[TrainingExample]) -> Result<TrainingBatch> {
        build_batch(&self.model, data, self.stage, &self.cfg, &mut step_rng(self.cfg.seed, self.step))
    }

    pub fn step(&mut self, data: &[TrainingExample]) -> Result<f64> {
        let batch = self.next_batch(data)?;
        let loss = training_step(&self.model, &batch, &mut self.opt)?;
        self.step += 1;
        Ok(loss)
    }
}

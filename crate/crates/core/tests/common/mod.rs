#![allow(dead_code)]

use cadenza_core::attention::AdapterKind;
use cadenza_core::codec::AudioLatent;
use cadenza_core::conditioners::{AttributeConditions, Condition, ConditionKind};
use cadenza_core::dataio::encode_text;
use cadenza_core::diffusion::train::{batch_loss, build_batch, step_rng};
use cadenza_core::diffusion::{DiffusionModel, DropoutConfig, ModelConfig, Stage, TrainConfig, TrainingExample};
use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        blocks: 2,
        model_dim: 16,
        cond_dim: 12,
        head_count: 2,
        mlp_ratio: 2,
        latent_channels: 4,
        melody_channels: 6,
        ..Default::default()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal) * scale).collect()
}

/// Random clips with all three attribute conditions.
pub fn toy_examples(cfg: &ModelConfig, n: usize, frames: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut attrs = AttributeConditions::default();
            let mel: Vec<f32> = (0..frames * cfg.melody_channels).map(|_| rng.random_range(0..2) as f32).collect();
            attrs.set(Condition::new(ConditionKind::Melody, cfg.melody_channels, 10.0, mel).unwrap());
            attrs.set(Condition::new(ConditionKind::Dynamics, 1, 10.0, gaussian(&mut rng, frames, 6.0)).unwrap());
            let rhy: Vec<f32> = (0..2 * frames).map(|_| rng.random::<f32>()).collect();
            attrs.set(Condition::new(ConditionKind::Rhythm, 2, 10.0, rhy).unwrap());
            TrainingExample {
                x0: AudioLatent {
                    frames: gaussian(&mut rng, frames * cfg.latent_channels, 1.0),
                    n_frames: frames,
                    channels: cfg.latent_channels,
                    sample_rate: 44_100,
                    frame_size: 1024,
                },
                text: encode_text(&format!("toy clip {i}"), cfg.cond_dim),
                attrs,
            }
        })
        .collect()
}

/// A model with an attribute adapter whose trainable tensors (combiner
/// included) are randomized, so every gradient path is live.
pub fn randomized_adapter_model(cfg: ModelConfig, seed: u64, dtype: DType) -> DiffusionModel {
    let mut model = DiffusionModel::new(cfg, seed, dtype, &Device::Cpu).unwrap();
    model.add_adapter(AdapterKind::Attribute, seed + 1).unwrap();
    model.set_stage(Stage::Adapter(AdapterKind::Attribute)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for (_, p) in model.trainable() {
        let n: usize = p.dims().iter().product();
        let t = Tensor::from_vec(gaussian(&mut rng, n, 0.3), p.dims(), &Device::Cpu)
            .unwrap()
            .to_dtype(dtype)
            .unwrap();
        p.set(&t).unwrap();
    }
    model
}

pub fn no_dropout() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        dropout: DropoutConfig {
            text: 0.0,
            attr: 0.0,
            audio: 0.0,
            masking: false,
        },
        ..TrainConfig::default()
    }
}

fn loss(model: &DiffusionModel, data: &[TrainingExample], stage: Stage, cfg: &TrainConfig) -> Tensor {
    let batch = build_batch(model, data, stage, cfg, &mut step_rng(5, 0)).unwrap();
    batch_loss(model, &batch).unwrap()
}

/// Largest relative error, per trainable tensor, between the analytic
/// gradient and central differences on `probes` random entries.
pub fn gradient_check(model: &DiffusionModel, data: &[TrainingExample], stage: Stage, probes: usize, h: f64, seed: u64) -> Vec<(String, f64)> {
    let cfg = no_dropout();
    let grads = loss(model, data, stage, &cfg).backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, p) in model.trainable() {
        let g: Vec<f64> = grads
            .get(p.var().as_tensor())
            .expect("gradient for trainable tensor")
            .to_dtype(DType::F64)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let base: Vec<f64> = p.var().as_tensor().to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for _ in 0..probes {
            let i = rng.random_range(0..base.len());
            let eval = |delta: f64| -> f64 {
                let mut v = base.clone();
                v[i] += delta;
                p.set(&Tensor::from_vec(v, p.dims(), &Device::Cpu).unwrap().to_dtype(model.dtype()).unwrap()).unwrap();
                loss(model, data, stage, &cfg).to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            diff += (numeric - g[i]).powi(2);
            norm += numeric.abs().max(g[i].abs()).powi(2);
        }
        p.set(&Tensor::from_vec(base, p.dims(), &Device::Cpu).unwrap().to_dtype(model.dtype()).unwrap()).unwrap();
        out.push((name, if norm == 0.0 { 0.0 } else { (diff / norm).sqrt() }));
    }
    out
}

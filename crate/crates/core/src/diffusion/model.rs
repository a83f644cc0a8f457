//! The diffusion Transformer: self-attention, frozen text cross-attention
//! with optional decoupled adapters, and an MLP in every block.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attention::{
    attend, combine_gated, decoupled_cross_attention, merge_heads, split_heads, text_cross_attention_masked,
    AdapterKind, AdapterSet, AttentionCapture, DecoupledOptions, FrozenAttentionWeights, GatedBranch,
};
use crate::codec::{AudioLatent, LatentCodec};
use crate::conditioners::{featurize, AttributeConditions, AttributeExtractors, ConditionMask, ConvStack};
use crate::dataio::Container;
use crate::diffusion::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{layer_norm, linear, randn, zeros, Param};
use crate::rope::{build_angles, RotationSpec};

const LN_EPS: f64 = 1e-5;
pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Debug, Clone)]
pub struct Block {
    pub sa_q: Param,
    pub sa_k: Param,
    pub sa_v: Param,
    pub sa_o: Param,
    pub text: FrozenAttentionWeights,
    pub cross_o: Param,
    pub mlp_in: Param,
    pub mlp_in_b: Param,
    pub mlp_out: Param,
    pub mlp_out_b: Param,
    pub attr: Option<AdapterSet>,
    pub audio: Option<AdapterSet>,
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        let d = cfg.model_dim;
        let c = cfg.cond_dim;
        let h = d * cfg.mlp_ratio;
        let mut w = |i: usize, o: usize| -> Result<Param> { Param::new(randn(rng, &[i, o], (i as f64).powf(-0.5), dtype, device)?) };
        let sa_q = w(d, d)?;
        let sa_k = w(d, d)?;
        let sa_v = w(d, d)?;
        let sa_o = w(d, d)?;
        let cross_o = w(c, d)?;
        let mlp_in = w(d, h)?;
        let mlp_out = w(h, d)?;
        let text = FrozenAttentionWeights::new(rng, d, c, c, cfg.head_count, dtype, device)?;
        Ok(Self {
            sa_q,
            sa_k,
            sa_v,
            sa_o,
            text,
            cross_o,
            mlp_in,
            mlp_in_b: Param::new(zeros(&[h], dtype, device)?)?,
            mlp_out,
            mlp_out_b: Param::new(zeros(&[d], dtype, device)?)?,
            attr: None,
            audio: None,
        })
    }

    fn backbone_state(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("sa.q", &self.sa_q),
            ("sa.k", &self.sa_k),
            ("sa.v", &self.sa_v),
            ("sa.o", &self.sa_o),
            ("text.q", &self.text.wq),
            ("text.k", &self.text.wk),
            ("text.v", &self.text.wv),
            ("cross.o", &self.cross_o),
            ("mlp.in.weight", &self.mlp_in),
            ("mlp.in.bias", &self.mlp_in_b),
            ("mlp.out.weight", &self.mlp_out),
            ("mlp.out.bias", &self.mlp_out_b),
        ]
    }

    pub fn adapter(&self, kind: AdapterKind) -> Option<&AdapterSet> {
        match kind {
            AdapterKind::Attribute => self.attr.as_ref(),
            AdapterKind::Audio => self.audio.as_ref(),
        }
    }
}

/// A condition branch: features `(B, M, C_r)` and an optional per-sample
/// gate `(B, 1, 1)`.
#[derive(Debug, Clone)]
pub struct Branch {
    pub features: Tensor,
    pub gate: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ModelInput<'a> {
    /// `(B, M, A)`.
    pub x_t: &'a Tensor,
    /// One diffusion time per batch item.
    pub t: &'a [f64],
    /// `(B, T, C_r)`.
    pub text: &'a Tensor,
    /// `(B, T)`, 1 for real tokens.
    pub text_mask: Option<&'a Tensor>,
    pub attr: Option<Branch>,
    pub audio: Option<Branch>,
}

/// Which parameters a training run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Backbone,
    Adapter(AdapterKind),
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub config: ModelConfig,
    dtype: DType,
    device: Device,
    in_w: Param,
    in_b: Param,
    time_w1: Param,
    time_b1: Param,
    time_w2: Param,
    time_b2: Param,
    out_w: Param,
    out_b: Param,
    pub blocks: Vec<Block>,
    pub attr_extractors: Option<AttributeExtractors>,
    pub audio_extractor: Option<ConvStack>,
    self_rope: RotationSpec,
    cross_rope: RotationSpec,
}

/// Sinusoidal embedding of `t * 1000`, `(B, dim)`.
fn time_embedding(t: &[f64], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let pos = ti * 1000.0;
        let mut row = vec![0.0f32; dim];
        for i in 0..half {
            let w = 10_000f64.powf(-(i as f64) / half as f64);
            row[i] = (pos * w).sin() as f32;
            row[half + i] = (pos * w).cos() as f32;
        }
        data.extend(row);
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), device)?.to_dtype(dtype)?)
}

impl DiffusionModel {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let a = config.latent_channels;
        let w = |i: usize, o: usize, rng: &mut ChaCha8Rng| -> Result<Param> {
            Param::new(randn(rng, &[i, o], (i as f64).powf(-0.5), dtype, device)?)
        };
        let in_w = w(a, d, &mut rng)?;
        let time_w1 = w(d, d, &mut rng)?;
        let time_w2 = w(d, d, &mut rng)?;
        let out_w = w(d, a, &mut rng)?;
        let blocks = (0..config.blocks)
            .map(|_| Block::new(&mut rng, &config, dtype, device))
            .collect::<Result<Vec<_>>>()?;
        let z = |n: usize| -> Result<Param> { Param::new(zeros(&[n], dtype, device)?) };
        Ok(Self {
            self_rope: build_angles(config.self_head_dim(), config.rope_base)?,
            cross_rope: build_angles(config.cross_head_dim(), config.rope_base)?,
            in_b: z(d)?,
            time_b1: z(d)?,
            time_b2: z(d)?,
            out_b: z(a)?,
            in_w,
            time_w1,
            time_w2,
            out_w,
            blocks,
            attr_extractors: None,
            audio_extractor: None,
            config,
            dtype,
            device: device.clone(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn has_adapter(&self, kind: AdapterKind) -> bool {
        self.blocks.first().is_some_and(|b| b.adapter(kind).is_some())
    }

    /// Creates (or re-creates) an adapter set in every block by copying the
    /// current frozen key/value projections, plus its feature extractors.
    pub fn add_adapter(&mut self, kind: AdapterKind, seed: u64) -> Result<()> {
        let ab = self.config.ablations;
        for b in &mut self.blocks {
            let set = AdapterSet::from_frozen(kind, &b.text, ab.double_heads)?;
            match kind {
                AdapterKind::Attribute => b.attr = Some(set),
                AdapterKind::Audio => b.audio = Some(set),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.config.cond_dim;
        match kind {
            AdapterKind::Attribute => {
                self.attr_extractors = Some(AttributeExtractors::new(
                    &mut rng,
                    self.config.melody_channels,
                    c,
                    ab.disable_extractor,
                    self.dtype,
                    &self.device,
                )?)
            }
            AdapterKind::Audio => {
                let a = self.config.latent_channels;
                self.audio_extractor = Some(if ab.disable_extractor {
                    ConvStack::projection(&mut rng, a, c, self.dtype, &self.device)?
                } else {
                    ConvStack::new(&mut rng, a, c, c, self.dtype, &self.device)?
                });
            }
        }
        Ok(())
    }

    fn backbone_state(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = vec![
            ("backbone.in.weight".into(), &self.in_w),
            ("backbone.in.bias".into(), &self.in_b),
            ("backbone.time.w1".into(), &self.time_w1),
            ("backbone.time.b1".into(), &self.time_b1),
            ("backbone.time.w2".into(), &self.time_w2),
            ("backbone.time.b2".into(), &self.time_b2),
            ("backbone.out.weight".into(), &self.out_w),
            ("backbone.out.bias".into(), &self.out_b),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, p) in b.backbone_state() {
                out.push((format!("backbone.block{i}.{n}"), p));
            }
        }
        out
    }

    /// Adapter, combiner and extractor tensors of one kind (including the
    /// frozen projection of the extractor ablation).
    fn adapter_state(&self, kind: AdapterKind) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(a) = b.adapter(kind) {
                for (n, p) in a.params() {
                    out.push((format!("adapter.{}.block{i}.{n}", kind.as_str()), p));
                }
            }
        }
        match kind {
            AdapterKind::Attribute => {
                if let Some(ex) = &self.attr_extractors {
                    out.extend(ex.state().into_iter().map(|(n, p)| (format!("extractor.attr.{n}"), p)));
                }
            }
            AdapterKind::Audio => {
                if let Some(ex) = &self.audio_extractor {
                    out.extend(ex.state().into_iter().map(|(n, p)| (format!("extractor.audio.{n}"), p)));
                }
            }
        }
        out
    }

    /// Every tensor of the model, in a stable order.
    pub fn state(&self) -> Vec<(String, &Param)> {
        let mut out = self.backbone_state();
        out.extend(self.adapter_state(AdapterKind::Attribute));
        out.extend(self.adapter_state(AdapterKind::Audio));
        out
    }

    /// Marks exactly the parameters of `stage` trainable.
    pub fn set_stage(&self, stage: Stage) -> Result<()> {
        for (_, p) in self.state() {
            p.set_trainable(false);
        }
        match stage {
            Stage::Backbone => {
                for (_, p) in self.backbone_state() {
                    p.set_trainable(true);
                }
            }
            Stage::Adapter(kind) => {
                if !self.has_adapter(kind) {
                    return Err(Error::Config(format!("model has no {} adapter", kind.as_str())));
                }
                for b in &self.blocks {
                    if let Some(a) = b.adapter(kind) {
                        a.set_trainable(true);
                    }
                }
                match kind {
                    AdapterKind::Attribute => {
                        if let Some(ex) = &self.attr_extractors {
                            ex.set_trainable(true)
                        }
                    }
                    AdapterKind::Audio => {
                        if let Some(ex) = &self.audio_extractor {
                            ex.set_trainable(true)
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn trainable(&self) -> Vec<(String, &Param)> {
        self.state().into_iter().filter(|(_, p)| p.is_trainable()).collect()
    }

    /// SHA-256 over every frozen tensor (names, shapes and values).
    pub fn frozen_checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, p) in self.state() {
            if p.is_trainable() {
                continue;
            }
            h.update(name.as_bytes());
            for d in p.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.to_vec_f32()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }

    fn decoupled_options(&self) -> DecoupledOptions {
        let ab = self.config.ablations;
        DecoupledOptions {
            rope: (!ab.disable_rope).then(|| self.cross_rope.clone()),
            rotate_values: !ab.no_value_rotation,
        }
    }

    /// Attribute features `(1, M, C_r)` for one clip.
    pub fn attr_features(
        &self,
        conds: &AttributeConditions,
        masks: [Option<&ConditionMask>; 3],
        m: usize,
    ) -> Result<Tensor> {
        let ex = self
            .attr_extractors
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has no attribute adapter".into()))?;
        featurize(ex, conds, masks, m, self.dtype, &self.device)
    }

    /// Audio-condition features `(1, M, C_r)` from a reference latent whose
    /// hidden frames are zeroed.
    pub fn audio_features(&self, latent: &AudioLatent, mask: Option<&ConditionMask>) -> Result<Tensor> {
        let ex = self
            .audio_extractor
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has no audio adapter".into()))?;
        let mut data = latent.frames.clone();
        if let Some(mask) = mask {
            if mask.len() != latent.n_frames {
                return Err(Error::InvalidDimension(format!(
                    "audio mask of length {} for {} latent frames",
                    mask.len(),
                    latent.n_frames
                )));
            }
            for (row, &keep) in data.chunks_mut(latent.channels).zip(&mask.keep) {
                if !keep {
                    row.fill(0.0);
                }
            }
        }
        let x = Tensor::from_vec(data, (1, latent.n_frames, latent.channels), &self.device)?.to_dtype(self.dtype)?;
        ex.forward(&x)
    }

    fn self_attention(&self, b: &Block, x: &Tensor) -> Result<Tensor> {
        let (_, m, _) = x.dims3()?;
        let heads = self.config.head_count;
        let table = self.self_rope.table(&(0..m).collect::<Vec<_>>(), self.dtype, &self.device)?;
        let q = table.apply(&split_heads(&linear(x, &b.sa_q.t(), None)?, heads)?)?;
        let k = table.apply(&split_heads(&linear(x, &b.sa_k.t(), None)?, heads)?)?;
        let v = split_heads(&linear(x, &b.sa_v.t(), None)?, heads)?;
        let (out, _) = attend(&q, &k, &v)?;
        linear(&merge_heads(&out)?, &b.sa_o.t(), None)
    }

    /// Predicts the velocity `(B, M, A)`.
    pub fn forward(&self, input: &ModelInput, mut capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        let (bsz, m, a) = input.x_t.dims3()?;
        if a != self.config.latent_channels {
            return Err(Error::InvalidDimension(format!(
                "latent has {a} channels, model expects {}",
                self.config.latent_channels
            )));
        }
        if input.t.len() != bsz {
            return Err(Error::InvalidDimension(format!("{} times for batch of {bsz}", input.t.len())));
        }
        for (kind, br) in [(AdapterKind::Attribute, &input.attr), (AdapterKind::Audio, &input.audio)] {
            if let Some(br) = br {
                if !self.has_adapter(kind) {
                    return Err(Error::InvalidInput(format!("model has no {} adapter", kind.as_str())));
                }
                let want = [bsz, m, self.config.cond_dim];
                if br.features.dims() != want {
                    return Err(Error::InvalidDimension(format!(
                        "{} features {:?}, expected {want:?}",
                        kind.as_str(),
                        br.features.dims()
                    )));
                }
            }
        }
        let temb = time_embedding(input.t, self.config.model_dim, self.dtype, &self.device)?;
        let temb = candle_nn::ops::silu(&linear(&temb, &self.time_w1.t(), Some(&self.time_b1.t()))?)?;
        let temb = linear(&temb, &self.time_w2.t(), Some(&self.time_b2.t()))?;
        let mut h = linear(input.x_t, &self.in_w.t(), Some(&self.in_b.t()))?.broadcast_add(&temb.unsqueeze(1)?)?;
        let opts = self.decoupled_options();
        let mode = self.config.ablations.combine_mode();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(c) = capture.as_deref_mut() {
                c.set_layer(i);
            }
            h = (&h + self.self_attention(b, &layer_norm(&h, LN_EPS)?)?)?;
            let q_in = layer_norm(&h, LN_EPS)?;
            let x_text = text_cross_attention_masked(&b.text, &q_in, input.text, input.text_mask)?;
            let mut outs = Vec::new();
            for (set, br) in [(&b.attr, &input.attr), (&b.audio, &input.audio)] {
                if let (Some(set), Some(br)) = (set, br) {
                    let o = decoupled_cross_attention(&b.text, set, &opts, &q_in, &br.features, capture.as_deref_mut())?;
                    outs.push((o, set, br.gate.as_ref()));
                }
            }
            let branches: Vec<GatedBranch> = outs
                .iter()
                .map(|(o, set, gate)| GatedBranch {
                    output: o,
                    combiner: &set.combiner,
                    gate: *gate,
                })
                .collect();
            let cross = combine_gated(&x_text, &branches, mode)?;
            h = (&h + linear(&cross, &b.cross_o.t(), None)?)?;
            let z = layer_norm(&h, LN_EPS)?;
            let z = candle_nn::ops::silu(&linear(&z, &b.mlp_in.t(), Some(&b.mlp_in_b.t()))?)?;
            h = (&h + linear(&z, &b.mlp_out.t(), Some(&b.mlp_out_b.t()))?)?;
        }
        linear(&layer_norm(&h, LN_EPS)?, &self.out_w.t(), Some(&self.out_b.t()))
    }

    pub fn adapters(&self) -> Vec<AdapterKind> {
        [AdapterKind::Attribute, AdapterKind::Audio]
            .into_iter()
            .filter(|k| self.has_adapter(*k))
            .collect()
    }

    /// Serializes every tensor plus config and `extra` metadata.
    pub fn to_container(&self, codec: Option<&LatentCodec>, extra: Value) -> Result<Container> {
        let adapters: Vec<&str> = self.adapters().iter().map(|k| k.as_str()).collect();
        let meta = json!({
            "config": self.config,
            "adapters": adapters,
            "codec": codec.map(|c| json!({"frame_size": c.frame_size(), "channels": c.channels()})),
            "extra": extra,
        });
        let mut c = Container::new(CHECKPOINT_KIND, meta);
        for (name, p) in self.state() {
            c.push(name, p.dims().to_vec(), p.to_vec_f32()?);
        }
        if let Some(codec) = codec {
            c.push("codec.basis", vec![codec.channels(), codec.frame_size() * 2], codec.basis().to_vec());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container, dtype: DType, device: &Device) -> Result<(Self, Option<LatentCodec>, Value)> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::parse(format!("expected a checkpoint, found '{}'", c.kind)));
        }
        let config: ModelConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::parse(format!("checkpoint config: {e}")))?;
        let mut model = Self::new(config, 0, dtype, device)?;
        let kinds = c.meta["adapters"].as_array().cloned().unwrap_or_default();
        for k in kinds {
            match k.as_str() {
                Some("attr") => model.add_adapter(AdapterKind::Attribute, 0)?,
                Some("audio") => model.add_adapter(AdapterKind::Audio, 0)?,
                other => return Err(Error::parse(format!("unknown adapter kind {other:?}"))),
            }
        }
        for (name, p) in model.state() {
            let (shape, data) = c
                .get(&name)
                .ok_or_else(|| Error::parse(format!("checkpoint lacks tensor '{name}'")))?;
            if shape != p.dims() {
                return Err(Error::parse(format!("tensor '{name}' has shape {shape:?}, expected {:?}", p.dims())));
            }
            p.set(&Tensor::from_vec(data.to_vec(), shape, device)?.to_dtype(dtype)?)?;
        }
        let codec = match (c.get("codec.basis"), c.meta.get("codec")) {
            (Some((_, basis)), Some(info)) if !info.is_null() => {
                let fs = info["frame_size"].as_u64().unwrap_or(0) as usize;
                let ch = info["channels"].as_u64().unwrap_or(0) as usize;
                Some(LatentCodec::from_basis(fs, ch, basis.to_vec())?)
            }
            _ => None,
        };
        Ok((model, codec, c.meta["extra"].clone()))
    }

    pub fn save(&self, path: &Path, codec: Option<&LatentCodec>, extra: Value) -> Result<()> {
        self.to_container(codec, extra)?.write(path)
    }

    pub fn load(path: &Path, dtype: DType, device: &Device) -> Result<(Self, Option<LatentCodec>, Value)> {
        Self::from_container(&Container::read(path)?, dtype, device)
    }
}

/// Null text for every item: one zero token.
pub fn null_text(batch: usize, cond_dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::zeros((batch, 1, cond_dim), dtype, device)?)
}

/// Stacks per-item token sequences `(T_i, C)` into a padded batch and its
/// key mask.
pub fn pad_text(items: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let max_t = items.iter().map(|t| t.dim(0)).collect::<candle_core::Result<Vec<_>>>()?.into_iter().max().unwrap_or(1);
    let mut padded = Vec::with_capacity(items.len());
    let mut mask = Vec::with_capacity(items.len() * max_t);
    for t in items {
        let (n, c) = t.dims2()?;
        let p = if n < max_t {
            Tensor::cat(&[t, &Tensor::zeros((max_t - n, c), t.dtype(), t.device())?], 0)?
        } else {
            t.clone()
        };
        padded.push(p);
        mask.extend((0..max_t).map(|i| if i < n { 1.0f32 } else { 0.0 }));
    }
    let device = items.first().map(|t| t.device().clone()).unwrap_or(Device::Cpu);
    Ok((
        Tensor::stack(&padded, 0)?,
        Tensor::from_vec(mask, (items.len(), max_t), &device)?,
    ))
}

//! Deterministic DDIM sampling with multi-condition guidance.

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{export_attention_maps, AttentionCapture, AttentionMap};
use crate::codec::AudioLatent;
use crate::conditioners::{AttributeConditions, ConditionMask};
use crate::dataio::TextEmbedding;
use crate::diffusion::model::{pad_text, Branch, DiffusionModel, ModelInput};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{compose, required_passes, Cond, ConditionSet, GuidanceScales};

/// How known reference frames enter the sampling loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SamplerMode {
    /// Reference frames reach the model only through the audio condition.
    #[default]
    Plain,
    /// After every step the kept frames are overwritten with the reference
    /// noised to the next time.
    NaiveMasking,
}

/// Known latent frames: `keep[i]` marks frame `i` of `latent` as given.
#[derive(Debug, Clone)]
pub struct Reference {
    pub latent: AudioLatent,
    pub keep: ConditionMask,
}

/// Attribute conditions and the per-condition visibility masks.
#[derive(Debug, Clone)]
pub struct AttrInput {
    pub conds: AttributeConditions,
    pub masks: [Option<ConditionMask>; 3],
}

#[derive(Debug, Clone)]
pub struct SampleRequest {
    pub n_frames: usize,
    pub text: TextEmbedding,
    pub attr: Option<AttrInput>,
    pub reference: Option<Reference>,
    /// Feed the reference to the audio adapter as a condition.
    pub audio_condition: bool,
    pub scales: GuidanceScales,
    pub steps: usize,
    pub seed: u64,
    pub mode: SamplerMode,
    /// Record attention maps of the fully conditioned pass at the last step.
    pub capture: bool,
}

impl SampleRequest {
    pub fn new(n_frames: usize, text: TextEmbedding) -> Self {
        Self {
            n_frames,
            text,
            attr: None,
            reference: None,
            audio_condition: false,
            scales: GuidanceScales::default(),
            steps: 50,
            seed: 0,
            mode: SamplerMode::Plain,
            capture: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latent: AudioLatent,
    pub attention: Vec<AttentionMap>,
}

/// One DDIM update from `t` to `t_next` given the velocity `v`.
pub fn ddim_step(x: &Tensor, v: &Tensor, t: f64, t_next: f64) -> Result<Tensor> {
    let s = NoiseSchedule;
    let (a, sg) = (s.alpha(t), s.sigma(t));
    let x0 = ((x * a)? - (v * sg)?)?;
    let eps = ((x * sg)? + (v * a)?)?;
    Ok(((x0 * s.alpha(t_next))? + (eps * s.sigma(t_next))?)?)
}

/// Runs `steps` DDIM updates from `x` at `t = 1` down to `t = 0`.
/// `velocity(x, t, step)` supplies the (guided) prediction and
/// `post(step, t_next, x)` may rewrite the state after each update.
pub fn integrate<V, P>(mut x: Tensor, steps: usize, mut velocity: V, mut post: P) -> Result<Tensor>
where
    V: FnMut(&Tensor, f64, usize) -> Result<Tensor>,
    P: FnMut(usize, f64, Tensor) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let grid = NoiseSchedule.grid(steps);
    for (i, w) in grid.windows(2).enumerate() {
        let v = velocity(&x, w[0], i)?;
        x = post(i, w[1], ddim_step(&x, &v, w[0], w[1])?)?;
    }
    Ok(x)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

/// Gaussian draw for sampler stream `stream` of `seed`.
fn noise(seed: u64, stream: u64, n: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    gaussian(&mut rng, n)
}

fn gate(on: &[bool], model: &DiffusionModel) -> Result<Tensor> {
    let v: Vec<f32> = on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, (on.len(), 1, 1), model.device())?.to_dtype(model.dtype())?)
}

/// Draws one latent of `req.n_frames` frames.
pub fn sample(model: &DiffusionModel, req: &SampleRequest) -> Result<SampleOutput> {
    req.scales.validate()?;
    let (m, a) = (req.n_frames, model.config.latent_channels);
    if m == 0 {
        return Err(Error::InvalidParameter("cannot sample zero frames".into()));
    }
    if req.text.width != model.config.cond_dim {
        return Err(Error::InvalidDimension(format!(
            "text width {} but model expects {}",
            req.text.width, model.config.cond_dim
        )));
    }
    if let Some(r) = &req.reference {
        if r.latent.n_frames != m || r.latent.channels != a || r.keep.len() != m {
            return Err(Error::InvalidDimension(format!(
                "reference {}x{} with mask of {} for a {m}x{a} sample",
                r.latent.n_frames,
                r.latent.channels,
                r.keep.len()
            )));
        }
    }
    let audio_ref = match (&req.reference, req.audio_condition) {
        (Some(r), true) => Some(r),
        (None, true) => return Err(Error::InvalidInput("audio condition requested without a reference".into())),
        _ => None,
    };

    let present = ConditionSet::new(!req.text.is_null(), req.attr.is_some(), audio_ref.is_some());
    let passes = required_passes(present);
    let k = passes.len();
    let (dtype, dev) = (model.dtype(), model.device());

    let own_text = req.text.to_tensor(dtype, dev)?.squeeze(0)?;
    let null = TextEmbedding::null(model.config.cond_dim).to_tensor(dtype, dev)?.squeeze(0)?;
    let texts: Vec<Tensor> = passes
        .iter()
        .map(|p| if p.contains(Cond::Text) { own_text.clone() } else { null.clone() })
        .collect();
    let (text, text_mask) = pad_text(&texts)?;
    let text_mask = text_mask.to_dtype(dtype)?;

    let gates = |c: Cond| passes.iter().map(|p| p.contains(c)).collect::<Vec<_>>();
    let attr = match &req.attr {
        Some(ai) => {
            let ms = [ai.masks[0].as_ref(), ai.masks[1].as_ref(), ai.masks[2].as_ref()];
            let f = model.attr_features(&ai.conds, ms, m)?;
            Some(Branch {
                features: f.repeat((k, 1, 1))?,
                gate: Some(gate(&gates(Cond::Attr), model)?),
            })
        }
        None => None,
    };
    let audio = match audio_ref {
        Some(r) => Some(Branch {
            features: model.audio_features(&r.latent, Some(&r.keep))?.repeat((k, 1, 1))?,
            gate: Some(gate(&gates(Cond::Audio), model)?),
        }),
        None => None,
    };

    let reference = match &req.reference {
        Some(r) => Some((
            Tensor::from_vec(r.latent.frames.clone(), (1, m, a), dev)?.to_dtype(dtype)?,
            Tensor::from_vec(r.keep.as_f32(), (1, m, 1), dev)?.to_dtype(dtype)?,
        )),
        None => None,
    };

    let x = Tensor::from_vec(noise(req.seed, 0, m * a), (1, m, a), dev)?.to_dtype(dtype)?;
    let mut capture = if req.capture {
        let mut c = AttentionCapture::enabled();
        c.set_item(k - 1);
        c
    } else {
        AttentionCapture::disabled()
    };
    let last = req.steps.saturating_sub(1);
    let velocity = |x: &Tensor, t: f64, step: usize| -> Result<Tensor> {
        let ts = vec![t; k];
        let xb = x.repeat((k, 1, 1))?;
        let input = ModelInput {
            x_t: &xb,
            t: &ts,
            text: &text,
            text_mask: Some(&text_mask),
            attr: attr.clone(),
            audio: audio.clone(),
        };
        let cap = (req.capture && step == last).then_some(&mut capture);
        let out = model.forward(&input, cap)?;
        let ests = (0..k).map(|i| out.narrow(0, i, 1)).collect::<candle_core::Result<Vec<_>>>()?;
        compose(&ests, &req.scales, present)
    };
    let s = NoiseSchedule;
    let post = |step: usize, t_next: f64, x: Tensor| -> Result<Tensor> {
        match (&reference, req.mode) {
            (Some((r, keep)), SamplerMode::NaiveMasking) => {
                let n = Tensor::from_vec(noise(req.seed, step as u64 + 1, m * a), (1, m, a), dev)?.to_dtype(dtype)?;
                let known = ((r * s.alpha(t_next))? + (n * s.sigma(t_next))?)?;
                Ok(keep.where_cond_f(&known, &x)?)
            }
            _ => Ok(x),
        }
    };
    let mut x = integrate(x, req.steps, velocity, post)?;
    if let Some((r, keep)) = &reference {
        x = keep.where_cond_f(r, &x)?;
    }
    let frames: Vec<f32> = x.squeeze(0)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let mut latent = req.reference.as_ref().map_or_else(|| AudioLatent::zeros(m, a), |r| r.latent.clone());
    latent.frames = frames;
    Ok(SampleOutput {
        latent,
        attention: if req.capture {
            export_attention_maps(&capture)?
        } else {
            Vec::new()
        },
    })
}

trait WhereF {
    fn where_cond_f(&self, on_true: &Tensor, on_false: &Tensor) -> Result<Tensor>;
}

impl WhereF for Tensor {
    /// Frame selection by a 0/1 mask broadcast over channels.
    fn where_cond_f(&self, on_true: &Tensor, on_false: &Tensor) -> Result<Tensor> {
        let m = self.broadcast_as(on_true.shape())?.ne(0.0)?;
        Ok(m.where_cond(on_true, on_false)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AdapterKind;
    use crate::diffusion::config::ModelConfig;
    use candle_core::Device;

    fn vec1(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
    }

    #[test]
    fn ddim_matches_hand_computation() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[0.8f64, -0.3], &dev).unwrap();
        let v = Tensor::new(&[0.1f64, 0.5], &dev).unwrap();
        let (t, tn) = (0.6, 0.35);
        let s = NoiseSchedule;
        let got = vec1(&ddim_step(&x, &v, t, tn).unwrap());
        for (i, (xv, vv)) in [(0.8, 0.1), (-0.3, 0.5)].into_iter().enumerate() {
            let x0 = s.alpha(t) * xv - s.sigma(t) * vv;
            let e = s.sigma(t) * xv + s.alpha(t) * vv;
            assert!((got[i] - (s.alpha(tn) * x0 + s.sigma(tn) * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_from_pure_noise_returns_minus_velocity() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[1.5f32, -2.0, 0.25], &dev).unwrap();
        let out = integrate(
            x,
            1,
            |x, t, _| {
                assert_eq!(t, 1.0);
                Ok((x * 0.5)?)
            },
            |_, _, x| Ok(x),
        )
        .unwrap();
        for (g, w) in vec1(&out).into_iter().zip([-0.75, 1.0, -0.125]) {
            assert!((g - w).abs() < 1e-4);
        }
    }

    #[test]
    fn exact_velocity_recovers_clean_signal() {
        // For x_t = alpha x0 + sigma eps the true velocity is alpha eps - sigma x0.
        let dev = Device::Cpu;
        let x0 = Tensor::new(&[0.3f64, -1.2, 2.0], &dev).unwrap();
        let eps = Tensor::new(&[1.0f64, 0.4, -0.6], &dev).unwrap();
        let s = NoiseSchedule;
        let out = integrate(
            eps.clone(),
            7,
            |_, t, _| Ok(((&eps * s.alpha(t))? - (&x0 * s.sigma(t))?)?),
            |_, _, x| Ok(x),
        )
        .unwrap();
        for (g, w) in vec1(&out).into_iter().zip(vec1(&x0)) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    fn tiny_model() -> DiffusionModel {
        let cfg = ModelConfig {
            blocks: 1,
            model_dim: 16,
            cond_dim: 12,
            head_count: 2,
            mlp_ratio: 2,
            latent_channels: 4,
            melody_channels: 6,
            ..Default::default()
        };
        let mut m = DiffusionModel::new(cfg, 3, DType::F32, &Device::Cpu).unwrap();
        m.add_adapter(AdapterKind::Audio, 4).unwrap();
        m
    }

    fn reference(m: usize) -> Reference {
        let mut latent = AudioLatent::zeros(m, 4);
        for (i, v) in latent.frames.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin();
        }
        Reference {
            latent,
            keep: ConditionMask::new((0..m).map(|i| i < m / 2).collect()),
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = tiny_model();
        let mut req = SampleRequest::new(6, crate::dataio::encode_text("a tune", 12));
        req.steps = 4;
        req.seed = 9;
        let a = sample(&model, &req).unwrap().latent;
        assert_eq!(a, sample(&model, &req).unwrap().latent);
        req.seed = 10;
        assert_ne!(a, sample(&model, &req).unwrap().latent);
    }

    #[test]
    fn kept_frames_are_restored_in_every_mode() {
        let model = tiny_model();
        for (mode, cond) in [
            (SamplerMode::Plain, true),
            (SamplerMode::NaiveMasking, false),
            (SamplerMode::Plain, false),
        ] {
            let r = reference(8);
            let mut req = SampleRequest::new(8, TextEmbedding::null(12));
            req.steps = 3;
            req.mode = mode;
            req.audio_condition = cond;
            req.reference = Some(r.clone());
            let out = sample(&model, &req).unwrap().latent;
            for i in 0..4 {
                assert_eq!(out.frame(i), r.latent.frame(i));
            }
            assert_ne!(out.frame(6), r.latent.frame(6));
        }
    }

    #[test]
    fn naive_keep_all_is_exact() {
        let model = tiny_model();
        let mut r = reference(5);
        r.keep = ConditionMask::all(5);
        let mut req = SampleRequest::new(5, TextEmbedding::null(12));
        req.mode = SamplerMode::NaiveMasking;
        req.steps = 2;
        req.reference = Some(r.clone());
        assert_eq!(sample(&model, &req).unwrap().latent.frames, r.latent.frames);
    }

    #[test]
    fn capture_records_last_pass_only() {
        let model = tiny_model();
        let mut req = SampleRequest::new(6, crate::dataio::encode_text("x", 12));
        req.steps = 3;
        req.reference = Some(reference(6));
        req.audio_condition = true;
        req.capture = true;
        let maps = sample(&model, &req).unwrap().attention;
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.kind == AdapterKind::Audio && m.rows == 6));
    }

    #[test]
    fn rejects_bad_requests() {
        let model = tiny_model();
        let mut req = SampleRequest::new(6, TextEmbedding::null(12));
        req.steps = 0;
        assert!(sample(&model, &req).is_err());
        req.steps = 2;
        req.audio_condition = true;
        assert!(matches!(sample(&model, &req), Err(Error::InvalidInput(_))));
        let bad = SampleRequest::new(6, TextEmbedding::null(5));
        assert!(matches!(sample(&model, &bad), Err(Error::InvalidDimension(_))));
    }
}

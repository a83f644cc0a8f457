//! Trainable 1-D convolution stacks that lift each condition to `C_r / 3`
//! channels, and the interpolation onto the query grid.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;

use crate::conditioners::{AttributeConditions, Condition, ConditionKind, ConditionMask};
use crate::dsp::interpolation_weights;
use crate::error::{Error, Result};
use crate::nn::{linear, randn, zeros, Param};

/// Two kernel-3 convolutions with a SiLU between them and a per-frame RMS
/// normalization, or (as an ablation)
/// a fixed random linear projection.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub in_channels: usize,
    pub out_channels: usize,
    layers: Vec<(Param, Param)>,
    pub nonlinear: bool,
    projection: bool,
}

/// `(B, L, C) -> (B, L, 3C)`: each frame with its zero-padded neighbours.
fn unfold3(x: &Tensor) -> Result<Tensor> {
    let (b, l, c) = x.dims3()?;
    let pad = Tensor::zeros((b, 1, c), x.dtype(), x.device())?;
    let padded = Tensor::cat(&[&pad, x, &pad], 1)?;
    Ok(Tensor::cat(
        &[padded.narrow(1, 0, l)?, padded.narrow(1, 1, l)?, padded.narrow(1, 2, l)?],
        2,
    )?)
}

impl ConvStack {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let mut layer = |i: usize, o: usize| -> Result<(Param, Param)> {
            Ok((
                Param::new(randn(rng, &[3 * i, o], (3.0 * i as f64).powf(-0.5), dtype, device)?)?,
                Param::new(zeros(&[o], dtype, device)?)?,
            ))
        };
        let layers = vec![layer(in_channels, hidden)?, layer(hidden, out_channels)?];
        Ok(Self {
            in_channels,
            out_channels,
            layers,
            nonlinear: true,
            projection: false,
        })
    }

    /// A frozen random `in -> out` projection standing in for the learned
    /// extractor.
    pub fn projection<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let w = Param::new(randn(rng, &[in_channels, out_channels], (in_channels as f64).powf(-0.5), dtype, device)?)?;
        let b = Param::new(zeros(&[out_channels], dtype, device)?)?;
        Ok(Self {
            in_channels,
            out_channels,
            layers: vec![(w, b)],
            nonlinear: false,
            projection: true,
        })
    }

    pub fn is_projection(&self) -> bool {
        self.projection
    }

    /// `(B, L, in) -> (B, L, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.projection {
            let (w, b) = &self.layers[0];
            return linear(x, &w.t(), Some(&b.t()));
        }
        let mut h = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = linear(&unfold3(&h)?, &w.t(), Some(&b.t()))?;
            if i + 1 < self.layers.len() && self.nonlinear {
                h = candle_nn::ops::silu(&h)?;
            }
        }
        if !self.nonlinear {
            return Ok(h);
        }
        // unit RMS per frame; sparse inputs otherwise yield tiny features
        let rms = (h.sqr()?.mean_keepdim(D::Minus1)? + 1e-6)?.sqrt()?;
        Ok(h.broadcast_div(&rms)?)
    }

    /// Named parameters; the projection ablation exposes none so it is
    /// never trained.
    pub fn params(&self) -> Vec<(String, &Param)> {
        if self.projection {
            return Vec::new();
        }
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| [(format!("conv{i}.weight"), w), (format!("conv{i}.bias"), b)])
            .collect()
    }

    /// All tensors including frozen ones, for checkpoints.
    pub fn state(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| [(format!("layer{i}.weight"), w), (format!("layer{i}.bias"), b)])
            .collect()
    }

    pub fn set_trainable(&self, on: bool) {
        for (_, p) in self.params() {
            p.set_trainable(on);
        }
    }
}

/// One extractor per attribute condition.
#[derive(Debug, Clone)]
pub struct AttributeExtractors {
    pub cond_dim: usize,
    pub melody: ConvStack,
    pub dynamics: ConvStack,
    pub rhythm: ConvStack,
}

impl AttributeExtractors {
    pub fn new<R: Rng>(
        rng: &mut R,
        melody_channels: usize,
        cond_dim: usize,
        fixed_projection: bool,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if cond_dim == 0 || cond_dim % 3 != 0 {
            return Err(Error::Config(format!("condition width {cond_dim} is not divisible by 3")));
        }
        let w = cond_dim / 3;
        let mut make = |c: usize| {
            if fixed_projection {
                ConvStack::projection(rng, c, w, dtype, device)
            } else {
                ConvStack::new(rng, c, w, w, dtype, device)
            }
        };
        Ok(Self {
            cond_dim,
            melody: make(melody_channels)?,
            dynamics: make(1)?,
            rhythm: make(2)?,
        })
    }

    pub fn get(&self, kind: ConditionKind) -> &ConvStack {
        match kind {
            ConditionKind::Melody => &self.melody,
            ConditionKind::Dynamics => &self.dynamics,
            ConditionKind::Rhythm => &self.rhythm,
        }
    }

    pub fn set_nonlinear(&mut self, on: bool) {
        for s in [&mut self.melody, &mut self.dynamics, &mut self.rhythm] {
            if !s.is_projection() {
                s.nonlinear = on;
            }
        }
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        ConditionKind::ALL
            .into_iter()
            .flat_map(|k| {
                self.get(k)
                    .params()
                    .into_iter()
                    .map(move |(n, p)| (format!("{}.{n}", k.as_str()), p))
            })
            .collect()
    }

    pub fn state(&self) -> Vec<(String, &Param)> {
        ConditionKind::ALL
            .into_iter()
            .flat_map(|k| {
                self.get(k)
                    .state()
                    .into_iter()
                    .map(move |(n, p)| (format!("{}.{n}", k.as_str()), p))
            })
            .collect()
    }

    pub fn set_trainable(&self, on: bool) {
        for s in [&self.melody, &self.dynamics, &self.rhythm] {
            s.set_trainable(on);
        }
    }
}

/// `(target, source)` linear interpolation matrix.
pub fn interpolation_matrix(source: usize, target: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0.0f32; target * source];
    for (j, (lo, hi, frac)) in interpolation_weights(source, target).into_iter().enumerate() {
        m[j * source + lo] += 1.0 - frac;
        m[j * source + hi] += frac;
    }
    Ok(Tensor::from_vec(m, (target, source), device)?.to_dtype(dtype)?)
}

/// Masks, extracts and stretches one condition to `(1, m, width)`.
pub fn featurize_one(
    stack: &ConvStack,
    cond: &Condition,
    mask: Option<&ConditionMask>,
    m: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    if cond.channels != stack.in_channels {
        return Err(Error::InvalidDimension(format!(
            "{} condition has {} channels, extractor expects {}",
            cond.kind.as_str(),
            cond.channels,
            stack.in_channels
        )));
    }
    let cond = match mask {
        Some(mask) => cond.masked(mask)?,
        None => cond.clone(),
    };
    let x = Tensor::from_vec(cond.data, (1, cond.n_frames, cond.channels), device)?.to_dtype(dtype)?;
    let h = stack.forward(&x)?;
    let interp = interpolation_matrix(cond.n_frames, m, dtype, device)?;
    Ok(interp.unsqueeze(0)?.matmul(&h)?)
}

/// The attribute sequence `(1, m, C_r)`: melody, dynamics and rhythm
/// features side by side. Absent conditions contribute zeros.
pub fn featurize(
    ex: &AttributeExtractors,
    conds: &AttributeConditions,
    masks: [Option<&ConditionMask>; 3],
    m: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let w = ex.cond_dim / 3;
    let parts = ConditionKind::ALL
        .into_iter()
        .zip(masks)
        .map(|(kind, mask)| match conds.get(kind) {
            Some(c) => featurize_one(ex.get(kind), c, mask, m, dtype, device),
            None => Ok(Tensor::zeros((1, m, w), dtype, device)?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conds(rng: &mut ChaCha8Rng, n: [usize; 3]) -> AttributeConditions {
        let mut mk = |kind, c: usize, len: usize| {
            Condition::new(kind, c, 10.0, (0..len * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        AttributeConditions {
            melody: Some(mk(ConditionKind::Melody, 128, n[0])),
            dynamics: Some(mk(ConditionKind::Dynamics, 1, n[1])),
            rhythm: Some(mk(ConditionKind::Rhythm, 2, n[2])),
        }
    }

    fn extractors(seed: u64) -> AttributeExtractors {
        AttributeExtractors::new(&mut ChaCha8Rng::seed_from_u64(seed), 128, 24, false, DType::F64, &Device::Cpu).unwrap()
    }

    #[test]
    fn width_must_divide_by_three() {
        let r = AttributeExtractors::new(&mut ChaCha8Rng::seed_from_u64(0), 128, 25, false, DType::F32, &Device::Cpu);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn fully_masked_gives_zeros() {
        let ex = extractors(1);
        let c = conds(&mut ChaCha8Rng::seed_from_u64(2), [30, 30, 60]);
        let (m0, m1, m2) = (ConditionMask::none(30), ConditionMask::none(30), ConditionMask::none(60));
        let y = featurize(&ex, &c, [Some(&m0), Some(&m1), Some(&m2)], 17, DType::F64, &Device::Cpu).unwrap();
        let v: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_condition_gives_constant_features() {
        let ex = extractors(3);
        let c = Condition::new(ConditionKind::Dynamics, 1, 10.0, vec![-12.0; 40]).unwrap();
        let y = featurize_one(&ex.dynamics, &c, None, 100, DType::F64, &Device::Cpu).unwrap();
        let rows: Vec<Vec<f64>> = y.squeeze(0).unwrap().to_vec2().unwrap();
        // the convolution edge frames see zero padding; interior ones agree
        let mid = &rows[50];
        for r in &rows[10..90] {
            for (a, b) in r.iter().zip(mid) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_sequence_interpolates_to_constant() {
        let m = interpolation_matrix(37, 101, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::full(2.5f64, (37, 4), &Device::Cpu).unwrap();
        let y: Vec<f64> = m.matmul(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn absent_condition_fills_its_slot_with_zeros() {
        let ex = extractors(4);
        let mut c = conds(&mut ChaCha8Rng::seed_from_u64(5), [20, 20, 40]);
        c.dynamics = None;
        let y = featurize(&ex, &c, [None; 3], 9, DType::F64, &Device::Cpu).unwrap();
        let slot: Vec<f64> = y.narrow(2, 8, 8).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(slot.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shape_is_m_by_width(n0 in 1usize..60, n1 in 1usize..60, n2 in 1usize..120, m in 1usize..80) {
            let ex = extractors(6);
            let c = conds(&mut ChaCha8Rng::seed_from_u64(7), [n0, n1, n2]);
            let y = featurize(&ex, &c, [None; 3], m, DType::F64, &Device::Cpu).unwrap();
            prop_assert_eq!(y.dims(), &[1, m, 24]);
        }

        #[test]
        fn linear_without_nonlinearity(seed in any::<u64>(), m in 1usize..50) {
            let mut ex = extractors(8);
            ex.set_nonlinear(false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = conds(&mut rng, [25, 25, 50]);
            let b = conds(&mut rng, [25, 25, 50]);
            let mut sum = a.clone();
            for kind in ConditionKind::ALL {
                let (x, y) = (a.get(kind).unwrap(), b.get(kind).unwrap());
                let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
                sum.set(Condition::new(kind, x.channels, x.frame_rate, data).unwrap());
            }
            let f = |c: &AttributeConditions| -> Vec<f64> {
                featurize(&ex, c, [None; 3], m, DType::F64, &Device::Cpu).unwrap().flatten_all().unwrap().to_vec1().unwrap()
            };
            let (fa, fb, fs) = (f(&a), f(&b), f(&sum));
            for i in 0..fs.len() {
                prop_assert!((fs[i] - fa[i] - fb[i]).abs() < 1e-5);
            }
        }
    }
}

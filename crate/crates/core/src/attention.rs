//! Frozen text cross-attention, rotary decoupled cross-attention adapters and
//! the zero-initialized combiner that merges their outputs.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Param};
use crate::rope::{RopeTable, RotationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Attribute,
    Audio,
}

impl AdapterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::Attribute => "attr",
            AdapterKind::Audio => "audio",
        }
    }
}

/// The text cross-attention projections of one backbone block. Never trained
/// once the backbone is frozen.
#[derive(Debug, Clone)]
pub struct FrozenAttentionWeights {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    head_count: usize,
}

impl FrozenAttentionWeights {
    pub fn new<R: Rng>(
        rng: &mut R,
        model_dim: usize,
        cond_dim: usize,
        inner_dim: usize,
        head_count: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        check_heads(inner_dim, head_count)?;
        let wq = nn::randn(rng, &[model_dim, inner_dim], (model_dim as f64).powf(-0.5), dtype, device)?;
        let wk = nn::randn(rng, &[cond_dim, inner_dim], (cond_dim as f64).powf(-0.5), dtype, device)?;
        let wv = nn::randn(rng, &[cond_dim, inner_dim], (cond_dim as f64).powf(-0.5), dtype, device)?;
        Self::from_params(Param::new(wq)?, Param::new(wk)?, Param::new(wv)?, head_count)
    }

    pub fn from_params(wq: Param, wk: Param, wv: Param, head_count: usize) -> Result<Self> {
        let inner = wq.dims()[1];
        check_heads(inner, head_count)?;
        if wk.dims()[1] != inner || wv.dims() != wk.dims() {
            return Err(Error::InvalidDimension(format!(
                "projection shapes disagree: q {:?}, k {:?}, v {:?}",
                wq.dims(),
                wk.dims(),
                wv.dims()
            )));
        }
        Ok(Self { wq, wk, wv, head_count })
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn inner_dim(&self) -> usize {
        self.wq.dims()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.inner_dim() / self.head_count
    }

    pub fn query_dim(&self) -> usize {
        self.wq.dims()[0]
    }

    pub fn cond_dim(&self) -> usize {
        self.wk.dims()[0]
    }

    pub fn params(&self) -> [(&'static str, &Param); 3] {
        [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)]
    }
}

fn check_heads(inner: usize, heads: usize) -> Result<()> {
    if heads == 0 || inner % heads != 0 || (inner / heads) % 2 != 0 {
        return Err(Error::InvalidDimension(format!(
            "attention width {inner} must split into {heads} heads of even size"
        )));
    }
    Ok(())
}

/// Pointwise (kernel size 1) convolution over time, zero at initialization.
#[derive(Debug, Clone)]
pub struct Combiner {
    pub weight: Param,
    pub bias: Param,
}

impl Combiner {
    pub fn zeros(channels: usize, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            weight: Param::new(nn::zeros(&[channels, channels], dtype, device)?)?,
            bias: Param::new(nn::zeros(&[channels], dtype, device)?)?,
        })
    }

    /// A combiner that passes its input through unchanged.
    pub fn identity(channels: usize, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            weight: Param::new(Tensor::eye(channels, dtype, device)?)?,
            bias: Param::new(nn::zeros(&[channels], dtype, device)?)?,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        nn::linear(x, &self.weight.t(), Some(&self.bias.t()))
    }
}

/// Trainable key/value projections of one decoupled cross-attention layer,
/// plus the combiner that injects its output.
#[derive(Debug, Clone)]
pub struct AdapterSet {
    pub kind: AdapterKind,
    pub wk: Param,
    pub wv: Param,
    pub combiner: Combiner,
    head_groups: usize,
}

impl AdapterSet {
    /// Copies `W^k`, `W^v` from the frozen text attention. With
    /// `double_heads` the copies are tiled so that the decoupled path runs
    /// twice as many heads of the same width.
    pub fn from_frozen(kind: AdapterKind, frozen: &FrozenAttentionWeights, double_heads: bool) -> Result<Self> {
        let head_groups = if double_heads { 2 } else { 1 };
        let tile = |p: &Param| -> Result<Param> {
            let t = p.var().as_tensor().detach();
            let t = if head_groups == 2 { Tensor::cat(&[&t, &t], 1)? } else { t.copy()? };
            Param::new(t)
        };
        let inner = frozen.inner_dim();
        let w = frozen.wq.var().as_tensor();
        Ok(Self {
            kind,
            wk: tile(&frozen.wk)?,
            wv: tile(&frozen.wv)?,
            combiner: Combiner::zeros(inner, w.dtype(), w.device())?,
            head_groups,
        })
    }

    pub fn head_groups(&self) -> usize {
        self.head_groups
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("combiner.weight", &self.combiner.weight),
            ("combiner.bias", &self.combiner.bias),
        ]
    }

    pub fn set_trainable(&self, on: bool) {
        for (_, p) in self.params() {
            p.set_trainable(on);
        }
    }
}

/// Post-softmax attention probabilities of one decoupled head for one batch
/// element.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer_index: usize,
    pub head_index: usize,
    pub kind: AdapterKind,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
}

impl AttentionMap {
    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.cols..(m + 1) * self.cols]
    }

    /// Mean over rows of the probability mass within `band` of the
    /// (proportionally scaled) diagonal.
    pub fn diagonal_mass(&self, band: usize) -> f64 {
        let mut total = 0.0;
        for m in 0..self.rows {
            let centre = m as f64 * self.cols as f64 / self.rows as f64;
            let row = self.row(m);
            for (n, &p) in row.iter().enumerate() {
                if (n as f64 - centre).abs() <= band as f64 {
                    total += p as f64;
                }
            }
        }
        total / self.rows as f64
    }
}

/// Collects attention maps during a forward pass when enabled.
#[derive(Debug, Default)]
pub struct AttentionCapture {
    enabled: bool,
    layer: usize,
    item: usize,
    maps: Vec<AttentionMap>,
}

impl AttentionCapture {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_layer(&mut self, layer: usize) {
        self.layer = layer;
    }

    pub fn clear(&mut self) {
        self.maps.clear();
    }

    /// Records batch element `item` (clamped to the batch) instead of the
    /// first one.
    pub fn set_item(&mut self, item: usize) {
        self.item = item;
    }

    fn record(&mut self, kind: AdapterKind, probs: &Tensor) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        // probs: (B, H, M, N)
        let (b, heads, rows, cols) = probs.dims4()?;
        let first = probs.get(self.item.min(b - 1))?.to_dtype(DType::F32)?;
        for h in 0..heads {
            let weights: Vec<f32> = first.get(h)?.flatten_all()?.to_vec1()?;
            self.maps.push(AttentionMap {
                layer_index: self.layer,
                head_index: h,
                kind,
                rows,
                cols,
                weights,
            });
        }
        Ok(())
    }
}

/// Returns the maps captured so far.
pub fn export_attention_maps(capture: &AttentionCapture) -> Result<Vec<AttentionMap>> {
    if !capture.enabled || capture.maps.is_empty() {
        return Err(Error::NotCaptured);
    }
    Ok(capture.maps.clone())
}

/// Options of the decoupled path. `rope: None` disables rotation entirely.
#[derive(Debug, Clone)]
pub struct DecoupledOptions {
    pub rope: Option<RotationSpec>,
    pub rotate_values: bool,
}

/// Key/value positions for `n` condition tokens laid over a timeline of `m`
/// query frames: token `i` sits at `round(i * m / n)`.
pub fn condition_positions(n: usize, m: usize) -> Vec<usize> {
    (0..n)
        .map(|i| ((i as f64) * m as f64 / n as f64).round() as usize)
        .collect()
}

pub(crate) fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, len, width) = x.dims3()?;
    Ok(x.reshape((b, len, heads, width / heads))?.transpose(1, 2)?.contiguous()?)
}

pub(crate) fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, heads, len, d) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, len, heads * d))?)
}

/// Scaled dot-product attention over `(B, H, len, d)` tensors. Returns the
/// output and the probabilities.
pub(crate) fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    attend_biased(q, k, v, None)
}

/// As [`attend`], with an additive score bias broadcast from `(B, 1, 1, N)`.
fn attend_biased(q: &Tensor, k: &Tensor, v: &Tensor, bias: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let d = q.dim(D::Minus1)?;
    let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (d as f64).sqrt())?;
    if let Some(b) = bias {
        scores = scores.broadcast_add(b)?;
    }
    let probs = nn::softmax_last(&scores)?;
    let out = probs.matmul(v)?;
    Ok((out, probs))
}

fn check_input(x: &Tensor, width: usize, what: &str) -> Result<()> {
    let dims = x.dims();
    if dims.len() != 3 || dims[2] != width {
        return Err(Error::InvalidDimension(format!(
            "{what} must be (batch, length, {width}), got {dims:?}"
        )));
    }
    Ok(())
}

/// `Attention(x W^q, c W^k, c W^v)` with no positional rotation.
///
/// `x`: `(B, M, query_dim)`, `c_text`: `(B, T, cond_dim)`; returns
/// `(B, M, inner_dim)`.
pub fn text_cross_attention(w: &FrozenAttentionWeights, x: &Tensor, c_text: &Tensor) -> Result<Tensor> {
    text_cross_attention_masked(w, x, c_text, None)
}

/// Text cross-attention over a padded batch. `key_mask` is `(B, T)` with 1
/// for real tokens and 0 for padding; every row needs at least one real
/// token.
pub fn text_cross_attention_masked(
    w: &FrozenAttentionWeights,
    x: &Tensor,
    c_text: &Tensor,
    key_mask: Option<&Tensor>,
) -> Result<Tensor> {
    check_input(x, w.query_dim(), "hidden sequence")?;
    check_input(c_text, w.cond_dim(), "text condition")?;
    if x.dim(1)? == 0 || c_text.dim(1)? == 0 {
        return Err(Error::InvalidInput("empty hidden or text sequence".into()));
    }
    if x.dim(0)? != c_text.dim(0)? {
        return Err(Error::InvalidDimension("batch sizes differ".into()));
    }
    let h = w.head_count();
    let q = split_heads(&nn::linear(x, &w.wq.t(), None)?, h)?;
    let k = split_heads(&nn::linear(c_text, &w.wk.t(), None)?, h)?;
    let v = split_heads(&nn::linear(c_text, &w.wv.t(), None)?, h)?;
    let bias = match key_mask {
        Some(m) => {
            let (b, t) = m.dims2()?;
            if b != x.dim(0)? || t != c_text.dim(1)? {
                return Err(Error::InvalidDimension(format!("key mask {:?} does not match text {:?}", m.dims(), c_text.dims())));
            }
            // 0 for real tokens, -1e9 for padding
            let bias = ((m.to_dtype(x.dtype())? - 1.0)? * 1e9)?;
            Some(bias.reshape((b, 1, 1, t))?)
        }
        None => None,
    };
    let (out, _) = attend_biased(&q, &k, &v, bias.as_ref())?;
    merge_heads(&out)
}

/// Decoupled cross-attention of the hidden sequence `x` against a
/// time-varying condition `c`:
/// `q_m = R_m W^q x_m`, `k_n = R_n W'^k c_n`, `v_n = R_n W'^v c_n`.
///
/// An empty condition (`N == 0`) yields zeros, which is how a dropped
/// condition is represented.
pub fn decoupled_cross_attention(
    w: &FrozenAttentionWeights,
    a: &AdapterSet,
    opts: &DecoupledOptions,
    x: &Tensor,
    c: &Tensor,
    capture: Option<&mut AttentionCapture>,
) -> Result<Tensor> {
    check_input(x, w.query_dim(), "hidden sequence")?;
    if a.wk.dims()[0] != c.dim(D::Minus1)? || c.rank() != 3 {
        return Err(Error::InvalidDimension(format!(
            "condition must be (batch, length, {}), got {:?}",
            a.wk.dims()[0],
            c.dims()
        )));
    }
    let (b, m, _) = x.dims3()?;
    let n = c.dim(1)?;
    let inner = w.inner_dim();
    if n == 0 {
        return Ok(Tensor::zeros((b, m, inner), x.dtype(), x.device())?);
    }
    if c.dim(0)? != b {
        return Err(Error::InvalidDimension("batch sizes differ".into()));
    }
    let groups = a.head_groups();
    let heads = w.head_count() * groups;
    let q = nn::linear(x, &w.wq.t(), None)?;
    let q = if groups > 1 {
        Tensor::cat(&vec![&q; groups], D::Minus1)?
    } else {
        q
    };
    let mut q = split_heads(&q, heads)?;
    let mut k = split_heads(&nn::linear(c, &a.wk.t(), None)?, heads)?;
    let mut v = split_heads(&nn::linear(c, &a.wv.t(), None)?, heads)?;
    if let Some(spec) = &opts.rope {
        if spec.dim() != w.head_dim() {
            return Err(Error::InvalidDimension(format!(
                "rotary dimension {} differs from head dimension {}",
                spec.dim(),
                w.head_dim()
            )));
        }
        let q_pos: Vec<usize> = (0..m).collect();
        let k_pos = condition_positions(n, m);
        let q_table: RopeTable = spec.table(&q_pos, x.dtype(), x.device())?;
        let k_table = spec.table(&k_pos, x.dtype(), x.device())?;
        q = q_table.apply(&q)?;
        k = k_table.apply(&k)?;
        if opts.rotate_values {
            v = k_table.apply(&v)?;
        }
    }
    let (out, probs) = attend(&q, &k, &v)?;
    if let Some(cap) = capture {
        cap.record(a.kind, &probs)?;
    }
    let out = merge_heads(&out)?;
    if groups > 1 {
        Ok(out.reshape((b, m, groups, inner))?.mean(2)?)
    } else {
        Ok(out)
    }
}

/// How adapter outputs are merged into the text cross-attention output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineMode {
    /// `x_text + Z_attr(x_attr) + Z_audio(x_audio)`.
    #[default]
    PerBranch,
    /// `Z(x_text + x_attr + x_audio)` using the first present branch's
    /// combiner. Zero at initialization, so the frozen output is lost.
    Literal,
    /// `x_text + x_attr + x_audio` with no convolution.
    NoConv,
}

/// An adapter branch with an optional per-sample gate of shape `(B, 1, 1)`.
/// A zero gate removes the branch for that sample entirely.
pub struct GatedBranch<'a> {
    pub output: &'a Tensor,
    pub combiner: &'a Combiner,
    pub gate: Option<&'a Tensor>,
}

fn gated(x: Tensor, gate: Option<&Tensor>) -> Result<Tensor> {
    Ok(match gate {
        Some(g) => x.broadcast_mul(g)?,
        None => x,
    })
}

/// [`combine`] with per-sample branch gates.
pub fn combine_gated(x_text: &Tensor, branches: &[GatedBranch], mode: CombineMode) -> Result<Tensor> {
    for b in branches {
        if b.output.dims() != x_text.dims() {
            return Err(Error::InvalidDimension(format!(
                "adapter output {:?} does not match text output {:?}",
                b.output.dims(),
                x_text.dims()
            )));
        }
    }
    let mut out = x_text.clone();
    match mode {
        CombineMode::PerBranch => {
            for b in branches {
                out = (out + gated(b.combiner.apply(b.output)?, b.gate)?)?;
            }
            Ok(out)
        }
        CombineMode::NoConv => {
            for b in branches {
                out = (out + gated(b.output.clone(), b.gate)?)?;
            }
            Ok(out)
        }
        CombineMode::Literal => {
            for b in branches {
                out = (out + gated(b.output.clone(), b.gate)?)?;
            }
            match branches.first() {
                Some(b) => b.combiner.apply(&out),
                None => Ok(out),
            }
        }
    }
}

/// Merges the text path with the optional adapter branches.
pub fn combine(
    x_text: &Tensor,
    attr: Option<(&Tensor, &Combiner)>,
    audio: Option<(&Tensor, &Combiner)>,
    mode: CombineMode,
) -> Result<Tensor> {
    let branches: Vec<GatedBranch> = attr
        .into_iter()
        .chain(audio)
        .map(|(output, combiner)| GatedBranch {
            output,
            combiner,
            gate: None,
        })
        .collect();
    combine_gated(x_text, &branches, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::build_angles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DEV: Device = Device::Cpu;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        nn::randn(rng, shape, 1.0, DType::F32, &DEV).unwrap()
    }

    fn weights(rng: &mut ChaCha8Rng, model: usize, cond: usize, inner: usize, heads: usize) -> FrozenAttentionWeights {
        FrozenAttentionWeights::new(rng, model, cond, inner, heads, DType::F32, &DEV).unwrap()
    }

    fn rows(t: &Tensor) -> Vec<Vec<f32>> {
        t.get(0).unwrap().to_vec2().unwrap()
    }

    #[test]
    fn rejects_odd_head_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FrozenAttentionWeights::new(&mut rng, 8, 8, 6, 2, DType::F32, &DEV).is_err());
        assert!(FrozenAttentionWeights::new(&mut rng, 8, 8, 8, 3, DType::F32, &DEV).is_err());
    }

    #[test]
    fn single_text_token_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = weights(&mut rng, 6, 4, 8, 2);
        let x = rand_tensor(&mut rng, &[1, 5, 6]);
        let c = rand_tensor(&mut rng, &[1, 1, 4]);
        let out = rows(&text_cross_attention(&w, &x, &c).unwrap());
        let value = rows(&nn::linear(&c, &w.wv.t(), None).unwrap())[0].clone();
        for r in out {
            for (a, b) in r.iter().zip(&value) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = weights(&mut rng, 6, 4, 8, 2);
        let row = rand_tensor(&mut rng, &[1, 1, 6]);
        let x = Tensor::cat(&[&row, &row, &row], 1).unwrap();
        let c = rand_tensor(&mut rng, &[1, 7, 4]);
        let out = rows(&text_cross_attention(&w, &x, &c).unwrap());
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
    }

    #[test]
    fn text_attention_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = weights(&mut rng, 6, 4, 8, 2);
        let x = rand_tensor(&mut rng, &[1, 3, 6]);
        let empty = Tensor::zeros((1, 0, 4), DType::F32, &DEV).unwrap();
        assert!(matches!(text_cross_attention(&w, &x, &empty), Err(Error::InvalidInput(_))));
        let wrong = rand_tensor(&mut rng, &[1, 2, 5]);
        assert!(matches!(text_cross_attention(&w, &x, &wrong), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn empty_condition_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = weights(&mut rng, 6, 8, 8, 2);
        let a = AdapterSet::from_frozen(AdapterKind::Attribute, &w, false).unwrap();
        let opts = DecoupledOptions { rope: Some(build_angles(4, 1e4).unwrap()), rotate_values: true };
        let x = rand_tensor(&mut rng, &[2, 3, 6]);
        let empty = Tensor::zeros((2, 0, 8), DType::F32, &DEV).unwrap();
        let out = decoupled_cross_attention(&w, &a, &opts, &x, &empty, None).unwrap();
        assert_eq!(out.dims(), &[2, 3, 8]);
        assert_eq!(out.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn single_condition_token_returns_rotated_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (heads, d) = (2, 4);
        let w = weights(&mut rng, 6, 8, heads * d, heads);
        let a = AdapterSet::from_frozen(AdapterKind::Attribute, &w, false).unwrap();
        let spec = build_angles(d, 1e4).unwrap();
        let opts = DecoupledOptions { rope: Some(spec.clone()), rotate_values: true };
        let x = rand_tensor(&mut rng, &[1, 4, 6]);
        let c = rand_tensor(&mut rng, &[1, 1, 8]);
        let out = rows(&decoupled_cross_attention(&w, &a, &opts, &x, &c, None).unwrap());
        let value = rows(&nn::linear(&c, &a.wv.t(), None).unwrap())[0].clone();
        // one token over a 4-frame timeline sits at position 0
        let mut expect = Vec::new();
        for h in 0..heads {
            expect.extend(spec.rotate(&value[h * d..(h + 1) * d], 0).unwrap());
        }
        for r in out {
            for (a, b) in r.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adapters_copy_frozen_weights_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = weights(&mut rng, 6, 8, 8, 2);
        let a = AdapterSet::from_frozen(AdapterKind::Audio, &w, false).unwrap();
        assert_eq!(a.wk.to_vec_f32().unwrap(), w.wk.to_vec_f32().unwrap());
        assert_eq!(a.wv.to_vec_f32().unwrap(), w.wv.to_vec_f32().unwrap());
        assert!(a.combiner.weight.to_vec_f32().unwrap().iter().all(|&v| v == 0.0));
        assert!(a.combiner.bias.to_vec_f32().unwrap().iter().all(|&v| v == 0.0));
        // the copy must not alias the frozen storage
        a.wk.set(&Tensor::zeros((8, 8), DType::F32, &DEV).unwrap()).unwrap();
        assert!(w.wk.to_vec_f32().unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn double_heads_match_single_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = weights(&mut rng, 6, 8, 8, 2);
        let single = AdapterSet::from_frozen(AdapterKind::Attribute, &w, false).unwrap();
        let double = AdapterSet::from_frozen(AdapterKind::Attribute, &w, true).unwrap();
        let opts = DecoupledOptions { rope: Some(build_angles(4, 1e4).unwrap()), rotate_values: true };
        let x = rand_tensor(&mut rng, &[1, 5, 6]);
        let c = rand_tensor(&mut rng, &[1, 5, 8]);
        let mut cap = AttentionCapture::enabled();
        let a = rows(&decoupled_cross_attention(&w, &single, &opts, &x, &c, None).unwrap());
        let b = rows(&decoupled_cross_attention(&w, &double, &opts, &x, &c, Some(&mut cap)).unwrap());
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-5);
            }
        }
        assert_eq!(export_attention_maps(&cap).unwrap().len(), 4);
    }

    #[test]
    fn combine_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x_text = rand_tensor(&mut rng, &[1, 4, 6]);
        let attr = rand_tensor(&mut rng, &[1, 4, 6]);
        let audio = rand_tensor(&mut rng, &[1, 4, 6]);
        let zero = Combiner::zeros(6, DType::F32, &DEV).unwrap();
        let ident = Combiner::identity(6, DType::F32, &DEV).unwrap();

        let out = combine(&x_text, Some((&attr, &zero)), Some((&audio, &zero)), CombineMode::PerBranch).unwrap();
        assert_eq!(rows(&out), rows(&x_text));

        let out = combine(&x_text, None, None, CombineMode::PerBranch).unwrap();
        assert_eq!(rows(&out), rows(&x_text));

        let out = combine(&x_text, Some((&attr, &ident)), None, CombineMode::PerBranch).unwrap();
        let expect = rows(&(&x_text + &attr).unwrap());
        for (r, e) in rows(&out).iter().zip(&expect) {
            for (u, v) in r.iter().zip(e) {
                assert!((u - v).abs() < 1e-6);
            }
        }

        let literal = combine(&x_text, Some((&attr, &zero)), None, CombineMode::Literal).unwrap();
        assert!(rows(&literal).iter().flatten().all(|&v| v == 0.0));

        let short = rand_tensor(&mut rng, &[1, 3, 6]);
        assert!(matches!(
            combine(&x_text, Some((&short, &zero)), None, CombineMode::PerBranch),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn capture_disabled_is_error() {
        let cap = AttentionCapture::disabled();
        assert!(matches!(export_attention_maps(&cap), Err(Error::NotCaptured)));
    }

    #[test]
    fn captured_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = weights(&mut rng, 6, 8, 8, 2);
        let a = AdapterSet::from_frozen(AdapterKind::Audio, &w, false).unwrap();
        let opts = DecoupledOptions { rope: Some(build_angles(4, 1e4).unwrap()), rotate_values: true };
        let x = rand_tensor(&mut rng, &[2, 6, 6]);
        let c = rand_tensor(&mut rng, &[2, 9, 8]);
        let mut cap = AttentionCapture::enabled();
        decoupled_cross_attention(&w, &a, &opts, &x, &c, Some(&mut cap)).unwrap();
        let maps = export_attention_maps(&cap).unwrap();
        assert_eq!(maps.len(), 2);
        for map in maps {
            assert_eq!((map.rows, map.cols), (6, 9));
            for m in 0..map.rows {
                let row = map.row(m);
                assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn positions_scale_with_timeline() {
        assert_eq!(condition_positions(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(condition_positions(2, 8), vec![0, 4]);
        assert_eq!(condition_positions(4, 2), vec![0, 1, 1, 2]);
    }
}

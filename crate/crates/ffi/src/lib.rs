//! C ABI over `cadenza-core`.
//!
//! Every function returns a [`CadenzaStatus`]; values come back through out
//! pointers. Objects are opaque handles created by `*_new`/`*_load`/`*_read`
//! style functions and released with the matching `*_free`. The message of
//! the most recent failure on the calling thread is available through
//! [`cadenza_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cadenza_core::attention::AdapterKind;
use cadenza_core::audio::{StereoAudio, SAMPLE_RATE};
use cadenza_core::codec::{LatentCodec, DEFAULT_BASIS_SEED, FRAME_SIZE};
use cadenza_core::conditioners::{
    extract_dynamics, extract_melody, extract_rhythm, AttributeConditions, ConditionKind, DynamicsConfig, MelodyConfig,
    RhythmConfig, RhythmProvider,
};
use cadenza_core::dataio::{encode_text, load_audio_44k, write_wav};
use cadenza_core::diffusion::{sample, AttrInput, DiffusionModel, SampleRequest};
use cadenza_core::guidance::GuidanceScales;
use cadenza_core::{metrics, Error};
use candle_core::{DType, Device};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CadenzaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDimension = 3,
    NotFound = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    SampleRate = 8,
    UndefinedMetric = 9,
    NumericDivergence = 10,
    BufferTooSmall = 11,
    Internal = 12,
    Panic = 13,
}

impl From<&Error> for CadenzaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidDimension(_) => Self::InvalidDimension,
            Error::InvalidParameter(_) | Error::InvalidInput(_) => Self::InvalidArgument,
            Error::SampleRate { .. } => Self::SampleRate,
            Error::Config(_) => Self::Config,
            Error::Parse { .. } | Error::Decode { .. } => Self::Parse,
            Error::NotFound(_) => Self::NotFound,
            Error::Io(_) => Self::Io,
            Error::UndefinedMetric(_) => Self::UndefinedMetric,
            Error::NumericDivergence(_) => Self::NumericDivergence,
            Error::NotCaptured | Error::Tensor(_) => Self::Internal,
        }
    }
}

/// Stereo audio at the library sample rate.
pub struct CadenzaAudio {
    inner: StereoAudio,
}

/// Melody, dynamics and rhythm conditions of one clip.
pub struct CadenzaConditions {
    inner: AttributeConditions,
}

/// A loaded checkpoint together with its latent codec.
pub struct CadenzaModel {
    model: DiffusionModel,
    codec: LatentCodec,
}

/// Settings of [`cadenza_generate`]. Start from
/// [`cadenza_generate_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CadenzaGenerateParams {
    /// Output length in seconds.
    pub duration_s: f64,
    pub seed: u64,
    pub steps: u32,
    pub lambda_text: f64,
    pub lambda_attr: f64,
    pub lambda_audio: f64,
}

struct Failure {
    status: CadenzaStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            status: (&e).into(),
            message: e.to_string(),
        }
    }
}

fn fail(status: CadenzaStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CadenzaStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (CadenzaStatus::Ok, String::new()),
        Ok(Err(e)) => (e.status, e.message),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (CadenzaStatus::Panic, format!("internal panic: {msg}"))
        }
    };
    LAST_ERROR.with(|l| *l.borrow_mut() = message);
    status
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CadenzaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(CadenzaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(fail(CadenzaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(CadenzaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    string(p, what).map(PathBuf::from)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cadenza_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cadenza_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|l| {
        let msg = l.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds audio from interleaved samples. `channels` is 1 or 2;
/// `sample_rate` must be 44100.
///
/// # Safety
/// `samples` must point to `frames * channels` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_from_interleaved(
    samples: *const f32,
    frames: usize,
    channels: u32,
    sample_rate: u32,
    out: *mut *mut CadenzaAudio,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if samples.is_null() && frames > 0 {
            return Err(fail(CadenzaStatus::NullPointer, "samples is null"));
        }
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate {
                got: sample_rate,
                expected: SAMPLE_RATE,
            }
            .into());
        }
        let data: &[f32] = if frames == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(samples, frames * channels as usize)
        };
        let inner = match channels {
            1 => StereoAudio::from_mono(sample_rate, data.to_vec()),
            2 => StereoAudio::new(
                sample_rate,
                data.iter().step_by(2).copied().collect(),
                data.iter().skip(1).step_by(2).copied().collect(),
            )?,
            c => return Err(fail(CadenzaStatus::InvalidArgument, format!("{c} channels; expected 1 or 2"))),
        };
        *out = boxed(CadenzaAudio { inner });
        Ok(())
    })
}

/// Reads a WAV file, resampling to 44.1 kHz and duplicating mono.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_read_wav(p: *const c_char, out: *mut *mut CadenzaAudio) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = load_audio_44k(&path(p, "path")?)?;
        *out = boxed(CadenzaAudio { inner });
        Ok(())
    })
}

/// Writes 32-bit float stereo WAV.
///
/// # Safety
/// `audio` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_write_wav(audio: *const CadenzaAudio, p: *const c_char) -> CadenzaStatus {
    guard(|| {
        let a = obj(audio, "audio")?;
        write_wav(&path(p, "path")?, &a.inner)?;
        Ok(())
    })
}

/// Number of sample frames (per channel).
///
/// # Safety
/// `audio` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_frames(audio: *const CadenzaAudio, out: *mut usize) -> CadenzaStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(audio, "audio")?.inner.len();
        Ok(())
    })
}

/// Copies the samples interleaved (L, R, L, R, ...) into `buf`, which must
/// hold `2 * frames` floats.
///
/// # Safety
/// `audio` must be a live handle; `buf` must point to `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_copy_interleaved(
    audio: *const CadenzaAudio,
    buf: *mut f32,
    capacity: usize,
) -> CadenzaStatus {
    guard(|| {
        let a = &obj(audio, "audio")?.inner;
        let need = 2 * a.len();
        if capacity < need {
            return Err(fail(
                CadenzaStatus::BufferTooSmall,
                format!("buffer holds {capacity} floats, need {need}"),
            ));
        }
        if need == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(fail(CadenzaStatus::NullPointer, "buf is null"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (i, (l, r)) in a.left.iter().zip(&a.right).enumerate() {
            dst[2 * i] = *l;
            dst[2 * i + 1] = *r;
        }
        Ok(())
    })
}

/// # Safety
/// `audio` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cadenza_audio_free(audio: *mut CadenzaAudio) {
    free(audio)
}

/// Extracts melody, dynamics and rhythm with the built-in estimators.
///
/// # Safety
/// `audio` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_conditions_extract(
    audio: *const CadenzaAudio,
    out: *mut *mut CadenzaConditions,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = &obj(audio, "audio")?.inner;
        let mut inner = AttributeConditions::default();
        inner.set(extract_melody(a, &MelodyConfig::default())?);
        inner.set(extract_dynamics(a, &DynamicsConfig::default())?);
        inner.set(extract_rhythm(a, &RhythmProvider::Builtin, &RhythmConfig::default())?);
        *out = boxed(CadenzaConditions { inner });
        Ok(())
    })
}

/// Reads `melody.cond`, `dynamics.cond` and `rhythm.cond` (any subset)
/// from a directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_conditions_read_dir(
    dir: *const c_char,
    out: *mut *mut CadenzaConditions,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = AttributeConditions::read_dir(&path(dir, "dir")?)?;
        *out = boxed(CadenzaConditions { inner });
        Ok(())
    })
}

/// Writes the present conditions into a directory, creating it.
///
/// # Safety
/// `conds` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cadenza_conditions_write_dir(
    conds: *const CadenzaConditions,
    dir: *const c_char,
) -> CadenzaStatus {
    guard(|| {
        obj(conds, "conds")?.inner.write_dir(&path(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `conds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cadenza_conditions_free(conds: *mut CadenzaConditions) {
    free(conds)
}

/// Loads a checkpoint written by `cadenza train`.
///
/// # Safety
/// `p` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_model_load(p: *const c_char, out: *mut *mut CadenzaModel) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (model, codec, _) = DiffusionModel::load(&path(p, "path")?, DType::F32, &Device::Cpu)?;
        let codec = match codec {
            Some(c) => c,
            None => LatentCodec::with_shape(FRAME_SIZE, model.config.latent_channels, DEFAULT_BASIS_SEED)?,
        };
        *out = boxed(CadenzaModel { model, codec });
        Ok(())
    })
}

/// Whether the model carries an attribute adapter (1) or not (0).
///
/// # Safety
/// `model` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_model_has_attribute_adapter(
    model: *const CadenzaModel,
    out: *mut i32,
) -> CadenzaStatus {
    guard(|| {
        *out_ptr(out, "out")? = i32::from(obj(model, "model")?.model.has_adapter(AdapterKind::Attribute));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cadenza_model_free(model: *mut CadenzaModel) {
    free(model)
}

/// 4 s, seed 0, 50 steps, guidance scales of the text-to-music preset.
#[no_mangle]
pub extern "C" fn cadenza_generate_params_default() -> CadenzaGenerateParams {
    let s = GuidanceScales::preset(cadenza_core::guidance::Task::Generate);
    CadenzaGenerateParams {
        duration_s: 4.0,
        seed: 0,
        steps: 50,
        lambda_text: s.lambda_text,
        lambda_attr: s.lambda_attr,
        lambda_audio: s.lambda_audio,
    }
}

/// Text-to-music generation, optionally following attribute conditions
/// (`conds` may be null). The result is deterministic for fixed inputs.
///
/// # Safety
/// `model` must be a live handle, `caption` a NUL-terminated string,
/// `params` valid, `conds` null or a live handle, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_generate(
    model: *const CadenzaModel,
    caption: *const c_char,
    params: *const CadenzaGenerateParams,
    conds: *const CadenzaConditions,
    out: *mut *mut CadenzaAudio,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = obj(model, "model")?;
        let params = obj(params, "params")?;
        let caption = string(caption, "caption")?;
        if !(params.duration_s > 0.0 && params.duration_s.is_finite()) {
            return Err(fail(
                CadenzaStatus::InvalidArgument,
                format!("duration_s must be positive, got {}", params.duration_s),
            ));
        }
        let samples = (params.duration_s * SAMPLE_RATE as f64).round() as usize;
        let frames = m.codec.frames_for(samples);
        let mut req = SampleRequest::new(frames, encode_text(&caption, m.model.config.cond_dim));
        req.seed = params.seed;
        req.steps = params.steps as usize;
        req.scales = GuidanceScales::new(params.lambda_text, params.lambda_attr, params.lambda_audio)?;
        if let Some(c) = conds.as_ref() {
            if !c.inner.is_empty() {
                if !m.model.has_adapter(AdapterKind::Attribute) {
                    return Err(fail(
                        CadenzaStatus::InvalidArgument,
                        "conditions given but the model has no attribute adapter",
                    ));
                }
                req.attr = Some(AttrInput {
                    conds: c.inner.clone(),
                    masks: [None, None, None],
                });
            }
        }
        let latent = sample(&m.model, &req)?.latent;
        let audio = m.codec.decode(&latent)?;
        let n = samples.min(audio.len());
        *out = boxed(CadenzaAudio {
            inner: audio.slice(0, n),
        });
        Ok(())
    })
}

/// Fraction of frames whose dominant pitch class agrees.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_melody_accuracy(
    reference: *const CadenzaAudio,
    generated: *const CadenzaAudio,
    out: *mut f64,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = metrics::melody_accuracy(&obj(reference, "reference")?.inner, &obj(generated, "generated")?.inner)?;
        Ok(())
    })
}

/// Pearson correlation of the generated loudness curve with the dynamics
/// condition in `conds`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_dynamics_correlation(
    generated: *const CadenzaAudio,
    conds: *const CadenzaConditions,
    out: *mut f64,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let target = obj(conds, "conds")?
            .inner
            .get(ConditionKind::Dynamics)
            .ok_or_else(|| fail(CadenzaStatus::InvalidArgument, "conds has no dynamics condition"))?;
        *out = metrics::dynamics_correlation(&obj(generated, "generated")?.inner, target, &DynamicsConfig::default())?;
        Ok(())
    })
}

/// Beat F1 of the generated audio against beats estimated on the
/// reference.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_rhythm_f1(
    reference: *const CadenzaAudio,
    generated: *const CadenzaAudio,
    out: *mut f64,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = RhythmConfig::default();
        let beats = metrics::estimate_beats(&obj(reference, "reference")?.inner, &cfg)?;
        *out = metrics::rhythm_f1(&beats, &obj(generated, "generated")?.inner, &cfg)?;
        Ok(())
    })
}

/// Smoothness of the transition at `boundary_s` seconds; lower means a
/// more abrupt seam.
///
/// # Safety
/// `audio` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cadenza_smoothness_value(
    audio: *const CadenzaAudio,
    boundary_s: f64,
    out: *mut f64,
) -> CadenzaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = metrics::smoothness_value(&obj(audio, "audio")?.inner, boundary_s)?;
        Ok(())
    })
}

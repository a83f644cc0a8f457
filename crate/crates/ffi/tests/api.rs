use std::ffi::CString;
use std::ptr;

use cadenza_core::diffusion::{DiffusionModel, ModelConfig};
use cadenza_ffi::*;
use candle_core::{DType, Device};

fn tiny_checkpoint(dir: &std::path::Path) -> CString {
    let cfg = ModelConfig {
        blocks: 1,
        model_dim: 16,
        cond_dim: 12,
        head_count: 2,
        mlp_ratio: 2,
        ..Default::default()
    };
    let p = dir.join("tiny.ckpt");
    DiffusionModel::new(cfg, 3, DType::F32, &Device::Cpu)
        .unwrap()
        .save(&p, None, serde_json::json!({}))
        .unwrap();
    CString::new(p.to_str().unwrap()).unwrap()
}

fn samples(a: *const CadenzaAudio) -> Vec<f32> {
    let mut n = 0usize;
    unsafe {
        assert_eq!(cadenza_audio_frames(a, &mut n), CadenzaStatus::Ok);
        let mut buf = vec![0f32; 2 * n];
        assert_eq!(cadenza_audio_copy_interleaved(a, buf.as_mut_ptr(), buf.len()), CadenzaStatus::Ok);
        buf
    }
}

#[test]
fn generation_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let caption = CString::new("a quiet hum").unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(cadenza_model_load(ckpt.as_ptr(), &mut model), CadenzaStatus::Ok);
        let mut has = -1;
        assert_eq!(cadenza_model_has_attribute_adapter(model, &mut has), CadenzaStatus::Ok);
        assert_eq!(has, 0);
        let mut params = cadenza_generate_params_default();
        params.duration_s = 0.25;
        params.steps = 3;
        params.seed = 11;
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(cadenza_generate(model, caption.as_ptr(), &params, ptr::null(), &mut a), CadenzaStatus::Ok);
        assert_eq!(cadenza_generate(model, caption.as_ptr(), &params, ptr::null(), &mut b), CadenzaStatus::Ok);
        let (sa, sb) = (samples(a), samples(b));
        assert_eq!(sa.len(), 2 * (0.25f64 * 44_100.0).round() as usize);
        assert_eq!(sa, sb);
        cadenza_audio_free(a);
        cadenza_audio_free(b);

        params.duration_s = -1.0;
        let mut c = ptr::null_mut();
        assert_eq!(
            cadenza_generate(model, caption.as_ptr(), &params, ptr::null(), &mut c),
            CadenzaStatus::InvalidArgument
        );
        assert!(c.is_null());
        cadenza_model_free(model);
    }
}

#[test]
fn conditions_need_an_attribute_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let tone: Vec<f32> = (0..22_050).map(|i| (i as f32 * 0.06).sin() * 0.3).collect();
    let caption = CString::new("x").unwrap();
    unsafe {
        let (mut model, mut audio, mut conds, mut out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(cadenza_model_load(ckpt.as_ptr(), &mut model), CadenzaStatus::Ok);
        assert_eq!(cadenza_audio_from_interleaved(tone.as_ptr(), tone.len(), 1, 44_100, &mut audio), CadenzaStatus::Ok);
        assert_eq!(cadenza_conditions_extract(audio, &mut conds), CadenzaStatus::Ok);
        let mut params = cadenza_generate_params_default();
        params.steps = 2;
        assert_eq!(cadenza_generate(model, caption.as_ptr(), &params, conds, &mut out), CadenzaStatus::InvalidArgument);
        let mut buf = [0 as std::ffi::c_char; 128];
        let len = cadenza_last_error(buf.as_mut_ptr(), buf.len());
        let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert!(len > 0 && msg.contains("attribute adapter"), "{msg}");
        cadenza_conditions_free(conds);
        cadenza_audio_free(audio);
        cadenza_model_free(model);
    }
}

#[test]
fn input_errors_map_to_status_codes() {
    unsafe {
        let mut a = ptr::null_mut();
        let x = [0f32; 8];
        assert_eq!(cadenza_audio_from_interleaved(x.as_ptr(), 4, 2, 22_050, &mut a), CadenzaStatus::SampleRate);
        assert_eq!(cadenza_audio_from_interleaved(x.as_ptr(), 4, 3, 44_100, &mut a), CadenzaStatus::InvalidArgument);
        assert_eq!(cadenza_audio_from_interleaved(x.as_ptr(), 4, 2, 44_100, ptr::null_mut()), CadenzaStatus::NullPointer);
        let missing = CString::new("/nonexistent/x.wav").unwrap();
        assert_eq!(cadenza_audio_read_wav(missing.as_ptr(), &mut a), CadenzaStatus::NotFound);
        assert!(a.is_null());
        assert_eq!(cadenza_audio_from_interleaved(x.as_ptr(), 4, 2, 44_100, &mut a), CadenzaStatus::Ok);
        assert_eq!(cadenza_last_error(ptr::null_mut(), 0), 0);
        let mut v = 0.0;
        // a 4-sample clip is too short for any chroma frame
        assert_ne!(cadenza_melody_accuracy(a, a, &mut v), CadenzaStatus::Ok);
        cadenza_audio_free(a);
    }
}

use std::path::Path;

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::dataio::resample::resample;
use crate::error::{Error, Result};

fn decode_err(path: &Path, msg: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads a PCM WAV (16/24/32-bit int or 32-bit float, one or two channels)
/// at its native rate. Mono is duplicated to both channels.
pub fn read_wav(path: &Path) -> Result<StereoAudio> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(decode_err(path, format!("{} channels (only mono or stereo)", spec.channels)));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode_err(path, e))?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_err(path, e))?
        }
        (fmt, bits) => return Err(decode_err(path, format!("unsupported sample format {fmt:?}/{bits}-bit"))),
    };
    let (left, right) = if spec.channels == 1 {
        (samples.clone(), samples)
    } else {
        let left = samples.iter().step_by(2).copied().collect();
        let right = samples.iter().skip(1).step_by(2).copied().collect();
        (left, right)
    };
    StereoAudio::new(spec.sample_rate, left, right)
}

/// Writes 32-bit float stereo WAV.
pub fn write_wav(path: &Path, audio: &StereoAudio) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| decode_err(path, e))?;
    for (l, r) in audio.left.iter().zip(&audio.right) {
        writer.write_sample(*l).map_err(|e| decode_err(path, e))?;
        writer.write_sample(*r).map_err(|e| decode_err(path, e))?;
    }
    writer.finalize().map_err(|e| decode_err(path, e))?;
    Ok(())
}

/// Splits into consecutive `segment_len`-sample chunks; the last one is
/// zero-padded.
pub fn segment(audio: &StereoAudio, segment_len: usize) -> Vec<StereoAudio> {
    if segment_len == 0 || audio.is_empty() {
        return vec![audio.clone()];
    }
    let n = audio.len().div_ceil(segment_len);
    (0..n)
        .map(|i| {
            let mut seg = audio.slice(i * segment_len, (i + 1) * segment_len);
            seg.left.resize(segment_len, 0.0);
            seg.right.resize(segment_len, 0.0);
            seg
        })
        .collect()
}

/// Ingestion: read, resample to `target_rate`, optionally segment.
pub fn load_audio(path: &Path, target_rate: u32, segment_s: Option<f64>) -> Result<Vec<StereoAudio>> {
    let raw = read_wav(path)?;
    let audio = if raw.sample_rate == target_rate {
        raw
    } else {
        StereoAudio::new(
            target_rate,
            resample(&raw.left, raw.sample_rate, target_rate),
            resample(&raw.right, raw.sample_rate, target_rate),
        )?
    };
    Ok(match segment_s {
        Some(s) if s > 0.0 => segment(&audio, (s * target_rate as f64).round() as usize),
        _ => vec![audio],
    })
}

pub fn load_audio_44k(path: &Path) -> Result<StereoAudio> {
    Ok(load_audio(path, SAMPLE_RATE, None)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(rate: u32, secs: f64, freq: f64) -> Vec<f32> {
        (0..(secs * rate as f64) as usize)
            .map(|n| (0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn native_rate_passes_through_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let audio = StereoAudio::new(SAMPLE_RATE, tone(SAMPLE_RATE, 0.2, 440.0), tone(SAMPLE_RATE, 0.2, 330.0)).unwrap();
        write_wav(&p, &audio).unwrap();
        let back = load_audio(&p, SAMPLE_RATE, None).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], audio);
    }

    #[test]
    fn int16_mono_is_duplicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.left, vec![0.0, 0.5, -1.0]);
        assert_eq!(a.left, a.right);
    }

    #[test]
    fn ten_seconds_in_four_second_segments() {
        let audio = StereoAudio::from_mono(SAMPLE_RATE, vec![0.25; 10 * SAMPLE_RATE as usize]);
        let segs = segment(&audio, 4 * SAMPLE_RATE as usize);
        assert_eq!(segs.len(), 3);
        let last = &segs[2];
        assert_eq!(last.len(), 4 * SAMPLE_RATE as usize);
        let pad = &last.left[2 * SAMPLE_RATE as usize..];
        assert_eq!(pad.len(), 2 * SAMPLE_RATE as usize);
        assert!(pad.iter().all(|&v| v == 0.0));
        assert!(last.left[..2 * SAMPLE_RATE as usize].iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unreadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bogus.wav");
        std::fs::write(&p, b"ID3\x03compressed").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Decode { .. })));
        assert!(matches!(read_wav(&dir.path().join("missing.wav")), Err(Error::NotFound(_))));
    }
}

//! Objective evaluation: melody accuracy, dynamics correlation, rhythm F1
//! and the smoothness of transitions.

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::conditioners::rhythm::onset_envelope;
use crate::conditioners::{extract_dynamics, Condition, ConditionKind, DynamicsConfig, RhythmConfig};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{frame_count, frame_into, hann, interpolation_weights, pearson, stft_magnitude, Framing};
use crate::error::{Error, Result};

pub const CHROMA_WINDOW: usize = 2048;
pub const CHROMA_HOP: usize = 512;
/// Frequencies at or below this are left out of the chromagram.
pub const CHROMA_FMIN: f64 = 60.0;
/// Frames whose total chroma energy is below this count as silent.
pub const SILENCE_ENERGY: f64 = 1e-8;
/// Two beats match when they are strictly closer than this (seconds).
pub const BEAT_TOLERANCE_S: f64 = 0.07;
pub const CHANCE_MELODY_ACCURACY: f64 = 1.0 / 12.0;

pub const NOVELTY_WINDOW: usize = 2048;
pub const NOVELTY_HOP: usize = 512;
pub const NOVELTY_BANDS: usize = 64;

/// `12 x T` pitch-class energies stored frame by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromagram {
    pub frames: Vec<[f64; 12]>,
}

impl Chromagram {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Dominant class of frame `i`; ties (including silence) resolve to the
    /// lowest class.
    pub fn argmax(&self, i: usize) -> usize {
        let f = &self.frames[i];
        (0..12).fold(0, |best, k| if f[k] > f[best] { k } else { best })
    }

    pub fn is_silent(&self, i: usize) -> bool {
        self.frames[i].iter().sum::<f64>() < SILENCE_ENERGY
    }
}

/// Pitch class of a frequency: 0 = C, 9 = A.
pub fn pitch_class(hz: f64) -> usize {
    let semis = (12.0 * (hz / 440.0).log2()).round() as i64;
    (semis + 9).rem_euclid(12) as usize
}

/// FFT length of the chromagram: each 2048-sample frame is zero-padded to
/// this length so the fold sees a finely sampled spectrum.
pub const CHROMA_FFT: usize = 8192;

/// STFT power folded onto the nearest semitone's pitch class.
pub fn chromagram(audio: &StereoAudio) -> Result<Chromagram> {
    audio.check(SAMPLE_RATE)?;
    if audio.len() < CHROMA_WINDOW {
        return Err(Error::InvalidInput(format!(
            "audio of {} samples is shorter than one {CHROMA_WINDOW}-sample window",
            audio.len()
        )));
    }
    let classes: Vec<Option<usize>> = (0..=CHROMA_FFT / 2)
        .map(|k| {
            let f = k as f64 * audio.sample_rate as f64 / CHROMA_FFT as f64;
            (f > CHROMA_FMIN).then(|| pitch_class(f))
        })
        .collect();
    let mono = audio.mono();
    let win = hann(CHROMA_WINDOW);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(CHROMA_FFT);
    let mut frame = vec![0.0f32; CHROMA_WINDOW];
    let mut buf = vec![Complex::new(0.0f32, 0.0); CHROMA_FFT];
    let n = frame_count(mono.len(), CHROMA_WINDOW, CHROMA_HOP, Framing::Valid);
    let frames = (0..n)
        .map(|i| {
            frame_into(&mono, i, CHROMA_WINDOW, CHROMA_HOP, Framing::Valid, &mut frame);
            buf.fill(Complex::new(0.0, 0.0));
            for ((b, x), w) in buf.iter_mut().zip(&frame).zip(&win) {
                b.re = x * w;
            }
            fft.process(&mut buf);
            let mut c = [0.0f64; 12];
            for (z, pc) in buf.iter().zip(&classes) {
                if let Some(pc) = pc {
                    c[*pc] += z.norm_sqr() as f64;
                }
            }
            c
        })
        .collect();
    Ok(Chromagram { frames })
}

/// Fraction of frames whose dominant pitch classes agree, over frames where
/// neither chromagram is silent.
pub fn chroma_agreement(a: &Chromagram, b: &Chromagram) -> Result<f64> {
    let n = a.len().min(b.len());
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..n {
        if a.is_silent(i) || b.is_silent(i) {
            continue;
        }
        total += 1;
        hits += (a.argmax(i) == b.argmax(i)) as usize;
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no non-silent frames to compare".into()));
    }
    Ok(hits as f64 / total as f64)
}

pub fn melody_accuracy(reference: &StereoAudio, generated: &StereoAudio) -> Result<f64> {
    chroma_agreement(&chromagram(reference)?, &chromagram(generated)?)
}

/// Linear resampling of a curve to `len` points.
fn resample_curve(y: &[f64], len: usize) -> Vec<f64> {
    interpolation_weights(y.len(), len)
        .into_iter()
        .map(|(lo, hi, w)| y[lo] * (1.0 - w as f64) + y[hi] * w as f64)
        .collect()
}

/// Pearson correlation of two curves after resampling both to the longer
/// length.
pub fn curve_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len().max(b.len());
    if a.is_empty() || b.is_empty() || n < 3 {
        return Err(Error::UndefinedMetric(format!(
            "curves of {} and {} points are too short to correlate",
            a.len(),
            b.len()
        )));
    }
    pearson(&resample_curve(a, n), &resample_curve(b, n))
        .ok_or_else(|| Error::UndefinedMetric("a dynamics curve is constant".into()))
}

/// Correlation between the dynamics curve of `generated` and `target`.
pub fn dynamics_correlation(generated: &StereoAudio, target: &Condition, cfg: &DynamicsConfig) -> Result<f64> {
    if target.kind != ConditionKind::Dynamics {
        return Err(Error::InvalidInput(format!("expected a dynamics condition, got {}", target.kind.as_str())));
    }
    let gen = extract_dynamics(generated, cfg)?;
    let to64 = |c: &Condition| c.data.iter().map(|v| *v as f64).collect::<Vec<_>>();
    curve_correlation(&to64(&gen), &to64(target))
}

/// F1 of a greedy one-to-one matching: candidate pairs closer than
/// `tolerance` are taken in order of increasing distance.
pub fn rhythm_f1_timestamps(reference: &[f64], estimated: &[f64], tolerance: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("reference beat list is empty".into()));
    }
    let hits = match_beats(reference, estimated, tolerance);
    if hits == 0 {
        return Ok(0.0);
    }
    let p = hits as f64 / estimated.len() as f64;
    let r = hits as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Number of matched pairs.
pub fn match_beats(reference: &[f64], estimated: &[f64], tolerance: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        for (j, e) in estimated.iter().enumerate() {
            let d = (r - e).abs();
            if d < tolerance {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_r, mut used_e) = (vec![false; reference.len()], vec![false; estimated.len()]);
    let mut hits = 0;
    for (_, i, j) in pairs {
        if !used_r[i] && !used_e[j] {
            used_r[i] = true;
            used_e[j] = true;
            hits += 1;
        }
    }
    hits
}

/// Beat times picked from the onset envelope: local maxima of at least
/// `0.3 * max`, strongest first, at least 250 ms apart.
pub fn estimate_beats(audio: &StereoAudio, cfg: &RhythmConfig) -> Result<Vec<f64>> {
    audio.check(SAMPLE_RATE)?;
    let env = onset_envelope(&audio.mono(), cfg);
    let frame_s = cfg.hop as f64 / audio.sample_rate as f64;
    let max = env.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let mut peaks: Vec<usize> = (0..env.len())
        .filter(|&i| {
            let left = if i > 0 { env[i - 1] } else { f32::MIN };
            let right = env.get(i + 1).copied().unwrap_or(f32::MIN);
            env[i] >= 0.3 * max && env[i] > left && env[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let min_gap = 0.25;
    let mut chosen: Vec<f64> = Vec::new();
    for p in peaks {
        let t = p as f64 * frame_s;
        if chosen.iter().all(|c| (c - t).abs() >= min_gap) {
            chosen.push(t);
        }
    }
    chosen.sort_by(f64::total_cmp);
    Ok(chosen)
}

pub fn rhythm_f1(reference_beats: &[f64], generated: &StereoAudio, cfg: &RhythmConfig) -> Result<f64> {
    if reference_beats.is_empty() {
        return Err(Error::UndefinedMetric("reference beat list is empty".into()));
    }
    rhythm_f1_timestamps(reference_beats, &estimate_beats(generated, cfg)?, BEAT_TOLERANCE_S)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyCurve {
    pub values: Vec<f64>,
    pub kernel_size: usize,
}

fn band_features(audio: &StereoAudio) -> Vec<Vec<f64>> {
    let spec = stft_magnitude(&audio.mono(), NOVELTY_WINDOW, NOVELTY_HOP, Framing::Valid);
    let per_band = (NOVELTY_WINDOW / 2) / NOVELTY_BANDS;
    spec.iter()
        .map(|mag| {
            (0..NOVELTY_BANDS)
                .map(|b| mag[b * per_band..(b + 1) * per_band].iter().map(|v| *v as f64).sum())
                .collect()
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Checkerboard novelty of a cosine self-similarity matrix of band-energy
/// frames; frames beyond the edges repeat the edge frame.
pub fn novelty_curve(audio: &StereoAudio) -> Result<NoveltyCurve> {
    audio.check(SAMPLE_RATE)?;
    if audio.len() < audio.sample_rate as usize {
        return Err(Error::InvalidInput(format!(
            "novelty needs at least 1 s of audio, got {:.3} s",
            audio.duration_s()
        )));
    }
    let feats = band_features(audio);
    let n = feats.len();
    let at = |i: isize| &feats[i.clamp(0, n as isize - 1) as usize];
    let half = 1isize;
    let values = (0..n as isize)
        .map(|c| {
            let mut v = 0.0;
            for a in -half..=half {
                for b in -half..=half {
                    let sign = (a.signum() * b.signum()) as f64;
                    if sign != 0.0 {
                        v += sign * cosine(at(c + a), at(c + b));
                    }
                }
            }
            v
        })
        .collect();
    Ok(NoveltyCurve {
        values,
        kernel_size: 3,
    })
}

/// Novelty frame whose window is centred nearest to `seconds`.
pub fn novelty_frame(seconds: f64, sample_rate: u32) -> isize {
    ((seconds * sample_rate as f64 - NOVELTY_WINDOW as f64 / 2.0) / NOVELTY_HOP as f64).round() as isize
}

/// `V[i-1] - 2 V[i] + V[i+1]` at the boundary, with `V` scaled to a maximum
/// absolute value of 1.
pub fn smoothness_value(audio: &StereoAudio, boundary_s: f64) -> Result<f64> {
    let v = novelty_curve(audio)?.values;
    let i = novelty_frame(boundary_s, audio.sample_rate);
    if i < 1 || i as usize + 1 >= v.len() {
        return Err(Error::InvalidInput(format!(
            "boundary at {boundary_s} s is not inside the clip's novelty curve"
        )));
    }
    let i = i as usize;
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale <= 1e-12 {
        return Ok(0.0);
    }
    Ok((v[i - 1] - 2.0 * v[i] + v[i + 1]) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: u32 = SAMPLE_RATE;

    fn tone(hz: f64, seconds: f64) -> StereoAudio {
        let n = (seconds * SR as f64) as usize;
        StereoAudio::from_mono(
            SR,
            (0..n)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / SR as f64).sin()) as f32)
                .collect(),
        )
    }

    /// White noise restricted to `[lo, hi)` Hz.
    fn band_noise(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f32> {
        let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.random_range(-1.0..1.0), 0.0)).collect();
        let mut p = FftPlanner::new();
        p.plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * SR as f64 / n as f64;
            if f < lo || f >= hi {
                *c = Complex::new(0.0, 0.0);
            }
        }
        p.plan_fft_inverse(n).process(&mut buf);
        let out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        out.iter().map(|v| (0.5 * v / peak) as f32).collect()
    }

    fn two_band(crossfade_s: f64) -> StereoAudio {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10 * SR as usize;
        let low = band_noise(&mut rng, n, 0.0, 2000.0);
        let high = band_noise(&mut rng, n, 4000.0, 8000.0);
        let mid = 5.0 * SR as f64;
        let half = crossfade_s * SR as f64 / 2.0;
        let mono = (0..n)
            .map(|i| {
                let w = if half == 0.0 {
                    (i as f64 >= mid) as u8 as f64
                } else {
                    ((i as f64 - (mid - half)) / (2.0 * half)).clamp(0.0, 1.0)
                };
                ((1.0 - w) * low[i] as f64 + w * high[i] as f64) as f32
            })
            .collect();
        StereoAudio::from_mono(SR, mono)
    }

    #[test]
    fn pitch_class_fold() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        for octave in [-1.0, 0.0, 1.0] {
            for semi in 0..12 {
                let f = 440.0 * 2f64.powf(octave + semi as f64 / 12.0);
                assert_eq!(pitch_class(f), (9 + semi) % 12);
            }
        }
    }

    #[test]
    fn chroma_of_pure_tones() {
        for (hz, want) in [(440.0, 9), (261.63, 0)] {
            let c = chromagram(&tone(hz, 0.5)).unwrap();
            assert_eq!(c.len(), 1 + (22_050 - 2048) / 512);
            assert!((0..c.len()).all(|i| c.argmax(i) == want));
        }
        for semi in 0..36 {
            let f = 261.6256 * 2f64.powf(semi as f64 / 12.0);
            let c = chromagram(&tone(f, 0.2)).unwrap();
            assert_eq!(c.argmax(0), pitch_class(f), "{f} Hz");
        }
        let s = chromagram(&StereoAudio::silence(SR, 8192)).unwrap();
        assert!((0..s.len()).all(|i| s.frames[i] == [0.0; 12] && s.argmax(i) == 0));
        assert!(chromagram(&StereoAudio::silence(SR, 2000)).is_err());
    }

    #[test]
    fn melody_accuracy_oracles() {
        let a = tone(440.0, 1.0);
        assert_eq!(melody_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(melody_accuracy(&a, &tone(466.16, 1.0)).unwrap(), 0.0);
        let silent = StereoAudio::silence(SR, SR as usize);
        assert!(matches!(melody_accuracy(&silent, &a), Err(Error::UndefinedMetric(_))));
    }

    fn random_notes(rng: &mut ChaCha8Rng, frames: usize) -> StereoAudio {
        let n = CHROMA_WINDOW + (frames - 1) * CHROMA_HOP;
        let mut phase = 0.0f64;
        let mut hz = 0.0;
        let mono = (0..n)
            .map(|i| {
                if i % (8 * CHROMA_HOP) == 0 {
                    hz = 261.63 * 2f64.powf(rng.random_range(0..12) as f64 / 12.0);
                }
                phase += 2.0 * std::f64::consts::PI * hz / SR as f64;
                (0.5 * phase.sin()) as f32
            })
            .collect();
        StereoAudio::from_mono(SR, mono)
    }

    #[test]
    fn unrelated_melodies_agree_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_notes(&mut rng, 4000);
        let b = random_notes(&mut rng, 4000);
        let acc = melody_accuracy(&a, &b).unwrap();
        assert!((acc - 1.0 / 12.0).abs() <= 0.03, "accuracy {acc}");
        assert_eq!(acc, melody_accuracy(&b, &a).unwrap());
    }

    #[test]
    fn correlation_oracles() {
        let c: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        let aff: Vec<f64> = c.iter().map(|v| 3.5 * v - 2.0).collect();
        assert!((curve_correlation(&c, &c).unwrap() - 1.0).abs() < 1e-9);
        assert!((curve_correlation(&c, &neg).unwrap() + 1.0).abs() < 1e-9);
        assert!((curve_correlation(&c, &aff).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(curve_correlation(&c, &[1.0; 50]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn dynamics_self_correlation() {
        let mono: Vec<f32> = (0..SR as usize * 2)
            .map(|i| {
                let g = i as f32 / (2 * SR) as f32;
                g * (i as f32 * 0.05).sin()
            })
            .collect();
        let a = StereoAudio::from_mono(SR, mono);
        let target = extract_dynamics(&a, &DynamicsConfig::default()).unwrap();
        let r = dynamics_correlation(&a, &target, &DynamicsConfig::default()).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beat_tolerance_boundary() {
        let r: Vec<f64> = (0..10).map(|i| 0.5 * i as f64 + 0.2).collect();
        let shift = |d: f64| r.iter().map(|t| t + d).collect::<Vec<_>>();
        assert_eq!(rhythm_f1_timestamps(&r, &r, BEAT_TOLERANCE_S).unwrap(), 1.0);
        assert_eq!(rhythm_f1_timestamps(&r, &shift(0.05), BEAT_TOLERANCE_S).unwrap(), 1.0);
        assert_eq!(rhythm_f1_timestamps(&r, &shift(0.1), BEAT_TOLERANCE_S).unwrap(), 0.0);
        assert_eq!(rhythm_f1_timestamps(&r, &[], BEAT_TOLERANCE_S).unwrap(), 0.0);
        assert!(matches!(
            rhythm_f1_timestamps(&[], &r, BEAT_TOLERANCE_S),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn removing_an_estimate_never_adds_matches() {
        let grid: Vec<f64> = (0..6).map(|i| i as f64 * 0.04).collect();
        let lists: Vec<Vec<f64>> = (0u32..64)
            .map(|bits| grid.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, t)| *t).collect())
            .filter(|l: &Vec<f64>| l.len() <= 5)
            .collect();
        for r in lists.iter().filter(|l| !l.is_empty()) {
            for e in &lists {
                let full = match_beats(r, e, BEAT_TOLERANCE_S);
                for skip in 0..e.len() {
                    let mut fewer = e.clone();
                    fewer.remove(skip);
                    assert!(match_beats(r, &fewer, BEAT_TOLERANCE_S) <= full);
                }
            }
        }
    }

    #[test]
    fn beats_from_clicks() {
        let mut mono = vec![0.0f32; 3 * SR as usize];
        let beats: Vec<f64> = (0..6).map(|i| 0.25 + 0.5 * i as f64).collect();
        for b in &beats {
            let s = (b * SR as f64) as usize;
            for k in 0..200 {
                mono[s + k] = ((k as f32 * 0.9).sin()) * (1.0 - k as f32 / 200.0);
            }
        }
        let a = StereoAudio::from_mono(SR, mono);
        assert_eq!(rhythm_f1(&beats, &a, &RhythmConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn novelty_peaks_at_band_change() {
        let hard = two_band(0.0);
        let v = novelty_curve(&hard).unwrap().values;
        let at = novelty_frame(5.0, SR);
        let peak = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap() as isize;
        assert!((peak - at).abs() <= 3, "peak {peak} vs {at}");

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = StereoAudio::from_mono(SR, (0..10 * SR as usize).map(|_| rng.random_range(-0.5f32..0.5)).collect());
        let nv = novelty_curve(&noise).unwrap().values;
        let range = nv.iter().cloned().fold(f64::MIN, f64::max) - nv.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range < 0.1 * v[peak as usize], "noise range {range} vs {}", v[peak as usize]);
    }

    #[test]
    fn smoothness_ordering() {
        let constant = StereoAudio::from_mono(SR, vec![0.25; 3 * SR as usize]);
        assert!(smoothness_value(&constant, 1.5).unwrap().abs() < 1e-9);
        let cv = novelty_curve(&constant).unwrap().values;
        assert!(cv.iter().all(|v| v.abs() < 1e-9));

        let hard = smoothness_value(&two_band(0.0), 5.0).unwrap();
        let soft = smoothness_value(&two_band(2.0), 5.0).unwrap();
        assert!(hard < -0.1, "hard cut {hard}");
        assert!(soft > hard, "crossfade {soft} vs hard {hard}");
        assert!(smoothness_value(&constant, 0.0).is_err());
        assert!(novelty_curve(&StereoAudio::silence(SR, 1000)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn agreement_is_symmetric_and_bounded(
            a in proptest::collection::vec(proptest::array::uniform12(0.0f64..1.0), 1..40),
            b in proptest::collection::vec(proptest::array::uniform12(0.0f64..1.0), 1..40),
        ) {
            let (ca, cb) = (Chromagram { frames: a }, Chromagram { frames: b });
            let x = chroma_agreement(&ca, &cb).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, chroma_agreement(&cb, &ca).unwrap());
        }
    }
}

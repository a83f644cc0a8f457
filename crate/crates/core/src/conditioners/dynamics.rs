//! Frame energy in decibels, smoothed with a Savitzky-Golay filter.

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::conditioners::{Condition, ConditionKind};
use crate::dsp::{frame_count, frame_into, hann, Framing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub window: usize,
    pub hop: usize,
    pub floor_db: f32,
    pub savgol_window: usize,
    pub savgol_order: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            window: 2048,
            hop: 512,
            floor_db: -90.0,
            savgol_window: 31,
            savgol_order: 3,
        }
    }
}

/// Unsmoothed, clamped energy curve. Energy is normalised so that a
/// full-scale sine reads about -3 dB.
pub fn energy_db(signal: &[f32], cfg: &DynamicsConfig) -> Vec<f32> {
    let win = hann(cfg.window);
    let norm = cfg.window as f64 * win.iter().map(|w| (*w as f64).powi(2)).sum::<f64>();
    let n = frame_count(signal.len(), cfg.window, cfg.hop, Framing::Centered);
    let mut frame = vec![0.0f32; cfg.window];
    (0..n)
        .map(|i| {
            frame_into(signal, i, cfg.window, cfg.hop, Framing::Centered, &mut frame);
            // Parseval: sum |X_k|^2 = N * sum (w x)^2
            let e: f64 = frame
                .iter()
                .zip(&win)
                .map(|(x, w)| (*x as f64 * *w as f64).powi(2))
                .sum::<f64>()
                * cfg.window as f64
                / norm;
            let db = if e > 0.0 { 10.0 * e.log10() } else { f64::NEG_INFINITY };
            (db as f32).clamp(cfg.floor_db, 0.0)
        })
        .collect()
}

/// Solves the small symmetric system `a x = b` by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weights `h` such that `sum_j h[j] y[j]` is the least-squares polynomial
/// of `order` through points at offsets `0..len`, evaluated at `at`.
fn savgol_weights(len: usize, order: usize, at: usize) -> Vec<f64> {
    let centre = (len as f64 - 1.0) / 2.0;
    let xs: Vec<f64> = (0..len).map(|j| (j as f64 - centre) / len as f64).collect();
    let m = order + 1;
    let mut ata = vec![vec![0.0; m]; m];
    for &x in &xs {
        for r in 0..m {
            for c in 0..m {
                ata[r][c] += x.powi((r + c) as i32);
            }
        }
    }
    let x0 = xs[at];
    let e: Vec<f64> = (0..m).map(|p| x0.powi(p as i32)).collect();
    // h = A (A^T A)^{-1} e
    let z = solve(ata, e);
    xs.iter()
        .map(|&x| (0..m).map(|p| z[p] * x.powi(p as i32)).sum())
        .collect()
}

/// Savitzky-Golay smoothing. Edges use the polynomial fitted to the first
/// (or last) full window. Windows longer than the signal shrink to the
/// largest odd length that fits.
pub fn savgol_filter(y: &[f32], window: usize, order: usize) -> Result<Vec<f32>> {
    if window % 2 == 0 || window <= order {
        return Err(Error::InvalidParameter(format!(
            "Savitzky-Golay window {window} must be odd and exceed order {order}"
        )));
    }
    let n = y.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let w = if window <= n { window } else if n % 2 == 1 { n } else { n - 1 };
    let order = order.min(w - 1);
    let half = w / 2;
    let centre = savgol_weights(w, order, half);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (start, h) = if i < half {
            (0, savgol_weights(w, order, i))
        } else if i + half >= n {
            (n - w, savgol_weights(w, order, i - (n - w)))
        } else {
            (i - half, centre.clone())
        };
        let v: f64 = h.iter().zip(&y[start..start + w]).map(|(a, b)| a * *b as f64).sum();
        out.push(v as f32);
    }
    Ok(out)
}

pub fn extract_dynamics(audio: &StereoAudio, cfg: &DynamicsConfig) -> Result<Condition> {
    audio.check(SAMPLE_RATE)?;
    let raw = energy_db(&audio.mono(), cfg);
    let smooth: Vec<f32> = savgol_filter(&raw, cfg.savgol_window, cfg.savgol_order)?
        .into_iter()
        .map(|v| v.clamp(cfg.floor_db, 0.0))
        .collect();
    Condition::new(
        ConditionKind::Dynamics,
        1,
        audio.sample_rate as f64 / cfg.hop as f64,
        smooth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(amp: f64, secs: f64) -> StereoAudio {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        StereoAudio::from_mono(
            SAMPLE_RATE,
            (0..n)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44_100.0).sin()) as f32)
                .collect(),
        )
    }

    #[test]
    fn doubling_amplitude_adds_six_db() {
        let cfg = DynamicsConfig::default();
        let a = extract_dynamics(&sine(0.1, 2.0), &cfg).unwrap();
        let b = extract_dynamics(&sine(0.2, 2.0), &cfg).unwrap();
        for i in 4..a.n_frames - 4 {
            assert!((b.data[i] - a.data[i] - 6.0206).abs() < 0.1, "frame {i}");
        }
    }

    #[test]
    fn full_scale_sine_is_minus_three_db() {
        let raw = energy_db(&sine(1.0, 1.0).mono(), &DynamicsConfig::default());
        assert!((raw[40] + 3.0103).abs() < 0.01);
    }

    #[test]
    fn silence_is_floor() {
        let c = extract_dynamics(&StereoAudio::silence(SAMPLE_RATE, 30_000), &DynamicsConfig::default()).unwrap();
        assert!(c.data.iter().all(|&v| v == -90.0));
    }

    #[test]
    fn smoothing_preserves_constant_tone() {
        let cfg = DynamicsConfig::default();
        let x = sine(0.3, 3.0).mono();
        let raw = energy_db(&x, &cfg);
        let smooth = extract_dynamics(&sine(0.3, 3.0), &cfg).unwrap();
        for i in 20..raw.len() - 20 {
            assert!((raw[i] - smooth.data[i]).abs() < 0.01);
        }
    }

    #[test]
    fn gain_raises_every_unclamped_value() {
        let cfg = DynamicsConfig::default();
        let n = 44_100;
        let x: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / 44_100.0;
                (0.2 * (1.0 + (3.0 * t).sin()) * (2.0 * std::f64::consts::PI * 330.0 * t).sin()) as f32
            })
            .collect();
        let a = StereoAudio::from_mono(SAMPLE_RATE, x);
        let lo = extract_dynamics(&a, &cfg).unwrap();
        let hi = extract_dynamics(&a.scaled(1.5), &cfg).unwrap();
        for (l, h) in lo.data.iter().zip(&hi.data) {
            if *l > -90.0 && *h < 0.0 {
                assert!(h - l > 1e-3, "{l} -> {h}");
            }
        }
    }

    #[test]
    fn savgol_reproduces_cubics_and_checks_params() {
        let y: Vec<f32> = (0..50).map(|i| {
            let x = i as f32 / 10.0;
            0.5 * x * x * x - x + 2.0
        }).collect();
        let s = savgol_filter(&y, 31, 3).unwrap();
        for (a, b) in y.iter().zip(&s) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(savgol_filter(&y, 30, 3).is_err());
        assert_eq!(savgol_filter(&[1.0, 2.0], 31, 3).unwrap().len(), 2);
    }

    #[test]
    fn savgol_matches_known_centre_coefficients() {
        // 5-point quadratic smoothing: (-3, 12, 17, 12, -3) / 35
        let h = savgol_weights(5, 2, 2);
        let expect = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Cosine schedule: `alpha(t) = cos(pi t / 2)`, `sigma(t) = sin(pi t / 2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoiseSchedule;

/// Coefficient of `x0` in the velocity target, as a multiple of `sigma`.
pub const BETA_SIGN: f64 = -1.0;

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        if t == 1.0 {
            0.0
        } else {
            (0.5 * std::f64::consts::PI * t).cos()
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (0.5 * std::f64::consts::PI * t).sin()
    }

    /// `x_t = alpha x0 + sigma eps`.
    pub fn noisy(&self, x0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
        check_t(t)?;
        Ok(((x0 * self.alpha(t))? + (eps * self.sigma(t))?)?)
    }

    /// Uniform grid from 1 down to 0 with `steps + 1` points.
    pub fn grid(&self, steps: usize) -> Vec<f64> {
        (0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect()
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `v = alpha(t) eps - sigma(t) x0`.
pub fn v_target(x0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    check_t(t)?;
    if x0.dims() != eps.dims() {
        return Err(Error::InvalidDimension(format!("x0 {:?} vs eps {:?}", x0.dims(), eps.dims())));
    }
    let s = NoiseSchedule;
    Ok(((eps * s.alpha(t))? + (x0 * (BETA_SIGN * s.sigma(t)))?)?)
}

/// Per-sample version: `t` has one entry per leading-axis item.
pub fn v_target_batch(x0: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    let items = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| v_target(&x0.get(i)?, &eps.get(i)?, ti))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn schedule_identity_and_endpoints() {
        let s = NoiseSchedule;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-6);
        }
        assert_eq!((s.alpha(0.0), s.sigma(0.0)), (1.0, 0.0));
        assert_eq!((s.alpha(1.0), s.sigma(1.0)), (0.0, 1.0));
    }

    #[test]
    fn v_target_endpoints_exact() {
        let dev = Device::Cpu;
        let x0 = Tensor::new(&[0.5f32, -1.25, 3.0], &dev).unwrap();
        let eps = Tensor::new(&[0.1f32, 0.2, -0.7], &dev).unwrap();
        let v0: Vec<f32> = v_target(&x0, &eps, 0.0).unwrap().to_vec1().unwrap();
        assert_eq!(v0, vec![0.1, 0.2, -0.7]);
        let v1: Vec<f32> = v_target(&x0, &eps, 1.0).unwrap().to_vec1().unwrap();
        assert_eq!(v1, vec![-0.5, 1.25, -3.0]);
        assert!(matches!(v_target(&x0, &eps, 1.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn orthonormal_pair_gives_unit_velocity() {
        let dev = Device::Cpu;
        let x0 = Tensor::new(&[1.0f64, 0.0], &dev).unwrap();
        let eps = Tensor::new(&[0.0f64, 1.0], &dev).unwrap();
        for i in 0..=20 {
            let v = v_target(&x0, &eps, i as f64 / 20.0).unwrap();
            let n: f64 = v.sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}

//! Rotary position embeddings.
//!
//! A vector of even dimension `d` is split into adjacent pairs
//! `(x1, x2), (x3, x4), ...`; pair `j` is rotated by `m * theta_j` where `m`
//! is the integer position and `theta_j = base^(-2(j-1)/d)`.
//!
//! Rotation phases `m * theta_j` are evaluated in `f64` before the sine and
//! cosine are rounded to `f32`. In pure `f32` the phase itself loses about
//! `1e-3` rad at position 10^4, which breaks the relative-offset identity.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationSpec {
    d: usize,
    base: f64,
    angles: Vec<f64>,
}

/// Builds the per-pair angle table for head dimension `d`.
pub fn build_angles(d: usize, base: f64) -> Result<RotationSpec> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidDimension(format!(
            "rotary dimension must be even and >= 2, got {d}"
        )));
    }
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rotary base must be positive and finite, got {base}"
        )));
    }
    let angles = (0..d / 2)
        .map(|i| base.powf(-2.0 * i as f64 / d as f64))
        .collect();
    Ok(RotationSpec { d, base, angles })
}

impl RotationSpec {
    pub fn new(d: usize) -> Result<Self> {
        build_angles(d, DEFAULT_BASE)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Angles `theta_1 .. theta_{d/2}` in radians per position step.
    pub fn angles(&self) -> Vec<f32> {
        self.angles.iter().map(|&a| a as f32).collect()
    }

    /// `(cos, sin)` of `m * theta_j` for each pair.
    fn phases(&self, m: usize) -> impl Iterator<Item = (f32, f32)> + '_ {
        self.angles.iter().map(move |&theta| {
            let phase = m as f64 * theta;
            (phase.cos() as f32, phase.sin() as f32)
        })
    }

    /// Applies `R_m` to `x`.
    pub fn rotate(&self, x: &[f32], m: usize) -> Result<Vec<f32>> {
        if x.len() != self.d {
            return Err(Error::InvalidDimension(format!(
                "vector has {} entries, rotation expects {}",
                x.len(),
                self.d
            )));
        }
        if m == 0 {
            return Ok(x.to_vec());
        }
        let mut out = Vec::with_capacity(self.d);
        for (pair, (c, s)) in x.chunks_exact(2).zip(self.phases(m)) {
            let (a, b) = (pair[0], pair[1]);
            out.push(a * c - b * s);
            out.push(b * c + a * s);
        }
        Ok(out)
    }

    /// Precomputes interleaved cos/sin tables of shape `(positions, d)` for
    /// the tensor path.
    pub fn table(&self, positions: &[usize], dtype: DType, device: &Device) -> Result<RopeTable> {
        let p = positions.len();
        let mut cos = Vec::with_capacity(p * self.d);
        let mut sin = Vec::with_capacity(p * self.d);
        for &m in positions {
            for (c, s) in self.phases(m) {
                cos.extend_from_slice(&[c, c]);
                sin.extend_from_slice(&[s, s]);
            }
        }
        let cos = Tensor::from_vec(cos, (p, self.d), device)?.to_dtype(dtype)?;
        let sin = Tensor::from_vec(sin, (p, self.d), device)?.to_dtype(dtype)?;
        Ok(RopeTable { cos, sin })
    }
}

/// Cos/sin tables for a fixed list of positions.
#[derive(Debug, Clone)]
pub struct RopeTable {
    cos: Tensor,
    sin: Tensor,
}

impl RopeTable {
    /// Rotates `x` of shape `(..., positions, d)`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let d = dims[dims.len() - 1];
        if d != self.cos.dim(1)? || dims[dims.len() - 2] != self.cos.dim(0)? {
            return Err(Error::InvalidDimension(format!(
                "rope table is {:?}, input is {:?}",
                self.cos.dims(),
                dims
            )));
        }
        let mut paired_shape = dims[..dims.len() - 1].to_vec();
        paired_shape.extend_from_slice(&[d / 2, 2]);
        let paired = x.reshape(paired_shape)?;
        let first = paired.narrow(D::Minus1, 0, 1)?;
        let second = paired.narrow(D::Minus1, 1, 1)?;
        let swapped = Tensor::cat(&[&second.neg()?, &first], D::Minus1)?.reshape(dims)?;
        Ok((x.broadcast_mul(&self.cos)? + swapped.broadcast_mul(&self.sin)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn angles_d4() {
        let spec = build_angles(4, 10_000.0).unwrap();
        let a = spec.angles();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0], 1.0);
        assert!((a[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn angles_d2_and_odd() {
        assert_eq!(build_angles(2, 10_000.0).unwrap().angles(), vec![1.0]);
        assert!(matches!(
            build_angles(3, 10_000.0),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            build_angles(0, 10_000.0),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            build_angles(4, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_angles(4, -3.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn angles_strictly_decreasing() {
        for base in [2.0, 500.0, 10_000.0] {
            let a = build_angles(16, base).unwrap().angles();
            assert_eq!(a[0], 1.0);
            assert!(a.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn rotate_unit_vector() {
        let spec = build_angles(2, 10_000.0).unwrap();
        let y = spec.rotate(&[1.0, 0.0], 1).unwrap();
        assert!((y[0] - 0.5403).abs() < 1e-4);
        assert!((y[1] - 0.8415).abs() < 1e-4);
    }

    #[test]
    fn rotate_dimension_mismatch() {
        let spec = build_angles(4, 10_000.0).unwrap();
        assert!(matches!(
            spec.rotate(&[1.0, 2.0], 3),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn rotate_keeps_norm_of_unit_pair() {
        let spec = build_angles(2, 10_000.0).unwrap();
        for m in [0, 1, 7, 100, 9999] {
            let y = spec.rotate(&[0.6, 0.8], m).unwrap();
            assert!((dot(&y, &y).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn relative_position_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = build_angles(16, 10_000.0).unwrap();
        let q: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        for diff in [0i64, 1, -3, 17, 250] {
            let reference = {
                let (m, n) = (diff.max(0) as usize, (-diff).max(0) as usize);
                dot(&spec.rotate(&q, m).unwrap(), &spec.rotate(&k, n).unwrap())
            };
            for _ in 0..100 {
                let n: i64 = rng.random_range(0..10_000);
                let m = n + diff;
                if m < 0 {
                    continue;
                }
                let got = dot(
                    &spec.rotate(&q, m as usize).unwrap(),
                    &spec.rotate(&k, n as usize).unwrap(),
                );
                assert!((got - reference).abs() < 1e-5, "diff {diff}: {got} vs {reference}");
            }
        }
    }

    #[test]
    fn tensor_path_matches_scalar_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = build_angles(8, 10_000.0).unwrap();
        let positions = [0usize, 3, 4, 90];
        let data: Vec<f32> = (0..positions.len() * 8)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Tensor::from_vec(data.clone(), (1, positions.len(), 8), &Device::Cpu).unwrap();
        let table = spec.table(&positions, DType::F32, &Device::Cpu).unwrap();
        let y: Vec<f32> = table.apply(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (row, &m) in positions.iter().enumerate() {
            let expect = spec.rotate(&data[row * 8..(row + 1) * 8], m).unwrap();
            for j in 0..8 {
                assert!((y[row * 8 + j] - expect[j]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn origin_is_identity(x in proptest::collection::vec(-10.0f32..10.0, 8)) {
            let spec = build_angles(8, 10_000.0).unwrap();
            prop_assert_eq!(spec.rotate(&x, 0).unwrap(), x);
        }

        #[test]
        fn pair_norms_preserved(
            x in proptest::collection::vec(-1.0f32..1.0, 8),
            m in 0usize..=10_000,
        ) {
            let spec = build_angles(8, 10_000.0).unwrap();
            let y = spec.rotate(&x, m).unwrap();
            for (a, b) in x.chunks(2).zip(y.chunks(2)) {
                let na = (a[0] as f64).hypot(a[1] as f64);
                let nb = (b[0] as f64).hypot(b[1] as f64);
                prop_assert!((na - nb).abs() < 1e-6);
            }
        }

        #[test]
        fn rotations_compose(
            x in proptest::collection::vec(-1.0f32..1.0, 8),
            m in 0usize..5_000,
            n in 0usize..5_000,
        ) {
            let spec = build_angles(8, 10_000.0).unwrap();
            let twice = spec.rotate(&spec.rotate(&x, m).unwrap(), n).unwrap();
            let once = spec.rotate(&x, m + n).unwrap();
            for (a, b) in twice.iter().zip(&once) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

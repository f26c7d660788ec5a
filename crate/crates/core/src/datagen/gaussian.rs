use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassBits, PairBatch};
use crate::nn::Matrix;
use crate::{Error, Result};

/// `x ~ N(0, I)`, `y = rho x + sqrt(1 - rho^2) eps` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub dim: usize,
    #[serde(default)]
    pub rho: f64,
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dataset.dim", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(
                "dataset.rho",
                format!("rho must lie in [0, 1), got {}", self.rho),
            ));
        }
        Ok(())
    }

    /// `-(dim / 2) ln(1 - rho^2)` nats.
    pub fn true_mi_nats(&self) -> f64 {
        -(self.dim as f64 / 2.0) * (1.0 - self.rho * self.rho).ln()
    }
}

/// Inverts the Gaussian MI formula: `rho = sqrt(1 - exp(-2 I / dim))`.
pub fn gaussian_rho_for_mi(dim: usize, target_mi_nats: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(target_mi_nats >= 0.0) || !target_mi_nats.is_finite() {
        return Err(Error::Domain(format!(
            "target MI must be finite and non-negative, got {target_mi_nats}"
        )));
    }
    Ok((-(-2.0 * target_mi_nats / dim as f64).exp_m1()).sqrt())
}

pub fn sample_gaussian_pair<R: Rng + ?Sized>(spec: &GaussianSpec, k: usize, rng: &mut R) -> Result<PairBatch> {
    spec.validate()?;
    let d = spec.dim;
    let noise_scale = (1.0 - spec.rho * spec.rho).sqrt();
    let mut x = Vec::with_capacity(k * d);
    let mut y = Vec::with_capacity(k * d);
    for _ in 0..k * d {
        let xi: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        x.push(xi);
        y.push(spec.rho * xi + noise_scale * eps);
    }
    Ok(PairBatch {
        x: Matrix::from_vec(k, d, x)?,
        y: Matrix::from_vec(k, d, y)?,
        class_bits_x: ClassBits::empty(k),
        class_bits_y: ClassBits::empty(k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn rho_inversion_examples() {
        assert_eq!(gaussian_rho_for_mi(10, 0.0).unwrap(), 0.0);
        let rho = gaussian_rho_for_mi(10, 2.0 * std::f64::consts::LN_2).unwrap();
        assert!((rho - 0.4920).abs() < 1e-4, "{rho}");
        let rho1 = gaussian_rho_for_mi(1, 0.5).unwrap();
        assert!((rho1 - (1.0 - (-1.0f64).exp()).sqrt()).abs() < 1e-15);
        assert!((rho1 - 0.7951).abs() < 5e-5);
        for (d, mi) in [(10, 1.386), (3, 0.01), (20, 6.9)] {
            let r = gaussian_rho_for_mi(d, mi).unwrap();
            let spec = GaussianSpec { dim: d, rho: r };
            assert!((spec.true_mi_nats() - mi).abs() < 1e-12);
        }
        assert!(gaussian_rho_for_mi(10, -1.0).is_err());
    }

    #[test]
    fn independent_at_zero_rho() {
        let spec = GaussianSpec { dim: 2, rho: 0.0 };
        let b = sample_gaussian_pair(&spec, 10_000, &mut seeded(1)).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = (0..10_000).map(|i| b.x.get(i, c)).collect();
            let ys: Vec<f64> = (0..10_000).map(|i| b.y.get(i, c)).collect();
            assert!(correlation(&xs, &ys).abs() < 0.05);
        }
    }

    #[test]
    fn near_one_rho_copies_x() {
        let spec = GaussianSpec { dim: 3, rho: 0.9999 };
        let b = sample_gaussian_pair(&spec, 100, &mut seeded(2)).unwrap();
        for (a, c) in b.x.data().iter().zip(b.y.data()) {
            assert!((a - c).abs() < 0.1);
        }
    }

    #[test]
    fn empirical_correlation_matches_rho() {
        let spec = GaussianSpec { dim: 1, rho: 0.6 };
        let b = sample_gaussian_pair(&spec, 20_000, &mut seeded(3)).unwrap();
        assert!((correlation(b.x.data(), b.y.data()) - 0.6).abs() < 0.02);
    }

    #[test]
    fn two_bits_at_dim_ten() {
        let spec = GaussianSpec { dim: 10, rho: 0.4920 };
        let bits = spec.true_mi_nats() / std::f64::consts::LN_2;
        assert!((bits - 2.0).abs() < 1e-3, "{bits}");
    }
}

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Omega, StochasticProblem};
use crate::error::{HarpError, Result};
use crate::record::NoiseMode;

/// The skew-quartic loss
/// `L(θ) = θᵀBᵀBθ + 0.1 Σ (Bθ)_i³ + 0.01 Σ (Bθ)_i⁴`
/// where `B` is the upper-triangular matrix of ones divided by `d`.
///
/// `θ* = 0` and `H(0) = 2BᵀB` has one dominant eigenvalue with the rest close
/// to zero. Observations add `N(0, σ²)` noise; under CRN the same draw is shared
/// by all queries of an iteration (and cancels in differences).
#[derive(Clone, Debug)]
pub struct SkewQuartic {
    b: DMatrix<f64>,
    sigma: f64,
    mode: NoiseMode,
    optimum: DVector<f64>,
}

impl SkewQuartic {
    pub fn new(d: usize, mode: NoiseMode, sigma: f64) -> Result<Self> {
        if d == 0 {
            return Err(HarpError::InvalidArgument("dimension must be at least 1".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(HarpError::InvalidArgument(format!("noise level σ = {sigma} must be nonnegative")));
        }
        let b = DMatrix::from_fn(d, d, |i, j| if j >= i { 1.0 / d as f64 } else { 0.0 });
        Ok(SkewQuartic { b, sigma, mode, optimum: DVector::zeros(d) })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn y(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.b * theta
    }
}

/// Noise-free skew-quartic value.
pub fn skew_quartic(theta: &DVector<f64>) -> f64 {
    SkewQuartic::new(theta.len(), NoiseMode::Iid, 0.0).map(|p| p.loss(theta)).unwrap_or(0.0)
}

impl StochasticProblem for SkewQuartic {
    fn dimension(&self) -> usize {
        self.b.nrows()
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.y(theta).iter().map(|&y| y * y + 0.1 * y * y * y + 0.01 * y * y * y * y).sum()
    }

    fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }

    fn sample_omega(&self, rng: &mut dyn RngCore) -> Omega {
        if self.sigma == 0.0 {
            Omega::None
        } else {
            Omega::Additive(self.sigma * rng.sample::<f64, _>(StandardNormal))
        }
    }

    fn observe(&self, theta: &DVector<f64>, omega: &Omega) -> f64 {
        match omega {
            Omega::Additive(e) => self.loss(theta) + e,
            _ => self.loss(theta),
        }
    }

    fn gradient(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.y(theta).map(|y| 2.0 * y + 0.3 * y * y + 0.04 * y * y * y);
        Some(self.b.tr_mul(&s))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let w = self.y(theta).map(|y| 2.0 + 0.6 * y + 0.12 * y * y);
        let wb = DMatrix::from_diagonal(&w) * &self.b;
        Some(crate::hessian::symmetrize(&self.b.tr_mul(&wb)))
    }

    fn third_derivative(&self, theta: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> Option<f64> {
        let y = self.y(theta);
        let (bu, bv, bw) = (&self.b * u, &self.b * v, &self.b * w);
        Some((0..y.len()).map(|i| (0.6 + 0.24 * y[i]) * bu[i] * bv[i] * bw[i]).sum())
    }

    fn sample_gradient(&self, theta: &DVector<f64>, _omega: &Omega) -> Option<DVector<f64>> {
        self.gradient(theta)
    }

    fn noise_variance_at_optimum(&self) -> Option<f64> {
        Some(self.sigma * self.sigma)
    }
}

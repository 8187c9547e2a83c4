use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Omega, StochasticProblem};
use crate::error::{HarpError, Result};
use crate::record::NoiseMode;

/// How noise enters a quadratic observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseForm {
    /// `ℓ = L + ε`, `ε ~ N(0, σ²)`.
    Additive,
    /// `ℓ = L + ωᵀθ`, `ω ~ N(0, σ² I)`.
    Linear,
}

/// `L(θ) = ½ θᵀHθ` with optimum `θ* = 0`.
///
/// By default IID mode uses additive noise and CRN mode uses linear noise, for
/// which `𝗀(θ, ω) = Hθ + ω`. Additive noise under CRN cancels exactly in every
/// difference of queries.
#[derive(Clone, Debug)]
pub struct Quadratic {
    h: DMatrix<f64>,
    sigma: f64,
    mode: NoiseMode,
    form: NoiseForm,
    optimum: DVector<f64>,
}

impl Quadratic {
    pub fn new(h: DMatrix<f64>, mode: NoiseMode, sigma: f64) -> Result<Self> {
        let form = match mode {
            NoiseMode::Iid => NoiseForm::Additive,
            NoiseMode::Crn => NoiseForm::Linear,
        };
        Self::with_noise_form(h, mode, form, sigma)
    }

    pub fn with_noise_form(h: DMatrix<f64>, mode: NoiseMode, form: NoiseForm, sigma: f64) -> Result<Self> {
        if !h.is_square() || h.nrows() == 0 {
            return Err(HarpError::InvalidArgument("Hessian must be a nonempty square matrix".into()));
        }
        if !crate::hessian::is_symmetric(&h) {
            return Err(HarpError::InvalidArgument("Hessian must be symmetric".into()));
        }
        if h.clone().cholesky().is_none() {
            let min = h.clone().symmetric_eigenvalues().min();
            return Err(HarpError::NotPositiveDefinite { min_eigenvalue: min });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(HarpError::InvalidArgument(format!("noise level σ = {sigma} must be nonnegative")));
        }
        let d = h.nrows();
        Ok(Quadratic { h, sigma, mode, form, optimum: DVector::zeros(d) })
    }

    pub fn diagonal(diag: &[f64], mode: NoiseMode, sigma: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), mode, sigma)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn noise_form(&self) -> NoiseForm {
        self.form
    }
}

/// Free-function constructor.
pub fn make_quadratic(h: DMatrix<f64>, mode: NoiseMode, sigma: f64) -> Result<Quadratic> {
    Quadratic::new(h, mode, sigma)
}

impl StochasticProblem for Quadratic {
    fn dimension(&self) -> usize {
        self.h.nrows()
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.h * theta))
    }

    fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }

    fn sample_omega(&self, rng: &mut dyn RngCore) -> Omega {
        if self.sigma == 0.0 {
            return Omega::None;
        }
        match self.form {
            NoiseForm::Additive => Omega::Additive(self.sigma * rng.sample::<f64, _>(StandardNormal)),
            NoiseForm::Linear => {
                Omega::Linear(DVector::from_fn(self.dimension(), |_, _| self.sigma * rng.sample::<f64, _>(StandardNormal)))
            }
        }
    }

    fn observe(&self, theta: &DVector<f64>, omega: &Omega) -> f64 {
        let l = self.loss(theta);
        match omega {
            Omega::Additive(e) => l + e,
            Omega::Linear(w) => l + w.dot(theta),
            _ => l,
        }
    }

    fn gradient(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.h * theta)
    }

    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.h.clone())
    }

    fn third_derivative(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Option<f64> {
        Some(0.0)
    }

    fn sample_gradient(&self, theta: &DVector<f64>, omega: &Omega) -> Option<DVector<f64>> {
        let g = &self.h * theta;
        Some(match omega {
            Omega::Linear(w) => g + w,
            _ => g,
        })
    }

    fn noise_variance_at_optimum(&self) -> Option<f64> {
        Some(match self.form {
            NoiseForm::Additive => self.sigma * self.sigma,
            // ωᵀθ* = 0 at θ* = 0.
            NoiseForm::Linear => 0.0,
        })
    }
}

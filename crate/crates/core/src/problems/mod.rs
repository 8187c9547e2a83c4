//! Stochastic problems: a true loss `L(θ) = E ℓ(θ, ω)` and a noisy oracle `ℓ(θ, ω)`.

mod finite_sum;
mod quadratic;
mod skew_quartic;

pub use finite_sum::{make_finite_sum, FiniteSum, SoftMarginComponent};
pub use quadratic::{make_quadratic, NoiseForm, Quadratic};
pub use skew_quartic::{skew_quartic, SkewQuartic};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::record::NoiseMode;

/// One realization of the randomness `ω` of a problem.
#[derive(Clone, Debug, PartialEq)]
pub enum Omega {
    /// No randomness.
    None,
    /// Additive scalar noise `ℓ = L + ε`.
    Additive(f64),
    /// Linear noise `ℓ = L + ωᵀθ`.
    Linear(DVector<f64>),
    /// Indices of the sampled components of a finite sum.
    Subsample(Vec<usize>),
}

/// Binds the queries of one iteration to the noise they see.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseHandle {
    /// Every query draws a fresh realization.
    Fresh,
    /// All queries reuse this realization.
    Common(Omega),
}

impl NoiseHandle {
    /// Opens the handle for one iteration: under CRN this draws the shared `ω` now.
    pub fn open(problem: &dyn StochasticProblem, rng: &mut dyn RngCore) -> Self {
        match problem.noise_mode() {
            NoiseMode::Iid => NoiseHandle::Fresh,
            NoiseMode::Crn => NoiseHandle::Common(problem.sample_omega(rng)),
        }
    }
}

/// A zeroth-order oracle with optional analytic derivatives for diagnostics.
pub trait StochasticProblem: Send + Sync {
    fn dimension(&self) -> usize;

    /// `L(θ)`.
    fn loss(&self, theta: &DVector<f64>) -> f64;

    /// `θ*`.
    fn optimum(&self) -> &DVector<f64>;

    fn noise_mode(&self) -> NoiseMode;

    fn sample_omega(&self, rng: &mut dyn RngCore) -> Omega;

    /// `ℓ(θ, ω)`.
    fn observe(&self, theta: &DVector<f64>, omega: &Omega) -> f64;

    /// One oracle query under `handle`.
    fn query(&self, theta: &DVector<f64>, handle: &NoiseHandle, rng: &mut dyn RngCore) -> f64 {
        match handle {
            NoiseHandle::Fresh => {
                let omega = self.sample_omega(rng);
                self.observe(theta, &omega)
            }
            NoiseHandle::Common(omega) => self.observe(theta, omega),
        }
    }

    fn gradient(&self, _theta: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// `L⁽³⁾(θ)` applied to `(u, v, w)`.
    fn third_derivative(&self, _theta: &DVector<f64>, _u: &DVector<f64>, _v: &DVector<f64>, _w: &DVector<f64>) -> Option<f64> {
        None
    }

    /// `𝗀(θ, ω) = ∂ℓ(θ, ω)/∂θ`.
    fn sample_gradient(&self, _theta: &DVector<f64>, _omega: &Omega) -> Option<DVector<f64>> {
        None
    }

    /// `Var[ℓ(θ*, ω)]`.
    fn noise_variance_at_optimum(&self) -> Option<f64> {
        None
    }

    /// `(magnitude term, attack-style term)` for problems that split that way.
    fn loss_components(&self, _theta: &DVector<f64>) -> Option<(f64, f64)> {
        None
    }
}

/// Newton iterations on an analytic gradient and Hessian, used to locate optima
/// of strictly convex problems at construction.
pub(crate) fn newton_minimize(
    start: DVector<f64>,
    loss: impl Fn(&DVector<f64>) -> f64,
    gradient: impl Fn(&DVector<f64>) -> DVector<f64>,
    hessian: impl Fn(&DVector<f64>) -> DMatrix<f64>,
) -> DVector<f64> {
    let mut x = start;
    for _ in 0..200 {
        let g = gradient(&x);
        if g.norm() < 1e-14 {
            break;
        }
        let Some(step) = hessian(&x).cholesky().map(|c| c.solve(&g)) else { break };
        let f0 = loss(&x);
        let mut t = 1.0;
        let mut next = &x - &step * t;
        while loss(&next) > f0 && t > 1e-12 {
            t *= 0.5;
            next = &x - &step * t;
        }
        if (&next - &x).norm() <= 1e-16 * (1.0 + x.norm()) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

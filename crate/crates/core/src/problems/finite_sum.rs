use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{newton_minimize, Omega, StochasticProblem};
use crate::error::{HarpError, Result};
use crate::record::NoiseMode;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A smooth component `½ Σ_j q_j (θ_j − z_j)² + τ·softplus((b − uᵀθ)/τ)`.
///
/// The soft-margin term is zero-ish once `uᵀθ` clears the margin `b`, in the
/// spirit of a per-example attack loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMarginComponent {
    pub center: DVector<f64>,
    pub curvature: DVector<f64>,
    pub direction: DVector<f64>,
    pub margin: f64,
    pub temperature: f64,
}

impl SoftMarginComponent {
    fn margin_arg(&self, theta: &DVector<f64>) -> f64 {
        (self.margin - self.direction.dot(theta)) / self.temperature
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        let quad: f64 = (0..theta.len()).map(|j| 0.5 * self.curvature[j] * (theta[j] - self.center[j]).powi(2)).sum();
        quad + self.temperature * softplus(self.margin_arg(theta))
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let s = sigmoid(self.margin_arg(theta));
        DVector::from_fn(theta.len(), |j, _| self.curvature[j] * (theta[j] - self.center[j]) - s * self.direction[j])
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let s = sigmoid(self.margin_arg(theta));
        let k = s * (1.0 - s) / self.temperature;
        let mut h = &self.direction * self.direction.transpose() * k;
        for j in 0..theta.len() {
            h[(j, j)] += self.curvature[j];
        }
        h
    }

    fn third(&self, theta: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let s = sigmoid(self.margin_arg(theta));
        let k = -s * (1.0 - s) * (1.0 - 2.0 * s) / (self.temperature * self.temperature);
        k * self.direction.dot(u) * self.direction.dot(v) * self.direction.dot(w)
    }
}

/// `L(θ) = κ‖θ‖² + (1/I) Σ_i loss_i(θ)`, observed through the average of `J`
/// components drawn uniformly without replacement.
#[derive(Clone, Debug)]
pub struct FiniteSum {
    components: Vec<SoftMarginComponent>,
    subsample: usize,
    kappa: f64,
    mode: NoiseMode,
    dimension: usize,
    optimum: DVector<f64>,
}

impl FiniteSum {
    pub fn new(components: Vec<SoftMarginComponent>, subsample: usize, kappa: f64, mode: NoiseMode) -> Result<Self> {
        let count = components.len();
        if count == 0 {
            return Err(HarpError::InvalidArgument("finite sum needs at least one component".into()));
        }
        if subsample == 0 || subsample > count {
            return Err(HarpError::InvalidArgument(format!("subsample size J = {subsample} must lie in [1, I = {count}]")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(HarpError::InvalidArgument(format!("κ = {kappa} must be nonnegative")));
        }
        let d = components[0].center.len();
        for c in &components {
            let dims = [c.center.len(), c.curvature.len(), c.direction.len()];
            if dims.iter().any(|&n| n != d) {
                return Err(HarpError::InvalidArgument("components disagree on dimension".into()));
            }
            if c.curvature.iter().any(|&q| q < 0.0) || !(c.temperature > 0.0) {
                return Err(HarpError::InvalidArgument("component curvatures must be ≥ 0 and temperatures > 0".into()));
            }
        }
        let mut p = FiniteSum { components, subsample, kappa, mode, dimension: d, optimum: DVector::zeros(d) };
        let optimum = newton_minimize(DVector::zeros(d), |x| p.loss(x), |x| p.full_gradient(x), |x| p.full_hessian(x));
        p.optimum = optimum;
        Ok(p)
    }

    /// Random synthetic components: shared curvatures log-spaced over `[0.01, 10]`,
    /// standard normal centers, directions `N(0, I/d)`, unit margins, temperature 1/2.
    pub fn synthetic(
        count: usize,
        subsample: usize,
        kappa: f64,
        d: usize,
        mode: NoiseMode,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if d == 0 {
            return Err(HarpError::InvalidArgument("dimension must be at least 1".into()));
        }
        let curvature = DVector::from_fn(d, |j, _| {
            let t = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
            10f64.powf(1.0 - 3.0 * t)
        });
        let scale = 1.0 / (d as f64).sqrt();
        let components = (0..count)
            .map(|_| SoftMarginComponent {
                center: DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)),
                curvature: curvature.clone(),
                direction: DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
                margin: 1.0,
                temperature: 0.5,
            })
            .collect();
        Self::new(components, subsample, kappa, mode)
    }

    pub fn components(&self) -> &[SoftMarginComponent] {
        &self.components
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn mean_over<'a>(&'a self, idx: impl ExactSizeIterator<Item = usize> + 'a, f: impl Fn(&SoftMarginComponent) -> f64) -> f64 {
        let n = idx.len() as f64;
        idx.map(|i| f(&self.components[i])).sum::<f64>() / n
    }

    fn gradient_over(&self, theta: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        let mut g = theta * (2.0 * self.kappa);
        let n = idx.len() as f64;
        for &i in idx {
            g += self.components[i].gradient(theta) / n;
        }
        g
    }

    fn full_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let all: Vec<usize> = (0..self.components.len()).collect();
        self.gradient_over(theta, &all)
    }

    fn full_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dimension;
        let n = self.components.len() as f64;
        let mut h = DMatrix::identity(d, d) * (2.0 * self.kappa);
        for c in &self.components {
            h += c.hessian(theta) / n;
        }
        h
    }
}

/// Free-function constructor.
pub fn make_finite_sum(
    count: usize,
    subsample: usize,
    kappa: f64,
    components: Vec<SoftMarginComponent>,
    mode: NoiseMode,
) -> Result<FiniteSum> {
    if components.len() != count {
        return Err(HarpError::InvalidArgument(format!("expected {count} components, got {}", components.len())));
    }
    FiniteSum::new(components, subsample, kappa, mode)
}

impl StochasticProblem for FiniteSum {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.kappa * theta.norm_squared() + self.mean_over(0..self.components.len(), |c| c.value(theta))
    }

    fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    fn noise_mode(&self) -> NoiseMode {
        self.mode
    }

    fn sample_omega(&self, rng: &mut dyn RngCore) -> Omega {
        if self.subsample == self.components.len() {
            return Omega::None;
        }
        Omega::Subsample(index::sample(rng, self.components.len(), self.subsample).into_vec())
    }

    fn observe(&self, theta: &DVector<f64>, omega: &Omega) -> f64 {
        match omega {
            Omega::Subsample(idx) => self.kappa * theta.norm_squared() + self.mean_over(idx.iter().copied(), |c| c.value(theta)),
            _ => self.loss(theta),
        }
    }

    fn gradient(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.full_gradient(theta))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.full_hessian(theta))
    }

    fn third_derivative(&self, theta: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> Option<f64> {
        Some(self.mean_over(0..self.components.len(), |c| c.third(theta, u, v, w)))
    }

    fn sample_gradient(&self, theta: &DVector<f64>, omega: &Omega) -> Option<DVector<f64>> {
        Some(match omega {
            Omega::Subsample(idx) => self.gradient_over(theta, idx),
            _ => self.full_gradient(theta),
        })
    }

    fn noise_variance_at_optimum(&self) -> Option<f64> {
        let n = self.components.len();
        if n == 1 {
            return Some(0.0);
        }
        let values: Vec<f64> = self.components.iter().map(|c| c.value(&self.optimum)).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let pop = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let j = self.subsample as f64;
        Some(pop / j * (n as f64 - j) / (n as f64 - 1.0))
    }

    fn loss_components(&self, theta: &DVector<f64>) -> Option<(f64, f64)> {
        Some((self.kappa * theta.norm_squared(), self.mean_over(0..self.components.len(), |c| c.value(theta))))
    }
}

//! Asymptotic predictions (mean system, Lyapunov covariance, bias vector, CRN
//! noise covariance, trace formulas, complexity) and the empirical estimators
//! that confront them with run data.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::RngCore;

use crate::error::{HarpError, Result};
use crate::gains::{Exponent, GainSchedule};
use crate::perturbation::PerturbationScheme;
use crate::problems::StochasticProblem;
use crate::record::{NoiseMode, RunRecord};

/// Constants entering the limit law of `k^{τ/2}(θ̂_k − θ*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticsSpec {
    pub a: f64,
    pub c: f64,
    pub alpha: Exponent,
    pub gamma: Exponent,
    /// `Γ = a H(θ*)`.
    pub gamma_matrix: DMatrix<f64>,
    /// Limit of the perturbation precision `Σ_k`.
    pub sigma: DMatrix<f64>,
    /// `Var[ℓ(θ*, ω)]`.
    pub var_at_opt: f64,
}

/// `μ`, `B` and the exponent `τ` of the limit law.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticsResult {
    pub mu: DVector<f64>,
    pub b: DMatrix<f64>,
    pub tau: f64,
}

impl AsymptoticsResult {
    /// `‖μ‖² + tr(B)`, the asymptotic mean squared error constant.
    pub fn mse_constant(&self) -> f64 {
        self.mu.norm_squared() + self.b.trace()
    }
}

/// Monte-Carlo estimate with componentwise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasVector {
    pub t: DVector<f64>,
    pub standard_error: DVector<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub standard_error: DMatrix<f64>,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complexity {
    pub iterations: f64,
    pub queries: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub standard_error: f64,
    pub points: usize,
}

/// Distances `‖θ̂_k − θ*‖` on a shared iteration grid, one row per replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceCurves {
    pub iterations: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
}

impl DistanceCurves {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| HarpError::InvalidArgument("no records".into()))?;
        if records.iter().any(|r| r.iteration != first.iteration) {
            return Err(HarpError::InvalidArgument("records have different iteration grids".into()));
        }
        Ok(DistanceCurves {
            iterations: first.iteration.clone(),
            distances: records.iter().map(|r| r.distance.clone()).collect(),
        })
    }

    /// Cross-replicate root mean square distance at each grid point.
    pub fn rms(&self) -> Vec<f64> {
        let r = self.distances.len() as f64;
        (0..self.iterations.len()).map(|i| (self.distances.iter().map(|d| d[i] * d[i]).sum::<f64>() / r).sqrt()).collect()
    }
}

fn indicator_one(e: Exponent) -> bool {
    e.ratio() == Ratio::from_integer(1)
}

impl AsymptoticsSpec {
    pub fn new(schedule: &GainSchedule, hessian_at_opt: &DMatrix<f64>, sigma: DMatrix<f64>, var_at_opt: f64) -> Result<Self> {
        let d = hessian_at_opt.nrows();
        if !hessian_at_opt.is_square() || sigma.shape() != (d, d) {
            return Err(HarpError::InvalidArgument("H(θ*) and Σ must be square of equal size".into()));
        }
        if !(var_at_opt >= 0.0) {
            return Err(HarpError::InvalidArgument(format!("variance {var_at_opt} must be nonnegative")));
        }
        Ok(AsymptoticsSpec {
            a: schedule.a,
            c: schedule.c,
            alpha: schedule.alpha,
            gamma: schedule.gamma,
            gamma_matrix: hessian_at_opt * schedule.a,
            sigma,
            var_at_opt,
        })
    }

    /// `τ = α − 2γ`, exact.
    pub fn tau_exact(&self) -> Ratio<i64> {
        self.alpha.ratio() - self.gamma.ratio() * 2
    }

    pub fn tau(&self) -> f64 {
        let t = self.tau_exact();
        *t.numer() as f64 / *t.denom() as f64
    }

    /// `τ₊ = τ·[α = 1]`.
    pub fn tau_plus(&self) -> f64 {
        if indicator_one(self.alpha) {
            self.tau()
        } else {
            0.0
        }
    }

    /// `α₊ = α·[α = 1]`.
    pub fn alpha_plus(&self) -> f64 {
        if indicator_one(self.alpha) {
            1.0
        } else {
            0.0
        }
    }

    /// Whether `[α = 6γ]` switches the bias vector on.
    pub fn bias_active(&self) -> bool {
        bias_indicator(self.alpha, self.gamma)
    }

    /// IID noise: `(Γ − τ₊I/2)μ = t` and the Lyapunov equation with
    /// right side `a² Var Σ / (2c²)`.
    pub fn iid(&self, t: &DVector<f64>) -> Result<AsymptoticsResult> {
        let tp = self.tau_plus();
        let mu = asymptotic_mean(&self.gamma_matrix, tp, t)?;
        let rhs = iid_covariance_rhs(self.a, self.c, self.var_at_opt, &self.sigma)?;
        let b = solve_lyapunov(&self.gamma_matrix, tp, &rhs)?;
        Ok(AsymptoticsResult { mu, b, tau: self.tau() })
    }

    /// CRN noise: zero mean, rate exponent `α`, right side `a² Σ̂`.
    pub fn crn(&self, sigma_hat: &DMatrix<f64>) -> Result<AsymptoticsResult> {
        let d = self.gamma_matrix.nrows();
        let b = solve_lyapunov(&self.gamma_matrix, self.alpha_plus(), &(sigma_hat * (self.a * self.a)))?;
        Ok(AsymptoticsResult { mu: DVector::zeros(d), b, tau: self.alpha.as_f64() })
    }
}

/// `[α = 6γ]` on exact rationals.
pub fn bias_indicator(alpha: Exponent, gamma: Exponent) -> bool {
    alpha.ratio() == gamma.ratio() * 6
}

fn symmetric_part_checked(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(HarpError::InvalidArgument(format!("{name} must be square")));
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(HarpError::InvalidArgument(format!("{name} must be symmetric (asymmetry {asym:e})")));
    }
    Ok((m + m.transpose()) * 0.5)
}

fn shifted_eigen(gamma: &DMatrix<f64>, tau_plus: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let g = symmetric_part_checked(gamma, "Γ")?;
    let d = g.nrows();
    let shifted = g - DMatrix::identity(d, d) * (tau_plus / 2.0);
    let eig = shifted.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(HarpError::Unstable { eigenvalue: min + tau_plus / 2.0, threshold: tau_plus / 2.0 });
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

/// Solves `(Γ − τ₊I/2)B + B(Γᵀ − τ₊I/2) = rhs` for symmetric `Γ`.
///
/// In the eigenbasis `Γ − τ₊I/2 = PΛPᵀ` the equation decouples entrywise:
/// `B̃_ij = (PᵀRP)_ij / (λ_i + λ_j)`.
pub fn solve_lyapunov(gamma: &DMatrix<f64>, tau_plus: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = gamma.nrows();
    if rhs.shape() != (d, d) {
        return Err(HarpError::InvalidArgument("right side must match Γ".into()));
    }
    let r = symmetric_part_checked(rhs, "right side")?;
    let (p, lambda) = shifted_eigen(gamma, tau_plus)?;
    let rt = p.transpose() * r * &p;
    let bt = DMatrix::from_fn(d, d, |i, j| rt[(i, j)] / (lambda[i] + lambda[j]));
    let b = &p * bt * p.transpose();
    Ok((&b + b.transpose()) * 0.5)
}

/// Solves `(Γ − τ₊I/2)μ = t`.
pub fn asymptotic_mean(gamma: &DMatrix<f64>, tau_plus: f64, t: &DVector<f64>) -> Result<DVector<f64>> {
    let d = gamma.nrows();
    if !gamma.is_square() || t.len() != d {
        return Err(HarpError::InvalidArgument("Γ must be square and match t".into()));
    }
    if t.iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(d));
    }
    let m = gamma - DMatrix::identity(d, d) * (tau_plus / 2.0);
    let lu = m.clone().lu();
    let mut mu = lu.solve(t).ok_or_else(|| HarpError::Singular("Γ − τ₊I/2".into()))?;
    // One step of iterative refinement.
    if let Some(corr) = lu.solve(&(t - &m * &mu)) {
        mu += corr;
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(HarpError::Singular("Γ − τ₊I/2".into()));
    }
    Ok(mu)
}

/// `t = −(a c²/6)·[α = 6γ]·E[L⁽³⁾(θ*)(Δ, Δ, Δ) m(Δ)]` by Monte Carlo over `scheme`.
#[allow(clippy::too_many_arguments)]
pub fn compute_bias_vector(
    problem: &dyn StochasticProblem,
    scheme: &PerturbationScheme,
    a: f64,
    c: f64,
    alpha: Exponent,
    gamma: Exponent,
    n_mc: usize,
    rng: &mut dyn RngCore,
) -> Result<BiasVector> {
    let d = problem.dimension();
    let opt = problem.optimum();
    let probe = DVector::zeros(d);
    if problem.third_derivative(opt, &probe, &probe, &probe).is_none() {
        return Err(HarpError::Unavailable("third derivative"));
    }
    if !bias_indicator(alpha, gamma) {
        return Ok(BiasVector { t: DVector::zeros(d), standard_error: DVector::zeros(d), samples: 0 });
    }
    if n_mc < 2 {
        return Err(HarpError::InvalidArgument("need at least 2 Monte-Carlo samples".into()));
    }
    let mut sum = DVector::zeros(d);
    let mut sq = DVector::zeros(d);
    for _ in 0..n_mc {
        let draw = scheme.draw(d, rng);
        let l3 = problem
            .third_derivative(opt, &draw.delta, &draw.delta, &draw.delta)
            .ok_or(HarpError::Unavailable("third derivative"))?;
        let x = draw.mapped * l3;
        sq += x.component_mul(&x);
        sum += x;
    }
    let n = n_mc as f64;
    let mean = &sum / n;
    let scale = -a * c * c / 6.0;
    let se = (&sq / n - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt() * scale.abs());
    Ok(BiasVector { t: mean * scale, standard_error: se, samples: n_mc })
}

/// `a² Var[ℓ(θ*, ω)] Σ / (2c²)`.
pub fn iid_covariance_rhs(a: f64, c: f64, var_at_opt: f64, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(c > 0.0) {
        return Err(HarpError::InvalidArgument(format!("c = {c} must be positive")));
    }
    if !(var_at_opt >= 0.0) {
        return Err(HarpError::InvalidArgument(format!("variance {var_at_opt} must be nonnegative")));
    }
    Ok(sigma * (a * a * var_at_opt / (2.0 * c * c)))
}

/// Monte-Carlo `Σ̂` with `Σ̂_ii = E‖𝗀(θ*, ω)‖²` and `Σ̂_ij = E[𝗀_i 𝗀_j]` off the diagonal.
pub fn crn_covariance_rhs(problem: &dyn StochasticProblem, n_mc: usize, rng: &mut dyn RngCore) -> Result<CovarianceEstimate> {
    if problem.noise_mode() != NoiseMode::Crn {
        return Err(HarpError::Unavailable("CRN covariance of a non-CRN problem"));
    }
    if n_mc < 2 {
        return Err(HarpError::InvalidArgument("need at least 2 Monte-Carlo samples".into()));
    }
    let d = problem.dimension();
    let opt = problem.optimum();
    let mut sum = DMatrix::zeros(d, d);
    let mut sq = DMatrix::zeros(d, d);
    for _ in 0..n_mc {
        let omega = problem.sample_omega(rng);
        let g = problem.sample_gradient(opt, &omega).ok_or(HarpError::Unavailable("sample gradient"))?;
        let norm2 = g.norm_squared();
        let x = DMatrix::from_fn(d, d, |i, j| if i == j { norm2 } else { g[i] * g[j] });
        sq += x.component_mul(&x);
        sum += x;
    }
    let n = n_mc as f64;
    let mean = &sum / n;
    let se = (&sq / n - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt());
    Ok(CovarianceEstimate { sigma_hat: mean, standard_error: se, samples: n_mc })
}

fn prefactor(a: f64, c: f64, var: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(HarpError::InvalidArgument(format!("c = {c} must be positive")));
    }
    Ok(a * a * var / (2.0 * c * c))
}

/// `(a² var/(2c²)) Σ 1/(2aλ_i − τ₊)`: trace of `B` with `Σ = I`.
pub fn trace_identity_cov(a: f64, c: f64, var: f64, tau_plus: f64, eigenvalues: &[f64]) -> Result<f64> {
    let p = prefactor(a, c, var)?;
    let mut s = 0.0;
    for &l in eigenvalues {
        let den = 2.0 * a * l - tau_plus;
        if !(den > 0.0) {
            return Err(HarpError::Unstable { eigenvalue: a * l, threshold: tau_plus / 2.0 });
        }
        s += 1.0 / den;
    }
    Ok(p * s)
}

/// `(a² var/(2c²)) Σ 1/(2a − τ₊/λ_i)`: trace of `B` with `Σ = H(θ*)`.
pub fn trace_harp_cov(a: f64, c: f64, var: f64, tau_plus: f64, eigenvalues: &[f64]) -> Result<f64> {
    let p = prefactor(a, c, var)?;
    let mut s = 0.0;
    for &l in eigenvalues {
        let den = 2.0 * a - tau_plus / l;
        if !(l > 0.0 && den > 0.0) {
            return Err(HarpError::Unstable { eigenvalue: a * l, threshold: tau_plus / 2.0 });
        }
        s += 1.0 / den;
    }
    Ok(p * s)
}

/// Iterations `((‖μ‖² + tr B)/ε)^{2/τ*}` and queries `2q((‖μ‖² + tr(B/q))/ε)^{2/τ*}`.
pub fn complexity(eps: f64, tau_star: f64, mu: &DVector<f64>, b: &DMatrix<f64>, q: u32) -> Result<Complexity> {
    if !(eps > 0.0) || !(tau_star > 0.0) || q == 0 {
        return Err(HarpError::InvalidArgument("need ε > 0, τ* > 0 and q ≥ 1".into()));
    }
    let m2 = mu.norm_squared();
    let expo = 2.0 / tau_star;
    let qf = q as f64;
    Ok(Complexity {
        iterations: ((m2 + b.trace()) / eps).powf(expo),
        queries: 2.0 * qf * ((m2 + b.trace() / qf) / eps).powf(expo),
    })
}

/// Least-squares fit of `log y` on `log k` over the points with `k` in `[lo, hi]`.
pub fn fit_log_slope(iterations: &[usize], values: &[f64], window: (usize, usize)) -> Result<RateFit> {
    let (lo, hi) = window;
    if lo < 1 || hi <= lo {
        return Err(HarpError::InvalidArgument(format!("degenerate window [{lo}, {hi}]")));
    }
    let pts: Vec<(f64, f64)> =
        iterations.iter().zip(values).filter(|(k, _)| **k >= lo && **k <= hi).map(|(&k, &y)| ((k as f64).ln(), y.ln())).collect();
    if pts.len() < 3 {
        return Err(HarpError::InvalidArgument(format!("window [{lo}, {hi}] holds {} points", pts.len())));
    }
    if pts.iter().any(|(_, y)| !y.is_finite()) {
        return Err(HarpError::InvalidArgument("non-positive or non-finite values in window".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let standard_error = (sse / (n - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, intercept, standard_error, points: pts.len() })
}

/// Slope of log RMS distance against log k; the window defaults to `[K/10, K]`.
pub fn empirical_rate(curves: &DistanceCurves, window: Option<(usize, usize)>) -> Result<RateFit> {
    if curves.distances.len() < 2 {
        return Err(HarpError::InvalidArgument("need at least 2 replicates".into()));
    }
    if curves.distances.iter().any(|d| d.len() != curves.iterations.len()) {
        return Err(HarpError::InvalidArgument("replicate lengths differ from the grid".into()));
    }
    let k_max = curves.iterations.iter().copied().max().unwrap_or(0);
    let window = window.unwrap_or(((k_max / 10).max(1), k_max));
    if window.1 > k_max {
        return Err(HarpError::InvalidArgument(format!("window end {} exceeds K = {k_max}", window.1)));
    }
    fit_log_slope(&curves.iterations, &curves.rms(), window)
}

/// Sample covariance of `K^{τ/2}(θ̂_K − θ*)` across replicates.
pub fn empirical_scaled_covariance(
    terminals: &[DVector<f64>],
    optimum: &DVector<f64>,
    k: usize,
    tau: f64,
) -> Result<DMatrix<f64>> {
    let r = terminals.len();
    if r < 100 {
        return Err(HarpError::InvalidArgument(format!("need at least 100 replicates, got {r}")));
    }
    let d = optimum.len();
    if terminals.iter().any(|t| t.len() != d) {
        return Err(HarpError::InvalidArgument("terminal iterates differ in dimension".into()));
    }
    let scale = (k as f64).powf(tau / 2.0);
    let xs: Vec<DVector<f64>> = terminals.iter().map(|t| (t - optimum) * scale).collect();
    let mean = xs.iter().fold(DVector::zeros(d), |acc, x| acc + x) / r as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in &xs {
        let e = x - &mean;
        cov += &e * e.transpose();
    }
    cov /= (r - 1) as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

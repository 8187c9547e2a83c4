//! Two-query gradient estimates, four-query Hessian samples, and Monte-Carlo
//! diagnostics of the estimator's bias and noise.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{HarpError, Result};
use crate::perturbation::{PerturbationDraw, PerturbationScheme};
use crate::problems::{NoiseHandle, StochasticProblem};

/// `ĝ = [ℓ(θ + cΔ) − ℓ(θ − cΔ)] m(Δ) / (2c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub ghat: DVector<f64>,
    /// `(ℓ(θ + cΔ), ℓ(θ − cΔ))`.
    pub losses: (f64, f64),
    pub queries_used: u32,
}

/// Rank-two Hessian sample built from four queries, two of them shared with the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianSample {
    pub matrix: DMatrix<f64>,
    /// `ℓ̄ = ℓ(θ+cΔ+c̃Δ̃) − ℓ(θ+cΔ) − ℓ(θ−cΔ+c̃Δ̃) + ℓ(θ−cΔ)`.
    pub lbar: f64,
    /// New queries spent on top of the reused gradient pair.
    pub queries_used: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasNoiseDiagnostic {
    /// Estimate of `E[ĝ] − g(θ)`.
    pub bias_estimate: DVector<f64>,
    /// Componentwise standard error of `bias_estimate`.
    pub bias_standard_error: DVector<f64>,
    /// `mean ‖ĝ − mean(ĝ)‖²`.
    pub noise_second_moment: f64,
    pub samples: usize,
}

fn checked(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        // The caller fills in the iteration index.
        Err(HarpError::NonFinite { iteration: 0, what: format!("{what} = {value}") })
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarpError::InvalidArgument(format!("{name} = {v} must be positive")))
    }
}

/// Two-query gradient estimate around `theta`.
pub fn estimate_gradient(
    problem: &dyn StochasticProblem,
    theta: &DVector<f64>,
    c: f64,
    draw: &PerturbationDraw,
    handle: &NoiseHandle,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    require_positive("c_k", c)?;
    let step = &draw.delta * c;
    let plus = checked(problem.query(&(theta + &step), handle, rng), "ℓ(θ + cΔ)")?;
    let minus = checked(problem.query(&(theta - &step), handle, rng), "ℓ(θ − cΔ)")?;
    let ghat = &draw.mapped * ((plus - minus) / (2.0 * c));
    Ok(GradientEstimate { ghat, losses: (plus, minus), queries_used: 2 })
}

/// Hessian sample reusing the gradient pair `reuse = (ℓ(θ + cΔ), ℓ(θ − cΔ))`.
#[allow(clippy::too_many_arguments)]
pub fn sample_hessian(
    problem: &dyn StochasticProblem,
    theta: &DVector<f64>,
    c: f64,
    c_tilde: f64,
    draw: &PerturbationDraw,
    draw_tilde: &PerturbationDraw,
    handle: &NoiseHandle,
    rng: &mut dyn RngCore,
    reuse: (f64, f64),
) -> Result<HessianSample> {
    require_positive("c_k", c)?;
    require_positive("c̃_k", c_tilde)?;
    let step = &draw.delta * c;
    let shift = &draw_tilde.delta * c_tilde;
    let plus_plus = checked(problem.query(&(theta + &step + &shift), handle, rng), "ℓ(θ + cΔ + c̃Δ̃)")?;
    let minus_plus = checked(problem.query(&(theta - &step + &shift), handle, rng), "ℓ(θ − cΔ + c̃Δ̃)")?;
    let lbar = plus_plus - reuse.0 - minus_plus + reuse.1;
    let scale = lbar / (4.0 * c * c_tilde);
    let (m, mt) = (&draw.mapped, &draw_tilde.mapped);
    let d = m.len();
    // Entry (i, j) and (j, i) are the same two products summed, so the result is
    // symmetric bit for bit.
    let matrix = DMatrix::from_fn(d, d, |i, j| (mt[i] * m[j] + m[i] * mt[j]) * scale);
    Ok(HessianSample { matrix, lbar, queries_used: 2 })
}

/// Monte-Carlo bias and noise of the gradient estimator at a fixed `theta`.
///
/// The bias is averaged through the control variate `ĝ − m(Δ)Δᵀg(θ)`, whose
/// expectation is exactly `E[ĝ] − g(θ)` because `E[m(Δ)Δᵀ] = I`; this removes the
/// `O(1)` spread of `m(Δ)Δᵀg` from the average and leaves only the bias and
/// observation-noise terms.
pub fn diagnose_bias_noise(
    problem: &dyn StochasticProblem,
    theta: &DVector<f64>,
    c: f64,
    scheme: &PerturbationScheme,
    samples: usize,
    perturbation_rng: &mut dyn RngCore,
    noise_rng: &mut dyn RngCore,
) -> Result<BiasNoiseDiagnostic> {
    if samples < 1000 {
        return Err(HarpError::InvalidArgument(format!("need at least 1000 samples, got {samples}")));
    }
    let g = problem.gradient(theta).ok_or(HarpError::Unavailable("analytic gradient"))?;
    let d = theta.len();
    let n = samples as f64;
    let mut resid_sum = DVector::zeros(d);
    let mut resid_sq = DVector::zeros(d);
    let mut ghat_sum = DVector::zeros(d);
    let mut ghat_sq = 0.0;
    for _ in 0..samples {
        let draw = scheme.draw(d, perturbation_rng);
        let handle = NoiseHandle::open(problem, noise_rng);
        let est = estimate_gradient(problem, theta, c, &draw, &handle, noise_rng)?;
        let resid = &est.ghat - &draw.mapped * draw.delta.dot(&g);
        resid_sq += resid.component_mul(&resid);
        resid_sum += resid;
        ghat_sq += est.ghat.norm_squared();
        ghat_sum += est.ghat;
    }
    let bias_estimate = &resid_sum / n;
    let var = (&resid_sq / n - bias_estimate.component_mul(&bias_estimate)).map(|v| v.max(0.0));
    let bias_standard_error = var.map(|v| (v / (n - 1.0)).sqrt());
    let mean = &ghat_sum / n;
    let noise_second_moment = (ghat_sq / n - mean.norm_squared()).max(0.0);
    Ok(BiasNoiseDiagnostic { bias_estimate, bias_standard_error, noise_second_moment, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::spsa_from_signs;
    use crate::problems::{NoiseForm, Omega, Quadratic};
    use crate::record::NoiseMode;
    use crate::rng::{spawn_rng, StreamTag};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let q = Quadratic::diagonal(&[2.0, 1.0], NoiseMode::Iid, 0.0).unwrap();
        let draw = spsa_from_signs(v(&[1.0, 1.0]));
        let mut rng = spawn_rng(0, 0, StreamTag::Noise);
        for c in [0.01, 0.5, 3.0] {
            let est = estimate_gradient(&q, &v(&[1.0, 0.0]), c, &draw, &NoiseHandle::Fresh, &mut rng).unwrap();
            assert!((est.ghat[0] - 2.0).abs() < 1e-12 && (est.ghat[1] - 2.0).abs() < 1e-12, "{}", est.ghat);
            assert_eq!(est.queries_used, 2);
        }
    }

    #[test]
    fn crn_additive_noise_cancels() {
        let h = DMatrix::from_diagonal(&v(&[2.0, 1.0]));
        let q = Quadratic::with_noise_form(h, NoiseMode::Crn, NoiseForm::Additive, 1.0).unwrap();
        let draw = spsa_from_signs(v(&[1.0, -1.0]));
        let theta = v(&[0.5, 0.25]);
        let mut rng = spawn_rng(0, 0, StreamTag::Noise);
        let h1 = NoiseHandle::open(&q, &mut rng);
        let h2 = NoiseHandle::open(&q, &mut rng);
        assert_ne!(h1, h2);
        let a = estimate_gradient(&q, &theta, 0.1, &draw, &h1, &mut rng).unwrap();
        let b = estimate_gradient(&q, &theta, 0.1, &draw, &h2, &mut rng).unwrap();
        let exact = estimate_gradient(&q, &theta, 0.1, &draw, &NoiseHandle::Common(Omega::None), &mut rng).unwrap();
        assert!((&a.ghat - &b.ghat).abs().max() < 1e-12);
        assert!((&a.ghat - &exact.ghat).abs().max() < 1e-12);
    }

    #[test]
    fn hand_expanded_hessian_sample() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let q = Quadratic::new(h, NoiseMode::Iid, 0.0).unwrap();
        let draw = spsa_from_signs(v(&[1.0, 0.0]));
        let tilde = spsa_from_signs(v(&[0.0, 1.0]));
        let theta = v(&[0.3, -0.7]);
        let mut rng = spawn_rng(0, 0, StreamTag::Noise);
        let g = estimate_gradient(&q, &theta, 0.5, &draw, &NoiseHandle::Fresh, &mut rng).unwrap();
        let s = sample_hessian(&q, &theta, 0.5, 0.5, &draw, &tilde, &NoiseHandle::Fresh, &mut rng, g.losses).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((s.matrix - expected).abs().max() < 1e-12);
        assert!((s.lbar - 2.0 * 0.5 * 0.5 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_c() {
        let q = Quadratic::diagonal(&[1.0], NoiseMode::Iid, 0.0).unwrap();
        let draw = spsa_from_signs(v(&[1.0]));
        let mut rng = spawn_rng(0, 0, StreamTag::Noise);
        assert!(estimate_gradient(&q, &v(&[1.0]), 0.0, &draw, &NoiseHandle::Fresh, &mut rng).is_err());
    }

    #[test]
    fn diagnostic_needs_enough_samples() {
        let q = Quadratic::diagonal(&[1.0], NoiseMode::Iid, 0.0).unwrap();
        let mut a = spawn_rng(0, 0, StreamTag::Perturbation);
        let mut b = spawn_rng(0, 0, StreamTag::Noise);
        let r = diagnose_bias_noise(&q, &v(&[1.0]), 0.1, &PerturbationScheme::Spsa, 10, &mut a, &mut b);
        assert!(r.is_err());
    }
}

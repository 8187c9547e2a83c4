//! Running Hessian estimate: the moving average `H̄_k`, its positive definite
//! regularization `Ĥ_k = (H̄_kᵀ H̄_k + ε_k I)^{1/2}`, and the shaping factor that
//! turns `Ĥ_k` into a sampling covariance `Ĥ_k⁻¹`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{HarpError, Result};
use crate::estimators::HessianSample;
use crate::perturbation::{PerturbationScheme, ShapingFactor};

/// Ceiling on `λ_max / λ_min` of `Ĥ`; smaller eigenvalues are clipped up to `λ_max / ceiling`.
pub const DEFAULT_CONDITION_CEILING: f64 = 1e8;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(HarpError::Regularization("matrix has non-finite entries".into()));
    }
    SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| HarpError::Regularization("symmetric eigendecomposition did not converge".into()))
}

fn from_eigen(vectors: &DMatrix<f64>, values: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let d = vectors.nrows();
    let mut scaled = vectors.clone();
    for j in 0..d {
        let s = values(j);
        scaled.column_mut(j).scale_mut(s);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(symmetrize(m));
    e.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `f(H̄) = (H̄ᵀH̄ + εI)^{1/2}`.
///
/// `H̄` is symmetric, so its eigenvectors diagonalize `H̄ᵀH̄` and the result has
/// eigenvalues `sqrt(λ_i² + ε)`; the eigendecomposition is taken of `H̄` itself
/// to avoid squaring its condition number.
pub fn regularize(hbar: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    regularize_with_ceiling(hbar, eps, DEFAULT_CONDITION_CEILING).map(|(m, _)| m)
}

/// Like [`regularize`], also reporting whether the condition ceiling clipped anything.
pub fn regularize_with_ceiling(hbar: &DMatrix<f64>, eps: f64, ceiling: f64) -> Result<(DMatrix<f64>, bool)> {
    if !hbar.is_square() {
        return Err(HarpError::InvalidArgument("H̄ must be square".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(HarpError::InvalidArgument(format!("ε = {eps} must be nonnegative")));
    }
    let e = eigen(&symmetrize(hbar))?;
    let mut values: Vec<f64> = e.eigenvalues.iter().map(|l| (l * l + eps).sqrt()).collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    let floor = max / ceiling;
    let mut clipped = false;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
            clipped = true;
        }
    }
    if max == 0.0 {
        return Err(HarpError::NotPositiveDefinite { min_eigenvalue: 0.0 });
    }
    if clipped {
        log::debug!("condition ceiling {ceiling:e} clipped eigenvalues of the regularized Hessian");
    }
    Ok((from_eigen(&e.eigenvectors, |j| values[j]), clipped))
}

/// Factor `C` with `C Cᵀ = Ĥ⁻¹`.
///
/// The primary route is the Cholesky factor `Ĥ = L Lᵀ`, giving `C = L⁻ᵀ` (upper
/// triangular) and `root = L`. If Cholesky fails the eigendecomposition
/// `Ĥ = P Λ Pᵀ` gives `C = P Λ^{-1/2}` and `root = P Λ^{1/2}`.
pub fn shaping_factor(hhat: &DMatrix<f64>) -> Result<ShapingFactor> {
    if !hhat.is_square() {
        return Err(HarpError::Shaping("Ĥ must be square".into()));
    }
    if hhat.iter().any(|x| !x.is_finite()) {
        return Err(HarpError::Shaping("Ĥ has non-finite entries".into()));
    }
    let d = hhat.nrows();
    if let Some(chol) = Cholesky::new(hhat.clone()) {
        let l = chol.l();
        if let Some(l_inv) = l.clone().solve_lower_triangular(&DMatrix::identity(d, d)) {
            if l_inv.iter().all(|x| x.is_finite()) {
                return Ok(ShapingFactor { factor: l_inv.transpose(), root: l, used_fallback: false });
            }
        }
    }
    let e = eigen(&symmetrize(hhat)).map_err(|e| HarpError::Shaping(e.to_string()))?;
    let min = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(HarpError::NotPositiveDefinite { min_eigenvalue: min });
    }
    let p = &e.eigenvectors;
    let mut factor = p.clone();
    let mut root = p.clone();
    for j in 0..d {
        let s = e.eigenvalues[j].sqrt();
        factor.column_mut(j).scale_mut(1.0 / s);
        root.column_mut(j).scale_mut(s);
    }
    Ok(ShapingFactor { factor, root, used_fallback: true })
}

/// `H̄ ← (1 − w) H̄ + w · sample`.
pub fn update_moving_average(hbar: &DMatrix<f64>, sample: &DMatrix<f64>, w: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(HarpError::InvalidArgument(format!("weight w = {w} must lie in [0, 1]")));
    }
    if hbar.shape() != sample.shape() {
        return Err(HarpError::InvalidArgument("Hessian sample has the wrong shape".into()));
    }
    if w == 0.0 {
        return Ok(hbar.clone());
    }
    if w == 1.0 {
        return Ok(sample.clone());
    }
    Ok(hbar * (1.0 - w) + sample * w)
}

/// The pair `(H̄_k, Ĥ_k)` plus the shaping factor of `Ĥ_k`.
#[derive(Clone, Debug)]
pub struct HessianTracker {
    hbar: DMatrix<f64>,
    hhat: DMatrix<f64>,
    shaping: ShapingFactor,
    updates: usize,
    condition_ceiling: f64,
    clip_events: usize,
}

impl HessianTracker {
    /// `H̄_0 = Ĥ_0 = I`.
    pub fn identity(d: usize) -> Self {
        HessianTracker {
            hbar: DMatrix::identity(d, d),
            hhat: DMatrix::identity(d, d),
            shaping: ShapingFactor::identity(d),
            updates: 0,
            condition_ceiling: DEFAULT_CONDITION_CEILING,
            clip_events: 0,
        }
    }

    pub fn with_condition_ceiling(mut self, ceiling: f64) -> Self {
        self.condition_ceiling = ceiling;
        self
    }

    pub fn hbar(&self) -> &DMatrix<f64> {
        &self.hbar
    }

    pub fn hhat(&self) -> &DMatrix<f64> {
        &self.hhat
    }

    pub fn shaping(&self) -> &ShapingFactor {
        &self.shaping
    }

    /// Number of moving-average updates applied.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Number of regularizations in which the condition ceiling was active.
    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    /// Sampling scheme for the current `Ĥ`.
    pub fn scheme(&self) -> PerturbationScheme {
        PerturbationScheme::Harp { shaping: self.shaping.clone(), hessian: self.hhat.clone() }
    }

    pub fn update(&mut self, sample: &HessianSample, w: f64) -> Result<()> {
        self.hbar = update_moving_average(&self.hbar, &sample.matrix, w)?;
        self.updates += 1;
        Ok(())
    }

    /// Recomputes `Ĥ = f(H̄)` and its shaping factor.
    pub fn regularize(&mut self, eps: f64) -> Result<()> {
        let (hhat, clipped) = regularize_with_ceiling(&self.hbar, eps, self.condition_ceiling)?;
        if clipped {
            self.clip_events += 1;
        }
        self.shaping = shaping_factor(&hhat)?;
        self.hhat = hhat;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(m: DMatrix<f64>) -> HessianSample {
        HessianSample { matrix: m, lbar: 0.0, queries_used: 2 }
    }

    #[test]
    fn degenerate_weights() {
        let hbar = DMatrix::identity(2, 2);
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        assert_eq!(update_moving_average(&hbar, &s, 0.0).unwrap(), hbar);
        assert_eq!(update_moving_average(&hbar, &s, 1.0).unwrap(), s);
        assert!(update_moving_average(&hbar, &s, 1.5).is_err());
        assert!(update_moving_average(&hbar, &s, -0.1).is_err());
    }

    #[test]
    fn convex_combination() {
        let mut t = HessianTracker::identity(2);
        t.update(&sample(DMatrix::identity(2, 2) * 3.0), 0.5).unwrap();
        assert_eq!(t.hbar(), &(DMatrix::identity(2, 2) * 2.0));
        assert_eq!(t.updates(), 1);
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let h = regularize(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_relative_eq!(h, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn diagonal_closed_form() {
        let hbar = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -1.0]));
        let h = regularize(&hbar, 0.25).unwrap();
        assert_relative_eq!(h[(0, 0)], 4.25f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(h[(1, 1)], 1.25f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(h[(0, 1)], 0.0, epsilon = 1e-14);
        assert!(is_symmetric(&h));
    }

    #[test]
    fn shaping_identity_and_diagonal() {
        let s = shaping_factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.factor, DMatrix::identity(3, 3));
        assert!(!s.used_fallback);
        let s = shaping_factor(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        assert_relative_eq!(s.factor, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0])), epsilon = 1e-15);
    }

    #[test]
    fn shaping_rejects_indefinite() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(shaping_factor(&m), Err(HarpError::NotPositiveDefinite { .. })));
        let nan = DMatrix::from_element(2, 2, f64::NAN);
        assert!(shaping_factor(&nan).is_err());
    }

    #[test]
    fn condition_ceiling_clips_small_eigenvalues() {
        let hbar = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        let (h, clipped) = regularize_with_ceiling(&hbar, 1e-30, 1e4).unwrap();
        assert!(clipped);
        assert_relative_eq!(h[(1, 1)], 1e-4, max_relative = 1e-12);
        let mut t = HessianTracker::identity(2).with_condition_ceiling(1e4);
        t.update(&sample(hbar), 1.0).unwrap();
        t.regularize(1e-30).unwrap();
        assert_eq!(t.clip_events(), 1);
    }

    #[test]
    fn regularize_rejects_negative_eps_and_zero_matrix() {
        assert!(regularize(&DMatrix::identity(2, 2), -1.0).is_err());
        assert!(regularize(&DMatrix::zeros(2, 2), 0.0).is_err());
    }
}

//! Random directions `Δ` and their paired mappings `m(Δ)`.
//!
//! Every scheme satisfies `E[Δ] = 0`, `E[m(Δ) Δᵀ] = I` and `m(−Δ) = −m(Δ)`.
//! Each `*_from_*` function is the deterministic map from the underlying base
//! draw, which is what the odd-map property is stated against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HarpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Rademacher components, `m(Δ) = Δ`.
    Spsa,
    /// Uniform on the unit sphere, `m(Δ) = dΔ`.
    Rdsa,
    /// Standard normal, `m(Δ) = Δ`.
    Sfsa,
    /// Normal with covariance `Ĥ⁻¹`, `m(Δ) = ĤΔ`.
    Harp,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Spsa => "spsa",
            SchemeKind::Rdsa => "rdsa",
            SchemeKind::Sfsa => "sfsa",
            SchemeKind::Harp => "harp",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = HarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spsa" => Ok(SchemeKind::Spsa),
            "rdsa" => Ok(SchemeKind::Rdsa),
            "sfsa" => Ok(SchemeKind::Sfsa),
            "harp" => Ok(SchemeKind::Harp),
            _ => Err(HarpError::InvalidConfig(format!("unknown scheme {s:?}"))),
        }
    }
}

/// One perturbation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationDraw {
    pub delta: DVector<f64>,
    pub mapped: DVector<f64>,
}

/// A factorization of a symmetric positive definite `Ĥ` used to sample
/// `Δ = C z` with `C Cᵀ = Ĥ⁻¹`.
///
/// `root` satisfies `root · z = Ĥ Δ`, which gives a second route to `m(Δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapingFactor {
    /// `C` with `C Cᵀ = Ĥ⁻¹`.
    pub factor: DMatrix<f64>,
    /// `R` with `R z = Ĥ C z`.
    pub root: DMatrix<f64>,
    /// Whether the eigendecomposition fallback produced the factor.
    pub used_fallback: bool,
}

impl ShapingFactor {
    pub fn identity(d: usize) -> Self {
        ShapingFactor { factor: DMatrix::identity(d, d), root: DMatrix::identity(d, d), used_fallback: false }
    }

    pub fn dimension(&self) -> usize {
        self.factor.nrows()
    }
}

/// The joint generator of `(Δ, m(Δ))`.
#[derive(Clone, Debug, PartialEq)]
pub enum PerturbationScheme {
    Spsa,
    Rdsa,
    Sfsa,
    Harp { shaping: ShapingFactor, hessian: DMatrix<f64> },
}

impl PerturbationScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            PerturbationScheme::Spsa => SchemeKind::Spsa,
            PerturbationScheme::Rdsa => SchemeKind::Rdsa,
            PerturbationScheme::Sfsa => SchemeKind::Sfsa,
            PerturbationScheme::Harp { .. } => SchemeKind::Harp,
        }
    }

    /// Shaped scheme for a given `Ĥ`.
    pub fn harp(hessian: DMatrix<f64>) -> Result<Self> {
        let shaping = crate::hessian::shaping_factor(&hessian)?;
        Ok(PerturbationScheme::Harp { shaping, hessian })
    }

    /// Unit-covariance scheme for `kind`; `Harp` maps to identity shaping.
    pub fn unshaped(kind: SchemeKind, d: usize) -> Self {
        match kind {
            SchemeKind::Spsa => PerturbationScheme::Spsa,
            SchemeKind::Rdsa => PerturbationScheme::Rdsa,
            SchemeKind::Sfsa => PerturbationScheme::Sfsa,
            SchemeKind::Harp => {
                PerturbationScheme::Harp { shaping: ShapingFactor::identity(d), hessian: DMatrix::identity(d, d) }
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> PerturbationDraw {
        match self {
            PerturbationScheme::Spsa => draw_spsa(d, rng),
            PerturbationScheme::Rdsa => draw_rdsa(d, rng),
            PerturbationScheme::Sfsa => draw_sfsa(d, rng),
            PerturbationScheme::Harp { shaping, hessian } => draw_harp(shaping, hessian, rng),
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn rademacher<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

pub fn spsa_from_signs(signs: DVector<f64>) -> PerturbationDraw {
    PerturbationDraw { mapped: signs.clone(), delta: signs }
}

/// `z` must be nonzero.
pub fn rdsa_from_normal(z: &DVector<f64>) -> PerturbationDraw {
    let delta = z / z.norm();
    let mapped = &delta * z.len() as f64;
    PerturbationDraw { delta, mapped }
}

pub fn sfsa_from_normal(z: DVector<f64>) -> PerturbationDraw {
    PerturbationDraw { mapped: z.clone(), delta: z }
}

pub fn harp_from_normal(shaping: &ShapingFactor, hessian: &DMatrix<f64>, z: &DVector<f64>) -> PerturbationDraw {
    let delta = &shaping.factor * z;
    let mapped = hessian * &delta;
    PerturbationDraw { delta, mapped }
}

pub fn draw_spsa<R: Rng + ?Sized>(d: usize, rng: &mut R) -> PerturbationDraw {
    spsa_from_signs(rademacher(d, rng))
}

pub fn draw_rdsa<R: Rng + ?Sized>(d: usize, rng: &mut R) -> PerturbationDraw {
    loop {
        let z = standard_normal(d, rng);
        if z.norm() > 0.0 {
            return rdsa_from_normal(&z);
        }
    }
}

pub fn draw_sfsa<R: Rng + ?Sized>(d: usize, rng: &mut R) -> PerturbationDraw {
    sfsa_from_normal(standard_normal(d, rng))
}

/// Draws `Δ ~ N(0, Ĥ⁻¹)` through the shaping factor and sets `m(Δ) = ĤΔ`.
pub fn draw_harp<R: Rng + ?Sized>(shaping: &ShapingFactor, hessian: &DMatrix<f64>, rng: &mut R) -> PerturbationDraw {
    let z = standard_normal(shaping.dimension(), rng);
    harp_from_normal(shaping, hessian, &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{spawn_rng, StreamTag};

    fn rng() -> crate::rng::Stream {
        spawn_rng(7, 0, StreamTag::Custom(0))
    }

    #[test]
    fn spsa_components_are_signs() {
        let mut r = rng();
        for _ in 0..50 {
            let p = draw_spsa(3, &mut r);
            assert!(p.delta.iter().all(|&x| x == 1.0 || x == -1.0));
            assert_eq!(p.delta, p.mapped);
        }
        let p = spsa_from_signs(DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(p.mapped, DVector::from_vec(vec![1.0, -1.0]));
        let n = spsa_from_signs(-DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(n.mapped, -p.mapped);
    }

    #[test]
    fn rdsa_lies_on_unit_sphere() {
        let mut r = rng();
        for _ in 0..50 {
            let p = draw_rdsa(5, &mut r);
            assert!((p.delta.norm() - 1.0).abs() < 1e-14);
            assert_eq!(p.mapped, &p.delta * 5.0);
        }
    }

    #[test]
    fn sfsa_map_is_identity() {
        let p = draw_sfsa(4, &mut rng());
        assert_eq!(p.delta, p.mapped);
    }

    #[test]
    fn harp_with_identity_reduces_to_sfsa() {
        let shaping = ShapingFactor::identity(3);
        let a = draw_harp(&shaping, &DMatrix::identity(3, 3), &mut rng());
        let b = draw_sfsa(3, &mut rng());
        assert_eq!(a, b);
    }

    #[test]
    fn unshaped_harp_matches_sfsa_stream() {
        let s = PerturbationScheme::unshaped(SchemeKind::Harp, 2);
        assert_eq!(s.draw(2, &mut rng()), draw_sfsa(2, &mut rng()));
        assert_eq!(s.kind(), SchemeKind::Harp);
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in [SchemeKind::Spsa, SchemeKind::Rdsa, SchemeKind::Sfsa, SchemeKind::Harp] {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
        }
    }
}

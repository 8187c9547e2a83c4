//! Power-law gain sequences.
//!
//! Step sizes follow `a_k = a / (k + 1 + A)^alpha` and differencing magnitudes
//! `c_k = c / (k + 1)^gamma`. The two exponents are stored as exact rationals so
//! that conditions such as `alpha = 1` or `alpha = 6 gamma` can be decided without
//! floating-point tolerance.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{HarpError, Result};

/// An exponent held as an exact rational number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exponent(Ratio<i64>);

impl Exponent {
    pub fn new(numer: i64, denom: i64) -> Self {
        Exponent(Ratio::new(numer, denom))
    }

    pub fn integer(n: i64) -> Self {
        Exponent(Ratio::from_integer(n))
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Converts a float through its shortest round-trip decimal form, so `0.602`
    /// becomes exactly `301/500`.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(HarpError::InvalidSchedule(format!("exponent {x} is not finite")));
        }
        format!("{x}").parse()
    }
}

impl FromStr for Exponent {
    type Err = HarpError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarpError::InvalidSchedule(format!("cannot parse exponent {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(Exponent(Ratio::new(n, d)));
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) || frac_part.len() > 15 {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i64 = digits.parse().map_err(|_| bad())?;
        let denom = 10i64.pow(frac_part.len() as u32);
        let r = Ratio::new(numer, denom);
        Ok(Exponent(if neg { -r } else { r }))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// The five gain values used at one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains {
    /// Step size `a_k`.
    pub a: f64,
    /// Gradient differencing magnitude `c_k`.
    pub c: f64,
    /// Hessian differencing magnitude `c̃_k`.
    pub c_tilde: f64,
    /// Hessian smoothing weight `w_k`.
    pub w: f64,
    /// Regularization level `ε_k`.
    pub eps: f64,
}

/// All tunable sequences of the recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    pub a: f64,
    /// Stability offset `A`; only shifts the step-size sequence.
    pub big_a: f64,
    pub alpha: Exponent,
    pub c: f64,
    pub gamma: Exponent,
    pub ctilde_ratio: f64,
    pub w_exponent: f64,
    /// `w_k = 1/(k + 1 + w_offset)^w_exponent`; the default 1 counts the identity
    /// initialization of the Hessian average as one sample.
    pub w_offset: f64,
    pub eps0: f64,
    pub eps_exponent: f64,
}

impl GainSchedule {
    pub const DEFAULT_EPS0: f64 = 1e-5;
    pub const DEFAULT_EPS_EXPONENT: f64 = 0.5;

    /// Builds a schedule with default Hessian-side settings (`c̃_k = c_k`,
    /// `w_k = 1/(k+2)`, `ε_k = 1e-5/(k+1)^0.5`) and no offset.
    pub fn new(a: f64, alpha: Exponent, c: f64, gamma: Exponent) -> Result<Self> {
        GainSchedule {
            a,
            big_a: 0.0,
            alpha,
            c,
            gamma,
            ctilde_ratio: 1.0,
            w_exponent: 1.0,
            w_offset: 1.0,
            eps0: Self::DEFAULT_EPS0,
            eps_exponent: Self::DEFAULT_EPS_EXPONENT,
        }
        .validated()
    }

    pub fn with_offset(mut self, big_a: f64) -> Result<Self> {
        self.big_a = big_a;
        self.validated()
    }

    pub fn with_ctilde_ratio(mut self, ratio: f64) -> Result<Self> {
        self.ctilde_ratio = ratio;
        self.validated()
    }

    pub fn with_w_exponent(mut self, w_exponent: f64) -> Result<Self> {
        self.w_exponent = w_exponent;
        self.validated()
    }

    pub fn with_w_offset(mut self, w_offset: f64) -> Result<Self> {
        self.w_offset = w_offset;
        self.validated()
    }

    pub fn with_regularization(mut self, eps0: f64, eps_exponent: f64) -> Result<Self> {
        self.eps0 = eps0;
        self.eps_exponent = eps_exponent;
        self.validated()
    }

    /// Checks every admissibility condition and returns the schedule unchanged.
    pub fn validated(self) -> Result<Self> {
        let half = Ratio::new(1, 2);
        let one = Ratio::from_integer(1);
        let alpha = self.alpha.ratio();
        let gamma = self.gamma.ratio();
        let err = |msg: String| Err(HarpError::InvalidSchedule(msg));
        if !(alpha > half && alpha <= one) {
            return err(format!("alpha = {} must lie in (1/2, 1]", self.alpha));
        }
        if !(gamma > Ratio::from_integer(0) && gamma < alpha - half) {
            return err(format!("gamma = {} must lie in (0, alpha - 1/2) = (0, {})", self.gamma, Exponent(alpha - half)));
        }
        let positive = [
            ("a", self.a),
            ("c", self.c),
            ("ctilde_ratio", self.ctilde_ratio),
            ("eps0", self.eps0),
            ("eps_exponent", self.eps_exponent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{name} = {v} must be positive and finite"));
            }
        }
        if !(self.big_a.is_finite() && self.big_a >= 0.0) {
            return err(format!("A = {} must be nonnegative", self.big_a));
        }
        if !(self.w_offset.is_finite() && self.w_offset >= 0.0) {
            return err(format!("w_offset = {} must be nonnegative", self.w_offset));
        }
        if !(self.w_exponent > 0.5 && self.w_exponent <= 1.0) {
            return err(format!("w_exponent = {} must lie in (1/2, 1]", self.w_exponent));
        }
        Ok(self)
    }

    /// `Σ a_k = ∞` holds iff `alpha ≤ 1`.
    pub fn step_sum_diverges(&self) -> bool {
        self.alpha.ratio() <= Ratio::from_integer(1)
    }

    /// `Σ a_k² / c_k² < ∞` holds iff `2 alpha - 2 gamma > 1`.
    pub fn noise_sum_converges(&self) -> bool {
        (self.alpha.ratio() - self.gamma.ratio()) * 2 > Ratio::from_integer(1)
    }

    pub fn step(&self, k: usize) -> f64 {
        self.a / (k as f64 + 1.0 + self.big_a).powf(self.alpha.as_f64())
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(self.gamma.as_f64())
    }

    /// Gains at iteration `k`.
    pub fn at(&self, k: usize) -> Gains {
        let kp1 = k as f64 + 1.0;
        let c = self.perturbation(k);
        Gains {
            a: self.step(k),
            c,
            c_tilde: self.ctilde_ratio * c,
            w: 1.0 / (kp1 + self.w_offset).powf(self.w_exponent),
            eps: self.eps0 / kp1.powf(self.eps_exponent),
        }
    }
}

/// Free-function form of [`GainSchedule::at`].
pub fn make_gains(schedule: &GainSchedule, k: usize) -> Gains {
    schedule.at(k)
}

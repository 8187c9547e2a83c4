//! Browser demo: HARP against SPSA on the skew-quartic, the asymptotic trace
//! comparison, and a view of the two perturbation distributions.

use harp::asymptotics::{trace_harp_cov, trace_identity_cov};
use harp::experiment::{aggregate_curves, run_replicates_with, Initialization};
use harp::problems::SkewQuartic;
use harp::{spawn_rng, Exponent, GainSchedule, HarpOptions, NoiseMode, PerturbationScheme, RunConfig, SchemeKind, StreamTag};
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Replicate-averaged normalized-distance curves, one point per recorded iteration.
#[wasm_bindgen]
pub struct Comparison {
    iterations: Vec<f64>,
    harp: Vec<f64>,
    spsa: Vec<f64>,
    diverged: u32,
}

#[wasm_bindgen]
impl Comparison {
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> Vec<f64> {
        self.iterations.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn harp(&self) -> Vec<f64> {
        self.harp.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn spsa(&self) -> Vec<f64> {
        self.spsa.clone()
    }

    /// Replicates dropped from either curve because they diverged.
    #[wasm_bindgen(getter)]
    pub fn diverged(&self) -> u32 {
        self.diverged
    }
}

pub fn comparison(dimension: usize, iterations: usize, replicates: usize, sigma: f64, seed: u64) -> harp::Result<Comparison> {
    let s = GainSchedule::new(1.0, Exponent::new(602, 1000), 0.5, Exponent::new(101, 1000))?
        .with_offset(0.1 * iterations as f64)?
        .with_w_offset(100.0)?
        .with_regularization(0.1, 0.5)?;
    let p = SkewQuartic::new(dimension, NoiseMode::Iid, sigma)?;
    let stride = (iterations / 200).max(1);
    let cfg = RunConfig::new(dimension, iterations, replicates, 4, seed, NoiseMode::Iid)?.with_record_stride(stride)?;
    let init = Initialization::UniformBox { lo: -2.0, hi: 2.0 };
    let options = HarpOptions { condition_ceiling: 100.0, ..HarpOptions::default() };
    let mut diverged = 0;
    let mut curve = |kind| -> harp::Result<_> {
        let set = run_replicates_with(kind, &p, &s, &cfg, &init, options)?;
        diverged += set.diverged.len() as u32;
        let recs: Vec<_> = set.records.into_iter().map(|(_, r)| r).collect();
        aggregate_curves(&recs)
    };
    let h = curve(SchemeKind::Harp)?;
    let b = curve(SchemeKind::Spsa)?;
    Ok(Comparison {
        iterations: h.iteration.iter().map(|&k| k as f64).collect(),
        harp: h.mean_normalized_distance,
        spsa: b.mean_normalized_distance,
        diverged,
    })
}

#[wasm_bindgen]
pub fn compare_runs(
    dimension: usize,
    iterations: usize,
    replicates: usize,
    sigma: f64,
    seed: u64,
) -> Result<Comparison, JsValue> {
    comparison(dimension, iterations, replicates, sigma, seed).map_err(js_err)
}

/// Unit-prefactor covariance traces `[identity, shaped]` for the given Hessian eigenvalues.
#[wasm_bindgen]
pub fn trace_comparison(eigenvalues: Vec<f64>, a: f64, tau_plus: f64) -> Result<Vec<f64>, JsValue> {
    let var = 2.0 / (a * a);
    let i = trace_identity_cov(a, 1.0, var, tau_plus, &eigenvalues).map_err(js_err)?;
    let h = trace_harp_cov(a, 1.0, var, tau_plus, &eigenvalues).map_err(js_err)?;
    Ok(vec![i, h])
}

/// `n` perturbations for the 2×2 Hessian `[[h11, h12], [h12, h22]]`, flattened as `x0, y0, x1, y1, …`.
/// With `shaped` the draws follow `N(0, H⁻¹)`, otherwise `N(0, I)`.
pub fn cloud(h11: f64, h12: f64, h22: f64, n: usize, shaped: bool, seed: u64) -> harp::Result<Vec<f64>> {
    let scheme = if shaped {
        PerturbationScheme::harp(DMatrix::from_row_slice(2, 2, &[h11, h12, h12, h22]))?
    } else {
        PerturbationScheme::unshaped(SchemeKind::Sfsa, 2)
    };
    let mut rng = spawn_rng(seed, 0, StreamTag::Perturbation);
    let mut out = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let d = scheme.draw(2, &mut rng);
        out.extend_from_slice(d.delta.as_slice());
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn perturbation_cloud(h11: f64, h12: f64, h22: f64, n: usize, shaped: bool, seed: u64) -> Result<Vec<f64>, JsValue> {
    cloud(h11, h12, h22, n, shaped, seed).map_err(js_err)
}

//! The stochastic approximation recursion `θ_{k+1} = θ_k − a_k ĝ_k` and the
//! complete optimizer loops.

use nalgebra::{DMatrix, DVector};

use crate::error::{HarpError, Result};
use crate::estimators::{estimate_gradient, sample_hessian, GradientEstimate};
use crate::gains::GainSchedule;
use crate::hessian::{HessianTracker, DEFAULT_CONDITION_CEILING};
use crate::perturbation::{PerturbationScheme, SchemeKind};
use crate::problems::{NoiseHandle, StochasticProblem};
use crate::record::{RunConfig, RunRecord};
use crate::rng::{spawn_rng, Stream, StreamTag};

/// The four random streams one run consumes.
///
/// Gradient-phase and Hessian-phase draws come from separate streams, so with a
/// frozen identity tracker HARP sees exactly the perturbations and noise SFSA sees.
#[derive(Clone, Debug)]
pub struct RunStreams {
    pub perturbation: Stream,
    pub hessian_perturbation: Stream,
    pub noise: Stream,
    pub hessian_noise: Stream,
}

impl RunStreams {
    pub fn new(master_seed: u64, replicate: u64) -> Self {
        RunStreams {
            perturbation: spawn_rng(master_seed, replicate, StreamTag::Perturbation),
            hessian_perturbation: spawn_rng(master_seed, replicate, StreamTag::HessianPerturbation),
            noise: spawn_rng(master_seed, replicate, StreamTag::Noise),
            hessian_noise: spawn_rng(master_seed, replicate, StreamTag::HessianNoise),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarpOptions {
    /// Keep `Ĥ_k ≡ I` (the Hessian queries are still spent).
    pub freeze_tracker: bool,
    pub condition_ceiling: f64,
}

impl Default for HarpOptions {
    fn default() -> Self {
        HarpOptions { freeze_tracker: false, condition_ceiling: DEFAULT_CONDITION_CEILING }
    }
}

/// Result of a HARP run, including the final Hessian state.
#[derive(Clone, Debug)]
pub struct HarpRun {
    pub record: RunRecord,
    pub hbar: DMatrix<f64>,
    pub hhat: DMatrix<f64>,
    pub clip_events: usize,
}

/// `θ' = θ − a · ĝ`.
pub fn sa_step(theta: &DVector<f64>, a: f64, ghat: &DVector<f64>) -> DVector<f64> {
    if a == 0.0 {
        return theta.clone();
    }
    theta - ghat * a
}

fn at_iteration(k: usize) -> impl Fn(HarpError) -> HarpError {
    move |e| match e {
        HarpError::NonFinite { what, .. } => HarpError::NonFinite { iteration: k, what },
        other => other,
    }
}

fn check_inputs(problem: &dyn StochasticProblem, config: &RunConfig, theta0: &DVector<f64>) -> Result<()> {
    let d = problem.dimension();
    if config.dimension != d || theta0.len() != d {
        return Err(HarpError::InvalidConfig(format!(
            "dimension mismatch: problem {d}, config {}, initial point {}",
            config.dimension,
            theta0.len()
        )));
    }
    if theta0.iter().any(|x| !x.is_finite()) {
        return Err(HarpError::InvalidArgument("initial point has non-finite entries".into()));
    }
    Ok(())
}

fn observe(problem: &dyn StochasticProblem, theta: &DVector<f64>, k: usize) -> Result<(f64, f64)> {
    let loss = problem.loss(theta);
    let distance = (theta - problem.optimum()).norm();
    if !loss.is_finite() || !distance.is_finite() {
        return Err(HarpError::NonFinite { iteration: k, what: format!("L(θ̂_k) = {loss}") });
    }
    Ok((loss, distance))
}

/// HARP with default options.
pub fn run_harp(
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    theta0: &DVector<f64>,
    streams: &mut RunStreams,
) -> Result<RunRecord> {
    run_harp_with(problem, schedule, config, theta0, streams, HarpOptions::default()).map(|r| r.record)
}

/// HARP: per iteration, a shaped two-query gradient step followed by two more
/// queries that feed the Hessian moving average and its regularization.
pub fn run_harp_with(
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    theta0: &DVector<f64>,
    streams: &mut RunStreams,
    options: HarpOptions,
) -> Result<HarpRun> {
    check_inputs(problem, config, theta0)?;
    if config.queries_per_iteration != 4 {
        return Err(HarpError::InvalidConfig("HARP spends exactly 4 queries per iteration".into()));
    }
    let d = problem.dimension();
    let mut tracker = HessianTracker::identity(d).with_condition_ceiling(options.condition_ceiling);
    let mut theta = theta0.clone();
    let mut record = RunRecord::with_capacity(config.iterations, config.record_stride, theta0);
    let (l0, d0) = observe(problem, &theta, 0)?;
    record.push(0, 0, l0, d0);

    for k in 0..config.iterations {
        let gains = schedule.at(k);
        let mut step = || -> Result<DVector<f64>> {
            let scheme = tracker.scheme();
            let draw = scheme.draw(d, &mut streams.perturbation);
            let handle = NoiseHandle::open(problem, &mut streams.noise);
            let est = estimate_gradient(problem, &theta, gains.c, &draw, &handle, &mut streams.noise)?;
            let draw_tilde = scheme.draw(d, &mut streams.hessian_perturbation);
            let sample = sample_hessian(
                problem,
                &theta,
                gains.c,
                gains.c_tilde,
                &draw,
                &draw_tilde,
                &handle,
                &mut streams.hessian_noise,
                est.losses,
            )?;
            if !options.freeze_tracker {
                tracker.update(&sample, gains.w)?;
                tracker.regularize(schedule.at(k + 1).eps)?;
            }
            Ok(sa_step(&theta, gains.a, &est.ghat))
        };
        theta = step().map_err(at_iteration(k))?;
        let (loss, dist) = observe(problem, &theta, k + 1)?;
        if RunRecord::wants(config, k + 1) {
            record.push(k + 1, 4 * (k as u64 + 1), loss, dist);
        }
    }
    record.terminal = theta;
    Ok(HarpRun { record, hbar: tracker.hbar().clone(), hhat: tracker.hhat().clone(), clip_events: tracker.clip_events() })
}

/// SPSA, RDSA or SFSA with unit covariance. With 4 queries per iteration the
/// step uses the average of two independent two-query estimates.
pub fn run_baseline(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    theta0: &DVector<f64>,
    streams: &mut RunStreams,
) -> Result<RunRecord> {
    check_inputs(problem, config, theta0)?;
    if kind == SchemeKind::Harp {
        return Err(HarpError::InvalidArgument("use run_harp for the shaped scheme".into()));
    }
    let d = problem.dimension();
    let scheme = PerturbationScheme::unshaped(kind, d);
    let estimates = (config.queries_per_iteration / 2) as usize;
    let mut theta = theta0.clone();
    let mut record = RunRecord::with_capacity(config.iterations, config.record_stride, theta0);
    let (l0, d0) = observe(problem, &theta, 0)?;
    record.push(0, 0, l0, d0);

    for k in 0..config.iterations {
        let gains = schedule.at(k);
        let mut one = || -> Result<GradientEstimate> {
            let draw = scheme.draw(d, &mut streams.perturbation);
            let handle = NoiseHandle::open(problem, &mut streams.noise);
            estimate_gradient(problem, &theta, gains.c, &draw, &handle, &mut streams.noise)
        };
        let mut ghat = one().map_err(at_iteration(k))?.ghat;
        for _ in 1..estimates {
            ghat += one().map_err(at_iteration(k))?.ghat;
        }
        if estimates > 1 {
            ghat /= estimates as f64;
        }
        theta = sa_step(&theta, gains.a, &ghat);
        let (loss, dist) = observe(problem, &theta, k + 1)?;
        if RunRecord::wants(config, k + 1) {
            record.push(k + 1, config.queries_per_iteration as u64 * (k as u64 + 1), loss, dist);
        }
    }
    record.terminal = theta;
    Ok(record)
}

/// Dispatches on the scheme: HARP or one of the unit-covariance baselines.
pub fn run_algorithm(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    theta0: &DVector<f64>,
    streams: &mut RunStreams,
) -> Result<RunRecord> {
    run_algorithm_with(kind, problem, schedule, config, theta0, streams, HarpOptions::default())
}

/// [`run_algorithm`] with explicit HARP options; baselines ignore them.
pub fn run_algorithm_with(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    theta0: &DVector<f64>,
    streams: &mut RunStreams,
    options: HarpOptions,
) -> Result<RunRecord> {
    match kind {
        SchemeKind::Harp => run_harp_with(problem, schedule, config, theta0, streams, options).map(|r| r.record),
        other => run_baseline(other, problem, schedule, config, theta0, streams),
    }
}

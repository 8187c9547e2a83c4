//! Replicated runs with deterministic per-replicate streams, and aggregation
//! of the resulting records.

use nalgebra::DVector;
use rand::Rng;

use crate::algorithms::{run_algorithm_with, HarpOptions, RunStreams};
use crate::error::{HarpError, Result};
use crate::gains::GainSchedule;
use crate::perturbation::SchemeKind;
use crate::problems::StochasticProblem;
use crate::record::{RunConfig, RunRecord};
use crate::rng::{spawn_rng, StreamTag};

/// How `θ̂_0` is chosen for each replicate.
#[derive(Clone, Debug, PartialEq)]
pub enum Initialization {
    Fixed(DVector<f64>),
    /// Independent uniform coordinates on `[lo, hi]`, drawn from the replicate's
    /// initialization stream so every algorithm starts replicate `r` at the same point.
    UniformBox {
        lo: f64,
        hi: f64,
    },
}

impl Initialization {
    pub fn draw(&self, d: usize, master_seed: u64, replicate: u64) -> Result<DVector<f64>> {
        match self {
            Initialization::Fixed(x) => {
                if x.len() != d {
                    return Err(HarpError::InvalidConfig(format!("initial point has length {}, expected {d}", x.len())));
                }
                Ok(x.clone())
            }
            &Initialization::UniformBox { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(HarpError::InvalidConfig(format!("empty initialization box [{lo}, {hi}]")));
                }
                let mut rng = spawn_rng(master_seed, replicate, StreamTag::Init);
                Ok(DVector::from_fn(d, |_, _| rng.random_range(lo..=hi)))
            }
        }
    }
}

/// Records of the replicates that finished, and the errors of those that diverged.
#[derive(Clone, Debug, Default)]
pub struct ReplicateSet {
    pub records: Vec<(usize, RunRecord)>,
    pub diverged: Vec<(usize, HarpError)>,
}

impl ReplicateSet {
    pub fn total(&self) -> usize {
        self.records.len() + self.diverged.len()
    }
}

fn is_divergence(e: &HarpError) -> bool {
    matches!(
        e,
        HarpError::NonFinite { .. }
            | HarpError::NotPositiveDefinite { .. }
            | HarpError::Shaping(_)
            | HarpError::Regularization(_)
    )
}

fn one_replicate(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    init: &Initialization,
    options: HarpOptions,
    r: usize,
) -> Result<Result<RunRecord>> {
    let theta0 = init.draw(config.dimension, config.master_seed, r as u64)?;
    let mut streams = RunStreams::new(config.master_seed, r as u64);
    match run_algorithm_with(kind, problem, schedule, config, &theta0, &mut streams, options) {
        Ok(rec) => Ok(Ok(rec)),
        Err(e) if is_divergence(&e) => Ok(Err(e)),
        Err(e) => Err(e),
    }
}

/// Runs `config.replicates` independent replicates. Results are ordered by
/// replicate index however they were scheduled.
pub fn run_replicates(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    init: &Initialization,
) -> Result<ReplicateSet> {
    run_replicates_with(kind, problem, schedule, config, init, HarpOptions::default())
}

pub fn run_replicates_with(
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    schedule: &GainSchedule,
    config: &RunConfig,
    init: &Initialization,
    options: HarpOptions,
) -> Result<ReplicateSet> {
    let config = config.clone().validated()?;
    let run = |r: usize| one_replicate(kind, problem, schedule, &config, init, options, r);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<Result<RunRecord>>> = {
        use rayon::prelude::*;
        (0..config.replicates).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<Result<RunRecord>>> = (0..config.replicates).map(run).collect();

    let mut set = ReplicateSet::default();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Ok(rec) => set.records.push((r, rec)),
            Err(e) => {
                log::warn!("replicate {r} of {} diverged: {e}", kind.name());
                set.diverged.push((r, e));
            }
        }
    }
    Ok(set)
}

/// Cross-replicate curves on the shared iteration grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCurve {
    pub iteration: Vec<usize>,
    pub cumulative_queries: Vec<u64>,
    pub mean_normalized_distance: Vec<f64>,
    pub rms_distance: Vec<f64>,
    pub replicates_used: usize,
}

pub fn aggregate_curves(records: &[RunRecord]) -> Result<AggregateCurve> {
    let first = records.first().ok_or_else(|| HarpError::InvalidArgument("no finished replicates".into()))?;
    if records.iter().any(|r| r.iteration != first.iteration) {
        return Err(HarpError::InvalidArgument("records have different iteration grids".into()));
    }
    let n = records.len() as f64;
    let len = first.len();
    let mean_normalized_distance = (0..len).map(|i| records.iter().map(|r| r.normalized_distance[i]).sum::<f64>() / n).collect();
    let rms_distance =
        (0..len).map(|i| (records.iter().map(|r| r.distance[i] * r.distance[i]).sum::<f64>() / n).sqrt()).collect();
    Ok(AggregateCurve {
        iteration: first.iteration.clone(),
        cumulative_queries: first.cumulative_queries.clone(),
        mean_normalized_distance,
        rms_distance,
        replicates_used: records.len(),
    })
}

/// Mean and sample standard deviation; the deviation is `None` for fewer than two values.
pub fn mean_and_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

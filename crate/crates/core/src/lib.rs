//! Zeroth-order stochastic approximation with Hessian-aware random perturbations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod gains;
pub mod hessian;
pub mod perturbation;
pub mod problems;
pub mod record;
pub mod rng;

pub use algorithms::{
    run_algorithm, run_algorithm_with, run_baseline, run_harp, run_harp_with, sa_step, HarpOptions, HarpRun, RunStreams,
};
pub use asymptotics::{AsymptoticsResult, AsymptoticsSpec};
pub use error::{HarpError, Result};
pub use experiment::{run_replicates, run_replicates_with, Initialization, ReplicateSet};
pub use gains::{make_gains, Exponent, GainSchedule, Gains};
pub use hessian::{regularize, shaping_factor, update_moving_average, HessianTracker};
pub use perturbation::{PerturbationDraw, PerturbationScheme, SchemeKind, ShapingFactor};
pub use problems::{NoiseHandle, Omega, StochasticProblem};
pub use record::{NoiseMode, RunConfig, RunRecord};
pub use rng::{spawn_rng, StreamTag};

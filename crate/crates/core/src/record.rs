use nalgebra::DVector;

use crate::error::{HarpError, Result};

/// How the observation noise of different queries is related.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// Every query draws a fresh, independent noise realization.
    Iid,
    /// All queries of one iteration share a single noise realization.
    Crn,
}

impl std::str::FromStr for NoiseMode {
    type Err = HarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(NoiseMode::Iid),
            "crn" => Ok(NoiseMode::Crn),
            _ => Err(HarpError::InvalidConfig(format!("unknown noise mode {s:?} (expected iid or crn)"))),
        }
    }
}

/// Size and seeding of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dimension: usize,
    pub iterations: usize,
    pub replicates: usize,
    /// 2 for a single gradient estimate per iteration, 4 for HARP or query-matched baselines.
    pub queries_per_iteration: u32,
    pub master_seed: u64,
    pub noise_mode: NoiseMode,
    /// Record every `record_stride`-th iterate; `K` itself is always recorded.
    pub record_stride: usize,
}

impl RunConfig {
    pub fn new(
        dimension: usize,
        iterations: usize,
        replicates: usize,
        queries_per_iteration: u32,
        master_seed: u64,
        noise_mode: NoiseMode,
    ) -> Result<Self> {
        RunConfig { dimension, iterations, replicates, queries_per_iteration, master_seed, noise_mode, record_stride: 1 }
            .validated()
    }

    pub fn with_record_stride(mut self, stride: usize) -> Result<Self> {
        self.record_stride = stride;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let err = |m: String| Err(HarpError::InvalidConfig(m));
        if self.dimension == 0 {
            return err("dimension must be at least 1".into());
        }
        if self.iterations == 0 {
            return err("iterations must be at least 1".into());
        }
        if self.replicates == 0 {
            return err("replicates must be at least 1".into());
        }
        if self.record_stride == 0 {
            return err("record_stride must be at least 1".into());
        }
        if !matches!(self.queries_per_iteration, 2 | 4) {
            return err(format!("queries_per_iteration = {} must be 2 or 4", self.queries_per_iteration));
        }
        Ok(self)
    }
}

/// Trace of one optimizer run on the grid `0, s, 2s, …, K` for record stride `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub iteration: Vec<usize>,
    pub cumulative_queries: Vec<u64>,
    /// True loss `L(θ̂_k)`.
    pub loss: Vec<f64>,
    /// `‖θ̂_k − θ*‖`.
    pub distance: Vec<f64>,
    /// `‖θ̂_k − θ*‖ / ‖θ̂_0 − θ*‖` (the raw distance when `θ̂_0 = θ*`).
    pub normalized_distance: Vec<f64>,
    pub terminal: DVector<f64>,
}

impl RunRecord {
    pub(crate) fn with_capacity(iterations: usize, stride: usize, theta0: &DVector<f64>) -> Self {
        let n = iterations / stride + 2;
        RunRecord {
            iteration: Vec::with_capacity(n),
            cumulative_queries: Vec::with_capacity(n),
            loss: Vec::with_capacity(n),
            distance: Vec::with_capacity(n),
            normalized_distance: Vec::with_capacity(n),
            terminal: theta0.clone(),
        }
    }

    pub(crate) fn wants(config: &RunConfig, k: usize) -> bool {
        k.is_multiple_of(config.record_stride) || k == config.iterations
    }

    pub(crate) fn push(&mut self, k: usize, queries: u64, loss: f64, distance: f64) {
        let reference = match self.distance.first() {
            Some(&d0) if d0 > 0.0 => d0,
            Some(_) => 1.0,
            None if distance > 0.0 => distance,
            None => 1.0,
        };
        self.iteration.push(k);
        self.cumulative_queries.push(queries);
        self.loss.push(loss);
        self.distance.push(distance);
        self.normalized_distance.push(distance / reference);
    }

    pub fn len(&self) -> usize {
        self.iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iteration.is_empty()
    }

    pub fn terminal_loss(&self) -> f64 {
        *self.loss.last().expect("record is never empty")
    }

    pub fn terminal_normalized_distance(&self) -> f64 {
        *self.normalized_distance.last().expect("record is never empty")
    }
}

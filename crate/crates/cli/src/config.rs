//! Experiment configuration: a sectioned TOML file plus `key.path=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harp::problems::{FiniteSum, NoiseForm, Quadratic, SkewQuartic, StochasticProblem};
use harp::{spawn_rng, Exponent, GainSchedule, HarpOptions, Initialization, NoiseMode, RunConfig, SchemeKind, StreamTag};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

/// Output directory used when neither the command line nor the config names one.
pub const OUTPUT_DIR_ENV: &str = "HARP_OUTPUT_DIR";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub run: RunSection,
    /// Algorithms keyed by label; runs and output follow label order.
    #[serde(rename = "algorithm")]
    pub algorithms: BTreeMap<String, AlgorithmSpec>,
    #[serde(default)]
    pub report: ReportSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Quadratic,
    SkewQuartic,
    FiniteSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Iid,
    Crn,
}

impl From<NoiseSpec> for NoiseMode {
    fn from(n: NoiseSpec) -> Self {
        match n {
            NoiseSpec::Iid => NoiseMode::Iid,
            NoiseSpec::Crn => NoiseMode::Crn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFormSpec {
    Additive,
    Linear,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub dimension: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "one")]
    pub sigma: f64,
    /// Quadratic: full Hessian, row by row.
    pub hessian: Option<Vec<Vec<f64>>>,
    /// Quadratic: diagonal Hessian.
    pub diagonal: Option<Vec<f64>>,
    pub noise_form: Option<NoiseFormSpec>,
    /// Finite sum: number of components, subsample size, ridge weight and construction seed.
    pub count: Option<usize>,
    pub subsample: Option<usize>,
    pub kappa: Option<f64>,
    pub seed: Option<u64>,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::Iid
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Uniform { lo: f64, hi: f64 },
    Point { point: Vec<f64> },
    Constant { value: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iterations: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "four")]
    pub queries_per_iteration: u32,
    #[serde(default = "one_usize")]
    pub record_stride: usize,
    pub init: InitSpec,
    pub output_dir: Option<PathBuf>,
}

fn four() -> u32 {
    4
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Harp,
    Spsa,
    Rdsa,
    Sfsa,
}

impl From<SchemeName> for SchemeKind {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Harp => SchemeKind::Harp,
            SchemeName::Spsa => SchemeKind::Spsa,
            SchemeName::Rdsa => SchemeKind::Rdsa,
            SchemeName::Sfsa => SchemeKind::Sfsa,
        }
    }
}

/// An exponent written either as a number (`0.602`) or a string (`"1/6"`).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ExponentSpec {
    Number(f64),
    Text(String),
}

impl ExponentSpec {
    fn parse(&self) -> harp::Result<Exponent> {
        match self {
            ExponentSpec::Number(x) => Exponent::from_f64(*x),
            ExponentSpec::Text(s) => s.parse(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub scheme: SchemeName,
    pub a: f64,
    pub alpha: ExponentSpec,
    pub c: f64,
    pub gamma: ExponentSpec,
    /// Stability offset `A`.
    pub offset: Option<f64>,
    /// `A` as a fraction of the iteration count.
    pub offset_fraction: Option<f64>,
    pub ctilde_ratio: Option<f64>,
    pub w_exponent: Option<f64>,
    pub w_offset: Option<f64>,
    pub eps0: Option<f64>,
    pub eps_exponent: Option<f64>,
    pub condition_ceiling: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Iteration window `[lo, hi]` for rate fits; defaults to `[K/10, K]`.
    pub rate_window: Option<[usize; 2]>,
    #[serde(default = "default_true")]
    pub asymptotics: bool,
    /// Target accuracy for the complexity estimates of `predict`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_mc")]
    pub monte_carlo_samples: usize,
}

impl Default for ReportSpec {
    fn default() -> Self {
        ReportSpec { rate_window: None, asymptotics: true, epsilon: default_epsilon(), monte_carlo_samples: default_mc() }
    }
}

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_mc() -> usize {
    100_000
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Sets `path` (dot separated) in `table` to the TOML value written after `=`.
/// Values that do not parse as TOML are taken as strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| config_err(format!("override {assignment:?} is not of the form key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override key {key:?} has an empty component")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(config_err)?
        } else {
            let mut table: toml::Table = text.parse().map_err(config_err)?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table).try_into().map_err(config_err)?
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<(), CliError> {
        if self.algorithms.is_empty() {
            return Err(config_err("at least one [algorithm.<label>] section is required"));
        }
        for label in self.algorithms.keys() {
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(config_err(format!("algorithm label {label:?} must be alphanumeric, '_' or '-'")));
            }
        }
        self.build_problem()?;
        for label in self.algorithms.keys() {
            self.schedule(label)?;
            self.run_config(label)?;
        }
        self.initialization()?;
        Ok(())
    }

    pub fn dimension(&self) -> Result<usize, CliError> {
        let p = &self.problem;
        match p.name {
            ProblemName::Quadratic => match (&p.hessian, &p.diagonal) {
                (Some(h), None) => Ok(h.len()),
                (None, Some(d)) => Ok(d.len()),
                _ => Err(config_err("problem.quadratic needs exactly one of `hessian` or `diagonal`")),
            },
            _ => p.dimension.ok_or_else(|| config_err("problem.dimension is required")),
        }
    }

    pub fn build_problem(&self) -> Result<Box<dyn StochasticProblem>, CliError> {
        let p = &self.problem;
        let mode = NoiseMode::from(p.noise);
        let d = self.dimension()?;
        if let Some(dim) = p.dimension {
            if dim != d {
                return Err(config_err(format!("problem.dimension = {dim} does not match the Hessian size {d}")));
            }
        }
        let problem: Box<dyn StochasticProblem> = match p.name {
            ProblemName::Quadratic => {
                let h = match (&p.hessian, &p.diagonal) {
                    (Some(rows), _) => {
                        if rows.iter().any(|r| r.len() != d) {
                            return Err(config_err("problem.hessian must be square"));
                        }
                        DMatrix::from_fn(d, d, |i, j| rows[i][j])
                    }
                    (_, Some(diag)) => DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
                    _ => unreachable!("checked by dimension()"),
                };
                let q = match p.noise_form {
                    None => Quadratic::new(h, mode, p.sigma),
                    Some(NoiseFormSpec::Additive) => Quadratic::with_noise_form(h, mode, NoiseForm::Additive, p.sigma),
                    Some(NoiseFormSpec::Linear) => Quadratic::with_noise_form(h, mode, NoiseForm::Linear, p.sigma),
                };
                Box::new(q.map_err(|e| config_err(format!("problem: {e}")))?)
            }
            ProblemName::SkewQuartic => {
                Box::new(SkewQuartic::new(d, mode, p.sigma).map_err(|e| config_err(format!("problem: {e}")))?)
            }
            ProblemName::FiniteSum => {
                let count = p.count.ok_or_else(|| config_err("problem.count is required for finite_sum"))?;
                let subsample = p.subsample.ok_or_else(|| config_err("problem.subsample is required for finite_sum"))?;
                let kappa = p.kappa.unwrap_or(0.1);
                let mut rng = spawn_rng(p.seed.unwrap_or(0), 0, StreamTag::Problem);
                Box::new(
                    FiniteSum::synthetic(count, subsample, kappa, d, mode, &mut rng)
                        .map_err(|e| config_err(format!("problem: {e}")))?,
                )
            }
        };
        Ok(problem)
    }

    fn algorithm(&self, label: &str) -> Result<&AlgorithmSpec, CliError> {
        self.algorithms.get(label).ok_or_else(|| config_err(format!("no algorithm labelled {label:?}")))
    }

    pub fn scheme(&self, label: &str) -> Result<SchemeKind, CliError> {
        Ok(self.algorithm(label)?.scheme.into())
    }

    pub fn schedule(&self, label: &str) -> Result<GainSchedule, CliError> {
        let a = self.algorithm(label)?;
        let at = |e: harp::HarpError| config_err(format!("algorithm.{label}: {e}"));
        let alpha = a.alpha.parse().map_err(at)?;
        let gamma = a.gamma.parse().map_err(at)?;
        let mut s = GainSchedule::new(a.a, alpha, a.c, gamma).map_err(at)?;
        let offset = match (a.offset, a.offset_fraction) {
            (Some(_), Some(_)) => {
                return Err(config_err(format!("algorithm.{label}: give `offset` or `offset_fraction`, not both")))
            }
            (Some(o), None) => Some(o),
            (None, Some(f)) => Some(f * self.run.iterations as f64),
            (None, None) => None,
        };
        if let Some(o) = offset {
            s = s.with_offset(o).map_err(at)?;
        }
        if let Some(r) = a.ctilde_ratio {
            s = s.with_ctilde_ratio(r).map_err(at)?;
        }
        if let Some(w) = a.w_exponent {
            s = s.with_w_exponent(w).map_err(at)?;
        }
        if let Some(w) = a.w_offset {
            s = s.with_w_offset(w).map_err(at)?;
        }
        if a.eps0.is_some() || a.eps_exponent.is_some() {
            let eps0 = a.eps0.unwrap_or(s.eps0);
            let eps_exponent = a.eps_exponent.unwrap_or(s.eps_exponent);
            s = s.with_regularization(eps0, eps_exponent).map_err(at)?;
        }
        Ok(s)
    }

    pub fn harp_options(&self, label: &str) -> Result<HarpOptions, CliError> {
        let a = self.algorithm(label)?;
        let mut o = HarpOptions::default();
        if let Some(c) = a.condition_ceiling {
            if !(c >= 1.0) {
                return Err(config_err(format!("algorithm.{label}: condition_ceiling = {c} must be at least 1")));
            }
            o.condition_ceiling = c;
        }
        Ok(o)
    }

    pub fn run_config(&self, label: &str) -> Result<RunConfig, CliError> {
        let q = self.run.queries_per_iteration;
        if self.scheme(label)? == SchemeKind::Harp && q != 4 {
            return Err(config_err(format!("algorithm.{label}: HARP needs run.queries_per_iteration = 4, got {q}")));
        }
        RunConfig::new(self.dimension()?, self.run.iterations, self.run.replicates, q, self.run.seed, self.problem.noise.into())
            .and_then(|c| c.with_record_stride(self.run.record_stride))
            .map_err(|e| config_err(format!("run: {e}")))
    }

    pub fn initialization(&self) -> Result<Initialization, CliError> {
        let d = self.dimension()?;
        match &self.run.init {
            InitSpec::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(config_err(format!("run.init: empty box [{lo}, {hi}]")));
                }
                Ok(Initialization::UniformBox { lo: *lo, hi: *hi })
            }
            InitSpec::Point { point } => {
                if point.len() != d {
                    return Err(config_err(format!("run.init.point has length {}, expected {d}", point.len())));
                }
                Ok(Initialization::Fixed(DVector::from_column_slice(point)))
            }
            InitSpec::Constant { value } => Ok(Initialization::Fixed(DVector::from_element(d, *value))),
        }
    }

    /// Command line, then the config file, then the environment, then `harp-output`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = &self.run.output_dir {
            return p.clone();
        }
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => PathBuf::from("harp-output"),
        }
    }
}

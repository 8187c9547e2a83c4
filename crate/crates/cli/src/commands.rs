use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use harp::asymptotics::{
    complexity, compute_bias_vector, crn_covariance_rhs, fit_log_slope, trace_harp_cov, trace_identity_cov, AsymptoticsResult,
    AsymptoticsSpec, RateFit,
};
use harp::experiment::{aggregate_curves, mean_and_sd, run_replicates_with, AggregateCurve};
use harp::perturbation::PerturbationScheme;
use harp::problems::StochasticProblem;
use harp::{spawn_rng, HarpError, NoiseMode, RunRecord, SchemeKind, StreamTag};
use nalgebra::{DMatrix, DVector};

use crate::config::ExperimentConfig;
use crate::output::{self, SummaryRow};
use crate::CliError;

fn classify(label: &str, e: HarpError) -> CliError {
    match e {
        HarpError::InvalidConfig(_) | HarpError::InvalidSchedule(_) | HarpError::InvalidArgument(_) => {
            CliError::Config(format!("algorithm.{label}: {e}"))
        }
        other => CliError::Numerical(format!("algorithm.{label}: {other}")),
    }
}

/// What `run` wrote and the numbers it printed.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    /// Labels whose replicates all diverged.
    pub failed: Vec<String>,
    pub report: String,
}

fn default_window(k: usize) -> (usize, usize) {
    ((k / 10).max(1), k)
}

fn describe_fit(fit: &harp::Result<RateFit>, window: (usize, usize)) -> String {
    match fit {
        Ok(f) => format!(
            "slope {:.6} ± {:.6} over iterations [{}, {}] ({} points)",
            f.slope, f.standard_error, window.0, window.1, f.points
        ),
        Err(e) => format!("no fit over iterations [{}, {}]: {e}", window.0, window.1),
    }
}

/// The RMS-distance exponent the theory predicts: `−τ/2` for IID noise and `−α/2` under CRN.
fn predicted_slope(cfg: &ExperimentConfig, label: &str) -> Result<f64, CliError> {
    let s = cfg.schedule(label)?;
    Ok(match NoiseMode::from(cfg.problem.noise) {
        NoiseMode::Iid => -(s.alpha.as_f64() - 2.0 * s.gamma.as_f64()) / 2.0,
        NoiseMode::Crn => -s.alpha.as_f64() / 2.0,
    })
}

fn summarize(
    label: &str,
    kind: SchemeKind,
    problem: &dyn StochasticProblem,
    records: &[(usize, RunRecord)],
    diverged: Vec<usize>,
    total: usize,
    budget: u64,
) -> SummaryRow {
    let losses: Vec<f64> = records.iter().map(|(_, r)| r.terminal_loss()).collect();
    let dists: Vec<f64> = records.iter().map(|(_, r)| r.terminal_normalized_distance()).collect();
    let comps: Option<Vec<(f64, f64)>> = records.iter().map(|(_, r)| problem.loss_components(&r.terminal)).collect();
    let present = |v: &[f64]| {
        if v.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_and_sd(v);
            (Some(m), s)
        }
    };
    let (ml, sl) = present(&losses);
    let (md, sd) = present(&dists);
    let (mm, ma) = match comps {
        Some(c) if !c.is_empty() => {
            let n = c.len() as f64;
            (Some(c.iter().map(|x| x.0).sum::<f64>() / n), Some(c.iter().map(|x| x.1).sum::<f64>() / n))
        }
        _ => (None, None),
    };
    SummaryRow {
        algorithm: label.to_string(),
        scheme: kind.name().to_string(),
        replicates: total,
        finished: records.len(),
        diverged,
        mean_terminal_loss: ml,
        sd_terminal_loss: sl,
        mean_terminal_magnitude: mm,
        mean_terminal_attack: ma,
        mean_terminal_normalized_distance: md,
        sd_terminal_normalized_distance: sd,
        total_queries: budget,
    }
}

/// Runs every configured algorithm and writes `<label>_iterations.csv`,
/// `curves.csv`, `summary.csv` and `rate_fit.txt` into `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunSummary, CliError> {
    std::fs::create_dir_all(output_dir)
        .map_err(|e| CliError::Config(format!("output directory {}: {e}", output_dir.display())))?;
    let problem = cfg.build_problem()?;
    let init = cfg.initialization()?;
    let k = cfg.run.iterations;
    let window = cfg.report.rate_window.map(|[lo, hi]| (lo, hi)).unwrap_or_else(|| default_window(k));
    let analytic = problem.hessian(problem.optimum()).is_some();

    let mut rows = Vec::new();
    let mut curves: Vec<(String, AggregateCurve)> = Vec::new();
    let mut failed = Vec::new();
    let mut fits = String::new();
    for label in cfg.algorithms.keys() {
        let kind = cfg.scheme(label)?;
        let schedule = cfg.schedule(label)?;
        let rc = cfg.run_config(label)?;
        let set = run_replicates_with(kind, problem.as_ref(), &schedule, &rc, &init, cfg.harp_options(label)?)
            .map_err(|e| classify(label, e))?;
        output::write_iterations(&output_dir.join(format!("{label}_iterations.csv")), &set.records)?;
        let diverged: Vec<usize> = set.diverged.iter().map(|(r, _)| *r).collect();
        for (r, e) in &set.diverged {
            log::warn!("{label}: replicate {r} diverged: {e}");
        }
        let budget = k as u64 * rc.queries_per_iteration as u64;
        rows.push(summarize(label, kind, problem.as_ref(), &set.records, diverged, set.total(), budget));

        write!(fits, "{label}: ").unwrap();
        if set.records.is_empty() {
            failed.push(label.clone());
            writeln!(fits, "every replicate diverged").unwrap();
            continue;
        }
        let recs: Vec<RunRecord> = set.records.into_iter().map(|(_, r)| r).collect();
        let curve = aggregate_curves(&recs).map_err(|e| classify(label, e))?;
        let fit = fit_log_slope(&curve.iteration, &curve.rms_distance, window);
        write!(fits, "{}", describe_fit(&fit, window)).unwrap();
        if cfg.report.asymptotics && analytic {
            write!(fits, "; predicted {:.6}", predicted_slope(cfg, label)?).unwrap();
        }
        writeln!(fits).unwrap();
        curves.push((label.clone(), curve));
    }
    output::write_curves(&output_dir.join("curves.csv"), &curves)?;
    output::write_summary(&output_dir.join("summary.csv"), &rows)?;
    output::write_text(&output_dir.join("rate_fit.txt"), &fits)?;

    let mut report = String::new();
    for r in &rows {
        let show = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into());
        writeln!(
            report,
            "{:<12} {:<5} finished {}/{}  terminal loss {} (sd {})  normalized distance {}",
            r.algorithm,
            r.scheme,
            r.finished,
            r.replicates,
            show(r.mean_terminal_loss),
            show(r.sd_terminal_loss),
            show(r.mean_terminal_normalized_distance)
        )
        .unwrap();
        if !r.diverged.is_empty() {
            writeln!(report, "{:<12} diverged replicates: {:?}", "", r.diverged).unwrap();
        }
    }
    report.push_str(&fits);
    Ok(RunSummary { output_dir: output_dir.to_path_buf(), rows, failed, report })
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn write_result(out: &mut String, name: &str, r: &AsymptoticsResult, eps: f64, q: u32) -> Result<(), CliError> {
    let c = complexity(eps, r.tau, &r.mu, &r.b, q).map_err(|e| CliError::Numerical(e.to_string()))?;
    writeln!(
        out,
        "  {name}: mu = {}, tr(B) = {:.6e}, iterations to eps {:.3e}, queries to eps {:.3e}",
        fmt_vec(&r.mu),
        r.b.trace(),
        c.iterations,
        c.queries
    )
    .unwrap();
    Ok(())
}

/// Asymptotic mean, covariance trace and complexity for every configured algorithm.
pub fn predict(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let problem = cfg.build_problem()?;
    let opt = problem.optimum().clone();
    let h = problem.hessian(&opt).ok_or_else(|| CliError::Config("predict needs a problem with an analytic Hessian".into()))?;
    let d = h.nrows();
    let lambda: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
    let lmin = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let mode = NoiseMode::from(cfg.problem.noise);
    let eps = cfg.report.epsilon;
    let n_mc = cfg.report.monte_carlo_samples;
    let mut out = String::new();

    for label in cfg.algorithms.keys() {
        let kind = cfg.scheme(label)?;
        let s = cfg.schedule(label)?;
        let q = cfg.run_config(label)?.queries_per_iteration;
        let num = |e: HarpError| CliError::Numerical(format!("algorithm.{label}: {e}"));
        let var = problem.noise_variance_at_optimum();
        let spec_i = AsymptoticsSpec::new(&s, &h, DMatrix::identity(d, d), var.unwrap_or(0.0)).map_err(num)?;
        let spec_h = AsymptoticsSpec::new(&s, &h, h.clone(), var.unwrap_or(0.0)).map_err(num)?;
        let tau_plus = spec_i.tau_plus();
        writeln!(out, "[{label}] scheme {}, a = {}, c = {}, alpha = {}, gamma = {}", kind.name(), s.a, s.c, s.alpha, s.gamma)
            .unwrap();
        writeln!(
            out,
            "  tau = {} ({:.6}), tau_plus = {:.6}, eigenvalues of H(theta*) in [{:.6e}, {:.6e}]",
            spec_i.tau_exact(),
            spec_i.tau(),
            tau_plus,
            lmin,
            lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        )
        .unwrap();
        let threshold = match mode {
            NoiseMode::Iid => tau_plus / (2.0 * lmin),
            NoiseMode::Crn => spec_i.alpha_plus() / (2.0 * lmin),
        };
        if !(s.a > threshold) {
            return Err(CliError::Numerical(format!(
                "algorithm.{label}: unstable gains, need a > {threshold:.6} (a = {}, smallest Hessian eigenvalue {lmin:.6e})",
                s.a
            )));
        }
        match mode {
            NoiseMode::Iid => {
                let var = var.ok_or_else(|| CliError::Config("predict needs Var[l(theta*, w)] for IID noise".into()))?;
                writeln!(out, "  noise iid, Var[l(theta*)] = {var:.6e}").unwrap();
                let mut rng = spawn_rng(cfg.run.seed, 0, StreamTag::MonteCarlo);
                let base = if kind == SchemeKind::Harp { SchemeKind::Sfsa } else { kind };
                let (t_i, t_h) = if spec_i.bias_active() {
                    let shaped = PerturbationScheme::harp(h.clone()).map_err(num)?;
                    let plain = PerturbationScheme::unshaped(base, d);
                    let ti =
                        compute_bias_vector(problem.as_ref(), &plain, s.a, s.c, s.alpha, s.gamma, n_mc, &mut rng).map_err(num)?;
                    let th = compute_bias_vector(problem.as_ref(), &shaped, s.a, s.c, s.alpha, s.gamma, n_mc, &mut rng)
                        .map_err(num)?;
                    (ti.t, th.t)
                } else {
                    (DVector::zeros(d), DVector::zeros(d))
                };
                write_result(&mut out, "Sigma = I   ", &spec_i.iid(&t_i).map_err(num)?, eps, q)?;
                write_result(&mut out, "Sigma = H(*)", &spec_h.iid(&t_h).map_err(num)?, eps, q)?;
                let unit_var = 2.0 * s.c * s.c / (s.a * s.a);
                let ti = trace_identity_cov(s.a, s.c, var, tau_plus, &lambda).map_err(num)?;
                let th = trace_harp_cov(s.a, s.c, var, tau_plus, &lambda).map_err(num)?;
                let ui = trace_identity_cov(s.a, s.c, unit_var, tau_plus, &lambda).map_err(num)?;
                let uh = trace_harp_cov(s.a, s.c, unit_var, tau_plus, &lambda).map_err(num)?;
                writeln!(out, "  trace identity covariance {ti:.6e} (unit prefactor {ui:.4})").unwrap();
                writeln!(out, "  trace shaped covariance   {th:.6e} (unit prefactor {uh:.4})").unwrap();
            }
            NoiseMode::Crn => {
                let mut rng = spawn_rng(cfg.run.seed, 0, StreamTag::MonteCarlo);
                let est = crn_covariance_rhs(problem.as_ref(), n_mc, &mut rng).map_err(num)?;
                writeln!(out, "  noise crn, Sigma_hat diagonal {}", fmt_vec(&est.sigma_hat.diagonal())).unwrap();
                write_result(&mut out, "CRN         ", &spec_i.crn(&est.sigma_hat).map_err(num)?, eps, q)?;
            }
        }
    }
    Ok(out)
}

/// Fits log RMS distance against log iteration for every algorithm in a `curves.csv`.
pub fn rate_fit(curves: &Path, window: Option<(usize, usize)>) -> Result<String, CliError> {
    let mut rdr = csv::Reader::from_path(curves).map_err(|e| CliError::Config(format!("{}: {e}", curves.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: missing column {name:?}", curves.display())))
    };
    let (ca, ci, cr) = (col("algorithm")?, col("iteration")?, col("rms_distance")?);
    let mut series: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| CliError::Config(format!("{}: row {}: bad {what}", curves.display(), line + 2));
        let label = rec.get(ca).ok_or_else(|| bad("algorithm"))?.to_string();
        let k: usize = rec.get(ci).and_then(|v| v.parse().ok()).ok_or_else(|| bad("iteration"))?;
        let y: f64 = rec.get(cr).and_then(|v| v.parse().ok()).ok_or_else(|| bad("rms_distance"))?;
        match series.last_mut() {
            Some(s) if s.0 == label => {
                s.1.push(k);
                s.2.push(y);
            }
            _ => series.push((label, vec![k], vec![y])),
        }
    }
    if series.is_empty() {
        return Err(CliError::Config(format!("{}: no rows", curves.display())));
    }
    let mut out = String::new();
    for (label, ks, ys) in &series {
        let kmax = ks.iter().copied().max().unwrap_or(0);
        let w = window.unwrap_or_else(|| default_window(kmax));
        writeln!(out, "{label}: {}", describe_fit(&fit_log_slope(ks, ys, w), w)).unwrap();
    }
    Ok(out)
}

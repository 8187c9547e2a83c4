use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use harp_cli::config::apply_override;
use harp_cli::output::{CURVE_COLUMNS, ITERATION_COLUMNS, SUMMARY_COLUMNS};
use harp_cli::{predict, rate_fit, run_experiment, CliError, ExperimentConfig};

const TINY: &str = include_str!("golden/tiny.toml");

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    let body = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (h, body)
}

fn tiny_run(overrides: &[&str]) -> (tempfile::TempDir, harp_cli::RunSummary) {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ExperimentConfig::parse(TINY, &o).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&cfg, dir.path()).unwrap();
    (dir, s)
}

#[test]
fn tiny_run_matches_golden_files() {
    let (dir, _) = tiny_run(&[]);
    for f in ["harp_iterations.csv", "spsa_iterations.csv", "curves.csv", "summary.csv", "rate_fit.txt"] {
        assert_eq!(read(&dir.path().join(f)), read(&golden(f)), "{f} differs from the golden copy");
    }
}

#[test]
fn column_order_is_fixed() {
    let (dir, _) = tiny_run(&[]);
    assert_eq!(rows(&dir.path().join("harp_iterations.csv")).0, ITERATION_COLUMNS);
    assert_eq!(rows(&dir.path().join("curves.csv")).0, CURVE_COLUMNS);
    assert_eq!(rows(&dir.path().join("summary.csv")).0, SUMMARY_COLUMNS);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, _) = tiny_run(&[]);
    let (b, _) = tiny_run(&[]);
    for f in ["harp_iterations.csv", "spsa_iterations.csv", "curves.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (c, _) = tiny_run(&["run.seed=12"]);
    assert_ne!(fs::read(a.path().join("summary.csv")).unwrap(), fs::read(c.path().join("summary.csv")).unwrap());
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn summary_is_recomputable_from_iteration_files() {
    let (dir, _) = tiny_run(&["run.replicates=4"]);
    let (_, summary) = rows(&dir.path().join("summary.csv"));
    for row in summary {
        let label = &row[0];
        let (_, its) = rows(&dir.path().join(format!("{label}_iterations.csv")));
        let last: Vec<&Vec<String>> = its.iter().filter(|r| r[1] == "6").collect();
        assert_eq!(last.len(), 4);
        let loss: Vec<f64> = last.iter().map(|r| r[3].parse().unwrap()).collect();
        let nd: Vec<f64> = last.iter().map(|r| r[5].parse().unwrap()).collect();
        let (ml, sl) = mean_sd(&loss);
        let (mn, sn) = mean_sd(&nd);
        let got = |i: usize| row[i].parse::<f64>().unwrap();
        assert_eq!(row[2], "4");
        assert_eq!(row[3], "4");
        for (want, i) in [(ml, 5), (sl, 6), (mn, 9), (sn, 10)] {
            assert!(
                (got(i) - want).abs() <= 1e-14 * want.abs().max(1.0),
                "{label} column {}: {} vs {want}",
                SUMMARY_COLUMNS[i],
                got(i)
            );
        }
        assert_eq!(row[11], last[0][2]);
        let (_, curves) = rows(&dir.path().join("curves.csv"));
        let c6 = curves.iter().find(|r| &r[0] == label && r[1] == "6").unwrap();
        assert!((c6[3].parse::<f64>().unwrap() - mn).abs() < 1e-14);
        let c0 = curves.iter().find(|r| &r[0] == label && r[1] == "0").unwrap();
        assert_eq!(c0[3].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn single_replicate_leaves_sd_empty() {
    let (dir, s) = tiny_run(&["run.replicates=1"]);
    let (_, summary) = rows(&dir.path().join("summary.csv"));
    for row in &summary {
        assert_eq!(row[6], "");
        assert_eq!(row[10], "");
        assert!(row[5].parse::<f64>().unwrap().is_finite());
    }
    assert!(s.rows.iter().all(|r| r.sd_terminal_loss.is_none()));
    assert!(s.report.contains("sd n/a"));
}

#[test]
fn finite_sum_reports_loss_components() {
    let text = r#"
[problem]
name = "finite_sum"
dimension = 4
count = 10
subsample = 2
noise = "crn"
seed = 3

[run]
iterations = 20
replicates = 2
seed = 5
init = { kind = "constant", value = 0.5 }

[algorithm.spsa]
scheme = "spsa"
a = 0.05
alpha = 0.602
c = 0.1
gamma = 0.101
"#;
    let cfg = ExperimentConfig::parse(text, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&cfg, dir.path()).unwrap();
    let r = &s.rows[0];
    let (m, a) = (r.mean_terminal_magnitude.unwrap(), r.mean_terminal_attack.unwrap());
    assert!((m + a - r.mean_terminal_loss.unwrap()).abs() < 1e-12 * (m + a).abs().max(1.0));
}

#[test]
fn overrides_set_nested_values() {
    let mut t: toml::Table = TINY.parse().unwrap();
    apply_override(&mut t, "algorithm.harp.a = 0.25").unwrap();
    apply_override(&mut t, "algorithm.harp.gamma=1/20").unwrap();
    apply_override(&mut t, "report.rate_window=[2, 6]").unwrap();
    assert_eq!(t["algorithm"]["harp"]["a"].as_float(), Some(0.25));
    assert_eq!(t["algorithm"]["harp"]["gamma"].as_str(), Some("1/20"));
    assert!(apply_override(&mut t, "no_equals_sign").is_err());
    assert!(apply_override(&mut t, "run..seed=1").is_err());
    assert!(apply_override(&mut t, "run.seed.x=1").is_err());

    let cfg = ExperimentConfig::parse(TINY, &["algorithm.harp.gamma=\"1/20\"".into(), "run.iterations=9".into()]).unwrap();
    assert_eq!(cfg.schedule("harp").unwrap().gamma.to_string(), "1/20");
    assert_eq!(cfg.run.iterations, 9);
}

#[test]
fn config_errors_name_the_field() {
    let bad = TINY.replace("a = 0.5\nalpha", "a = 0.5\nbeta = 1\nalpha");
    let e = ExperimentConfig::parse(&bad, &[]).unwrap_err();
    assert!(matches!(e, CliError::Config(ref m) if m.contains("beta") && m.contains("line")), "{e}");
    let e = ExperimentConfig::parse(TINY, &["run.replicates=0".into()]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = ExperimentConfig::parse(TINY, &["run.queries_per_iteration=2".into()]).unwrap_err();
    assert!(e.to_string().contains("queries_per_iteration"), "{e}");
    let e = ExperimentConfig::parse(TINY, &["run.init={kind=\"point\", point=[1.0]}".into()]).unwrap_err();
    assert!(e.to_string().contains("length 1"), "{e}");
}

const DIAG: &str = r#"
[problem]
name = "quadratic"
diagonal = [10.0, 0.5]
sigma = 1.4142135623730951

[run]
iterations = 100
replicates = 1
seed = 1
init = { kind = "constant", value = 1.0 }

[algorithm.harp]
scheme = "harp"
a = 1.0
alpha = 1
c = 1.0
gamma = "1/6"
"#;

#[test]
fn predict_reports_both_traces() {
    let cfg = ExperimentConfig::parse(DIAG, &[]).unwrap();
    let out = predict(&cfg).unwrap();
    assert!(out.contains("unit prefactor 3.0517"), "{out}");
    assert!(out.contains("unit prefactor 2.0172"), "{out}");
    assert!(out.contains("tau = 2/3"), "{out}");
}

#[test]
fn predict_with_sublinear_alpha_has_no_bias() {
    let text = DIAG.replace("[10.0, 0.5]", "[100.0, 1.0]").replace("alpha = 1\n", "alpha = 0.602\n").replace("\"1/6\"", "0.101");
    let out = predict(&ExperimentConfig::parse(&text, &[]).unwrap()).unwrap();
    assert!(out.contains("tau_plus = 0.000000"), "{out}");
    assert!(out.contains("mu = [0.000000e0, 0.000000e0]"), "{out}");
}

#[test]
fn predict_rejects_unstable_gains() {
    let cfg = ExperimentConfig::parse(DIAG, &["algorithm.harp.a=0.5".into()]).unwrap();
    let e = predict(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("a > 0.666667"), "{e}");
}

#[test]
fn rate_fit_reads_curves() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("curves.csv");
    let mut text = CURVE_COLUMNS.join(",") + "\n";
    for k in [1usize, 10, 100, 1000] {
        text += &format!("x,{k},{},1,{},1\n", 2 * k, 3.0 * (k as f64).powf(-0.5));
    }
    fs::write(&p, text).unwrap();
    let out = rate_fit(&p, Some((1, 1000))).unwrap();
    assert!(out.starts_with("x: slope -0.500000"), "{out}");
    fs::write(&p, "algorithm,iteration\nx,1\n").unwrap();
    assert_eq!(rate_fit(&p, None).unwrap_err().exit_code(), 2);
}

fn harp_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_harp"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let ok = harp_bin().arg("run").arg(&cfg).arg("--output").arg(&out).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("summary.csv").exists());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("finished 2/2"));

    let env_out = dir.path().join("from_env");
    let ok = harp_bin().arg("run").arg(&cfg).env("HARP_OUTPUT_DIR", &env_out).current_dir(dir.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(env_out.join("curves.csv").exists());

    let missing = harp_bin().args(["run", "does-not-exist.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad = harp_bin().arg("run").arg(&cfg).args(["--set", "run.bogus=1"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));
    let usage = harp_bin().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let diag = dir.path().join("diag.toml");
    fs::write(&diag, DIAG).unwrap();
    let unstable = harp_bin().arg("predict").arg(&diag).args(["--set", "algorithm.harp.a=0.1"]).output().unwrap();
    assert_eq!(unstable.status.code(), Some(3));
    let fit = harp_bin().arg("rate-fit").arg(out.join("curves.csv")).args(["--window", "2", "6"]).output().unwrap();
    assert_eq!(fit.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&fit.stdout).contains("harp: slope"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nphfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nphfit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic Pareto-like sample: quantiles of a Lomax law at midpoints.
fn write_data(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("data.csv");
    let mut text = String::from("y\n");
    for k in 0..n {
        let u = (k as f64 + 0.5) / n as f64;
        text.push_str(&format!("{}\n", (1.0 - u).powf(-1.0 / 2.5) - 1.0));
    }
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn quick_fit(dir: &Path, stem: &str, extra: &[&str]) -> (Output, PathBuf) {
    let data = write_data(dir, 300);
    let out = dir.join(stem);
    let mut args = vec![
        "fit",
        "--data",
        s(&data),
        "--family",
        "geom-pareto:c=1",
        "--phases",
        "1",
        "--restarts",
        "2",
        "--rel-tol",
        "1e-6",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    (nphfit(&args), out)
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn fit_writes_every_output_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let (o, out) = quick_fit(dir.path(), "run", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("loglik:") && text.contains("theta: theta=") && text.contains("iterations:"), "{text}");
    for suffix in ["nph", "trace.csv", "density.csv", "survival.csv"] {
        assert!(dir.path().join(format!("run.{suffix}")).exists(), "missing run.{suffix}");
    }
    let (header, rows) = parse_csv(&fs::read_to_string(dir.path().join("run.trace.csv")).unwrap());
    assert_eq!(header, ["iteration", "loglik", "theta"]);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1] - 1e-9 * w[0][1].abs()));
    let nph = fs::read_to_string(out.with_extension("nph")).unwrap();
    assert!(nph.contains("geom-pareto") && nph.contains("command = \"fit\""), "{nph}");
}

#[test]
fn iteration_cap_exits_two_with_model_written() {
    let dir = TempDir::new().unwrap();
    let (o, _) = quick_fit(dir.path(), "capped", &["--max-iters", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("converge"));
    assert!(dir.path().join("capped.nph").exists());
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let (a, _) = quick_fit(dir.path(), "a", &["--seed", "9"]);
    let (b, _) = quick_fit(dir.path(), "b", &["--seed", "9"]);
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(stdout(&a), stdout(&b));
    for suffix in ["trace.csv", "density.csv", "survival.csv"] {
        let x = fs::read(dir.path().join(format!("a.{suffix}"))).unwrap();
        let y = fs::read(dir.path().join(format!("b.{suffix}"))).unwrap();
        assert!(x == y, "{suffix} differs");
    }
    let read = |p: &str| fs::read_to_string(dir.path().join(p)).unwrap();
    assert_eq!(read("a.nph"), read("b.nph"));
}

#[test]
fn fixed_theta_stays_put() {
    let dir = TempDir::new().unwrap();
    let (o, _) = quick_fit(dir.path(), "fixed", &["--fix-theta", "1.45"]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let (_, rows) = parse_csv(&fs::read_to_string(dir.path().join("fixed.trace.csv")).unwrap());
    assert!(rows.len() > 1);
    assert!(rows.iter().all(|r| r[2] == 1.45));
    assert!(stdout(&o).contains("theta=1.45"));
}

#[test]
fn weighted_and_binned_inputs_are_accepted() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("w.csv");
    fs::write(&path, "y,weight\n0.5,3\n1.5,2\n4,1\n12,1\n").unwrap();
    let out = dir.path().join("w");
    let o = nphfit(&[
        "fit",
        "--data",
        s(&path),
        "--family",
        "zeta",
        "--phases",
        "1",
        "--restarts",
        "1",
        "--rel-tol",
        "1e-6",
        "--out",
        s(&out),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));

    let (o, _) = quick_fit(dir.path(), "binned", &["--bin", "2:20"]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let nph = fs::read_to_string(dir.path().join("binned.nph")).unwrap();
    assert!(nph.contains("observations"));
}

#[test]
fn missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let o =
        nphfit(&["fit", "--data", s(&missing), "--family", "zeta", "--phases", "2", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn invalid_options_fail_before_writing_anything() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 50);
    let out = dir.path().join("bad");
    let cases: [&[&str]; 5] = [
        &["--family", "gamma", "--phases", "2"],
        &["--family", "zeta", "--phases", "0"],
        &["--family", "zeta", "--phases", "2", "--fix-theta", "0.5"],
        &["--family", "zeta", "--phases", "2", "--rel-tol", "-1"],
        &["--family", "zeta", "--phases", "2", "--bin", "3"],
    ];
    for extra in cases {
        let mut args = vec!["fit", "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = nphfit(&args);
        assert_eq!(o.status.code(), Some(1), "{extra:?}");
        assert!(stderr(&o).starts_with("error:"), "{extra:?}: {}", stderr(&o));
    }
    let o = nphfit(&["fit", "--data", s(&data), "--family", "zeta", "--phases", "2", "--out", "/no/such/dir/x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = nphfit(&["fit", "--family", "zeta"]);
    assert_eq!(o.status.code(), Some(1));
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, ["data.csv"]);
}

#[test]
fn censored_fit_needs_data() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c");
    let o = nphfit(&["fit-censored", "--family", "zeta", "--phases", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "lower,upper,weight\n").unwrap();
    let o = nphfit(&["fit-censored", "--censored", s(&empty), "--family", "zeta", "--phases", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("c.nph").exists());
}

#[test]
fn censored_fit_mixes_exact_and_intervals() {
    let dir = TempDir::new().unwrap();
    let exact = write_data(dir.path(), 200);
    let cens = dir.path().join("cens.csv");
    fs::write(&cens, "lower,upper,weight\n0.5,1.0,4\n2,inf,3\n0,0.2,2\n").unwrap();
    let out = dir.path().join("mixed");
    let o = nphfit(&[
        "fit-censored",
        "--exact",
        s(&exact),
        "--censored",
        s(&cens),
        "--family",
        "geom-pareto:c=1",
        "--phases",
        "1",
        "--restarts",
        "1",
        "--rel-tol",
        "1e-6",
        "--out",
        s(&out),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    assert!(dir.path().join("mixed.trace.csv").exists());
}

#[test]
fn fit_dist_writes_target_curves() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("lg");
    let o = nphfit(&[
        "fit-dist",
        "--target",
        "loggamma:alpha=2,beta=2",
        "--nodes",
        "100",
        "--family",
        "geom-pareto:c=1",
        "--phases",
        "2",
        "--restarts",
        "1",
        "--max-iters",
        "30",
        "--out",
        s(&out),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let (header, rows) = parse_csv(&fs::read_to_string(dir.path().join("lg.target.csv")).unwrap());
    assert_eq!(header, ["y", "density", "survival"]);
    assert_eq!(rows[0][2], 1.0);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]));

    let o = nphfit(&["fit-dist", "--target", "cauchy", "--family", "zeta", "--phases", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_and_simulate_agree_with_the_model() {
    let dir = TempDir::new().unwrap();
    let (o, _) = quick_fit(dir.path(), "m", &[]);
    assert_eq!(o.status.code(), Some(0));
    let model = dir.path().join("m.nph");

    let o = nphfit(&["eval", "--model", s(&model), "--at", "0,1,10"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = parse_csv(&stdout(&o));
    assert_eq!(header, ["y", "density", "survival", "cdf"]);
    assert_eq!(rows[0][2], 1.0);
    for r in &rows {
        assert!((r[2] + r[3] - 1.0).abs() < 1e-12);
    }

    let o = nphfit(&["eval", "--model", s(&model), "--quantile", "0.1,0.5,0.99"]);
    assert_eq!(o.status.code(), Some(0));
    let (_, rows) = parse_csv(&stdout(&o));
    for r in &rows {
        assert!((r[2] - (1.0 - r[0])).abs() < 1e-8, "{r:?}");
    }

    let o = nphfit(&["eval", "--model", s(&model), "--quantile", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = nphfit(&["eval", "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(1));

    let a = nphfit(&["simulate", "--model", s(&model), "-n", "50", "--seed", "4"]);
    let b = nphfit(&["simulate", "--model", s(&model), "-n", "50", "--seed", "4"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y"));
    let ys: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(ys.len(), 50);
    assert!(ys.iter().all(|y| *y >= 0.0 && y.is_finite()));
}

#[test]
fn help_exits_zero() {
    let o = nphfit(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("fit-dist"));
}

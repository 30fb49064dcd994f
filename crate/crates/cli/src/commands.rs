use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nphfit::curves::{grid, with_suffix, write_columns, write_model_curves, GRID_POINTS};
use nphfit::data::{bin_values, load_csv, read_rows};
use nphfit::em::MAX_PHASES;
use nphfit::{
    fit_censored as run_fit_censored, fit_distribution, fit_erlang_mixture, model_file, set_thread_count, CsvKind,
    Dataset, EmConfig, FitResult, NphError, Representative, Result, ScalingFamily, TargetDistribution,
};

use crate::{EvalArgs, FitArgs, FitCensoredArgs, FitDistArgs, ModelOpts, SimulateArgs};

/// Exit status of a fit that ran out of iterations.
const NOT_CONVERGED: u8 = 2;

pub fn configure_threads() -> Result<()> {
    match std::env::var("NPHFIT_THREADS") {
        Ok(v) => {
            let n: usize =
                v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                    NphError::InvalidInput(format!("NPHFIT_THREADS = '{v}' is not a positive integer"))
                })?;
            set_thread_count(n)
        }
        Err(_) => Ok(()),
    }
}

/// Everything a fitting command needs, validated before any work starts.
struct Job {
    family: ScalingFamily,
    phases: usize,
    config: EmConfig,
    out: PathBuf,
    metadata: BTreeMap<String, String>,
}

impl Job {
    fn from_opts(command: &str, o: &ModelOpts) -> Result<Self> {
        let mut family: ScalingFamily = o.family.parse()?;
        if let Some(spec) = &o.fix_theta {
            let theta = spec
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| NphError::InvalidInput(format!("--fix-theta: '{}' is not a number", v.trim())))
                })
                .collect::<Result<Vec<_>>>()?;
            family = family.with_theta(&theta)?.fixed(true);
        }
        if o.phases == 0 || o.phases > MAX_PHASES {
            return Err(NphError::InvalidInput(format!("--phases {} must lie in 1..={MAX_PHASES}", o.phases)));
        }
        let config = EmConfig {
            restarts: o.restarts,
            seed: o.seed,
            rel_tol: o.rel_tol,
            max_iters: o.max_iters,
            trunc_eps: o.trunc_eps,
            max_levels: o.max_levels,
        };
        config.check()?;
        let parent = match o.out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            return Err(NphError::InvalidInput(format!("output directory {} does not exist", parent.display())));
        }
        if o.out.file_name().is_none() {
            return Err(NphError::InvalidInput(format!("--out {} has no file stem", o.out.display())));
        }
        let metadata = BTreeMap::from([
            ("command".to_string(), command.to_string()),
            ("family".to_string(), family.to_string()),
            ("theta_fixed".to_string(), family.theta_fixed().to_string()),
            ("phases".to_string(), o.phases.to_string()),
            ("restarts".to_string(), o.restarts.to_string()),
            ("seed".to_string(), o.seed.to_string()),
            ("rel_tol".to_string(), o.rel_tol.to_string()),
            ("max_iters".to_string(), o.max_iters.to_string()),
        ]);
        Ok(Self { family, phases: o.phases, config, out: o.out.clone(), metadata })
    }

    /// Writes the model, trace and curves, prints a summary and maps
    /// convergence to the exit code.
    fn finish(mut self, result: &FitResult, curve_upper: f64) -> Result<ExitCode> {
        let m = &result.model;
        self.metadata.insert("loglik".into(), result.loglik().to_string());
        self.metadata.insert("iterations".into(), result.iterations.to_string());
        self.metadata.insert("converged".into(), result.converged.to_string());
        self.metadata.insert("best_restart".into(), result.diagnostics.best_restart.to_string());
        if !result.diagnostics.failures.is_empty() {
            self.metadata.insert("failed_restarts".into(), result.diagnostics.failures.len().to_string());
        }
        model_file::save(m, &self.metadata, &with_suffix(&self.out, "nph"))?;

        let names = m.scaling().kind().param_names();
        let mut header = vec!["iteration", "loglik"];
        header.extend(names.iter().copied());
        let rows: Vec<Vec<f64>> = result
            .loglik_trace
            .iter()
            .zip(&result.theta_trace)
            .enumerate()
            .map(|(i, (ll, theta))| {
                let mut row = vec![i as f64, *ll];
                row.extend(theta);
                row
            })
            .collect();
        write_columns(&with_suffix(&self.out, "trace.csv"), &header, &rows)?;
        write_model_curves(m, curve_upper, &self.out)?;

        let theta =
            names.iter().zip(m.scaling().theta()).map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(",");
        println!("loglik: {}", result.loglik());
        println!("theta: {theta}");
        println!("iterations: {}", result.iterations);
        for w in &result.diagnostics.warnings {
            eprintln!("warning: {w}");
        }
        for (r, e) in &result.diagnostics.failures {
            eprintln!("warning: restart {r} failed: {e}");
        }
        if result.converged {
            Ok(ExitCode::SUCCESS)
        } else {
            eprintln!(
                "warning: no restart converged within {} iterations; model written anyway",
                self.config.max_iters
            );
            Ok(ExitCode::from(NOT_CONVERGED))
        }
    }
}

/// `y` or `y,weight`, decided by the header line.
fn exact_kind(path: &Path) -> Result<CsvKind> {
    let file = std::fs::File::open(path).map_err(|source| NphError::Io { path: path.to_path_buf(), source })?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|source| NphError::Io { path: path.to_path_buf(), source })?;
    let header: String = first.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
    match header.as_str() {
        "y" => Ok(CsvKind::Exact),
        "y,weight" => Ok(CsvKind::Weighted),
        "" => Err(NphError::EmptyDataset(path.display().to_string())),
        other => Err(NphError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header 'y' or 'y,weight', found '{other}'"),
        }),
    }
}

fn parse_bin(spec: &str) -> Result<(f64, usize)> {
    let bad = || NphError::InvalidInput(format!("--bin '{spec}': expected T:K with T > 0 and K ≥ 1"));
    let (t, k) = spec.split_once(':').ok_or_else(bad)?;
    let t: f64 = t.trim().parse().map_err(|_| bad())?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    if !(t > 0.0) || !t.is_finite() || k == 0 {
        return Err(bad());
    }
    Ok((t, k))
}

fn curve_upper(data: &Dataset) -> f64 {
    2.0 * data.weighted_quantile(0.99).unwrap_or(1.0)
}

pub fn fit(a: FitArgs) -> Result<ExitCode> {
    let mut job = Job::from_opts("fit", &a.model)?;
    let bin = a.bin.as_deref().map(parse_bin).transpose()?;
    let representative: Representative = a.representative.parse()?;
    if let Some(s) = a.shift {
        if !s.is_finite() {
            return Err(NphError::InvalidInput(format!("--shift {s} must be finite")));
        }
    }
    let kind = exact_kind(&a.data)?;

    let data = match (a.shift, bin) {
        (None, None) => load_csv(&a.data, kind)?,
        (None, Some((t, k))) => load_csv(&a.data, kind)?.bin_body_tail(t, k, representative)?,
        (Some(shift), bin) => {
            let pairs: Vec<(f64, f64)> = read_rows(&a.data, kind)?
                .into_iter()
                .map(|(_, f)| (f[0] - shift, if kind == CsvKind::Weighted { f[1] } else { 1.0 }))
                .collect();
            let mut d = match bin {
                Some((t, k)) => bin_values(&pairs, t, k, representative)?,
                None => Dataset::from_weighted(&pairs)?,
            };
            d.provenance = format!("{} shifted by {shift}; {}", a.data.display(), d.provenance);
            d
        }
    };
    job.metadata.insert("data".into(), data.provenance.clone());
    job.metadata.insert("observations".into(), data.exact.len().to_string());
    let result = if a.erlang {
        job.metadata.insert("erlang".into(), "true".into());
        fit_erlang_mixture(&data, &job.family, job.phases, &job.config)?
    } else {
        nphfit::fit(&data, &job.family, job.phases, &job.config)?
    };
    let upper = curve_upper(&data);
    job.finish(&result, upper)
}

pub fn fit_censored(a: FitCensoredArgs) -> Result<ExitCode> {
    let mut job = Job::from_opts("fit-censored", &a.model)?;
    if a.exact.is_none() && a.censored.is_none() {
        return Err(NphError::InvalidInput("give at least one of --exact and --censored".into()));
    }
    let mut exact = Vec::new();
    let mut censored = Vec::new();
    let mut sources = Vec::new();
    if let Some(path) = &a.exact {
        exact = load_csv(path, exact_kind(path)?)?.exact;
        sources.push(path.display().to_string());
    }
    if let Some(path) = &a.censored {
        censored = load_csv(path, CsvKind::Censored)?.censored;
        sources.push(path.display().to_string());
    }
    let data = Dataset::new(exact, censored, sources.join(" + "))?;
    job.metadata.insert("data".into(), data.provenance.clone());
    let result = run_fit_censored(&data, &job.family, job.phases, &job.config)?;
    let upper = curve_upper(&data);
    job.finish(&result, upper)
}

pub fn fit_dist(a: FitDistArgs) -> Result<ExitCode> {
    let mut job = Job::from_opts("fit-dist", &a.model)?;
    let target: TargetDistribution = a.target.parse()?;
    if a.nodes == 0 {
        return Err(NphError::InvalidInput("--nodes must be at least 1".into()));
    }
    job.metadata.insert("target".into(), target.to_string());
    job.metadata.insert("nodes".into(), a.nodes.to_string());
    let result = fit_distribution(&target, &job.family, job.phases, a.nodes, &job.config)?;
    let upper = 2.0 * target.quantile(0.99)?;
    let rows: Vec<Vec<f64>> =
        grid(upper, GRID_POINTS).into_iter().map(|y| vec![y, target.density(y), target.survival(y)]).collect();
    write_columns(&with_suffix(&job.out, "target.csv"), &["y", "density", "survival"], &rows)?;
    job.finish(&result, upper)
}

fn write_stdout(text: &str) -> Result<()> {
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|source| NphError::Io { path: PathBuf::from("<stdout>"), source })
}

pub fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let (model, _) = model_file::load(&a.model)?;
    let mut out = String::from("y\n");
    for y in model.simulate(a.n, a.seed) {
        out.push_str(&format!("{y}\n"));
    }
    write_stdout(&out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (model, _) = model_file::load(&a.model)?;
    let mut out = String::new();
    if let Some(points) = &a.points.at {
        if let Some(y) = points.iter().find(|y| !(**y >= 0.0) || !y.is_finite()) {
            return Err(NphError::InvalidInput(format!("--at {y}: points must be finite and nonnegative")));
        }
        out.push_str("y,density,survival,cdf\n");
        for &y in points {
            out.push_str(&format!("{y},{},{},{}\n", model.density(y), model.survival(y), model.cdf(y)));
        }
    } else if let Some(probs) = &a.points.quantile {
        if let Some(u) = probs.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
            return Err(NphError::InvalidInput(format!("--quantile {u}: probabilities must lie in (0, 1)")));
        }
        out.push_str("u,quantile,survival\n");
        for &u in probs {
            let y = model.quantile(u)?;
            out.push_str(&format!("{u},{y},{}\n", model.survival(y)));
        }
    }
    write_stdout(&out)?;
    Ok(ExitCode::SUCCESS)
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Fit scale mixtures of phase-type distributions to heavy-tailed data.
#[derive(Debug, Parser)]
#[command(name = "nphfit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit exact (optionally weighted) observations.
    Fit(FitArgs),
    /// Fit a mix of exact and censored observations.
    FitCensored(FitCensoredArgs),
    /// Fit a known target distribution through quantile quadrature.
    FitDist(FitDistArgs),
    /// Draw a sample from a saved model.
    Simulate(SimulateArgs),
    /// Evaluate a saved model at points or probabilities.
    Eval(EvalArgs),
}

/// Options common to every fitting command.
#[derive(Debug, Args)]
struct ModelOpts {
    /// Scaling family, e.g. `geom-pareto:c=1`, `zeta`, `disc-weibull:c=1`, `disc-lognormal`.
    #[arg(long)]
    family: String,
    /// Number of phases (the Erlang order with `--erlang`).
    #[arg(long)]
    phases: usize,
    /// Hold the scaling parameters at these comma-separated values.
    #[arg(long, value_name = "V[,V]")]
    fix_theta: Option<String>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Relative log-likelihood change that ends a run.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Tail mass of the scaling law left out of the level series.
    #[arg(long, default_value_t = 1e-12)]
    trunc_eps: f64,
    #[arg(long, default_value_t = 10_000)]
    max_levels: usize,
    /// Output stem; writes `<stem>.nph`, `<stem>.trace.csv` and curve files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with header `y` or `y,weight`.
    #[arg(long)]
    data: PathBuf,
    /// Replace values below T by K equal-width bins.
    #[arg(long, value_name = "T:K")]
    bin: Option<String>,
    /// Bin representative: `midpoint` or `left-shifted`.
    #[arg(long, default_value = "midpoint")]
    representative: String,
    /// Subtract this from every value before binning.
    #[arg(long)]
    shift: Option<f64>,
    /// Use the Erlang-mixture special case (`T` a single Erlang block).
    #[arg(long)]
    erlang: bool,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Debug, Args)]
struct FitCensoredArgs {
    /// CSV of exact observations, header `y` or `y,weight`.
    #[arg(long)]
    exact: Option<PathBuf>,
    /// CSV with header `lower,upper,weight`; `upper` may be `inf`.
    #[arg(long)]
    censored: Option<PathBuf>,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Debug, Args)]
struct FitDistArgs {
    /// `loggamma:alpha=A,beta=B`, `weibull:lambda=L,p=P`, `lognormal:mu=M,sigma=S` or `table:<csv>`.
    #[arg(long)]
    target: String,
    /// Quadrature nodes.
    #[arg(long, default_value_t = 2000)]
    nodes: usize,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short = 'n', long = "count")]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "points")]
struct EvalPoints {
    /// Comma-separated points y.
    #[arg(long, value_delimiter = ',', group = "points")]
    at: Option<Vec<f64>>,
    /// Comma-separated probabilities u.
    #[arg(long, value_delimiter = ',', group = "points")]
    quantile: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    points: EvalPoints,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::FitCensored(a) => commands::fit_censored(a),
        Command::FitDist(a) => commands::fit_dist(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Eval(a) => commands::eval(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Fitting to a known distribution by EM on quantile-transform quadrature
//! nodes, which minimizes the Kullback–Leibler divergence from the target.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use statrs::distribution::{Continuous, ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::em::{fit, EmConfig, FitResult};
use crate::error::{NphError, Result};
use crate::model::NphModel;
use crate::scaling::ScalingFamily;

pub const DEFAULT_NODES: usize = 2000;

/// A target distribution on `(0, ∞)` known through its quantile function.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetDistribution {
    /// `ln(1 + Y) ~ Gamma(shape alpha, rate beta)`.
    LogGamma {
        alpha: f64,
        beta: f64,
    },
    /// Survival `exp(-(lambda y)^p)`.
    Weibull {
        lambda: f64,
        p: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    /// Quantiles tabulated at increasing probabilities, interpolated linearly.
    Table {
        source: PathBuf,
        u: Vec<f64>,
        quantile: Vec<f64>,
    },
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(NphError::Target(format!("{name} = {v} must be positive and finite")))
    }
}

impl TargetDistribution {
    pub fn log_gamma(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self::LogGamma { alpha: positive("alpha", alpha)?, beta: positive("beta", beta)? })
    }

    pub fn weibull(lambda: f64, p: f64) -> Result<Self> {
        Ok(Self::Weibull { lambda: positive("lambda", lambda)?, p: positive("p", p)? })
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(NphError::Target(format!("mu = {mu} must be finite")));
        }
        Ok(Self::Lognormal { mu, sigma: positive("sigma", sigma)? })
    }

    /// Builds a tabulated target; both columns must be strictly increasing,
    /// probabilities inside `(0, 1)` and quantiles positive.
    pub fn table(source: PathBuf, u: Vec<f64>, quantile: Vec<f64>) -> Result<Self> {
        if u.len() < 2 || u.len() != quantile.len() {
            return Err(NphError::Target(format!("{}: need at least two (u, quantile) rows", source.display())));
        }
        for k in 0..u.len() {
            if !(u[k] > 0.0 && u[k] < 1.0) || !(quantile[k] > 0.0) || !quantile[k].is_finite() {
                return Err(NphError::Target(format!(
                    "{}: row {} has u = {} and quantile = {}; need 0 < u < 1 and a positive quantile",
                    source.display(),
                    k + 1,
                    u[k],
                    quantile[k]
                )));
            }
            if k > 0 && !(u[k] > u[k - 1] && quantile[k] > quantile[k - 1]) {
                return Err(NphError::Target(format!(
                    "{}: rows {} and {} are not strictly increasing",
                    source.display(),
                    k,
                    k + 1
                )));
            }
        }
        Ok(Self::Table { source, u, quantile })
    }

    /// Reads a CSV with header `u,quantile`.
    pub fn from_table_csv(path: &Path) -> Result<Self> {
        let io = |source| NphError::Io { path: path.to_path_buf(), source };
        let mut reader =
            csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => io(source),
                other => NphError::Target(format!("{}: {other:?}", path.display())),
            })?;
        let parse_err = |line: usize, message: String| NphError::Parse { path: path.to_path_buf(), line, message };
        let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["u", "quantile"] {
            return Err(parse_err(
                1,
                format!("expected header `u,quantile`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        let (mut u, mut q) = (Vec::new(), Vec::new());
        for (k, record) in reader.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            let field = |j: usize| -> Result<f64> {
                record[j].parse::<f64>().map_err(|e| parse_err(line, format!("`{}`: {e}", &record[j])))
            };
            u.push(field(0)?);
            q.push(field(1)?);
        }
        Self::table(path.to_path_buf(), u, q)
    }

    /// `H^{-1}(u)` for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(NphError::Target(format!("probability {u} outside (0, 1)")));
        }
        let y = match *self {
            Self::LogGamma { alpha, beta } => gamma_quantile(alpha, beta, u)?.exp_m1(),
            Self::Weibull { lambda, p } => (-(-u).ln_1p()).powf(1.0 / p) / lambda,
            Self::Lognormal { mu, sigma } => (mu + sigma * normal_quantile(u)).exp(),
            Self::Table { u: ref us, ref quantile, .. } => {
                let (k, frac) = locate(us, u)?;
                quantile[k] + frac * (quantile[k + 1] - quantile[k])
            }
        };
        if y > 0.0 && y.is_finite() {
            Ok(y)
        } else {
            Err(NphError::Target(format!("quantile at u = {u} evaluated to {y}")))
        }
    }

    /// Log density at `y = H^{-1}(u)`; tables use the slope of the segment.
    pub fn log_density_at(&self, u: f64, y: f64) -> Result<f64> {
        Ok(match *self {
            Self::LogGamma { alpha, beta } => {
                let l = y.ln_1p();
                alpha * beta.ln() + (alpha - 1.0) * l.ln() - ln_gamma(alpha) - (beta + 1.0) * l
            }
            Self::Weibull { lambda, p } => {
                let z = lambda * y;
                (p * lambda).ln() + (p - 1.0) * z.ln() - z.powf(p)
            }
            Self::Lognormal { mu, sigma } => {
                let z = (y.ln() - mu) / sigma;
                -0.5 * z * z - y.ln() - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Self::Table { u: ref us, ref quantile, .. } => {
                let (k, _) = locate(us, u)?;
                ((us[k + 1] - us[k]) / (quantile[k + 1] - quantile[k])).ln()
            }
        })
    }

    /// `P(Y > y)`; tables give `NaN` outside the tabulated quantile range.
    pub fn survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::LogGamma { alpha, beta } => match Gamma::new(alpha, beta) {
                Ok(g) => g.sf(y.ln_1p()),
                Err(_) => f64::NAN,
            },
            Self::Weibull { lambda, p } => (-(lambda * y).powf(p)).exp(),
            Self::Lognormal { mu, sigma } => normal_sf((y.ln() - mu) / sigma),
            Self::Table { u: ref us, ref quantile, .. } => match table_cdf(us, quantile, y) {
                Some((u, _)) => 1.0 - u,
                None => f64::NAN,
            },
        }
    }

    /// Density at `y > 0`; `NaN` outside a table's range.
    pub fn density(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return 0.0;
        }
        let u = match *self {
            Self::Table { u: ref us, ref quantile, .. } => match table_cdf(us, quantile, y) {
                Some((u, _)) => u,
                None => return f64::NAN,
            },
            _ => 0.5,
        };
        self.log_density_at(u, y).map(f64::exp).unwrap_or(f64::NAN)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LogGamma { .. } => "loggamma",
            Self::Weibull { .. } => "weibull",
            Self::Lognormal { .. } => "lognormal",
            Self::Table { .. } => "table",
        }
    }
}

fn locate(us: &[f64], u: f64) -> Result<(usize, f64)> {
    let (first, last) = (us[0], us[us.len() - 1]);
    if u < first || u > last {
        return Err(NphError::Target(format!("u = {u} outside the tabulated range [{first}, {last}]")));
    }
    let k = us.partition_point(|&v| v <= u).clamp(1, us.len() - 1) - 1;
    Ok((k, (u - us[k]) / (us[k + 1] - us[k])))
}

fn table_cdf(us: &[f64], quantile: &[f64], y: f64) -> Option<(f64, usize)> {
    if y < quantile[0] || y > quantile[quantile.len() - 1] {
        return None;
    }
    let k = quantile.partition_point(|&q| q <= y).clamp(1, quantile.len() - 1) - 1;
    let frac = (y - quantile[k]) / (quantile[k + 1] - quantile[k]);
    Some((us[k] + frac * (us[k + 1] - us[k]), k))
}

fn normal_sf(z: f64) -> f64 {
    use statrs::distribution::Normal;
    Normal::standard().sf(z)
}

fn normal_quantile(u: f64) -> f64 {
    use statrs::distribution::Normal;
    Normal::standard().inverse_cdf(u)
}

/// Gamma quantile, polished with Newton steps on the upper or lower tail,
/// whichever is smaller, since the library inverse is only moderately accurate.
fn gamma_quantile(shape: f64, rate: f64, u: f64) -> Result<f64> {
    let g = Gamma::new(shape, rate).map_err(|e| NphError::Target(e.to_string()))?;
    let mut x = g.inverse_cdf(u);
    for _ in 0..8 {
        let pdf = g.pdf(x);
        if !(pdf > 0.0) {
            break;
        }
        let step = if u > 0.5 { (g.sf(x) - (1.0 - u)) / pdf } else { (u - g.cdf(x)) / pdf };
        let next = (x + step).max(0.5 * x);
        if (next - x).abs() <= 1e-15 * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

impl fmt::Display for TargetDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LogGamma { alpha, beta } => write!(f, "loggamma:alpha={alpha},beta={beta}"),
            Self::Weibull { lambda, p } => write!(f, "weibull:lambda={lambda},p={p}"),
            Self::Lognormal { mu, sigma } => write!(f, "lognormal:mu={mu},sigma={sigma}"),
            Self::Table { source, .. } => write!(f, "table:{}", source.display()),
        }
    }
}

/// Parses `loggamma:alpha=2,beta=2`, `weibull:lambda=1,p=0.5`,
/// `lognormal:mu=0,sigma=1` or `table:<path>`; the last reads the file.
impl FromStr for TargetDistribution {
    type Err = NphError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) =
            s.split_once(':').ok_or_else(|| NphError::Target(format!("`{s}`: expected <kind>:<parameters>")))?;
        if kind == "table" {
            return Self::from_table_csv(Path::new(rest));
        }
        let names: &[&str] = match kind {
            "loggamma" => &["alpha", "beta"],
            "weibull" => &["lambda", "p"],
            "lognormal" => &["mu", "sigma"],
            other => return Err(NphError::Target(format!("unknown target kind `{other}`"))),
        };
        let mut values = vec![None; names.len()];
        for part in rest.split(',') {
            let (key, value) =
                part.split_once('=').ok_or_else(|| NphError::Target(format!("`{part}`: expected name=value")))?;
            let slot = names
                .iter()
                .position(|n| *n == key.trim())
                .ok_or_else(|| NphError::Target(format!("{kind} has no parameter `{}`", key.trim())))?;
            let v = value.trim().parse::<f64>().map_err(|e| NphError::Target(format!("`{}`: {e}", value.trim())))?;
            values[slot] = Some(v);
        }
        let get = |k: usize| values[k].ok_or_else(|| NphError::Target(format!("{kind} is missing `{}`", names[k])));
        match kind {
            "loggamma" => Self::log_gamma(get(0)?, get(1)?),
            "weibull" => Self::weibull(get(0)?, get(1)?),
            _ => Self::lognormal(get(0)?, get(1)?),
        }
    }
}

/// Midpoint nodes `(k - 1/2)/K` with weight `1/K` each.
pub fn quadrature_nodes(k: usize) -> Vec<(f64, f64)> {
    let w = 1.0 / k as f64;
    (1..=k).map(|j| ((j as f64 - 0.5) * w, w)).collect()
}

/// The pseudo-dataset `{H^{-1}(u_k)}` with weights `1/K`.
pub fn quadrature_dataset(target: &TargetDistribution, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(NphError::InvalidInput("node count must be positive".into()));
    }
    let pairs =
        quadrature_nodes(k).into_iter().map(|(u, w)| Ok((target.quantile(u)?, w))).collect::<Result<Vec<_>>>()?;
    let mut data = Dataset::from_weighted(&pairs)?;
    data.provenance = format!("{target} with {k} nodes");
    Ok(data)
}

/// EM fit to `target`. The returned log-likelihood trace is the quadrature
/// cross-entropy `(1/K) Σ ln f(H^{-1}(u_k))`.
pub fn fit_distribution(
    target: &TargetDistribution,
    family: &ScalingFamily,
    p: usize,
    k: usize,
    config: &EmConfig,
) -> Result<FitResult> {
    fit(&quadrature_dataset(target, k)?, family, p, config)
}

/// `(1/K) Σ ln f(H^{-1}(u_k))`.
pub fn cross_entropy(model: &NphModel, target: &TargetDistribution, k: usize) -> Result<f64> {
    let mut sum = 0.0;
    for (u, w) in quadrature_nodes(k) {
        sum += w * model.log_density(target.quantile(u)?);
    }
    Ok(sum)
}

/// `(1/K) Σ [ln h − ln f](H^{-1}(u_k))`.
pub fn kl_divergence(model: &NphModel, target: &TargetDistribution, k: usize) -> Result<f64> {
    let mut sum = 0.0;
    for (u, w) in quadrature_nodes(k) {
        let y = target.quantile(u)?;
        sum += w * (target.log_density_at(u, y)? - model.log_density(y));
    }
    Ok(sum)
}

//! Discrete scaling distributions `π(θ)` on supports `{s_i}`.

mod zeta;

use std::fmt;
use std::str::FromStr;

use statrs::function::erf::erfc;

use crate::error::{NphError, Result};

/// Weights below this carry no likelihood information and are skipped.
const NEGLIGIBLE_WEIGHT: f64 = 1e-300;
/// Search range of the zeta exponent in the M-step.
pub const ZETA_BRACKET: (f64, f64) = (1.0 + 1e-6, 50.0);
/// Default cap on the number of levels.
pub const DEFAULT_MAX_LEVELS: usize = 10_000;

/// Largest level the sampler will return.
const LEVEL_CEILING: u64 = 1 << 52;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FamilyKind {
    /// `s_i = e^{(i-1)c}`, `π_i = (e^{-θc})^{i-1}(1 - e^{-θc})`.
    GeometricPareto { c: f64 },
    /// `s_i = i`, `π_i = i^{-θ}/ζ(θ)`.
    Zeta,
    /// `s_i = e^{ic}`, Weibull(λ, p) CDF discretized on the support.
    DiscretizedWeibull { c: f64 },
    /// `s_i = e^{i-1}`, lognormal(μ, σ) CDF discretized on the support.
    DiscretizedLognormal,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::GeometricPareto { .. } => "geom-pareto",
            FamilyKind::Zeta => "zeta",
            FamilyKind::DiscretizedWeibull { .. } => "disc-weibull",
            FamilyKind::DiscretizedLognormal => "disc-lognormal",
        }
    }

    /// Geometry constant `c`, if the family has one.
    pub fn spacing(&self) -> Option<f64> {
        match *self {
            FamilyKind::GeometricPareto { c } | FamilyKind::DiscretizedWeibull { c } => Some(c),
            _ => None,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            FamilyKind::GeometricPareto { .. } | FamilyKind::Zeta => &["theta"],
            FamilyKind::DiscretizedWeibull { .. } => &["lambda", "p"],
            FamilyKind::DiscretizedLognormal => &["mu", "sigma"],
        }
    }

    pub fn default_theta(&self) -> Vec<f64> {
        match self {
            FamilyKind::GeometricPareto { .. } => vec![1.0],
            FamilyKind::Zeta => vec![2.0],
            FamilyKind::DiscretizedWeibull { .. } => vec![1.0, 1.0],
            FamilyKind::DiscretizedLognormal => vec![0.0, 1.0],
        }
    }
}

/// Number of levels kept after truncating the scaling series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub levels: usize,
    /// The level cap was hit before the requested mass was captured.
    pub capped: bool,
}

/// A scaling family together with its current parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFamily {
    kind: FamilyKind,
    theta: Vec<f64>,
    theta_fixed: bool,
}

impl ScalingFamily {
    pub fn new(kind: FamilyKind, theta: &[f64]) -> Result<Self> {
        if let Some(c) = kind.spacing() {
            if !(c > 0.0) || !c.is_finite() {
                return Err(NphError::ParameterDomain(format!("{}: c must be positive, got {c}", kind.name())));
            }
        }
        check_theta(&kind, theta)?;
        Ok(Self { kind, theta: theta.to_vec(), theta_fixed: false })
    }

    pub fn with_default_theta(kind: FamilyKind) -> Result<Self> {
        Self::new(kind, &kind.default_theta())
    }

    /// Freezes or releases θ during fitting.
    pub fn fixed(mut self, theta_fixed: bool) -> Self {
        self.theta_fixed = theta_fixed;
        self
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        check_theta(&self.kind, theta)?;
        Ok(Self { kind: self.kind, theta: theta.to_vec(), theta_fixed: self.theta_fixed })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_fixed(&self) -> bool {
        self.theta_fixed
    }

    /// Support point `s_i`, `i ≥ 1`.
    pub fn support(&self, i: u64) -> f64 {
        let x = i as f64;
        match self.kind {
            FamilyKind::GeometricPareto { c } => ((x - 1.0) * c).exp(),
            FamilyKind::Zeta => x,
            FamilyKind::DiscretizedWeibull { c } => (x * c).exp(),
            FamilyKind::DiscretizedLognormal => (x - 1.0).exp(),
        }
    }

    pub fn pmf(&self, i: u64) -> f64 {
        self.log_pmf(i).exp()
    }

    pub fn log_pmf(&self, i: u64) -> f64 {
        let x = i as f64;
        match self.kind {
            FamilyKind::GeometricPareto { c } => {
                let rate = self.theta[0] * c;
                -(x - 1.0) * rate + (-(-rate).exp_m1()).ln()
            }
            FamilyKind::Zeta => -self.theta[0] * x.ln() - zeta::zeta(self.theta[0]).ln(),
            FamilyKind::DiscretizedWeibull { c } => {
                let (lambda, p) = (self.theta[0], self.theta[1]);
                let cum_hazard = |k: f64| (lambda * (k * c).exp()).powf(p);
                let upper = cum_hazard(x + 1.0);
                if i == 1 {
                    (-(-upper).exp_m1()).ln()
                } else {
                    let lower = cum_hazard(x);
                    -lower + (-(lower - upper).exp_m1()).ln()
                }
            }
            FamilyKind::DiscretizedLognormal => {
                let (mu, sigma) = (self.theta[0], self.theta[1]);
                let z_hi = (x - mu) / sigma;
                if i == 1 {
                    return normal_cdf(z_hi).ln();
                }
                let z_lo = (x - 1.0 - mu) / sigma;
                if z_lo > 0.0 {
                    (normal_sf(z_lo) - normal_sf(z_hi)).ln()
                } else {
                    (normal_cdf(z_hi) - normal_cdf(z_lo)).ln()
                }
            }
        }
    }

    /// Tail mass `Σ_{j > i} π_j`; `tail(0) = 1`.
    pub fn tail(&self, i: u64) -> f64 {
        if i == 0 {
            return 1.0;
        }
        let x = i as f64;
        match self.kind {
            FamilyKind::GeometricPareto { c } => (-self.theta[0] * c * x).exp(),
            FamilyKind::Zeta => {
                let s = self.theta[0];
                zeta::hurwitz_jet(s, x + 1.0).v / zeta::zeta(s)
            }
            FamilyKind::DiscretizedWeibull { c } => {
                let (lambda, p) = (self.theta[0], self.theta[1]);
                (-(lambda * ((x + 1.0) * c).exp()).powf(p)).exp()
            }
            FamilyKind::DiscretizedLognormal => normal_sf((x - self.theta[0]) / self.theta[1]),
        }
    }

    /// `π_1, …, π_n`.
    pub fn pmf_table(&self, n: usize) -> Vec<f64> {
        match self.kind {
            FamilyKind::Zeta => {
                let s = self.theta[0];
                let norm = zeta::zeta(s);
                (1..=n).map(|i| (i as f64).powf(-s) / norm).collect()
            }
            _ => (1..=n as u64).map(|i| self.pmf(i)).collect(),
        }
    }

    /// `s_1, …, s_n`.
    pub fn support_table(&self, n: usize) -> Vec<f64> {
        (1..=n as u64).map(|i| self.support(i)).collect()
    }

    /// Smallest `I` with `Σ_{i ≤ I} π_i ≥ 1 - eps`, capped at `max_levels`.
    pub fn truncation_index(&self, eps: f64, max_levels: usize) -> Truncation {
        let cap = max_levels.max(1) as u64;
        match first_level_below(|i| self.tail(i), eps, cap) {
            Some(levels) => Truncation { levels: levels as usize, capped: false },
            None => Truncation { levels: cap as usize, capped: true },
        }
    }

    /// Level `i` with `tail(i) < v ≤ tail(i - 1)`. For `v` uniform on (0, 1]
    /// this is an exact draw from `π`.
    pub fn level_for_tail(&self, v: f64) -> u64 {
        first_level_below(|i| self.tail(i), v * (1.0 - f64::EPSILON), LEVEL_CEILING).unwrap_or(LEVEL_CEILING)
    }

    /// Support point of the median level.
    pub fn median_support(&self) -> f64 {
        self.support(self.level_for_tail(0.5))
    }

    /// `Σ_i w_i log π_i(θ)` over the given levels; weights below 1e-300 skipped.
    pub fn objective(&self, w: &[f64]) -> f64 {
        if let FamilyKind::Zeta = self.kind {
            let s = self.theta[0];
            let (total, log_moment) = weight_moments(w);
            return -s * log_moment - total * zeta::zeta(s).ln();
        }
        w.iter()
            .enumerate()
            .filter(|(_, &wi)| wi > NEGLIGIBLE_WEIGHT)
            .map(|(i, &wi)| wi * self.log_pmf(i as u64 + 1))
            .sum()
    }

    /// Maximizes [`objective`](Self::objective) in θ; unchanged when θ is fixed.
    pub fn m_step(&self, w: &[f64]) -> Result<Self> {
        if self.theta_fixed {
            return Ok(self.clone());
        }
        if w.iter().any(|x| !(x >= &0.0) || !x.is_finite()) {
            return Err(NphError::InvalidInput("level weights must be finite and nonnegative".into()));
        }
        let total: f64 = w.iter().filter(|&&x| x > NEGLIGIBLE_WEIGHT).sum();
        if !(total > 0.0) {
            return Err(NphError::DegenerateWeights("all level weights are zero".into()));
        }
        let theta = match self.kind {
            FamilyKind::GeometricPareto { c } => vec![geometric_argmax(w, c)?],
            FamilyKind::Zeta => {
                let (total, log_moment) = weight_moments(w);
                vec![zeta_argmax(log_moment / total, self.theta[0])]
            }
            FamilyKind::DiscretizedWeibull { .. } | FamilyKind::DiscretizedLognormal => self.coordinate_search(w),
        };
        self.with_theta(&theta)
    }

    /// Cyclic golden-section search. Positive parameters are searched on the
    /// log scale. The result never scores below the current θ.
    fn coordinate_search(&self, w: &[f64]) -> Vec<f64> {
        let positive: [bool; 2] = match self.kind {
            FamilyKind::DiscretizedWeibull { .. } => [true, true],
            _ => [false, true],
        };
        let to_search =
            |theta: &[f64]| -> [f64; 2] { [0, 1].map(|k| if positive[k] { theta[k].ln() } else { theta[k] }) };
        let from_search =
            |x: [f64; 2]| -> Vec<f64> { (0..2).map(|k| if positive[k] { x[k].exp() } else { x[k] }).collect() };
        let score = |x: [f64; 2]| -> f64 {
            let theta = from_search(x);
            if check_theta(&self.kind, &theta).is_err() {
                return f64::NEG_INFINITY;
            }
            let fam = Self { kind: self.kind, theta, theta_fixed: false };
            let v = fam.objective(w);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let start = to_search(&self.theta);
        let start_score = score(start);
        let mut x = start;
        let mut best = start_score;
        for sweep in 0..200 {
            let mut moved = 0.0f64;
            for k in 0..2 {
                let half_width = if positive[k] { 3.0 } else { 4.0 };
                let line = |v: f64| {
                    let mut probe = x;
                    probe[k] = v;
                    score(probe)
                };
                let (v, fv) = golden_section_max(line, x[k] - half_width, x[k] + half_width, 1e-10);
                if fv > best {
                    moved = moved.max((v - x[k]).abs());
                    x[k] = v;
                    best = fv;
                }
            }
            if sweep >= 1 && moved < 1e-8 {
                break;
            }
        }
        if best >= start_score {
            from_search(x)
        } else {
            self.theta.clone()
        }
    }
}

fn check_theta(kind: &FamilyKind, theta: &[f64]) -> Result<()> {
    let want = kind.param_names().len();
    if theta.len() != want {
        return Err(NphError::ParameterDomain(format!(
            "{} takes {want} parameter(s), got {}",
            kind.name(),
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(NphError::ParameterDomain(format!("{}: non-finite parameter", kind.name())));
    }
    let ok = match kind {
        FamilyKind::GeometricPareto { .. } => theta[0] > 0.0,
        FamilyKind::Zeta => theta[0] > 1.0,
        FamilyKind::DiscretizedWeibull { .. } => theta[0] > 0.0 && theta[1] > 0.0,
        FamilyKind::DiscretizedLognormal => theta[1] > 0.0,
    };
    if ok {
        Ok(())
    } else {
        let rule = match kind {
            FamilyKind::GeometricPareto { .. } => "theta > 0",
            FamilyKind::Zeta => "theta > 1",
            FamilyKind::DiscretizedWeibull { .. } => "lambda > 0 and p > 0",
            FamilyKind::DiscretizedLognormal => "sigma > 0",
        };
        Err(NphError::ParameterDomain(format!("{} requires {rule}, got {theta:?}", kind.name())))
    }
}

/// `(Σ w_i, Σ w_i ln i)`
fn weight_moments(w: &[f64]) -> (f64, f64) {
    w.iter()
        .enumerate()
        .filter(|(_, &wi)| wi > NEGLIGIBLE_WEIGHT)
        .fold((0.0, 0.0), |(t, m), (i, &wi)| (t + wi, m + wi * ((i + 1) as f64).ln()))
}

fn geometric_argmax(w: &[f64], c: f64) -> Result<f64> {
    let (mut total, mut first_moment) = (0.0, 0.0);
    for (i, &wi) in w.iter().enumerate() {
        if wi > NEGLIGIBLE_WEIGHT {
            total += wi;
            first_moment += wi * (i + 1) as f64;
        }
    }
    let ratio = 1.0 - total / first_moment;
    if !(ratio > 0.0) {
        return Err(NphError::DegenerateWeights(
            "all weight sits on the first level, so the tail index is unbounded; \
             a lighter-tailed scaling family is more appropriate"
                .into(),
        ));
    }
    Ok(-ratio.ln() / c)
}

/// Root of `ζ'(θ)/ζ(θ) + m = 0` by Newton's method safeguarded with bisection,
/// clamped to [`ZETA_BRACKET`].
fn zeta_argmax(m: f64, start: f64) -> f64 {
    let (mut lo, mut hi) = ZETA_BRACKET;
    let score = |s: f64| {
        let z = zeta::zeta_jet(s);
        let ratio = z.d1 / z.v;
        (ratio + m, z.d2 / z.v - ratio * ratio)
    };
    if score(hi).0 <= 0.0 {
        return hi;
    }
    if score(lo).0 >= 0.0 {
        return lo;
    }
    let mut s = start.clamp(lo, hi);
    for _ in 0..500 {
        let (g, slope) = score(s);
        if g > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - g / slope;
        let next = if newton > lo && newton < hi && slope > 0.0 { newton } else { 0.5 * (lo + hi) };
        let step = (next - s).abs();
        s = next;
        if step < 1e-10 || hi - lo < 1e-12 {
            break;
        }
    }
    s
}

/// Smallest `i` in `1..=cap` with `tail(i) ≤ level`, for nonincreasing `tail`.
fn first_level_below<F: Fn(u64) -> f64>(tail: F, level: f64, cap: u64) -> Option<u64> {
    let mut hi = 1u64;
    while tail(hi) > level {
        if hi >= cap {
            return None;
        }
        hi = (hi.saturating_mul(2)).min(cap);
    }
    // tail(lo) > level ≥ tail(hi)
    let mut lo = hi / 2;
    if lo == 0 {
        return Some(hi);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Maximizer of a unimodal-ish function on `[a, b]` and its value.
pub(crate) fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

impl fmt::Display for ScalingFamily {
    /// Spec string including the current parameters; parses back with `FromStr`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.kind.name())?;
        let mut parts = Vec::new();
        if let Some(c) = self.kind.spacing() {
            parts.push(format!("c={c}"));
        }
        for (name, value) in self.kind.param_names().iter().zip(&self.theta) {
            parts.push(format!("{name}={value}"));
        }
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for ScalingFamily {
    type Err = NphError;

    /// `geom-pareto:c=<c>[,theta=..]`, `zeta[:theta=..]`,
    /// `disc-weibull:c=<c>[,lambda=..,p=..]`, `disc-lognormal[:mu=..,sigma=..]`.
    fn from_str(spec: &str) -> Result<Self> {
        let bad = |msg: String| NphError::InvalidInput(format!("family spec '{spec}': {msg}"));
        let (name, rest) = spec.trim().split_once(':').unwrap_or((spec.trim(), ""));
        let mut pairs: Vec<(String, f64)> = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| bad(format!("expected key=value, got '{item}'")))?;
            let value: f64 = value.trim().parse().map_err(|_| bad(format!("'{}' is not a number", value.trim())))?;
            pairs.push((key.trim().to_string(), value));
        }
        let mut take = |key: &str| -> Option<f64> {
            let pos = pairs.iter().position(|(k, _)| k == key)?;
            Some(pairs.remove(pos).1)
        };
        let kind = match name {
            "geom-pareto" => {
                FamilyKind::GeometricPareto { c: take("c").ok_or_else(|| bad("missing c=<real>".into()))? }
            }
            "zeta" => FamilyKind::Zeta,
            "disc-weibull" => {
                FamilyKind::DiscretizedWeibull { c: take("c").ok_or_else(|| bad("missing c=<real>".into()))? }
            }
            "disc-lognormal" => FamilyKind::DiscretizedLognormal,
            other => return Err(bad(format!("unknown family '{other}'"))),
        };
        let theta: Vec<f64> = kind
            .param_names()
            .iter()
            .zip(kind.default_theta())
            .map(|(name, default)| take(name).unwrap_or(default))
            .collect();
        if let Some((key, _)) = pairs.first() {
            return Err(bad(format!("unexpected key '{key}'")));
        }
        ScalingFamily::new(kind, &theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nphfit_oracle::series::{argmax_1d, bisect, zeta_brute, zeta_log_moment_brute};
    use proptest::prelude::*;

    fn geom(c: f64, theta: f64) -> ScalingFamily {
        ScalingFamily::new(FamilyKind::GeometricPareto { c }, &[theta]).unwrap()
    }

    fn zeta_family(theta: f64) -> ScalingFamily {
        ScalingFamily::new(FamilyKind::Zeta, &[theta]).unwrap()
    }

    fn all_families() -> Vec<ScalingFamily> {
        vec![
            geom(1.0, 1.3),
            zeta_family(2.4),
            ScalingFamily::new(FamilyKind::DiscretizedWeibull { c: 1.0 }, &[0.4, 0.7]).unwrap(),
            ScalingFamily::new(FamilyKind::DiscretizedLognormal, &[1.5, 1.2]).unwrap(),
        ]
    }

    #[test]
    fn support_points() {
        assert_eq!(geom(1.0, 1.0).support(1), 1.0);
        assert_eq!(zeta_family(2.0).support(4), 4.0);
        let w = ScalingFamily::with_default_theta(FamilyKind::DiscretizedWeibull { c: 1.0 }).unwrap();
        assert!((w.support(2) - 7.389_056_098_930_65).abs() < 1e-12);
        let ln = ScalingFamily::with_default_theta(FamilyKind::DiscretizedLognormal).unwrap();
        assert_eq!(ln.support(1), 1.0);
        for fam in all_families() {
            let s = fam.support_table(50);
            assert!(s[0] > 0.0 && s.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn pmf_examples() {
        assert!((geom(1.0, 2f64.ln()).pmf(1) - 0.5).abs() < 1e-15);
        let z = zeta_family(2.0);
        assert!((z.pmf(1) - 6.0 / std::f64::consts::PI.powi(2)).abs() < 1e-15);
        assert!((z.pmf(1) - 1.0 / zeta_brute(2.0, 1_000_000)).abs() < 1e-12);
    }

    #[test]
    fn pmf_normalizes_with_analytic_tail() {
        for fam in all_families() {
            let t = fam.truncation_index(1e-13, 1_000_000);
            let head: f64 = fam.pmf_table(t.levels).iter().sum();
            assert!((head + fam.tail(t.levels as u64) - 1.0).abs() < 1e-12, "{fam}");
            for i in [1u64, 2, 5] {
                assert!((fam.tail(i - 1) - fam.tail(i) - fam.pmf(i)).abs() < 1e-13, "{fam} {i}");
            }
        }
    }

    #[test]
    fn parameter_domain_errors() {
        assert!(ScalingFamily::new(FamilyKind::Zeta, &[1.0]).is_err());
        assert!(ScalingFamily::new(FamilyKind::GeometricPareto { c: 1.0 }, &[0.0]).is_err());
        assert!(ScalingFamily::new(FamilyKind::GeometricPareto { c: -1.0 }, &[1.0]).is_err());
        assert!(ScalingFamily::new(FamilyKind::DiscretizedLognormal, &[0.0, 0.0]).is_err());
        assert!(ScalingFamily::new(FamilyKind::DiscretizedWeibull { c: 1.0 }, &[1.0]).is_err());
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(geom(1.0, 1.0).truncation_index(1e-12, 10_000), Truncation { levels: 28, capped: false });
        assert_eq!(geom(1.0, 50.0).truncation_index(0.5, 10_000).levels, 1);

        let z = zeta_family(2.0);
        let eps = 1e-6;
        let t = z.truncation_index(eps, 10_000_000);
        assert!(!t.capped);
        let norm = std::f64::consts::PI.powi(2) / 6.0;
        // 1/(I+1) ≤ Σ_{i>I} i^{-2} ≤ 1/I
        let upper = (1.0 / (eps * norm)).ceil() as usize;
        let lower = (1.0 / (eps * norm)).floor() as usize - 1;
        assert!(t.levels <= upper && t.levels >= lower, "{}", t.levels);
        assert!(z.tail(t.levels as u64) <= eps && z.tail(t.levels as u64 - 1) > eps);

        let capped = zeta_family(2.0).truncation_index(1e-12, 10_000);
        assert_eq!(capped, Truncation { levels: 10_000, capped: true });
    }

    #[test]
    fn geometric_m_step_examples() {
        let fam = geom(1.0, 0.5);
        let est = fam.m_step(&[1.0, 1.0, 0.0, 0.0]).unwrap().theta()[0];
        assert!((est - 3f64.ln()).abs() < 1e-12);
        let oracle = argmax_1d(|t| geom(1.0, t).objective(&[1.0, 1.0]), 0.01, 5.0, 2000);
        assert!((est - oracle).abs() < 1e-6);
        let est = fam.m_step(&[0.0, 1.0, 0.0]).unwrap().theta()[0];
        assert!((est - 2f64.ln()).abs() < 1e-12);

        let err = fam.m_step(&[3.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, NphError::DegenerateWeights(_)));
    }

    #[test]
    fn fixed_theta_is_untouched() {
        let fam = geom(1.0, 1.45).fixed(true);
        for w in [vec![1.0, 5.0], vec![9.0, 0.0, 1.0]] {
            assert_eq!(fam.m_step(&w).unwrap().theta(), &[1.45]);
        }
    }

    #[test]
    fn zeta_m_step_root_matches_bisection() {
        let w: Vec<f64> = (1..=200).map(|i| (i as f64).powf(-2.3)).collect();
        let est = zeta_family(4.0).m_step(&w).unwrap().theta()[0];
        let total: f64 = w.iter().sum();
        let m: f64 = w.iter().enumerate().map(|(i, wi)| wi * ((i + 1) as f64).ln()).sum::<f64>() / total;
        let root = bisect(|s| m - zeta_log_moment_brute(s, 200_000) / zeta_brute(s, 200_000), 1.05, 20.0, 1e-12);
        assert!((est - root).abs() < 1e-8, "{est} vs {root}");
        // all mass on level 1 pushes θ to the bracket end
        assert_eq!(zeta_family(2.0).m_step(&[1.0]).unwrap().theta()[0], ZETA_BRACKET.1);
    }

    #[test]
    fn spec_strings_round_trip() {
        let f: ScalingFamily = "geom-pareto:c=1".parse().unwrap();
        assert_eq!(f.kind(), FamilyKind::GeometricPareto { c: 1.0 });
        assert_eq!(f.theta(), &[1.0]);
        let f: ScalingFamily = "zeta".parse().unwrap();
        assert_eq!(f.theta(), &[2.0]);
        let f: ScalingFamily = "disc-weibull:c=0.5,p=2".parse().unwrap();
        assert_eq!(f.theta(), &[1.0, 2.0]);
        let f: ScalingFamily = "disc-lognormal:mu=-1,sigma=0.5".parse().unwrap();
        assert_eq!(f.to_string().parse::<ScalingFamily>().unwrap(), f);
        assert!("geom-pareto".parse::<ScalingFamily>().is_err());
        assert!("zeta:theta=0.5".parse::<ScalingFamily>().is_err());
        assert!("cauchy".parse::<ScalingFamily>().is_err());
        assert!("zeta:foo=1".parse::<ScalingFamily>().is_err());
    }

    #[test]
    fn level_sampling_inverts_the_tail() {
        for fam in all_families() {
            for &v in &[1.0, 0.9, 0.5, 0.1, 1e-3, 1e-9] {
                let i = fam.level_for_tail(v);
                assert!(fam.tail(i) < v && fam.tail(i - 1) >= v * (1.0 - 1e-15), "{fam} {v}");
            }
        }
    }

    fn random_family(selector: usize, a: f64, b: f64) -> ScalingFamily {
        match selector {
            0 => geom(1.0, 0.2 + 3.0 * a),
            1 => zeta_family(1.2 + 6.0 * a),
            2 => {
                ScalingFamily::new(FamilyKind::DiscretizedWeibull { c: 1.0 }, &[0.05 + 2.0 * a, 0.2 + 2.0 * b]).unwrap()
            }
            _ => ScalingFamily::new(FamilyKind::DiscretizedLognormal, &[-1.0 + 5.0 * a, 0.3 + 2.0 * b]).unwrap(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn m_step_never_loses_to_the_start(
            selector in 0usize..4,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
            w in prop::collection::vec(0.0f64..10.0, 2..12),
        ) {
            prop_assume!(w.iter().skip(1).any(|&x| x > 0.1));
            let start = random_family(selector, a, b);
            let next = start.m_step(&w).unwrap();
            let (before, after) = (start.objective(&w), next.objective(&w));
            prop_assert!(after >= before - 1e-9 * before.abs().max(1.0), "{before} -> {after}");
        }

        #[test]
        fn geometric_explicit_matches_numeric_argmax(
            w in prop::collection::vec(0.0f64..5.0, 2..10),
            c in 0.3f64..2.0,
        ) {
            prop_assume!(w.iter().skip(1).any(|&x| x > 0.1));
            let est = geom(c, 1.0).m_step(&w).unwrap().theta()[0];
            let oracle = argmax_1d(|t| geom(c, t).objective(&w), 1e-4, est * 3.0 + 1.0, 4000);
            prop_assert!((est - oracle).abs() < 1e-6, "{est} vs {oracle}");
        }

        #[test]
        fn zeta_newton_is_the_global_argmax(
            w in prop::collection::vec(0.0f64..5.0, 2..10),
        ) {
            prop_assume!(w.iter().skip(1).any(|&x| x > 0.1));
            let est = zeta_family(2.0).m_step(&w).unwrap().theta()[0];
            let obj = |s: f64| zeta_family(s).objective(&w);
            for probe in [1.01, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0] {
                prop_assert!(obj(est) >= obj(probe) - 1e-9 * obj(probe).abs());
            }
        }
    }
}

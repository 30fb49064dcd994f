//! The NPH distribution `Y = N τ` with the level series truncated by mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{NphError, Result};
use crate::matrix::mat_exp_scaled;
use crate::parallel::map_blocks;
use crate::phase_type::{dot, PhaseTypeRep};
use crate::scaling::{ScalingFamily, Truncation, DEFAULT_MAX_LEVELS};

pub const DEFAULT_TRUNC_EPS: f64 = 1e-12;

/// Sums of level terms below this are recomputed on the log scale.
const LINEAR_FLOOR: f64 = 1e-250;

/// Levels kept after truncation with their probabilities and scales.
#[derive(Clone, Debug)]
struct LevelTable {
    pmf: Vec<f64>,
    support: Vec<f64>,
    /// `tails[i] = Σ_{j > i} π_j` for `i = 0..=levels`.
    tails: Vec<f64>,
    truncation: Truncation,
}

impl LevelTable {
    fn build(scaling: &ScalingFamily, eps: f64, max_levels: usize) -> Self {
        let truncation = scaling.truncation_index(eps, max_levels);
        let n = truncation.levels;
        let pmf = scaling.pmf_table(n);
        let support = scaling.support_table(n);
        let mut tails = vec![0.0; n + 1];
        tails[n] = scaling.tail(n as u64);
        for i in (0..n).rev() {
            tails[i] = tails[i + 1] + pmf[i];
        }
        Self { pmf, support, tails, truncation }
    }
}

/// `NPH_p(π, α, T)` with density `Σ_i π_i α e^{T y/s_i} t / s_i`.
#[derive(Clone, Debug)]
pub struct NphModel {
    scaling: ScalingFamily,
    ph: PhaseTypeRep,
    trunc_eps: f64,
    max_levels: usize,
    table: LevelTable,
}

impl PartialEq for NphModel {
    fn eq(&self, other: &Self) -> bool {
        self.scaling == other.scaling
            && self.ph == other.ph
            && self.trunc_eps == other.trunc_eps
            && self.max_levels == other.max_levels
    }
}

/// Log-likelihood with the observations whose probability vanished.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Indices into `Dataset::exact` with zero density.
    pub zero_exact: Vec<usize>,
    /// Indices into `Dataset::censored` with zero probability.
    pub zero_censored: Vec<usize>,
}

impl NphModel {
    /// Model with the default truncation (`eps = 1e-12`, at most 10 000 levels).
    pub fn new(scaling: ScalingFamily, ph: PhaseTypeRep) -> Self {
        Self::with_truncation(scaling, ph, DEFAULT_TRUNC_EPS, DEFAULT_MAX_LEVELS).expect("default truncation is valid")
    }

    pub fn with_truncation(
        scaling: ScalingFamily,
        ph: PhaseTypeRep,
        trunc_eps: f64,
        max_levels: usize,
    ) -> Result<Self> {
        if !(trunc_eps > 0.0 && trunc_eps < 1.0) {
            return Err(NphError::InvalidInput(format!("trunc_eps = {trunc_eps} must lie in (0, 1)")));
        }
        if max_levels == 0 {
            return Err(NphError::InvalidInput("max_levels must be at least 1".into()));
        }
        let table = LevelTable::build(&scaling, trunc_eps, max_levels);
        Ok(Self { scaling, ph, trunc_eps, max_levels, table })
    }

    /// Same model with a different truncation policy.
    pub fn retruncated(&self, trunc_eps: f64, max_levels: usize) -> Result<Self> {
        Self::with_truncation(self.scaling.clone(), self.ph.clone(), trunc_eps, max_levels)
    }

    pub fn scaling(&self) -> &ScalingFamily {
        &self.scaling
    }

    pub fn ph(&self) -> &PhaseTypeRep {
        &self.ph
    }

    pub fn trunc_eps(&self) -> f64 {
        self.trunc_eps
    }

    pub fn max_levels(&self) -> usize {
        self.max_levels
    }

    pub fn truncation(&self) -> Truncation {
        self.table.truncation
    }

    /// `π_1, …, π_I`
    pub fn level_pmf(&self) -> &[f64] {
        &self.table.pmf
    }

    /// `s_1, …, s_I`
    pub fn level_support(&self) -> &[f64] {
        &self.table.support
    }

    /// Probability mass of the levels dropped by truncation.
    pub fn truncated_mass(&self) -> f64 {
        self.table.tails[self.table.tails.len() - 1]
    }

    fn levels(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.table.pmf.iter().copied().zip(self.table.support.iter().copied())
    }

    pub fn density(&self, y: f64) -> f64 {
        if !(y >= 0.0) || y.is_infinite() {
            return 0.0;
        }
        self.levels().map(|(pi, s)| pi * self.ph.density_factor(y / s) / s).sum()
    }

    pub fn survival(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return 1.0;
        }
        if y.is_infinite() {
            return 0.0;
        }
        let s: f64 = self.levels().map(|(pi, s)| pi * self.ph.survival_factor(y / s)).sum();
        s.clamp(0.0, 1.0)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        1.0 - self.survival(y)
    }

    /// `log f(y)`, switching to a log-sum-exp over levels when the linear
    /// sum underflows.
    pub fn log_density(&self, y: f64) -> f64 {
        let linear = self.density(y);
        if linear > LINEAR_FLOOR || !(y > 0.0) || y.is_infinite() {
            return linear.ln();
        }
        log_sum_exp(self.levels().map(|(pi, s)| pi.ln() - s.ln() + self.log_factor(y / s, self.ph.exit())))
    }

    /// `log S(y)` with the same underflow protection as [`log_density`](Self::log_density).
    pub fn log_survival(&self, y: f64) -> f64 {
        let linear = self.survival(y);
        if linear > LINEAR_FLOOR || !(y > 0.0) || y.is_infinite() {
            return linear.ln();
        }
        let ones = vec![1.0; self.ph.phases()];
        log_sum_exp(self.levels().map(|(pi, s)| pi.ln() + self.log_factor(y / s, &ones)))
    }

    /// `log(α e^{T x} v)` without underflow.
    fn log_factor(&self, x: f64, v: &[f64]) -> f64 {
        let sub = self.ph.sub_intensity();
        if self.ph.phases() == 1 {
            return sub.get(0, 0) * x + v[0].ln();
        }
        match mat_exp_scaled(&sub.scaled(x)) {
            Ok((m, e)) => dot(&m.vec_mul(self.ph.alpha()), v).ln() + e as f64 * std::f64::consts::LN_2,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `log P(Y ∈ (lower, upper])`
    pub fn log_interval_probability(&self, lower: f64, upper: f64) -> f64 {
        if upper.is_infinite() {
            return self.log_survival(lower);
        }
        let p: f64 = self
            .levels()
            .map(|(pi, s)| pi * (self.ph.survival_factor(lower / s) - self.ph.survival_factor(upper / s)))
            .sum();
        p.max(0.0).ln()
    }

    /// Weighted log-likelihood of exact and censored observations.
    pub fn log_likelihood(&self, data: &Dataset) -> LogLikelihood {
        let exact = map_blocks(&data.exact, |offset, block| {
            let mut sum = 0.0;
            let mut zero = Vec::new();
            for (k, o) in block.iter().enumerate() {
                let l = self.log_density(o.y);
                if l == f64::NEG_INFINITY {
                    zero.push(offset + k);
                }
                sum += o.weight * l;
            }
            (sum, zero)
        });
        let censored = map_blocks(&data.censored, |offset, block| {
            let mut sum = 0.0;
            let mut zero = Vec::new();
            for (k, o) in block.iter().enumerate() {
                if o.lower == 0.0 && o.upper.is_infinite() {
                    continue;
                }
                let l = self.log_interval_probability(o.lower, o.upper);
                if l == f64::NEG_INFINITY {
                    zero.push(offset + k);
                }
                sum += o.weight * l;
            }
            (sum, zero)
        });
        let mut out = LogLikelihood { value: 0.0, zero_exact: Vec::new(), zero_censored: Vec::new() };
        for (sum, zero) in exact {
            out.value += sum;
            out.zero_exact.extend(zero);
        }
        for (sum, zero) in censored {
            out.value += sum;
            out.zero_censored.extend(zero);
        }
        out
    }

    /// Level index (1-based) for a uniform draw `v ∈ (0, 1]`; exact even
    /// beyond the truncation point.
    fn draw_level(&self, v: f64) -> (u64, f64) {
        let tails = &self.table.tails;
        let n = tails.len() - 1;
        if tails[n] < v {
            // first i in 1..=n with tails[i] < v
            let i = 1 + tails[1..].partition_point(|&t| t >= v);
            (i as u64, self.table.support[i - 1])
        } else {
            let i = self.scaling.level_for_tail(v).max(n as u64 + 1);
            (i, self.scaling.support(i))
        }
    }

    /// `n` draws: a level from `π`, then the absorption time of the jump
    /// chain with generator `T / s_i`.
    pub fn simulate(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = 1.0 - rng.random::<f64>();
                let (_, scale) = self.draw_level(v);
                scale * self.ph.sample_absorption(&mut rng)
            })
            .collect()
    }

    /// `y` with `P(Y ≤ y) = u`, by bisection on the survival function to a
    /// relative tolerance of 1e-10.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(NphError::InvalidInput(format!("quantile level {u} must lie in (0, 1)")));
        }
        let target = 1.0 - u;
        if self.survival(0.0) <= target {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while self.survival(hi) > target {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(NphError::NumericOverflow("quantile bracket"));
            }
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        for _ in 0..2000 {
            if hi - lo <= 1e-10 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.survival(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub(crate) fn log_sum_exp<I: Iterator<Item = f64>>(terms: I) -> f64 {
    let terms: Vec<f64> = terms.filter(|t| !t.is_nan()).collect();
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + terms.iter().map(|t| (t - peak).exp()).sum::<f64>().ln()
}

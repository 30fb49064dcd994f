//! EM for exact, possibly weighted, observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, WeightedObservation};
use crate::error::{NphError, Result};
use crate::matrix::{scale_pow2, SquareMatrix};
use crate::model::NphModel;
use crate::parallel::map_blocks;
use crate::phase_type::PhaseTypeRep;
use crate::scaling::{ScalingFamily, DEFAULT_MAX_LEVELS};
use crate::van_loan::VanLoan;

/// Largest phase count; the Van Loan block doubles the order.
pub const MAX_PHASES: usize = crate::matrix::MAX_ORDER / 2;

/// Options shared by every fitting routine.
#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    /// Independent runs from different random starting points.
    pub restarts: usize,
    pub seed: u64,
    /// Stop once `|Δℓ| ≤ rel_tol · |ℓ|`.
    pub rel_tol: f64,
    /// Cap on EM updates per run.
    pub max_iters: usize,
    pub trunc_eps: f64,
    pub max_levels: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 1,
            rel_tol: 1e-8,
            max_iters: 5000,
            trunc_eps: crate::model::DEFAULT_TRUNC_EPS,
            max_levels: DEFAULT_MAX_LEVELS,
        }
    }
}

impl EmConfig {
    /// Rejects settings no fit can run with.
    pub fn check(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(NphError::InvalidInput("at least one restart is required".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(NphError::InvalidInput(format!("rel_tol = {} must be nonnegative", self.rel_tol)));
        }
        if !(self.trunc_eps > 0.0 && self.trunc_eps < 1.0) {
            return Err(NphError::InvalidInput(format!("trunc_eps = {} must lie in (0, 1)", self.trunc_eps)));
        }
        if self.max_levels == 0 {
            return Err(NphError::InvalidInput("max_levels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Conditional expectations of the complete-data statistics given the data,
/// summed over observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    pub phases: usize,
    pub levels: usize,
    /// `E(B_k^i)`, level-major (`levels × phases`).
    pub initial: Vec<f64>,
    /// `Σ_i E(Z_k^i)` on the original time scale.
    pub occupation: Vec<f64>,
    /// `Σ_i E(Z_k^i) / s_i`
    pub occupation_scaled: Vec<f64>,
    /// `Σ_i E(N_{kℓ}^i)`, row-major `phases × phases`, zero diagonal.
    pub transitions: Vec<f64>,
    /// `Σ_i E(N_k^i)`
    pub exits: Vec<f64>,
    /// `M`, the total observation weight.
    pub total_weight: f64,
    /// Log-likelihood of the model the expectations were taken under.
    pub loglik: f64,
}

impl SufficientStats {
    pub fn zeros(levels: usize, phases: usize) -> Self {
        Self {
            phases,
            levels,
            initial: vec![0.0; levels * phases],
            occupation: vec![0.0; phases],
            occupation_scaled: vec![0.0; phases],
            transitions: vec![0.0; phases * phases],
            exits: vec![0.0; phases],
            total_weight: 0.0,
            loglik: 0.0,
        }
    }

    /// `E(L^i) = Σ_k E(B_k^i)`, the weights handed to the scaling M-step.
    pub fn level_weights(&self) -> Vec<f64> {
        self.initial.chunks(self.phases).map(|row| row.iter().sum()).collect()
    }

    /// `Σ_i E(B_k^i)`
    pub fn initial_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.phases];
        for row in self.initial.chunks(self.phases) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += b;
            }
        }
        out
    }

    /// Componentwise sum; both sides must come from the same model.
    pub fn add(&mut self, other: &SufficientStats) {
        assert_eq!((self.levels, self.phases), (other.levels, other.phases), "mismatched statistics");
        let pairs = [
            (&mut self.initial, &other.initial),
            (&mut self.occupation, &other.occupation),
            (&mut self.occupation_scaled, &other.occupation_scaled),
            (&mut self.transitions, &other.transitions),
            (&mut self.exits, &other.exits),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.total_weight += other.total_weight;
        self.loglik += other.loglik;
    }
}

/// Sums per-block statistics in block order.
pub(crate) fn reduce_blocks(
    blocks: Vec<Result<SufficientStats>>,
    levels: usize,
    phases: usize,
) -> Result<SufficientStats> {
    let mut total = SufficientStats::zeros(levels, phases);
    for block in blocks {
        total.add(&block?);
    }
    Ok(total)
}

/// Level term of one observation at one level, all quantities multiplied by
/// `2^{-exponent}`.
struct LevelTerms<'a> {
    exponent: i64,
    /// Row-major `p × p` blocks.
    exp: &'a [f64],
    integral: &'a [f64],
}

/// E-step for exact observations. For each observation and level one block
/// exponential yields `e^{T y/s_i}` and `J(y/s_i)` with corner `t α`.
pub fn e_step(model: &NphModel, data: &[WeightedObservation]) -> Result<SufficientStats> {
    let p = model.ph().phases();
    let levels = model.truncation().levels;
    let blocks = map_blocks(data, |offset, block| exact_block(model, offset, block));
    reduce_blocks(blocks, levels, p)
}

fn exact_block(model: &NphModel, offset: usize, block: &[WeightedObservation]) -> Result<SufficientStats> {
    let ph = model.ph();
    let (p, alpha, exit, sub) = (ph.phases(), ph.alpha(), ph.exit(), ph.sub_intensity());
    let pmf = model.level_pmf();
    let support = model.level_support();
    let levels = pmf.len();
    let mut stats = SufficientStats::zeros(levels, p);

    let mut level_b = vec![0.0; levels * p];
    let mut level_exp = vec![0i64; levels];
    let mut occ = vec![0.0; p];
    let mut occ_scaled = vec![0.0; p];
    let mut trans = vec![0.0; p * p];
    let mut exits = vec![0.0; p];
    let mut et = vec![0.0; p];
    let mut ae = vec![0.0; p];
    let mut scalar_exp = [0.0];
    let mut scalar_int = [0.0];
    let mut van_loan = VanLoan::new(p);

    for (j, obs) in block.iter().enumerate() {
        let y = obs.y;
        let mut f = 0.0;
        let mut reference: Option<i64> = None;
        occ.fill(0.0);
        occ_scaled.fill(0.0);
        trans.fill(0.0);
        exits.fill(0.0);

        for i in 0..levels {
            let (pi, s) = (pmf[i], support[i]);
            let x = y / s;
            let terms = if p == 1 {
                // e^{Tx} and J = x e^{Tx} t α in closed form
                let a = sub.get(0, 0) * x;
                let (m, e) = split_exp(a);
                scalar_exp[0] = m;
                scalar_int[0] = x * m * exit[0];
                LevelTerms { exponent: e, exp: &scalar_exp, integral: &scalar_int }
            } else {
                van_loan.compute(sub, exit, alpha, x)?;
                LevelTerms { exponent: van_loan.exponent(), exp: van_loan.exp(), integral: van_loan.integral() }
            };
            let e = terms.exponent;
            let r = *reference.get_or_insert(e);
            if e > r {
                let shrink = scale_pow2(1.0, r - e);
                f *= shrink;
                for v in occ.iter_mut().chain(&mut occ_scaled).chain(&mut trans).chain(&mut exits) {
                    *v *= shrink;
                }
                reference = Some(e);
            }
            let factor = scale_pow2(1.0, e - reference.unwrap());
            level_exp[i] = e;

            for k in 0..p {
                et[k] = (0..p).map(|l| terms.exp[k * p + l] * exit[l]).sum();
                ae[k] = (0..p).map(|l| alpha[l] * terms.exp[l * p + k]).sum();
            }
            let w_level = pi / s;
            let b_row = &mut level_b[i * p..(i + 1) * p];
            let mut term = 0.0;
            for k in 0..p {
                b_row[k] = w_level * alpha[k] * et[k];
                term += b_row[k];
            }
            f += factor * term;
            let jw = factor * w_level;
            for k in 0..p {
                let jkk = terms.integral[k * p + k];
                occ[k] += factor * pi * jkk;
                occ_scaled[k] += jw * jkk;
                exits[k] += jw * ae[k] * exit[k];
                let t_row = sub.row(k);
                for l in 0..p {
                    if l != k {
                        trans[k * p + l] += jw * terms.integral[l * p + k] * t_row[l];
                    }
                }
            }
        }

        let r = reference.unwrap_or(0);
        if !(f > 0.0) || !f.is_finite() {
            return Err(NphError::DensityUnderflow { index: offset + j, y });
        }
        let weight = obs.weight;
        stats.loglik += weight * (f.ln() + r as f64 * std::f64::consts::LN_2);
        stats.total_weight += weight;
        let scale = weight / f;
        for i in 0..levels {
            let c = scale * scale_pow2(1.0, level_exp[i] - r);
            if c == 0.0 {
                continue;
            }
            for k in 0..p {
                stats.initial[i * p + k] += c * level_b[i * p + k];
            }
        }
        for k in 0..p {
            stats.occupation[k] += scale * occ[k];
            stats.occupation_scaled[k] += scale * occ_scaled[k];
            stats.exits[k] += scale * exits[k];
        }
        for (acc, v) in stats.transitions.iter_mut().zip(&trans) {
            *acc += scale * v;
        }
    }
    Ok(stats)
}

/// `e^a = m 2^e` with `m` in the normal range.
fn split_exp(a: f64) -> (f64, i64) {
    if a > -700.0 {
        (a.exp(), 0)
    } else {
        let e = (a / std::f64::consts::LN_2).floor() as i64;
        ((a - e as f64 * std::f64::consts::LN_2).exp(), e)
    }
}

/// M-step: new θ from the level weights, then `α̂`, `T̂` in closed form.
pub fn m_step(stats: &SufficientStats, family: &ScalingFamily, p: usize) -> Result<(ScalingFamily, PhaseTypeRep)> {
    if stats.phases != p {
        return Err(NphError::InvalidInput(format!("statistics have {} phases, expected {p}", stats.phases)));
    }
    if !(stats.total_weight > 0.0) {
        return Err(NphError::InvalidInput("statistics carry no weight".into()));
    }
    let scaling = family.m_step(&stats.level_weights())?;
    let counts = stats.initial_counts();
    let total: f64 = counts.iter().sum();
    let alpha: Vec<f64> = counts.iter().map(|b| b / total).collect();
    let mut sub = SquareMatrix::zeros(p);
    for k in 0..p {
        let z = stats.occupation_scaled[k];
        if !(z > 1e-300) || !z.is_finite() {
            return Err(NphError::StateStarvation { state: k });
        }
        let mut out = stats.exits[k] / z;
        for l in 0..p {
            if l != k {
                let rate = stats.transitions[k * p + l] / z;
                sub.set(k, l, rate);
                out += rate;
            }
        }
        sub.set(k, k, -out);
    }
    Ok((scaling, PhaseTypeRep::new(alpha, sub)?))
}

/// Everything recorded about a fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: NphModel,
    /// Log-likelihood before each update; the last entry belongs to `model`.
    pub loglik_trace: Vec<f64>,
    /// Scaling parameters matching `loglik_trace` entry by entry.
    pub theta_trace: Vec<Vec<f64>>,
    /// Number of EM updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Index of the restart that produced the returned model.
    pub best_restart: usize,
    /// Final log-likelihood per restart, `None` for failed runs.
    pub restart_logliks: Vec<Option<f64>>,
    /// `(restart, error)` for every failed run.
    pub failures: Vec<(usize, String)>,
    /// Some iteration of the returned run hit the level cap before the
    /// truncation mass was reached.
    pub truncation_capped: bool,
    pub warnings: Vec<String>,
}

/// One EM run.
pub(crate) struct Run<S> {
    pub state: S,
    pub trace: Vec<f64>,
    pub theta_trace: Vec<Vec<f64>>,
    pub converged: bool,
    pub capped: bool,
}

/// Result of evaluating one state: its log-likelihood, the updated state,
/// and whether the level cap was hit.
pub(crate) struct Step<S> {
    pub loglik: f64,
    pub next: S,
    pub capped: bool,
}

pub(crate) fn run_em<S, F, G>(init: S, config: &EmConfig, step: F, theta: G) -> Result<Run<S>>
where
    F: Fn(&S) -> Result<Step<S>>,
    G: Fn(&S) -> Vec<f64>,
{
    let mut state = init;
    let first = step(&state)?;
    check_loglik(first.loglik)?;
    let mut trace = vec![first.loglik];
    let mut theta_trace = vec![theta(&state)];
    let mut capped = first.capped;
    let mut next = first.next;
    let mut converged = false;
    for _ in 0..config.max_iters {
        state = next;
        let s = step(&state)?;
        check_loglik(s.loglik)?;
        let previous = *trace.last().unwrap();
        trace.push(s.loglik);
        theta_trace.push(theta(&state));
        capped |= s.capped;
        next = s.next;
        if (s.loglik - previous).abs() <= config.rel_tol * s.loglik.abs() {
            converged = true;
            break;
        }
    }
    Ok(Run { state, trace, theta_trace, converged, capped })
}

fn check_loglik(l: f64) -> Result<()> {
    if l.is_nan() || l == f64::INFINITY {
        return Err(NphError::NumericOverflow("log-likelihood"));
    }
    Ok(())
}

/// Restart seed `r` derived from the master seed by a SplitMix64 step.
pub fn split_seed(seed: u64, restart: usize) -> u64 {
    let mut z = seed.wrapping_add((restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every restart and keeps the one with the largest final
/// log-likelihood (earliest restart on ties).
pub(crate) fn best_of_restarts<S, R, M>(config: &EmConfig, run: R, into_model: M) -> Result<FitResult>
where
    S: Send,
    R: Fn(usize, u64) -> Result<Run<S>> + Sync,
    M: Fn(S) -> Result<NphModel>,
{
    config.check()?;
    let mut best: Option<(usize, Run<S>)> = None;
    let mut diagnostics = FitDiagnostics::default();
    let seeds: Vec<u64> = (0..config.restarts).map(|r| split_seed(config.seed, r)).collect();
    let outcomes = map_blocks(&seeds, |offset, block| {
        block.iter().enumerate().map(|(j, &seed)| run(offset + j, seed)).collect::<Vec<_>>()
    });
    for (r, outcome) in outcomes.into_iter().flatten().enumerate() {
        match outcome {
            Ok(outcome) => {
                let ll = *outcome.trace.last().unwrap();
                diagnostics.restart_logliks.push(Some(ll));
                let better = match &best {
                    None => true,
                    Some((_, b)) => ll > *b.trace.last().unwrap(),
                };
                if better {
                    best = Some((r, outcome));
                }
            }
            Err(e) => {
                diagnostics.restart_logliks.push(None);
                diagnostics.failures.push((r, e.to_string()));
            }
        }
    }
    let Some((index, run)) = best else {
        let details =
            diagnostics.failures.iter().map(|(r, e)| format!("restart {r}: {e}")).collect::<Vec<_>>().join("; ");
        return Err(NphError::FitFailure { restarts: config.restarts, details });
    };
    diagnostics.best_restart = index;
    diagnostics.truncation_capped = run.capped;
    if run.capped {
        diagnostics.warnings.push(format!(
            "the level series was cut at {} levels before reaching the requested truncation mass {}",
            config.max_levels, config.trunc_eps
        ));
    }
    let iterations = run.trace.len() - 1;
    Ok(FitResult {
        model: into_model(run.state)?,
        loglik_trace: run.trace,
        theta_trace: run.theta_trace,
        iterations,
        converged: run.converged,
        diagnostics,
    })
}

/// Scale of the initial phase-type mean: weighted median of the data over
/// the median support point of the initial scaling law.
pub(crate) fn initial_mean(data: &Dataset, family: &ScalingFamily) -> Result<f64> {
    let median = data
        .weighted_quantile(0.5)
        .filter(|m| *m > 0.0 && m.is_finite())
        .ok_or_else(|| NphError::InvalidInput("cannot locate the data: no positive observations".into()))?;
    Ok(median / family.median_support())
}

pub(crate) fn check_phases(p: usize) -> Result<()> {
    if p == 0 || p > MAX_PHASES {
        return Err(NphError::InvalidInput(format!("phase count {p} must lie in 1..={MAX_PHASES}")));
    }
    Ok(())
}

/// Shared driver for [`fit`] and the censored variant: `stats` produces the
/// complete E-step for a model.
pub(crate) fn fit_with<E>(
    data: &Dataset,
    family: &ScalingFamily,
    p: usize,
    config: &EmConfig,
    stats: E,
) -> Result<FitResult>
where
    E: Fn(&NphModel) -> Result<SufficientStats> + Sync,
{
    check_phases(p)?;
    config.check()?;
    let mean = initial_mean(data, family)?;
    let build = |scaling: ScalingFamily, ph: PhaseTypeRep| {
        NphModel::with_truncation(scaling, ph, config.trunc_eps, config.max_levels)
    };
    best_of_restarts(
        config,
        |_, seed| {
            let init = build(family.clone(), PhaseTypeRep::random_init(p, seed, mean)?)?;
            run_em(
                init,
                config,
                |model: &NphModel| {
                    let s = stats(model)?;
                    let (scaling, ph) = m_step(&s, model.scaling(), p)?;
                    Ok(Step { loglik: s.loglik, next: build(scaling, ph)?, capped: model.truncation().capped })
                },
                |model| model.scaling().theta().to_vec(),
            )
        },
        Ok,
    )
}

/// EM fit of `NPH_p` with the given scaling family to exact observations.
pub fn fit(data: &Dataset, family: &ScalingFamily, p: usize, config: &EmConfig) -> Result<FitResult> {
    if data.exact.is_empty() {
        return Err(NphError::EmptyDataset("no exact observations to fit".into()));
    }
    if !data.censored.is_empty() {
        return Err(NphError::InvalidInput("dataset contains censored observations; use the censored fit".into()));
    }
    fit_with(data, family, p, config, |model| e_step(model, &data.exact))
}

/// Statistics of the Erlang special case.
#[derive(Clone, Debug, PartialEq)]
pub struct ErlangStats {
    /// `E(L^i)`
    pub level_weights: Vec<f64>,
    /// `Σ_i Z^i / s_i` with `Z^i = Σ_j w_j y_j P(level i | y_j)`.
    pub occupation_scaled: f64,
    pub total_weight: f64,
    pub loglik: f64,
}

/// E-step of the Erlang(q, λ) scale mixture without matrix exponentials.
pub fn erlang_e_step(
    pmf: &[f64],
    support: &[f64],
    q: usize,
    lambda: f64,
    data: &[WeightedObservation],
) -> Result<ErlangStats> {
    let levels = pmf.len();
    let qf = q as f64;
    // level term = c_i e^{-y r_i} y^{q-1}/(q-1)!
    let log_c: Vec<f64> = pmf.iter().zip(support).map(|(pi, s)| pi.ln() + qf * (lambda / s).ln()).collect();
    let c: Vec<f64> = log_c.iter().map(|l| l.exp()).collect();
    let rate: Vec<f64> = support.iter().map(|s| lambda / s).collect();
    let inv_s: Vec<f64> = support.iter().map(|s| 1.0 / s).collect();
    let log_norm = ln_gamma(qf);

    let blocks = map_blocks(data, |offset, block| -> Result<ErlangStats> {
        let mut out =
            ErlangStats { level_weights: vec![0.0; levels], occupation_scaled: 0.0, total_weight: 0.0, loglik: 0.0 };
        let mut term = vec![0.0; levels];
        for (j, obs) in block.iter().enumerate() {
            let y = obs.y;
            let mut total = 0.0;
            for i in 0..levels {
                term[i] = c[i] * (-y * rate[i]).exp();
                total += term[i];
            }
            let mut log_shift = 0.0;
            if !(total > 1e-280) {
                let peak = (0..levels).map(|i| log_c[i] - y * rate[i]).fold(f64::NEG_INFINITY, f64::max);
                total = 0.0;
                for i in 0..levels {
                    term[i] = (log_c[i] - y * rate[i] - peak).exp();
                    total += term[i];
                }
                log_shift = peak;
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(NphError::DensityUnderflow { index: offset + j, y });
            }
            let w = obs.weight;
            out.loglik += w * (total.ln() + log_shift + (qf - 1.0) * y.ln() - log_norm);
            out.total_weight += w;
            let scale = w / total;
            let mut scaled = 0.0;
            for i in 0..levels {
                out.level_weights[i] += scale * term[i];
                scaled += term[i] * inv_s[i];
            }
            out.occupation_scaled += scale * y * scaled;
        }
        Ok(out)
    });
    let mut total =
        ErlangStats { level_weights: vec![0.0; levels], occupation_scaled: 0.0, total_weight: 0.0, loglik: 0.0 };
    for block in blocks {
        let b = block?;
        total.level_weights.iter_mut().zip(&b.level_weights).for_each(|(a, x)| *a += x);
        total.occupation_scaled += b.occupation_scaled;
        total.total_weight += b.total_weight;
        total.loglik += b.loglik;
    }
    Ok(total)
}

/// Mixture of Erlang(q, λ/s_i) laws: the fast path for `α = e_1` and a
/// bidiagonal `T` with a single rate.
pub fn fit_erlang_mixture(data: &Dataset, family: &ScalingFamily, q: usize, config: &EmConfig) -> Result<FitResult> {
    if data.exact.is_empty() {
        return Err(NphError::EmptyDataset("no exact observations to fit".into()));
    }
    if !data.censored.is_empty() {
        return Err(NphError::InvalidInput("the Erlang fast path takes exact observations only".into()));
    }
    if q == 0 {
        return Err(NphError::InvalidInput("Erlang order q must be at least 1".into()));
    }
    config.check()?;
    let mean = initial_mean(data, family)?;
    let qf = q as f64;
    best_of_restarts(
        config,
        |_, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lambda0 = qf / mean * rng.random_range(-1.0f64..1.0).exp();
            run_em(
                (family.clone(), lambda0),
                config,
                |(scaling, lambda): &(ScalingFamily, f64)| {
                    let truncation = scaling.truncation_index(config.trunc_eps, config.max_levels);
                    let pmf = scaling.pmf_table(truncation.levels);
                    let support = scaling.support_table(truncation.levels);
                    let s = erlang_e_step(&pmf, &support, q, *lambda, &data.exact)?;
                    let next_lambda = qf * s.total_weight / s.occupation_scaled;
                    if !(next_lambda > 0.0) || !next_lambda.is_finite() {
                        return Err(NphError::NumericOverflow("Erlang rate update"));
                    }
                    let next_scaling = scaling.m_step(&s.level_weights)?;
                    Ok(Step { loglik: s.loglik, next: (next_scaling, next_lambda), capped: truncation.capped })
                },
                |(scaling, _)| scaling.theta().to_vec(),
            )
        },
        |(scaling, lambda)| {
            NphModel::with_truncation(scaling, PhaseTypeRep::erlang(q, lambda)?, config.trunc_eps, config.max_levels)
        },
    )
}

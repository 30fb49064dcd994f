//! E-step for left-, right- and interval-censored observations.

use crate::data::{CensoredObservation, Dataset};
use crate::em::{e_step, fit_with, reduce_blocks, EmConfig, FitResult, SufficientStats};
use crate::error::{NphError, Result};
use crate::matrix::{exp_and_integral, SquareMatrix};
use crate::model::NphModel;
use crate::parallel::map_blocks;
use crate::scaling::ScalingFamily;

/// Interval probabilities below this are reported instead of used.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Conditional expectations given `Y ∈ (s, t]`.
///
/// Occupation integrals use `∫_s^t α e^{T_i u} e_k du = s_i α(-T)^{-1}(e^{T_i s} - e^{T_i t}) e_k`
/// and the block exponential with corner `e α`, `J^i(y) = s_i J(y/s_i)`.
pub fn e_step_censored(model: &NphModel, data: &[CensoredObservation]) -> Result<SufficientStats> {
    let p = model.ph().phases();
    let levels = model.truncation().levels;
    let occupation_row = model.ph().occupation_row()?;
    let blocks = map_blocks(data, |offset, block| censored_block(model, &occupation_row, offset, block));
    reduce_blocks(blocks, levels, p)
}

fn censored_block(
    model: &NphModel,
    occupation_row: &[f64],
    offset: usize,
    block: &[CensoredObservation],
) -> Result<SufficientStats> {
    let ph = model.ph();
    let (p, alpha, exit, sub) = (ph.phases(), ph.alpha(), ph.exit(), ph.sub_intensity());
    let ones = vec![1.0; p];
    let pmf = model.level_pmf();
    let support = model.level_support();
    let levels = pmf.len();
    let mut stats = SufficientStats::zeros(levels, p);

    let mut level_b = vec![0.0; levels * p];
    let mut occ = vec![0.0; p];
    let mut occ_scaled = vec![0.0; p];
    let mut trans = vec![0.0; p * p];
    let mut exits = vec![0.0; p];
    let mut diff = SquareMatrix::zeros(p);
    let mut dj = SquareMatrix::zeros(p);
    let mut g = vec![0.0; p];

    let blocks_at = |x: f64| -> Result<(SquareMatrix, SquareMatrix)> {
        if x == 0.0 {
            Ok((SquareMatrix::identity(p), SquareMatrix::zeros(p)))
        } else if x.is_infinite() {
            Ok((SquareMatrix::zeros(p), SquareMatrix::zeros(p)))
        } else {
            exp_and_integral(sub, &ones, alpha, x)
        }
    };

    for (j, obs) in block.iter().enumerate() {
        let mut total = 0.0;
        occ.fill(0.0);
        occ_scaled.fill(0.0);
        trans.fill(0.0);
        exits.fill(0.0);
        for i in 0..levels {
            let (pi, s) = (pmf[i], support[i]);
            let (e_lo, j_lo) = blocks_at(obs.lower / s)?;
            let (e_hi, j_hi) = blocks_at(obs.upper / s)?;
            for a in 0..p {
                for b in 0..p {
                    diff.set(a, b, e_lo.get(a, b) - e_hi.get(a, b));
                    dj.set(a, b, j_hi.get(a, b) - j_lo.get(a, b));
                }
            }
            // g = α(-T)^{-1}(e^{T x_s} - e^{T x_t}); survival differences by state
            for k in 0..p {
                g[k] = (0..p).map(|l| occupation_row[l] * diff.get(l, k)).sum();
            }
            let b_row = &mut level_b[i * p..(i + 1) * p];
            for k in 0..p {
                let row_sum: f64 = diff.row(k).iter().sum();
                b_row[k] = (pi * alpha[k] * row_sum).max(0.0);
                total += b_row[k];
            }
            for k in 0..p {
                let z = (g[k] - dj.get(k, k)).max(0.0);
                occ[k] += pi * s * z;
                occ_scaled[k] += pi * z;
                exits[k] += (pi * exit[k] * g[k]).max(0.0);
                let t_row = sub.row(k);
                for l in 0..p {
                    if l != k {
                        trans[k * p + l] += (pi * t_row[l] * (g[k] - dj.get(l, k))).max(0.0);
                    }
                }
            }
        }
        if !(total > PROBABILITY_FLOOR) || !total.is_finite() {
            return Err(NphError::ZeroProbabilityInterval { index: offset + j, lower: obs.lower, upper: obs.upper });
        }
        let weight = obs.weight;
        if !(obs.lower == 0.0 && obs.upper.is_infinite()) {
            stats.loglik += weight * total.ln();
        }
        stats.total_weight += weight;
        let scale = weight / total;
        for (acc, b) in stats.initial.iter_mut().zip(&level_b) {
            *acc += scale * b;
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

/// EM on a mix of exact and censored observations; the two kinds of
/// statistics are summed before every M-step.
pub fn fit_censored(data: &Dataset, family: &ScalingFamily, p: usize, config: &EmConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(NphError::EmptyDataset(data.provenance.clone()));
    }
    fit_with(data, family, p, config, |model| {
        let mut stats = e_step(model, &data.exact)?;
        if !data.censored.is_empty() {
            stats.add(&e_step_censored(model, &data.censored)?);
        }
        Ok(stats)
    })
}

//! Phase-type representations `PH_p(α, T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NphError, Result};
use crate::matrix::{mat_exp, SquareMatrix};

const SUM_TOL: f64 = 1e-10;

/// Initial distribution `α` and sub-intensity matrix `T` of an absorbing
/// Markov jump process. The exit vector `t = -T e` is derived on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTypeRep {
    alpha: Vec<f64>,
    sub: SquareMatrix,
    exit: Vec<f64>,
}

impl PhaseTypeRep {
    /// Validates `(α, T)`.
    pub fn new(alpha: Vec<f64>, sub: SquareMatrix) -> Result<Self> {
        let p = sub.order();
        if alpha.len() != p {
            return Err(NphError::Validation(format!("alpha has length {} but T has order {p}", alpha.len())));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(NphError::Validation("alpha has a negative or non-finite entry".into()));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(NphError::Validation(format!("alpha sums to {total}, not 1")));
        }
        let mut exit = Vec::with_capacity(p);
        for i in 0..p {
            for j in 0..p {
                let v = sub.get(i, j);
                if i != j && v < 0.0 {
                    return Err(NphError::Validation(format!("negative off-diagonal T[{i}][{j}] = {v}")));
                }
            }
            if sub.get(i, i) >= 0.0 {
                return Err(NphError::Validation(format!("diagonal T[{i}][{i}] = {} is not negative", sub.get(i, i))));
            }
            let row: f64 = sub.row(i).iter().sum();
            // rounding in the row sum grows with the size of the rates
            if row > SUM_TOL * sub.get(i, i).abs().max(1.0) {
                return Err(NphError::Validation(format!("row {i} of T has positive sum {row}")));
            }
            exit.push((-row).max(0.0));
        }
        if exit.iter().all(|&t| t <= 0.0) {
            return Err(NphError::Validation("exit vector is identically zero".into()));
        }
        Ok(Self { alpha, sub, exit })
    }

    /// Validates from row-major nested rows.
    pub fn validate(alpha: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let sub = SquareMatrix::from_rows(rows).map_err(|e| NphError::Validation(e.to_string()))?;
        Self::new(alpha.to_vec(), sub)
    }

    /// Erlang(q, λ) in its canonical bidiagonal form.
    pub fn erlang(q: usize, lambda: f64) -> Result<Self> {
        if q == 0 || !(lambda > 0.0) || !lambda.is_finite() {
            return Err(NphError::InvalidInput(format!(
                "Erlang needs q >= 1 and lambda > 0, got q = {q}, lambda = {lambda}"
            )));
        }
        let mut sub = SquareMatrix::zeros(q);
        for i in 0..q {
            sub.set(i, i, -lambda);
            if i + 1 < q {
                sub.set(i, i + 1, lambda);
            }
        }
        let mut alpha = vec![0.0; q];
        alpha[0] = 1.0;
        Self::new(alpha, sub)
    }

    /// Random representation with mean `mean_scale`, deterministic in `seed`.
    pub fn random_init(p: usize, seed: u64, mean_scale: f64) -> Result<Self> {
        if p == 0 || !(mean_scale > 0.0) || !mean_scale.is_finite() {
            return Err(NphError::InvalidInput(format!(
                "random_init needs p >= 1 and a positive mean, got p = {p}, mean = {mean_scale}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut open_unit = || 1.0 - rng.random::<f64>();
        let mut alpha: Vec<f64> = (0..p).map(|_| open_unit()).collect();
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= total);
        let mut sub = SquareMatrix::zeros(p);
        for i in 0..p {
            let mut out = 0.0;
            for j in 0..p {
                if i != j {
                    let rate = open_unit();
                    sub.set(i, j, rate);
                    out += rate;
                }
            }
            sub.set(i, i, -(out + open_unit()));
        }
        let rep = Self::new(alpha.clone(), sub)?;
        let factor = rep.mean()? / mean_scale;
        Self::new(alpha, rep.sub.scaled(factor))
    }

    #[inline]
    pub fn phases(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sub_intensity(&self) -> &SquareMatrix {
        &self.sub
    }

    pub fn exit(&self) -> &[f64] {
        &self.exit
    }

    /// `α (-T)^{-1} e`
    pub fn mean(&self) -> Result<f64> {
        Ok(self.occupation_row()?.iter().sum())
    }

    /// Expected total occupation per state, `α (-T)^{-1}`.
    pub fn occupation_row(&self) -> Result<Vec<f64>> {
        let neg_t_transposed = self.sub.transpose().scaled(-1.0);
        Ok(neg_t_transposed.lu()?.solve_vec(&self.alpha))
    }

    /// `e^{T x}`; zero for `x = ∞`.
    pub(crate) fn transition(&self, x: f64) -> SquareMatrix {
        let p = self.phases();
        if x.is_infinite() {
            return SquareMatrix::zeros(p);
        }
        if p == 1 {
            return SquareMatrix::from_row_major(1, vec![(self.sub.get(0, 0) * x).exp()]).expect("1x1 matrix");
        }
        // entries of e^{Tx} lie in [0, 1] for a sub-intensity matrix, so no overflow
        mat_exp(&self.sub.scaled(x)).expect("exponential of a scaled sub-intensity matrix")
    }

    /// `α e^{T x} t`
    pub(crate) fn density_factor(&self, x: f64) -> f64 {
        if self.phases() == 1 {
            return self.exit[0] * (self.sub.get(0, 0) * x).exp();
        }
        let row = self.transition(x).vec_mul(&self.alpha);
        dot(&row, &self.exit).max(0.0)
    }

    /// `α e^{T x} e`
    pub(crate) fn survival_factor(&self, x: f64) -> f64 {
        if self.phases() == 1 {
            return (self.sub.get(0, 0) * x).exp();
        }
        let row = self.transition(x).vec_mul(&self.alpha);
        row.iter().sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn density(&self, y: f64) -> f64 {
        if !(y >= 0.0) {
            return 0.0;
        }
        self.density_factor(y)
    }

    pub fn survival(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return 1.0;
        }
        self.survival_factor(y)
    }

    /// Absorption time of one path of the jump chain.
    pub(crate) fn sample_absorption<R: Rng>(&self, rng: &mut R) -> f64 {
        let p = self.phases();
        let mut state = pick(&self.alpha, rng.random::<f64>());
        let mut elapsed = 0.0;
        loop {
            let rate = -self.sub.get(state, state);
            elapsed += -(1.0 - rng.random::<f64>()).ln() / rate;
            let u = rng.random::<f64>() * rate;
            let mut acc = 0.0;
            let mut next = None;
            for j in 0..p {
                if j != state {
                    acc += self.sub.get(state, j);
                    if u < acc {
                        next = Some(j);
                        break;
                    }
                }
            }
            match next {
                Some(j) => state = j,
                None => return elapsed,
            }
        }
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nphfit_oracle::quad::{integrate, integrate_half_line};

    #[test]
    fn validation_cases() {
        let rep = PhaseTypeRep::validate(&[1.0], &[vec![-1.0]]).unwrap();
        assert_eq!(rep.exit(), &[1.0]);

        let err = PhaseTypeRep::validate(&[0.5, 0.5], &[vec![-1.0, 2.0], vec![0.0, -1.0]]).unwrap_err();
        assert!(err.to_string().contains("positive sum"), "{err}");

        let rep = PhaseTypeRep::validate(&[1.0, 0.0], &[vec![-2.0, 2.0], vec![0.0, -2.0]]).unwrap();
        assert_eq!(rep.exit(), &[0.0, 2.0]);

        let err = PhaseTypeRep::validate(&[0.6, 0.6], &[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap_err();
        assert!(err.to_string().contains("sums to"));
        let err = PhaseTypeRep::validate(&[1.0, 0.0], &[vec![-1.0, -0.5], vec![0.0, -1.0]]).unwrap_err();
        assert!(err.to_string().contains("off-diagonal"));
    }

    #[test]
    fn erlang_structure() {
        let e = PhaseTypeRep::erlang(1, 1.0).unwrap();
        assert_eq!(e.alpha(), &[1.0]);
        assert_eq!(e.sub_intensity().to_rows(), vec![vec![-1.0]]);
        let e = PhaseTypeRep::erlang(2, 3.0).unwrap();
        assert_eq!(e.alpha(), &[1.0, 0.0]);
        assert_eq!(e.sub_intensity().to_rows(), vec![vec![-3.0, 3.0], vec![0.0, -3.0]]);
        assert_eq!(PhaseTypeRep::erlang(3, 1.0).unwrap().exit(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn density_and_survival_examples() {
        let e1 = PhaseTypeRep::erlang(1, 1.0).unwrap();
        assert!((e1.density(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e1.survival(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(e1.survival(0.0), 1.0);

        let e2 = PhaseTypeRep::erlang(2, 2.0).unwrap();
        assert!(e2.density(0.0).abs() < 1e-15);
        assert!((e2.density(1.0) - 4.0 * (-2.0f64).exp()).abs() < 1e-14);

        let e21 = PhaseTypeRep::erlang(2, 1.0).unwrap();
        let closed = 3.0 * (-2.0f64).exp();
        assert!((e21.survival(2.0) - closed).abs() < 1e-14);
        let by_quadrature = 1.0 - integrate(|y| e21.density(y), 0.0, 2.0, 1e-13);
        assert!((by_quadrature - closed).abs() < 1e-11);
    }

    #[test]
    fn random_init_properties() {
        let a = PhaseTypeRep::random_init(4, 9, 1.5).unwrap();
        let b = PhaseTypeRep::random_init(4, 9, 1.5).unwrap();
        assert_eq!(a, b);
        assert!((a.mean().unwrap() - 1.5).abs() < 1e-12);

        let one = PhaseTypeRep::random_init(1, 123, 2.0).unwrap();
        assert!((one.sub_intensity().get(0, 0) + 0.5).abs() < 1e-15);

        let five = PhaseTypeRep::random_init(5, 7, 1.0).unwrap();
        PhaseTypeRep::validate(five.alpha(), &five.sub_intensity().to_rows()).unwrap();
    }

    #[test]
    fn densities_integrate_to_one_and_match_survival() {
        for seed in 0..20 {
            let p = 1 + (seed as usize % 5);
            let rep = PhaseTypeRep::random_init(p, seed, 1.0).unwrap();
            let mass = integrate_half_line(|y| rep.density(y), 1e-10, 1e4, 1e-10);
            assert!((mass - 1.0).abs() < 1e-6, "seed {seed}: {mass}");
            for &y in &[0.1, 1.0, 5.0] {
                let h = 1e-5;
                let deriv = -(rep.survival(y + h) - rep.survival(y - h)) / (2.0 * h);
                assert!((deriv - rep.density(y)).abs() < 1e-6);
            }
            let grid: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
            assert!(grid.windows(2).all(|w| rep.survival(w[1]) <= rep.survival(w[0]) + 1e-15));
        }
    }

    #[test]
    fn simulated_mean_matches() {
        let rep = PhaseTypeRep::random_init(3, 4, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40_000;
        let xs: Vec<f64> = (0..n).map(|_| rep.sample_absorption(&mut rng)).collect();
        let (mean, sd) = nphfit_oracle::stats::mean_and_sd(&xs);
        assert!((mean - 2.0).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
    }
}

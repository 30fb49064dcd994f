//! Riemann and Hurwitz zeta values with their first two derivatives in `s`,
//! by Euler–Maclaurin summation.

/// Value with first and second derivative along one real variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    const fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    fn variable(v: f64) -> Self {
        Self { v, d1: 1.0, d2: 0.0 }
    }

    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }

    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }

    fn scale(self, k: f64) -> Self {
        Self { v: self.v * k, d1: self.d1 * k, d2: self.d2 * k }
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        Self { v: r, d1: -self.d1 * r * r, d2: (2.0 * self.d1 * self.d1 * r - self.d2) * r * r }
    }
}

/// `n^{-(s + shift)}` as a jet in `s`.
fn power_jet(n: f64, s: f64, shift: f64) -> Jet2 {
    let ln = n.ln();
    let v = (-(s + shift) * ln).exp();
    Jet2 { v, d1: -ln * v, d2: ln * ln * v }
}

/// `B_{2k} / (2k)!` for k = 1..=8.
const BERNOULLI_OVER_FACTORIAL: [f64; 8] = [
    1.0 / 6.0 / 2.0,
    -1.0 / 30.0 / 24.0,
    1.0 / 42.0 / 720.0,
    -1.0 / 30.0 / 40_320.0,
    5.0 / 66.0 / 3_628_800.0,
    -691.0 / 2730.0 / 479_001_600.0,
    7.0 / 6.0 / 87_178_291_200.0,
    -3617.0 / 510.0 / 20_922_789_888_000.0,
];

const DIRECT_TERMS: f64 = 16.0;

/// `Σ_{n ≥ a} n^{-s}` for integer `a ≥ 1` and `s > 1`, with derivatives in `s`.
pub(crate) fn hurwitz_jet(s: f64, a: f64) -> Jet2 {
    let start = a.max(DIRECT_TERMS);
    let mut direct = Jet2::constant(0.0);
    let mut n = start - 1.0;
    while n >= a {
        direct = direct.add(power_jet(n, s, 0.0));
        n -= 1.0;
    }
    let sv = Jet2::variable(s);
    // ∫_N^∞ x^{-s} dx + f(N)/2
    let mut tail =
        power_jet(start, s, -1.0).mul(sv.add(Jet2::constant(-1.0)).recip()).add(power_jet(start, s, 0.0).scale(0.5));
    // rising factorial (s)_{2k-1}, extended by two factors per step
    let mut rising = sv;
    for (k, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        let order = (2 * k + 1) as f64;
        tail = tail.add(rising.mul(power_jet(start, s, order)).scale(*coeff));
        rising = rising.mul(sv.add(Jet2::constant(order))).mul(sv.add(Jet2::constant(order + 1.0)));
    }
    direct.add(tail)
}

/// Riemann zeta `ζ(s)` with `ζ'` and `ζ''`.
pub(crate) fn zeta_jet(s: f64) -> Jet2 {
    hurwitz_jet(s, 1.0)
}

pub(crate) fn zeta(s: f64) -> f64 {
    zeta_jet(s).v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nphfit_oracle::series::{zeta_brute, zeta_log_moment_brute};
    use std::f64::consts::PI;

    #[test]
    fn closed_forms() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(3.0) - 1.202_056_903_159_594_3).abs() < 1e-14);
        // ζ'(2) = π²/6 (γ + ln 2π − 12 ln A)
        assert!((zeta_jet(2.0).d1 + 0.937_548_254_315_843_8).abs() < 1e-13);
    }

    #[test]
    fn agrees_with_brute_series() {
        for &s in &[1.05, 1.3, 2.5, 5.0, 12.0, 40.0] {
            let jet = zeta_jet(s);
            let brute = zeta_brute(s, 200_000);
            assert!(((jet.v - brute) / brute).abs() < 1e-10, "s = {s}");
            let moment = zeta_log_moment_brute(s, 200_000);
            assert!(((jet.d1 + moment) / moment).abs() < 1e-8, "s = {s}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &s in &[1.2, 2.0, 7.5] {
            let h = 1e-4;
            let jet = zeta_jet(s);
            let (up, down) = (zeta_jet(s + h), zeta_jet(s - h));
            assert!(((up.v - down.v) / (2.0 * h) - jet.d1).abs() < 1e-6 * jet.d1.abs().max(1.0));
            assert!(((up.d1 - down.d1) / (2.0 * h) - jet.d2).abs() < 1e-6 * jet.d2.abs().max(1.0));
        }
    }

    #[test]
    fn hurwitz_tail_matches_difference() {
        for &s in &[1.5, 2.0, 3.0] {
            for &a in &[2.0, 17.0, 1000.0] {
                let head: f64 = (1..a as usize).map(|n| (n as f64).powf(-s)).sum();
                let tail = hurwitz_jet(s, a).v;
                assert!(((head + tail) - zeta(s)).abs() < 1e-13 * zeta(s));
            }
        }
    }
}

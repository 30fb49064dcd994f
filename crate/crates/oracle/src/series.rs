//! Brute-force series.

/// `Σ_{i=1}^{n} i^{-s}` plus the integral tail `∫_{n+1/2}^∞ x^{-s} dx`
/// (midpoint remainder, error `O(n^{-s-2})`).
pub fn zeta_brute(s: f64, n: usize) -> f64 {
    let head: f64 = (1..=n).rev().map(|i| (i as f64).powf(-s)).sum();
    head + (n as f64 + 0.5).powf(1.0 - s) / (s - 1.0)
}

/// `Σ_{i=1}^{n} (ln i) i^{-s}` with the matching integral tail.
pub fn zeta_log_moment_brute(s: f64, n: usize) -> f64 {
    let head: f64 = (1..=n).rev().map(|i| (i as f64).ln() * (i as f64).powf(-s)).sum();
    let a = n as f64 + 0.5;
    // ∫_a^∞ ln x · x^{-s} dx = a^{1-s} (ln a /(s-1) + 1/(s-1)^2)
    head + a.powf(1.0 - s) * (a.ln() / (s - 1.0) + 1.0 / (s - 1.0).powi(2))
}

/// Arg-max of `f` over `[lo, hi]` by a dense grid followed by golden-section
/// refinement around the best grid point.
pub fn argmax_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / grid as f64;
    let best = (0..=grid).map(|k| lo + k as f64 * step).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-12 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Root of a monotone function on `[lo, hi]` by plain bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

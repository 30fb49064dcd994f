//! Empirical checks against a model CDF.

/// Upper bound on the Kolmogorov–Smirnov distance between the empirical CDF
/// of `sample` and a continuous nondecreasing `cdf`, evaluating `cdf` only at
/// every `stride`-th order statistic.
///
/// Between consecutive evaluation points `g_j < g_{j+1}` the model CDF lies in
/// `[F(g_j), F(g_{j+1})]` and the empirical CDF in `[F_n(g_j), F_n(g_{j+1}^-)]`,
/// which bounds the gap over the whole cell.
pub fn ks_upper_bound<F: Fn(f64) -> f64>(sample: &[f64], cdf: F, stride: usize) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut idx: Vec<usize> = (0..xs.len()).step_by(stride.max(1)).collect();
    if *idx.last().unwrap() != xs.len() - 1 {
        idx.push(xs.len() - 1);
    }
    let values: Vec<f64> = idx.iter().map(|&i| cdf(xs[i])).collect();
    // below the first order statistic F_n = 0
    let mut worst = values[0];
    for w in 0..idx.len() - 1 {
        let (i, j) = (idx[w], idx[w + 1]);
        let emp_lo = (i + 1) as f64 / n; // F_n at x_i
        let emp_hi_left = j as f64 / n; // F_n just below x_j
        worst = worst.max(emp_hi_left - values[w]);
        worst = worst.max(values[w + 1] - emp_lo);
    }
    let last = *values.last().unwrap();
    worst.max(1.0 - last)
}

pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

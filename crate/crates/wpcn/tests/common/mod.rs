//! Statistics helpers shared by the integration suites.

#![allow(dead_code)]

/// Half-width of the 95% normal-approximation confidence interval around
/// a proportion estimated from `n` Bernoulli trials.
pub fn binomial_ci(p_hat: f64, n: usize) -> f64 {
    1.96 * (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the
/// distribution function `cdf`. Sorts the slice in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Prints one verdict line for an acceptance check and passes the flag
/// through so the caller can assert on it.
pub fn verdict(label: &str, pass: bool, detail: &str) -> bool {
    let state = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {label}: {state} ({detail})");
    pass
}

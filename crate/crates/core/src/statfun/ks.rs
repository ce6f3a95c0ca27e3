//! Kolmogorov-Smirnov statistic against the uniform law on [0, 1].

/// Two-sided KS statistic sup_t |F_n(t) - t| for values in [0, 1].
pub fn ks_statistic_uniform(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "ks statistic of empty sample");
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        d = d.max(x - i as f64 / n).max((i as f64 + 1.0) / n - x);
    }
    d
}

/// Asymptotic two-sided critical value at significance `alpha`:
/// sqrt(-ln(alpha / 2) / 2) / sqrt(n).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    assert!(n > 0 && alpha > 0.0 && alpha < 1.0);
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistic_on_perfect_grid_is_half_spacing() {
        // Points at (i + 0.5)/n: the empirical cdf brackets t within 1/(2n).
        let n = 100;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic_uniform(&v);
        assert!((d - 0.005).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn statistic_detects_shifted_sample() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        // All mass in [0, 0.5]: distance is 0.5 at t = 0.5.
        let d = ks_statistic_uniform(&v);
        assert!((d - 0.5).abs() < 1e-3, "d = {d}");
    }

    #[test]
    fn critical_value_at_one_percent() {
        // The classical 1% asymptotic constant is 1.6276 / sqrt(n).
        let c = ks_critical(10_000, 0.01);
        assert!((c * 100.0 - 1.627_624).abs() < 1e-4, "c = {c}");
    }
}

//! Robust location and scale: median, interpolated quantiles, and the
//! pairwise-difference scale estimator Sn of Rousseeuw and Croux.

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Median of a nonempty slice; the average of the two middle order
/// statistics for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let v = sorted_copy(values);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linearly interpolated quantile (the common h = (n - 1) q convention).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level must be in [0, 1]");
    let v = sorted_copy(values);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Consistency constant making Sn unbiased for the standard deviation at
/// the normal distribution.
const SN_CONSISTENCY: f64 = 1.1926;

/// Finite-sample correction factors for Sn.
fn sn_correction(n: usize) -> f64 {
    match n {
        2 => 0.743,
        3 => 1.851,
        4 => 0.954,
        5 => 1.351,
        6 => 0.993,
        7 => 1.198,
        8 => 1.005,
        9 => 1.131,
        _ => {
            if n % 2 == 1 {
                n as f64 / (n as f64 - 0.9)
            } else {
                1.0
            }
        }
    }
}

/// Sn scale estimate: the low median over i of the high median over j != i
/// of |x_i - x_j|, scaled for consistency at the normal.
///
/// Runs in O(n log n): with the input sorted, the differences to the left
/// and right of each element form two ascending sequences, so the inner
/// high median is a selection over two sorted arrays.
///
/// Requires at least 2 values. Returns 0 when all values are identical.
pub fn sn_scale(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "sn_scale requires at least 2 values, got {n}");
    let x = sorted_copy(values);
    // 1-based rank of the high median among the n - 1 differences.
    let h = (n - 1) / 2 + 1;
    let mut inner: Vec<f64> = (0..n).map(|i| kth_abs_diff(&x, i, h)).collect();
    // 1-based rank of the low median among the n inner values.
    let l = (n + 1) / 2;
    let (_, lomed, _) = inner.select_nth_unstable_by(l - 1, f64::total_cmp);
    SN_CONSISTENCY * sn_correction(n) * *lomed
}

/// k-th smallest (1-based) of {|x[i] - x[j]| : j != i} for sorted x.
fn kth_abs_diff(x: &[f64], i: usize, k: usize) -> f64 {
    let n = x.len();
    let la = i;
    let lb = n - 1 - i;
    let a = |m: usize| x[i] - x[i - 1 - m];
    let b = |m: usize| x[i + 1 + m] - x[i];
    // Take ia values from a and k - ia from b; binary search the valid split.
    let mut lo = k.saturating_sub(lb);
    let mut hi = k.min(la);
    while lo < hi {
        let ia = (lo + hi) / 2;
        let ib = k - ia;
        if ia < la && ib > 0 && b(ib - 1) > a(ia) {
            lo = ia + 1;
        } else if ia > 0 && ib < lb && a(ia - 1) > b(ib) {
            hi = ia - 1;
        } else {
            lo = ia;
            hi = ia;
        }
    }
    let ia = lo;
    let ib = k - ia;
    let va = if ia > 0 { a(ia - 1) } else { f64::NEG_INFINITY };
    let vb = if ib > 0 { b(ib - 1) } else { f64::NEG_INFINITY };
    va.max(vb)
}

/// Quadratic-time reference implementation of [`sn_scale`], kept for
/// verification against the fast selection-based version.
pub fn sn_scale_naive(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "sn_scale requires at least 2 values, got {n}");
    let mut inner = Vec::with_capacity(n);
    for i in 0..n {
        let mut diffs: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (values[i] - values[j]).abs())
            .collect();
        diffs.sort_unstable_by(f64::total_cmp);
        inner.push(diffs[(n - 1) / 2]);
    }
    inner.sort_unstable_by(f64::total_cmp);
    SN_CONSISTENCY * sn_correction(n) * inner[(n + 1) / 2 - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile(&v, 0.0), 10.0);
        assert_eq!(quantile(&v, 1.0), 40.0);
        assert_eq!(quantile(&v, 0.5), 25.0);
        assert!((quantile(&v, 0.9) - 37.0).abs() < 1e-12);
    }

    #[test]
    fn sn_matches_naive_small() {
        let x = [1.0, 5.0, 2.0, 8.0, 3.0];
        assert!((sn_scale(&x) - sn_scale_naive(&x)).abs() < 1e-12);
        let y = [0.1, 0.1, 0.1, 0.1];
        assert_eq!(sn_scale(&y), 0.0);
        assert_eq!(sn_scale_naive(&y), 0.0);
    }

    #[test]
    fn sn_consistent_at_normal() {
        // Deterministic standard normal sample via the rng module.
        let mut s = crate::rng::Stream::new(7, &[901]);
        let z: Vec<f64> = (0..100_000).map(|_| s.next_normal()).collect();
        let sn = sn_scale(&z);
        assert!((0.97..=1.03).contains(&sn), "sn = {sn}");
    }

    proptest! {
        #[test]
        fn sn_matches_naive(values in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let fast = sn_scale(&values);
            let slow = sn_scale_naive(&values);
            prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
        }

        #[test]
        fn sn_affine_equivariant(
            values in proptest::collection::vec(-1e3f64..1e3, 2..60),
            shift in -1e4f64..1e4,
            scale in -50f64..50.0,
        ) {
            let base = sn_scale(&values);
            let mapped: Vec<f64> = values.iter().map(|v| shift + scale * v).collect();
            let got = sn_scale(&mapped);
            prop_assert!(
                (got - scale.abs() * base).abs() <= 1e-9 * (scale.abs() * base).max(1.0)
            );
        }
    }
}

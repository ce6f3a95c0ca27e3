//! Finite discrete distributions on a contiguous integer support, with the
//! KL and Kolmogorov distances used by the p-value law checks.

use crate::statfun::{log_choose, log_gamma};

/// A probability mass function on a contiguous integer range.
///
/// Unbounded laws are stored truncated; the discarded tail mass is tracked
/// in `truncated_mass` rather than renormalized away, so very small
/// distances computed from two truncated laws remain meaningful.
#[derive(Debug, Clone)]
pub struct DiscreteDist {
    offset: i64,
    pmf: Vec<f64>,
    truncated_mass: f64,
}

impl DiscreteDist {
    /// Builds a distribution from explicit masses starting at `offset`.
    ///
    /// Masses must be nonnegative and sum to 1 within 1e-10; a smaller sum
    /// is accepted only through the truncating constructors.
    pub fn from_pmf(offset: i64, pmf: Vec<f64>) -> Self {
        assert!(!pmf.is_empty(), "empty pmf");
        assert!(
            pmf.iter().all(|&p| p.is_finite() && p >= 0.0),
            "pmf values must be finite and nonnegative"
        );
        let sum: f64 = pmf.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-10, "pmf sums to {sum}, not 1");
        DiscreteDist { offset, pmf, truncated_mass: (1.0 - sum).max(0.0) }
    }

    /// Binomial(n, p).
    pub fn binomial(n: u64, p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "p must be in [0, 1]");
        if p == 0.0 {
            return DiscreteDist { offset: 0, pmf: vec![1.0], truncated_mass: 0.0 };
        }
        if p == 1.0 {
            return DiscreteDist { offset: n as i64, pmf: vec![1.0], truncated_mass: 0.0 };
        }
        let lp = p.ln();
        let lq = (-p).ln_1p();
        let pmf: Vec<f64> = (0..=n)
            .map(|k| (log_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
            .collect();
        DiscreteDist { offset: 0, pmf, truncated_mass: 0.0 }
    }

    /// Poisson(lambda), truncated once the remaining right-tail mass drops
    /// below 1e-30. The deep cut keeps cross-distribution KL sums accurate
    /// even when the partner's table reaches further: what the partner
    /// weights beyond this table is then negligible. The tail bound works
    /// on the pmf recurrence directly rather than on 1 - cdf, which cannot
    /// resolve below the ulp of 1.
    pub fn poisson(lambda: f64) -> Self {
        assert!(lambda.is_finite() && lambda > 0.0, "lambda must be positive");
        assert!(lambda <= 700.0, "lambda above 700 overflows the tabulated form");
        let mut pmf = Vec::new();
        let mut term = (-lambda).exp();
        let mut k = 0u64;
        loop {
            pmf.push(term);
            k += 1;
            term *= lambda / k as f64;
            // Past the mode the terms decay at least geometrically with
            // ratio lambda / (k + 1), bounding the mass still to come.
            if k as f64 > lambda {
                let ratio = (lambda / (k as f64 + 1.0)).min(0.999);
                if term / (1.0 - ratio) < 1e-30 {
                    break;
                }
            }
            if k > 4_000_000 {
                break;
            }
        }
        // Measure the dropped tail by running the recurrence a bit further.
        let mut tail = 0.0;
        for j in k..k + 400 {
            tail += term;
            term *= lambda / (j + 1) as f64;
            if term < tail * 1e-9 {
                break;
            }
        }
        DiscreteDist { offset: 0, pmf, truncated_mass: tail }
    }

    /// Geometric on {0, 1, ...} with success probability p, truncated at
    /// tail mass 1e-30; the tail after k stored terms is (1 - p)^k exactly.
    pub fn geometric(p: f64) -> Self {
        assert!(p > 0.0 && p < 1.0, "p must be in (0, 1)");
        let len = ((-30.0 * std::f64::consts::LN_10) / (-p).ln_1p()).ceil() as usize;
        let len = len.clamp(1, 4_000_000);
        let mut pmf = Vec::with_capacity(len);
        let mut term = p;
        for _ in 0..len {
            pmf.push(term);
            term *= 1.0 - p;
        }
        DiscreteDist { offset: 0, pmf, truncated_mass: (1.0 - p).powi(len as i32) }
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn support_len(&self) -> usize {
        self.pmf.len()
    }

    /// Probability mass dropped by truncation.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    /// Whether k lies inside the stored support range. A zero pmf inside
    /// the range is structural; outside it, a zero may just mean the law
    /// was truncated there (when `truncated_mass` is positive).
    pub fn covers(&self, k: i64) -> bool {
        k >= self.offset && ((k - self.offset) as usize) < self.pmf.len()
    }

    /// P(X = k).
    pub fn pmf(&self, k: i64) -> f64 {
        if k < self.offset {
            return 0.0;
        }
        let idx = (k - self.offset) as usize;
        self.pmf.get(idx).copied().unwrap_or(0.0)
    }

    /// P(X <= k) by left-to-right summation over the stored support; the
    /// truncated tail mass is never counted, so the supremum over k is
    /// 1 - truncated_mass.
    pub fn cdf(&self, k: i64) -> f64 {
        if k < self.offset {
            return 0.0;
        }
        let idx = (k - self.offset) as usize;
        if idx + 1 >= self.pmf.len() {
            return 1.0 - self.truncated_mass;
        }
        self.pmf[..=idx].iter().sum()
    }

    /// P(X < k).
    pub fn left_cdf(&self, k: i64) -> f64 {
        self.cdf(k - 1)
    }

    /// P(X > k), summed from the right so deep right-tail values keep
    /// relative precision. Includes the truncated tail mass.
    pub fn survival(&self, k: i64) -> f64 {
        let last = self.offset + self.pmf.len() as i64 - 1;
        if k >= last {
            return self.truncated_mass;
        }
        if k < self.offset {
            return 1.0;
        }
        let idx = (k - self.offset) as usize;
        self.pmf[idx + 1..].iter().rev().sum::<f64>() + self.truncated_mass
    }

    /// Iterates (k, pmf_self(k), pmf_other(k)) over the union support.
    pub fn aligned<'a>(
        &'a self,
        other: &'a DiscreteDist,
    ) -> impl Iterator<Item = (i64, f64, f64)> + 'a {
        let lo = self.offset.min(other.offset);
        let hi = (self.offset + self.pmf.len() as i64).max(other.offset + other.pmf.len() as i64);
        (lo..hi).map(move |k| (k, self.pmf(k), other.pmf(k)))
    }

    /// Kullback-Leibler divergence D(self || other) in nats. Infinite when
    /// `self` puts mass where `other` structurally has none.
    ///
    /// Mass of `self` falling beyond the stored range of a truncated
    /// `other` is a tabulation artifact, not a structural mismatch; it is
    /// dropped if negligible and reported as infinity only when it exceeds
    /// 1e-9, at which point the laws are effectively disjoint at the
    /// precision the tables carry.
    pub fn kl_divergence(&self, other: &DiscreteDist) -> f64 {
        let mut acc = 0.0;
        let mut dropped = 0.0;
        for (k, p, q) in self.aligned(other) {
            if p > 0.0 {
                if q > 0.0 {
                    acc += p * (p / q).ln();
                } else if other.covers(k) || other.truncated_mass == 0.0 {
                    return f64::INFINITY;
                } else {
                    dropped += p;
                }
            }
        }
        if dropped > 1e-9 {
            f64::INFINITY
        } else {
            acc
        }
    }

    /// Kolmogorov distance sup_k |F_self(k) - F_other(k)|.
    pub fn kolmogorov_distance(&self, other: &DiscreteDist) -> f64 {
        let mut fp = 0.0;
        let mut fq = 0.0;
        let mut d: f64 = 0.0;
        for (_, p, q) in self.aligned(other) {
            fp += p;
            fq += q;
            d = d.max((fp - fq).abs());
        }
        d
    }
}

/// Poisson CDF by direct summation, exposed for cross-checks against other
/// cdf implementations.
pub fn poisson_cdf(lambda: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let mut term = (-lambda).exp();
    let mut cum = term;
    for j in 1..=k {
        term *= lambda / j as f64;
        cum += term;
    }
    cum.min(1.0)
}

/// ln Poisson pmf, used where lambda is large enough that the linear-space
/// recurrence would underflow.
pub fn poisson_ln_pmf(lambda: f64, k: u64) -> f64 {
    k as f64 * lambda.ln() - lambda - log_gamma(k as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binomial_masses() {
        let d = DiscreteDist::binomial(4, 0.5);
        assert!((d.pmf(0) - 0.0625).abs() < 1e-14);
        assert!((d.pmf(2) - 0.375).abs() < 1e-14);
        assert!((d.cdf(4) - 1.0).abs() < 1e-12);
        assert_eq!(d.pmf(5), 0.0);
        assert_eq!(d.left_cdf(0), 0.0);
    }

    #[test]
    fn poisson_matches_direct_cdf() {
        let d = DiscreteDist::poisson(5.0);
        for k in 0..20 {
            assert!((d.cdf(k) - poisson_cdf(5.0, k)).abs() < 1e-12, "k={k}");
        }
        assert!(d.truncated_mass() < 1e-12);
    }

    #[test]
    fn kl_is_zero_on_self_and_positive_otherwise() {
        let p = DiscreteDist::binomial(10, 0.3);
        let q = DiscreteDist::binomial(10, 0.5);
        assert!(p.kl_divergence(&p).abs() < 1e-14);
        assert!(p.kl_divergence(&q) > 0.0);
        assert!(q.kl_divergence(&p) > 0.0);
    }

    #[test]
    fn kl_infinite_on_support_mismatch() {
        let p = DiscreteDist::from_pmf(0, vec![0.5, 0.5]);
        let q = DiscreteDist::from_pmf(0, vec![0.4, 0.3, 0.3]);
        // q puts mass at 2 where p has none.
        assert!(q.kl_divergence(&p).is_infinite());
        assert!(p.kl_divergence(&q).is_finite());
    }

    #[test]
    fn survival_complements_cdf() {
        let d = DiscreteDist::binomial(30, 0.2);
        for k in -1..=31 {
            assert!((d.cdf(k) + d.survival(k) - 1.0).abs() < 1e-12, "k={k}");
        }
        // Right tail keeps relative precision instead of rounding to 0.
        let s = d.survival(29);
        assert!((s / 0.2f64.powi(30) - 1.0).abs() < 1e-12, "s={s}");
    }

    #[test]
    fn kolmogorov_known_value() {
        // Two point masses at 0 and 1: distance is 1 at k = 0.
        let p = DiscreteDist::from_pmf(0, vec![1.0]);
        let q = DiscreteDist::from_pmf(1, vec![1.0]);
        assert!((p.kolmogorov_distance(&q) - 1.0).abs() < 1e-15);
    }

    fn arb_dist() -> impl Strategy<Value = DiscreteDist> {
        (
            -5i64..5,
            proptest::collection::vec(0.01f64..1.0, 1..25),
        )
            .prop_map(|(off, raw)| {
                let sum: f64 = raw.iter().sum();
                let pmf: Vec<f64> = raw.iter().map(|v| v / sum).collect();
                DiscreteDist::from_pmf(off, pmf)
            })
    }

    proptest! {
        #[test]
        fn kolmogorov_is_a_metric_on_triples(
            a in arb_dist(), b in arb_dist(), c in arb_dist()
        ) {
            let dab = a.kolmogorov_distance(&b);
            let dba = b.kolmogorov_distance(&a);
            let dac = a.kolmogorov_distance(&c);
            let dcb = c.kolmogorov_distance(&b);
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&dab));
            prop_assert!(a.kolmogorov_distance(&a) < 1e-15);
        }

        #[test]
        fn kl_nonnegative(a in arb_dist(), b in arb_dist()) {
            let d = a.kl_divergence(&b);
            prop_assert!(d >= -1e-12);
        }
    }
}

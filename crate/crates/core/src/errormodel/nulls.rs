//! Null count distributions induced by the fitted error model.
//!
//! The logit-normal mixing layer is approximated by a Beta chosen so that
//! logit p under Beta(alpha, beta) has mean close to logit mu and variance
//! close to sigma^2: alpha = 1/(sigma^2 (1-mu)), beta = 1/(sigma^2 mu).
//! Unmatched nulls are then plain beta-binomials. Matched nulls integrate
//! the normal-tissue rate over its conjugate posterior given the observed
//! normal count, giving a fixed-order quadrature mixture of beta-binomials
//! for the tumor count.

use std::sync::OnceLock;

use crate::fdr::NullCdf;
use crate::statfun::{
    digamma, gauss_legendre, inv_logit, log_inv_logit, logit, trigamma, BetaBinomial,
};

use super::{ErrorModelParams, MatchedModelParams, ModelError};

/// Quadrature order for the normal-rate posterior in matched nulls.
const POSTERIOR_NODES: usize = 32;

/// Posterior mass outside mean +- this many SDs (logit scale) is ignored.
const POSTERIOR_HALF_WIDTH_SDS: f64 = 8.0;

/// Keeps rates strictly inside (0, 1); inv_logit saturates to exactly 1.0
/// near 37 on the logit scale, which beta_approx must never see.
pub(super) fn clamp_unit(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Beta shape pair whose logit moments approximate (logit mu, sigma^2):
/// alpha = 1/(sigma^2 (1-mu)), beta = 1/(sigma^2 mu).
///
/// The match is asymptotic in small sigma: the exact logit-scale cumulants
/// are digamma differences, and for sigma up to ~0.3 with mu well below
/// 1/2 the mean lands within 2% and the variance within 5% of the target.
/// By sigma = 0.6 the variance runs more than 15% hot; fits that produce
/// such sigmas are outside the approximation's comfort zone.
pub fn beta_approx(mu: f64, sigma: f64) -> (f64, f64) {
    assert!(mu > 0.0 && mu < 1.0, "rate must be strictly inside (0, 1), got {mu}");
    assert!(
        sigma.is_finite() && sigma > 0.0,
        "logit SD must be positive and finite, got {sigma}"
    );
    let s2 = sigma * sigma;
    (1.0 / (s2 * (1.0 - mu)), 1.0 / (s2 * mu))
}

/// Null law of a count at depth `n` for a position with baseline `mu` in a
/// sample with bias `delta` and noise `sigma`.
pub fn unmatched_null(mu: f64, delta: f64, sigma: f64, n: u64) -> BetaBinomial {
    let center = clamp_unit(inv_logit(logit(mu) + delta));
    let (a, b) = beta_approx(center, sigma);
    BetaBinomial::new(n, a, b)
}

/// Unmatched null for cell (i, j) of a fitted model.
pub fn null_cdf_unmatched(
    params: &ErrorModelParams,
    i: usize,
    j: usize,
    n: u64,
) -> Result<BetaBinomial, ModelError> {
    let mu = params.mu[i].ok_or(ModelError::UnestimablePosition { index: i })?;
    Ok(unmatched_null(mu, params.delta[j], params.sigma[j], n))
}

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(POSTERIOR_NODES))
}

/// Quadrature nodes (logit-rate, weight) for the posterior of a rate with
/// Beta `prior` updated by `x` successes in `n` trials.
///
/// On the logit scale the posterior density is proportional to
/// p^a (1-p)^b with a = alpha + x, b = beta + n - x (the Jacobian
/// p(1-p) raises both exponents by one). Nodes span the exact posterior
/// mean digamma(a) - digamma(b) plus/minus 8 posterior SDs; weights are
/// normalized to sum to one, so all constant factors drop out.
pub fn posterior_logit_nodes(prior: (f64, f64), x: u64, n: u64) -> Vec<(f64, f64)> {
    assert!(x <= n, "successes exceed trials");
    let a = prior.0 + x as f64;
    let b = prior.1 + (n - x) as f64;
    let center = digamma(a) - digamma(b);
    let half = POSTERIOR_HALF_WIDTH_SDS * (trigamma(a) + trigamma(b)).sqrt();
    let (nodes, weights) = gl_rule();
    let mut pts: Vec<(f64, f64)> = nodes
        .iter()
        .zip(weights)
        .map(|(&t, &w)| {
            let ell = center + half * t;
            let ln_w = w.ln() + a * log_inv_logit(ell) + b * log_inv_logit(-ell);
            (ell, ln_w)
        })
        .collect();
    let best = pts.iter().map(|&(_, lw)| lw).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for p in &mut pts {
        p.1 = (p.1 - best).exp();
        total += p.1;
    }
    for p in &mut pts {
        p.1 /= total;
    }
    pts
}

/// Finite mixture of beta-binomials sharing one trial count; the matched
/// tumor null.
#[derive(Debug, Clone)]
pub struct MixtureBetaBinomial {
    n: u64,
    components: Vec<BetaBinomial>,
    weights: Vec<f64>,
}

impl MixtureBetaBinomial {
    fn new(components: Vec<BetaBinomial>, weights: Vec<f64>) -> Self {
        assert!(!components.is_empty(), "mixture needs at least one component");
        assert_eq!(components.len(), weights.len(), "one weight per component");
        let n = components[0].n;
        assert!(components.iter().all(|c| c.n == n), "components share the trial count");
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "weights must sum to 1, got {total}");
        MixtureBetaBinomial { n, components, weights }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn components(&self) -> impl Iterator<Item = (&BetaBinomial, f64)> {
        self.components.iter().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.components().map(|(c, w)| w * c.mean()).sum()
    }

    /// P(Y <= k); exactly 1 at k >= n.
    pub fn cdf(&self, k: u64) -> f64 {
        if k >= self.n {
            return 1.0;
        }
        self.components().map(|(c, w)| w * c.cdf(k)).sum()
    }

    /// P(Y < k); exactly 0 at k = 0.
    pub fn left_cdf(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.components().map(|(c, w)| w * c.left_cdf(k)).sum()
    }

    /// P(Y > k); exactly 0 at k >= n, with component-level tail precision.
    pub fn survival(&self, k: u64) -> f64 {
        if k >= self.n {
            return 0.0;
        }
        self.components().map(|(c, w)| w * c.survival(k)).sum()
    }

    /// P(Y = k); component-level precision deep in either tail.
    pub fn pmf(&self, k: u64) -> f64 {
        if k > self.n {
            return 0.0;
        }
        self.components().map(|(c, w)| w * c.pmf(k)).sum()
    }
}

impl NullCdf for MixtureBetaBinomial {
    fn cdf(&self, x: u64) -> f64 {
        MixtureBetaBinomial::cdf(self, x)
    }

    fn left_cdf(&self, x: u64) -> f64 {
        MixtureBetaBinomial::left_cdf(self, x)
    }

    fn survival(&self, x: u64) -> f64 {
        MixtureBetaBinomial::survival(self, x)
    }

    fn pmf(&self, x: u64) -> f64 {
        MixtureBetaBinomial::pmf(self, x)
    }
}

/// Conditional null of the tumor count given the paired normal count.
///
/// The normal rate's Beta posterior given (x, n) is integrated by
/// fixed-order quadrature; each node's rate, shifted by the tumor bias
/// eta, centers a beta-binomial component with spread tau at depth
/// `m`. With no normal coverage (n = 0) the posterior is the prior and
/// the null collapses to a single component centered at the combined
/// shift with variance sigma^2 + tau^2.
pub fn matched_null(
    mu: f64,
    delta: f64,
    sigma: f64,
    eta: f64,
    tau: f64,
    x: u64,
    n: u64,
    m: u64,
) -> MixtureBetaBinomial {
    if n == 0 {
        let center = clamp_unit(inv_logit(logit(mu) + delta + eta));
        let (a, b) = beta_approx(center, (sigma * sigma + tau * tau).sqrt());
        return MixtureBetaBinomial::new(vec![BetaBinomial::new(m, a, b)], vec![1.0]);
    }
    let prior = beta_approx(clamp_unit(inv_logit(logit(mu) + delta)), sigma);
    let pts = posterior_logit_nodes(prior, x, n);
    let mut components = Vec::with_capacity(pts.len());
    let mut weights = Vec::with_capacity(pts.len());
    for (ell, w) in pts {
        let (a, b) = beta_approx(clamp_unit(inv_logit(ell + eta)), tau);
        components.push(BetaBinomial::new(m, a, b));
        weights.push(w);
    }
    MixtureBetaBinomial::new(components, weights)
}

/// Matched null for cell (i, j) of a fitted model.
pub fn null_cdf_matched(
    params: &MatchedModelParams,
    i: usize,
    j: usize,
    x: u64,
    n: u64,
    m: u64,
) -> Result<MixtureBetaBinomial, ModelError> {
    let mu = params.base.mu[i].ok_or(ModelError::UnestimablePosition { index: i })?;
    Ok(matched_null(
        mu,
        params.base.delta[j],
        params.base.sigma[j],
        params.eta[j],
        params.tau[j],
        x,
        n,
        m,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statfun::{log_beta, tetragamma, DiscreteDist};

    #[test]
    fn beta_approx_matches_closed_form() {
        let (a, b) = beta_approx(0.5, 0.1);
        assert!((a / 200.0 - 1.0).abs() < 1e-10);
        assert!((b / 200.0 - 1.0).abs() < 1e-10);
        let (a, b) = beta_approx(0.01, 0.3);
        assert!((a / 11.223344556677891 - 1.0).abs() < 1e-12);
        assert!((b / 1111.1111111111111 - 1.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "strictly inside")]
    fn beta_approx_rejects_boundary_rate() {
        beta_approx(1.0, 0.1);
    }

    #[test]
    #[should_panic(expected = "positive and finite")]
    fn beta_approx_rejects_zero_sigma() {
        beta_approx(0.1, 0.0);
    }

    /// Moments of logit p under Beta(a, b) by direct quadrature on the
    /// logit scale: density exp(a ln p + b ln(1-p) - ln B(a, b)).
    fn logit_moments_by_quadrature(a: f64, b: f64) -> (f64, f64, f64) {
        // 16 SDs: the left tail only decays like exp(a l), and a is small
        // for large sigma.
        let center = digamma(a) - digamma(b);
        let half = 16.0 * (trigamma(a) + trigamma(b)).sqrt();
        let (nodes, weights) = gauss_legendre(200);
        let lnb = log_beta(a, b);
        let f: Vec<(f64, f64)> = nodes
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| {
                let ell = center + half * t;
                let dens = (a * log_inv_logit(ell) + b * log_inv_logit(-ell) - lnb).exp();
                (ell, w * half * dens)
            })
            .collect();
        let total: f64 = f.iter().map(|&(_, w)| w).sum();
        let mean: f64 = f.iter().map(|&(l, w)| l * w).sum::<f64>() / total;
        let var: f64 = f.iter().map(|&(l, w)| (l - mean) * (l - mean) * w).sum::<f64>() / total;
        let m3: f64 =
            f.iter().map(|&(l, w)| (l - mean) * (l - mean) * (l - mean) * w).sum::<f64>() / total;
        (mean, var, m3 / var.powf(1.5))
    }

    /// Exact logit-scale cumulants frozen from a 40-digit polygamma
    /// computation, one row per (mu, sigma) grid cell.
    const LOGIT_CUMULANTS: [(f64, f64, f64, f64, f64); 9] = [
        (0.001, 0.1, -6.91175309523222, 0.0100500662638502, -0.100049676169334),
        (0.001, 0.3, -6.95233788616101, 0.0941628492349688, -0.306048425723626),
        (0.001, 0.6, -7.0970413965615, 0.432238558637474, -0.647135029651581),
        (0.01, 0.1, -4.60002801672121, 0.0100491717134969, -0.0982495459479109),
        (0.01, 0.3, -4.63988082689789, 0.0940875153164767, -0.300649460652616),
        (0.01, 0.6, -4.78197663486057, 0.430885279878338, -0.636540117375625),
        (0.1, 0.1, -2.20123124394822, 0.0100411216646984, -0.0802358566673931),
        (0.1, 0.3, -2.23376421978134, 0.0934095793116405, -0.246321988923122),
        (0.1, 0.6, -2.34977691903354, 0.418701311762475, -0.527735319758155),
    ];

    #[test]
    fn logit_moments_polygamma_route_matches_frozen_values() {
        for &(mu, sigma, mean, var, skew) in &LOGIT_CUMULANTS {
            let (a, b) = beta_approx(mu, sigma);
            let m = digamma(a) - digamma(b);
            let v = trigamma(a) + trigamma(b);
            let s = (tetragamma(a) - tetragamma(b)) / v.powf(1.5);
            assert!((m / mean - 1.0).abs() < 1e-12, "mean at ({mu},{sigma})");
            assert!((v / var - 1.0).abs() < 1e-12, "var at ({mu},{sigma})");
            assert!((s / skew - 1.0).abs() < 1e-12, "skew at ({mu},{sigma})");
        }
    }

    #[test]
    fn logit_moments_quadrature_route_matches_frozen_values() {
        for &(mu, sigma, mean, var, skew) in &LOGIT_CUMULANTS {
            let (a, b) = beta_approx(mu, sigma);
            let (m, v, s) = logit_moments_by_quadrature(a, b);
            assert!((m / mean - 1.0).abs() < 1e-8, "mean at ({mu},{sigma}): {m}");
            assert!((v / var - 1.0).abs() < 1e-8, "var at ({mu},{sigma}): {v}");
            assert!((s / skew - 1.0).abs() < 1e-7, "skew at ({mu},{sigma}): {s}");
        }
    }

    #[test]
    fn beta_approx_moment_targets_hold_up_to_sigma_03() {
        for &(mu, sigma, mean, var, _) in &LOGIT_CUMULANTS {
            let rel_mean = (mean - logit(mu)).abs() / logit(mu).abs();
            let rel_var = (var - sigma * sigma).abs() / (sigma * sigma);
            if sigma <= 0.3 {
                assert!(rel_mean < 0.02, "mean off {rel_mean} at ({mu},{sigma})");
                assert!(rel_var < 0.05, "var off {rel_var} at ({mu},{sigma})");
            } else {
                // The approximation has visibly degraded by sigma = 0.6:
                // the variance runs at least 15% above sigma^2.
                assert!(rel_var > 0.15, "expected breakdown, got {rel_var} at ({mu},{sigma})");
            }
        }
    }

    #[test]
    fn unmatched_null_approaches_binomial_as_sigma_vanishes() {
        let n = 2000u64;
        let null = unmatched_null(0.01, 0.1, 1e-4, n);
        let p = inv_logit(logit(0.01) + 0.1);
        let exact = DiscreteDist::binomial(n, p);
        let mut worst = 0.0f64;
        for k in 0..=80u64 {
            worst = worst.max((null.cdf(k) - exact.cdf(k as i64)).abs());
        }
        assert!(worst < 1e-3, "sup CDF gap {worst}");
    }

    #[test]
    fn unmatched_null_quantile_round_trip_at_virus_depth() {
        let null = unmatched_null(0.001, 0.0, 0.3, 775_681);
        let k = null.quantile(0.999);
        assert!(null.cdf(k) >= 0.999);
        assert!(null.cdf(k - 1) < 0.999);
    }

    #[test]
    fn null_cdf_unmatched_flags_unestimable_positions() {
        let params = ErrorModelParams {
            mu: vec![Some(0.01), None],
            delta: vec![0.0],
            sigma: vec![0.2],
            region_sigma: None,
            meta: super::super::FitMeta {
                sigma_method: super::super::SigmaMethod::Mle,
                pseudocount: super::super::PSEUDOCOUNT,
                region_quantile: None,
                moment_fallback: vec![false],
                seed: None,
            },
        };
        assert!(null_cdf_unmatched(&params, 0, 0, 100).is_ok());
        let err = null_cdf_unmatched(&params, 1, 0, 100).unwrap_err();
        assert!(matches!(err, ModelError::UnestimablePosition { index: 1 }));
    }

    #[test]
    fn posterior_nodes_are_normalized_and_centered() {
        let prior = beta_approx(0.01, 0.3);
        let pts = posterior_logit_nodes(prior, 50, 5000);
        assert_eq!(pts.len(), POSTERIOR_NODES);
        let total: f64 = pts.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let a = prior.0 + 50.0;
        let b = prior.1 + 4950.0;
        let mean: f64 = pts.iter().map(|&(l, w)| l * w).sum();
        assert!((mean - (digamma(a) - digamma(b))).abs() < 1e-6, "posterior mean {mean}");
    }

    #[test]
    fn matched_null_pins_to_binomial_at_huge_normal_depth() {
        // x/N = 5e-4 with N = 1e7 pins the normal rate; tau -> 0 and
        // eta = 0 then force Y ~ Binomial(M, x/N) up to quadrature error.
        let null = matched_null(5e-4, 0.0, 0.3, 0.0, 1e-4, 5_000, 10_000_000, 10_000);
        let exact = DiscreteDist::binomial(10_000, 5e-4);
        let mut worst = 0.0f64;
        for k in 0..=50u64 {
            worst = worst.max((null.cdf(k) - exact.cdf(k as i64)).abs());
        }
        assert!(worst < 2e-3, "sup CDF gap {worst}");
    }

    #[test]
    fn matched_null_median_sits_near_scaled_normal_rate() {
        // Symmetric case: observed normal rate equals the baseline and
        // eta = 0, so the tumor null centers near mu * M.
        let (m_depth, mu) = (10_000u64, 0.01);
        let null = matched_null(mu, 0.0, 0.25, 0.0, 0.25, 1_000, 100_000, m_depth);
        let (mut lo, mut hi) = (0u64, m_depth);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if null.cdf(mid) >= 0.5 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let median = lo as f64;
        let center = mu * m_depth as f64;
        let slack = 2.0 * (m_depth as f64 * mu * (1.0 - mu)).sqrt();
        assert!(
            (median - center).abs() <= slack,
            "median {median} vs center {center} +- {slack}"
        );
    }

    #[test]
    fn matched_null_endpoints_are_exact() {
        let null = matched_null(0.01, 0.0, 0.2, 0.1, 0.3, 20, 2_000, 500);
        assert_eq!(null.cdf(500), 1.0);
        assert_eq!(null.cdf(700), 1.0);
        assert_eq!(null.left_cdf(0), 0.0);
        assert_eq!(null.survival(500), 0.0);
        let total: f64 = null.components().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_null_without_normal_coverage_uses_combined_spread() {
        let null = matched_null(0.01, 0.05, 0.2, 0.1, 0.3, 0, 0, 1_000);
        assert_eq!(null.components().count(), 1);
        let (c, w) = null.components().next().unwrap();
        assert_eq!(w, 1.0);
        let center = inv_logit(logit(0.01) + 0.05 + 0.1);
        let (a, b) = beta_approx(center, (0.2f64 * 0.2 + 0.3 * 0.3).sqrt());
        assert_eq!(c.alpha.to_bits(), a.to_bits());
        assert_eq!(c.beta.to_bits(), b.to_bits());
    }

    #[test]
    fn counts_from_the_null_give_uniform_randomized_pvalues() {
        use crate::fdr::{randomized_pvalues, PvalueMode};
        use crate::rng::Stream;
        use crate::statfun::{ks_critical, ks_statistic_uniform};

        // Quantile inversion samples each count from exactly the law the
        // p-value is computed under, so r must be uniform; this drives the
        // whole null -> interval -> randomization path at depth. (Counts
        // from the logit-normal hierarchy instead would carry the Beta
        // approximation error, which the moment tests quantify.)
        let (p_count, depth) = (2000usize, 100_000u64);
        let delta = [0.0, 0.1, -0.05];
        let sigma = 0.2;
        let mut draws = Stream::new(99, &[0]);
        let mut x = Vec::new();
        let mut nulls = Vec::new();
        for i in 0..p_count {
            let t = i as f64 / (p_count - 1) as f64;
            let mu = (1e-3f64.ln() + t * (1e-2f64 / 1e-3).ln()).exp();
            for &dj in &delta {
                let null = unmatched_null(mu, dj, sigma, depth);
                x.push(null.quantile(draws.next_f64()));
                nulls.push(null);
            }
        }
        let r = randomized_pvalues(&x, &nulls, PvalueMode::Randomized, 7).unwrap();
        let d = ks_statistic_uniform(&r);
        let crit = ks_critical(r.len(), 0.01);
        assert!(d < crit, "KS {d} at n = {} exceeds {crit}", r.len());
    }
}

//! Beta-binomial distribution with tail-safe CDF and quantile.

use serde::{Deserialize, Serialize};

use crate::statfun::{log_beta, log_choose};

/// X | p ~ Binomial(n, p) with p ~ Beta(alpha, beta), marginally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBinomial {
    pub n: u64,
    pub alpha: f64,
    pub beta: f64,
}

impl BetaBinomial {
    pub fn new(n: u64, alpha: f64, beta: f64) -> Self {
        assert!(
            alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0,
            "shape parameters must be positive and finite, got ({alpha}, {beta})"
        );
        BetaBinomial { n, alpha, beta }
    }

    pub fn mean(&self) -> f64 {
        self.n as f64 * self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        let pbar = self.alpha / s;
        let rho = 1.0 / (s + 1.0);
        self.n as f64 * pbar * (1.0 - pbar) * (1.0 + (self.n as f64 - 1.0) * rho)
    }

    pub fn ln_pmf(&self, k: u64) -> f64 {
        assert!(k <= self.n, "pmf argument {k} exceeds n = {}", self.n);
        log_choose(self.n, k)
            + log_beta(k as f64 + self.alpha, (self.n - k) as f64 + self.beta)
            - log_beta(self.alpha, self.beta)
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.ln_pmf(k).exp()
    }

    /// pmf(k + 1) / pmf(k).
    fn ratio_up(&self, k: u64) -> f64 {
        debug_assert!(k < self.n);
        let kf = k as f64;
        let nf = self.n as f64;
        (nf - kf) * (kf + self.alpha) / ((kf + 1.0) * (nf - kf - 1.0 + self.beta))
    }

    /// pmf(k - 1) / pmf(k).
    fn ratio_down(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        let kf = k as f64;
        let nf = self.n as f64;
        kf * (nf - kf + self.beta) / ((nf - kf + 1.0) * (kf - 1.0 + self.alpha))
    }

    /// Sum of pmf(0..=k) relative to pmf(k), walking downward.
    fn lower_tail_from(&self, k: u64) -> f64 {
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut j = k;
        while j >= 1 {
            term *= self.ratio_down(j);
            sum += term;
            if term < sum * 1e-19 {
                break;
            }
            j -= 1;
        }
        (self.ln_pmf(k) + sum.ln()).exp()
    }

    /// Sum of pmf(k..=n) relative to pmf(k), walking upward.
    fn upper_tail_from(&self, k: u64) -> f64 {
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut j = k;
        while j < self.n {
            term *= self.ratio_up(j);
            sum += term;
            if term < sum * 1e-19 {
                break;
            }
            j += 1;
        }
        (self.ln_pmf(k) + sum.ln()).exp()
    }

    /// P(X <= k), accumulated from the nearer tail in linear space around a
    /// log anchor. Exact 1 at k >= n; the deep left tail keeps relative
    /// precision instead of collapsing to 0.
    pub fn cdf(&self, k: u64) -> f64 {
        if k >= self.n {
            return 1.0;
        }
        if (k as f64) < self.mean() {
            self.lower_tail_from(k)
        } else {
            1.0 - self.upper_tail_from(k + 1)
        }
    }

    /// P(X < k). Exact 0 at k = 0.
    pub fn left_cdf(&self, k: u64) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cdf(k - 1)
        }
    }

    /// P(X > k). Exact 0 at k >= n; the deep right tail keeps relative
    /// precision instead of collapsing to 0 the way 1 - cdf would.
    pub fn survival(&self, k: u64) -> f64 {
        if k >= self.n {
            return 0.0;
        }
        if (k as f64) < self.mean() {
            1.0 - self.lower_tail_from(k)
        } else {
            self.upper_tail_from(k + 1)
        }
    }

    /// Smallest k with P(X <= k) >= u, for u in (0, 1).
    ///
    /// Materializes the pmf over a window wide enough to hold all but
    /// ~1e-30 of the mass, anchored at the mode so the ratio products never
    /// overflow, then inverts the partial sums.
    pub fn quantile(&self, u: f64) -> u64 {
        assert!(u > 0.0 && u < 1.0, "quantile level must be in (0, 1)");
        if self.n == 0 {
            return 0;
        }
        let mean = self.mean();
        let sd = self.variance().sqrt();
        let lo = (mean - 50.0 * sd - 50.0).floor().max(0.0) as u64;
        let hi = ((mean + 50.0 * sd + 50.0).ceil() as u64).min(self.n);
        let anchor = (mean.round() as u64).clamp(lo, hi);
        let len = (hi - lo + 1) as usize;
        let mut w = vec![0.0f64; len];
        w[(anchor - lo) as usize] = 1.0;
        let mut acc = 1.0f64;
        for j in (anchor + 1)..=hi {
            acc *= self.ratio_up(j - 1);
            w[(j - lo) as usize] = acc;
        }
        acc = 1.0;
        for j in (lo..anchor).rev() {
            acc *= self.ratio_down(j + 1);
            w[(j - lo) as usize] = acc;
        }
        let total: f64 = w.iter().sum();
        let target = u * total;
        let mut cum = 0.0;
        for (idx, &wj) in w.iter().enumerate() {
            cum += wj;
            if cum >= target {
                return lo + idx as u64;
            }
        }
        hi
    }
}

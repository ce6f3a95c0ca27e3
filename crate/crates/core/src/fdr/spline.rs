//! Marginal density of p-values by Poisson regression of histogram counts
//! on a natural cubic spline basis.
//!
//! Values are mapped to z = probit(r) (clamped at r = 1e-12 from either
//! end) and binned into equal-width bins across the observed z range; the
//! log bin intensity is modeled as a natural cubic spline in z. Working on
//! the probit scale is what gives deep tails their resolution: a cluster of
//! extreme p-values sits in its own bins far from the null bulk instead of
//! being averaged into the outermost of a set of equal-width r bins, which
//! would destroy exactly the separation the local fdr needs. The density on
//! the p-value scale is exp(s(z))/phi(z), normalized so it integrates to
//! one over [0, 1]; natural boundary conditions make log intensity linear
//! in z beyond the outermost knots, so evaluation outside the data range
//! extrapolates smoothly.

use serde::{Deserialize, Serialize};

use super::{clamped_probit, FdrError};
use crate::statfun::normal_pdf;

const DF_MIN: usize = 3;
const DF_MAX: usize = 15;
// A boundary-bin spike can leave the curvature basis nearly collinear;
// Newton then crawls along the flat direction, so the iteration budget is
// generous (iterations cost microseconds at 120 bins).
const IRLS_MAX_ITERS: usize = 500;
const IRLS_TOL: f64 = 1e-7;

/// Fitted log-spline marginal density on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDensity {
    /// Spline knots on the probit scale.
    knots: Vec<f64>,
    /// Coefficients of the natural spline basis (length = knots).
    coefs: Vec<f64>,
    /// Log of the normalization integral of exp(s(z)) dz over the clamped
    /// probit range.
    log_norm: f64,
    /// Fit settings, kept for reporting.
    pub df: usize,
    pub bins: usize,
}

impl MarginalDensity {
    /// Fits with the pipeline default of 120 bins.
    pub fn fit(r: &[f64], df: usize) -> Result<Self, FdrError> {
        Self::fit_binned(r, df, 120)
    }

    /// Fits a density to p-values with `df` spline degrees of freedom over
    /// `bins` equal-width histogram bins.
    pub fn fit_binned(r: &[f64], df: usize, bins: usize) -> Result<Self, FdrError> {
        if !(DF_MIN..=DF_MAX).contains(&df) {
            return Err(FdrError::DfOutOfRange { df, lo: DF_MIN, hi: DF_MAX });
        }
        if r.len() < 200 {
            return Err(FdrError::TooFewValues { got: r.len(), need: 200 });
        }
        assert!(bins >= 16, "need at least 16 histogram bins");
        assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)), "p-values must lie in [0, 1]");

        let z: Vec<f64> = r.iter().map(|&v| clamped_probit(v)).collect();
        let (mut z_lo, mut z_hi) =
            z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        // Degenerate spreads (all values nearly equal) still need a usable
        // bin grid and knot layout.
        if z_hi - z_lo < 1.0 {
            let c = 0.5 * (z_lo + z_hi);
            z_lo = c - 0.5;
            z_hi = c + 0.5;
        }
        let width = (z_hi - z_lo) / bins as f64;
        // The pseudo-count keeps every bin positive: a truly empty bin makes
        // the Poisson MLE push its intensity to zero, the coefficient
        // diverges, and Newton crawls forever (quasi-separation). 0.05 of a
        // count biases a typical bin by well under a percent.
        let mut counts = vec![0.05f64; bins];
        for &v in &z {
            let b = (((v - z_lo) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let z_mid: Vec<f64> =
            (0..bins).map(|b| z_lo + (b as f64 + 0.5) * width).collect();
        // Knots equally spaced across the binned range.
        let knots: Vec<f64> = (0..df)
            .map(|k| z_lo + (z_hi - z_lo) * k as f64 / (df - 1) as f64)
            .collect();
        let design: Vec<Vec<f64>> = z_mid.iter().map(|&z| natural_basis(&knots, z)).collect();
        let coefs = poisson_irls(&design, &counts)?;

        let mut fitted = MarginalDensity { knots, coefs, log_norm: 0.0, df, bins };
        fitted.log_norm = fitted.normalization_integral_ln();
        Ok(fitted)
    }

    /// Spline value at probit-scale coordinate z.
    fn spline(&self, z: f64) -> f64 {
        natural_basis(&self.knots, z)
            .iter()
            .zip(&self.coefs)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// ln of integral exp(s(z)) dz over the clamped probit range, by
    /// Simpson's rule. Substituting r = Phi(z) shows this equals the
    /// integral of f(r) dr over [0, 1] up to the normalizer, so dividing by
    /// it makes the density integrate to one; sample size and bin width
    /// cancel.
    fn normalization_integral_ln(&self) -> f64 {
        let b = clamped_probit(1.0);
        let a = -b;
        let steps = 4800usize; // even
        let h = (b - a) / steps as f64;
        // Integrate in linear space relative to the max exponent for safety.
        let mut ln_max = f64::NEG_INFINITY;
        let mut vals = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let v = self.spline(a + i as f64 * h);
            ln_max = ln_max.max(v);
            vals.push(v);
        }
        let mut acc = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (v - ln_max).exp();
        }
        ln_max + (acc * h / 3.0).ln()
    }

    /// Density estimate at p-value r, normalized to integrate to 1 over
    /// [0, 1]. The spline models bin counts on the z scale, and a z bin of
    /// width dz covers phi(z) dz of p-value measure, so the p-value density
    /// divides the fitted intensity by phi(z). Natural linear-in-z
    /// extrapolation applies beyond the fitted range; no ceiling is
    /// imposed.
    pub fn density(&self, r: f64) -> f64 {
        let z = clamped_probit(r);
        let ln_phi = normal_pdf(z).max(1e-300).ln();
        (self.spline(z) - ln_phi - self.log_norm).exp()
    }
}

/// Natural cubic spline basis with the given knots, evaluated at z.
///
/// K knots give K functions: 1, z, and K - 2 curvature terms that are
/// linear beyond the boundary knots.
fn natural_basis(knots: &[f64], z: f64) -> Vec<f64> {
    let kk = knots.len();
    debug_assert!(kk >= 3);
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let last = knots[kk - 1];
    let d = |k: usize| (cube(z - knots[k]) - cube(z - last)) / (last - knots[k]);
    let d_penultimate = d(kk - 2);
    let mut out = Vec::with_capacity(kk);
    out.push(1.0);
    out.push(z);
    for k in 0..kk - 2 {
        out.push(d(k) - d_penultimate);
    }
    out
}

/// Poisson regression of counts on a design matrix via iteratively
/// reweighted least squares with step halving.
fn poisson_irls(design: &[Vec<f64>], counts: &[f64]) -> Result<Vec<f64>, FdrError> {
    let n = design.len();
    let p = design[0].len();
    // Start from a flat intensity at the mean count.
    let mean = (counts.iter().sum::<f64>() / n as f64).max(1e-3);
    let mut beta = vec![0.0f64; p];
    beta[0] = mean.ln();
    let mut dev = deviance(design, counts, &beta);
    for _ in 0..IRLS_MAX_ITERS {
        // Weighted normal equations: X' W X delta = X' (y - mu).
        let mut xtwx = vec![0.0f64; p * p];
        let mut xtr = vec![0.0f64; p];
        for (row, &y) in design.iter().zip(counts) {
            let eta: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            let mu = eta.clamp(-30.0, 30.0).exp();
            let resid = y - mu;
            for a in 0..p {
                xtr[a] += row[a] * resid;
                for b in a..p {
                    xtwx[a * p + b] += mu * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[a * p + b] = xtwx[b * p + a];
            }
        }
        let delta = solve_spd(&mut xtwx, &xtr, p)?;
        // Step halving until the deviance improves.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> =
                beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let cand_dev = deviance(design, counts, &cand);
            if cand_dev.is_finite() && cand_dev < dev {
                let done = dev - cand_dev < IRLS_TOL * (dev.abs() + 0.1);
                beta = cand;
                dev = cand_dev;
                accepted = true;
                if done {
                    return Ok(beta);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The log-likelihood is concave, so a Newton direction that
            // cannot improve the deviance at any step size means the
            // current point is the optimum to float precision.
            return Ok(beta);
        }
    }
    Err(FdrError::NonConvergence { iters: IRLS_MAX_ITERS })
}

/// Poisson deviance 2 sum[y ln(y/mu) - (y - mu)]; y = 0 terms reduce to 2 mu.
fn deviance(design: &[Vec<f64>], counts: &[f64], beta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (row, &y) in design.iter().zip(counts) {
        let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        if eta > 35.0 {
            return f64::INFINITY;
        }
        let mu = eta.exp();
        acc += if y > 0.0 { y * (y / mu).ln() - (y - mu) } else { mu };
    }
    2.0 * acc
}

/// Solves a symmetric positive definite system by Cholesky, retrying with
/// a small ridge if the factorization stalls.
fn solve_spd(a: &mut [f64], b: &[f64], p: usize) -> Result<Vec<f64>, FdrError> {
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    for attempt in 0..4 {
        let mut m = a.to_vec();
        if attempt > 0 {
            let ridge = max_diag * 1e-10 * 100f64.powi(attempt - 1);
            for i in 0..p {
                m[i * p + i] += ridge;
            }
        }
        if cholesky(&mut m, p) {
            return Ok(chol_solve(&m, b, p));
        }
    }
    Err(FdrError::NonConvergence { iters: IRLS_MAX_ITERS })
}

/// In-place lower Cholesky factor; false if not positive definite.
fn cholesky(m: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        for i in j..p {
            let mut sum = m[i * p + j];
            for k in 0..j {
                sum -= m[i * p + k] * m[j * p + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                m[j * p + j] = sum.sqrt();
            } else {
                m[i * p + j] = sum / m[j * p + j];
            }
        }
    }
    true
}

fn chol_solve(l: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut y = vec![0.0f64; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * p + k] * y[k];
        }
        y[i] = sum / l[i * p + i];
    }
    let mut x = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in i + 1..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    x
}

//! Estimators for positional rates, sample biases, and noise SDs.
//!
//! All estimators consume logit-transformed pseudocounted rates. Location
//! parameters (mu, delta, eta) use medians so rare true signals cannot
//! drag them; spread parameters (sigma, tau) use either a method-of-moments
//! variance match or a one-dimensional marginal-likelihood search.

use rayon::prelude::*;

use crate::pileup::{MatchedPileup, PileupMatrix, RegionMap};
use crate::statfun::{inv_logit, logit, median, quantile, BetaBinomial};

use super::nulls::{beta_approx, clamp_unit, posterior_logit_nodes};
use super::{
    logit_rate, GenotypeAssignment, ModelError, RegionSigma, SigmaMethod,
    MIN_POSITIONS_PER_REGION, MIN_POSITIONS_PER_SAMPLE,
};

/// Bracket and tolerance for the noise-SD likelihood searches. SDs beyond
/// 3 on the logit scale are physically implausible for error rates.
const SIGMA_LO: f64 = 1e-4;
const SIGMA_HI: f64 = 3.0;
const SIGMA_TOL: f64 = 1e-5;

/// Row counts above this are summed in parallel per likelihood call.
const PAR_THRESHOLD: usize = 2048;

/// Cap on rows entering the tau likelihood; larger inputs are thinned by a
/// deterministic stride.
const TAU_MLE_CAP: usize = 2000;

/// Baseline rate usable for cell (i, j), honoring genotype masking: None
/// when the position is un-estimable or the sample is not hom-ref there.
fn usable_mu(
    mu: &[Option<f64>],
    genotypes: Option<&GenotypeAssignment>,
    i: usize,
    j: usize,
) -> Option<f64> {
    let base = mu[i]?;
    match genotypes {
        Some(g) => {
            if !g.is_hom_ref(i, j) {
                return None;
            }
            Some(g.effective_mu(i, j).unwrap_or(base))
        }
        None => Some(base),
    }
}

/// Per-position baseline rate: the median of pseudocounted logit rates
/// across the reference samples, mapped back to the rate scale. Positions
/// with no covered sample come back as None.
pub fn estimate_mu(reference: &PileupMatrix) -> Vec<Option<f64>> {
    let s = reference.n_samples();
    (0..reference.n_positions())
        .map(|i| {
            let rates: Vec<f64> = (0..s)
                .filter(|&j| reference.depth(i, j) > 0)
                .map(|j| logit_rate(reference.x(i, j), reference.depth(i, j)))
                .collect();
            if rates.is_empty() {
                None
            } else {
                Some(inv_logit(median(&rates)))
            }
        })
        .collect()
}

/// Per-sample bias: the median over positions of logit rate minus logit
/// baseline. Needs at least [`MIN_POSITIONS_PER_SAMPLE`] usable positions
/// per sample.
pub fn estimate_delta(
    m: &PileupMatrix,
    mu: &[Option<f64>],
    genotypes: Option<&GenotypeAssignment>,
) -> Result<Vec<f64>, ModelError> {
    assert_eq!(mu.len(), m.n_positions(), "one mu entry per position");
    let mut delta = Vec::with_capacity(m.n_samples());
    for j in 0..m.n_samples() {
        let resid: Vec<f64> = (0..m.n_positions())
            .filter_map(|i| {
                if m.depth(i, j) == 0 {
                    return None;
                }
                let mu_ij = usable_mu(mu, genotypes, i, j)?;
                Some(logit_rate(m.x(i, j), m.depth(i, j)) - logit(mu_ij))
            })
            .collect();
        if resid.len() < MIN_POSITIONS_PER_SAMPLE {
            return Err(ModelError::TooFewPositions {
                sample: m.sample(j).to_string(),
                got: resid.len(),
                need: MIN_POSITIONS_PER_SAMPLE,
            });
        }
        delta.push(median(&resid));
    }
    Ok(delta)
}

/// One usable observation in a sample's noise fit.
struct Row {
    x: u64,
    n: u64,
    /// Model rate inv-logit(logit mu_i + delta_j).
    center: f64,
    /// logit rate minus (logit mu_i + delta_j).
    resid: f64,
}

/// Result of [`estimate_sigma`].
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFit {
    pub sigma: Vec<f64>,
    /// Region-wise estimates per sample when a region map was supplied.
    pub region_sigma: Option<Vec<Vec<RegionSigma>>>,
    /// True where the moment estimate was negative and the likelihood fit
    /// was used instead.
    pub moment_fallback: Vec<bool>,
}

/// Per-sample noise SD.
///
/// Moments: var(logit rate) is binomial sampling variance 1/(N p(1-p))
/// plus sigma^2, so sigma^2 is matched as mean squared residual minus the
/// mean sampling term; a negative match is flagged and falls back to the
/// likelihood search. Mle: golden-section search of the beta-binomial
/// marginal likelihood on [1e-4, 3].
///
/// With a region map, each (sample, region) pair holding at least
/// [`MIN_POSITIONS_PER_REGION`] usable positions is fitted separately and
/// `quantile_level` (in [0.5, 1)) of the region estimates is reported; a
/// sample with no qualifying region falls back to its pooled fit.
pub fn estimate_sigma(
    m: &PileupMatrix,
    mu: &[Option<f64>],
    delta: &[f64],
    method: SigmaMethod,
    regions: Option<&RegionMap>,
    quantile_level: f64,
    genotypes: Option<&GenotypeAssignment>,
) -> Result<SigmaFit, ModelError> {
    assert_eq!(mu.len(), m.n_positions(), "one mu entry per position");
    assert_eq!(delta.len(), m.n_samples(), "one delta entry per sample");
    if !(0.5..1.0).contains(&quantile_level) {
        return Err(ModelError::BadQuantile { quantile: quantile_level });
    }
    if let Some(rmap) = regions {
        assert_eq!(rmap.region_ids.len(), m.n_positions(), "one region id per position");
    }
    let mut sigma = Vec::with_capacity(m.n_samples());
    let mut region_sigma = regions.map(|_| Vec::with_capacity(m.n_samples()));
    let mut moment_fallback = Vec::with_capacity(m.n_samples());
    for j in 0..m.n_samples() {
        let mut rows = Vec::new();
        let mut row_region = Vec::new();
        for i in 0..m.n_positions() {
            let n = m.depth(i, j);
            if n == 0 {
                continue;
            }
            let Some(mu_ij) = usable_mu(mu, genotypes, i, j) else { continue };
            let ell = logit(mu_ij) + delta[j];
            rows.push(Row {
                x: m.x(i, j),
                n,
                center: clamp_unit(inv_logit(ell)),
                resid: logit_rate(m.x(i, j), n) - ell,
            });
            row_region.push(regions.map_or(0, |r| r.region_ids[i]));
        }
        if rows.len() < MIN_POSITIONS_PER_SAMPLE {
            return Err(ModelError::TooFewPositions {
                sample: m.sample(j).to_string(),
                got: rows.len(),
                need: MIN_POSITIONS_PER_SAMPLE,
            });
        }
        let sample = m.sample(j);
        if regions.is_some() {
            let mut ids: Vec<u32> = row_region.clone();
            ids.sort_unstable();
            ids.dedup();
            let mut fits = Vec::new();
            let mut fell_back = false;
            for rid in ids {
                let group: Vec<&Row> = rows
                    .iter()
                    .zip(&row_region)
                    .filter(|&(_, &r)| r == rid)
                    .map(|(row, _)| row)
                    .collect();
                if group.len() < MIN_POSITIONS_PER_REGION {
                    continue;
                }
                let (s, fb) = fit_rows(&group, method, sample)?;
                fits.push(RegionSigma { region: rid, sigma: s });
                fell_back |= fb;
            }
            if fits.is_empty() {
                let all: Vec<&Row> = rows.iter().collect();
                let (s, fb) = fit_rows(&all, method, sample)?;
                sigma.push(s);
                fell_back |= fb;
            } else {
                let values: Vec<f64> = fits.iter().map(|f| f.sigma).collect();
                sigma.push(quantile(&values, quantile_level));
            }
            region_sigma.as_mut().unwrap().push(fits);
            moment_fallback.push(fell_back);
        } else {
            let all: Vec<&Row> = rows.iter().collect();
            let (s, fb) = fit_rows(&all, method, sample)?;
            sigma.push(s);
            moment_fallback.push(fb);
        }
    }
    Ok(SigmaFit { sigma, region_sigma, moment_fallback })
}

fn fit_rows(rows: &[&Row], method: SigmaMethod, sample: &str) -> Result<(f64, bool), ModelError> {
    match method {
        SigmaMethod::Mle => Ok((mle_sigma(rows, sample)?, false)),
        SigmaMethod::Moments => {
            let len = rows.len() as f64;
            let mean_sq: f64 = rows.iter().map(|r| r.resid * r.resid).sum::<f64>() / len;
            let mean_noise: f64 = rows
                .iter()
                .map(|r| 1.0 / (r.n as f64 * r.center * (1.0 - r.center)))
                .sum::<f64>()
                / len;
            let v = mean_sq - mean_noise;
            if v > 0.0 {
                Ok((v.sqrt(), false))
            } else {
                Ok((mle_sigma(rows, sample)?, true))
            }
        }
    }
}

fn mle_sigma(rows: &[&Row], sample: &str) -> Result<f64, ModelError> {
    let term = |sigma: f64, r: &Row| {
        let (a, b) = beta_approx(r.center, sigma);
        BetaBinomial::new(r.n, a, b).ln_pmf(r.x)
    };
    let found = golden_max(SIGMA_LO, SIGMA_HI, SIGMA_TOL, |sigma| {
        if rows.len() > PAR_THRESHOLD {
            rows.par_iter().map(|r| term(sigma, r)).sum()
        } else {
            rows.iter().map(|r| term(sigma, r)).sum()
        }
    });
    if found > SIGMA_HI - 2.0 * SIGMA_TOL {
        return Err(ModelError::SearchNotBracketed { sample: sample.to_string() });
    }
    Ok(found)
}

/// Result of [`estimate_eta_tau`].
#[derive(Debug, Clone, PartialEq)]
pub struct EtaTauFit {
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
    /// True where the moment estimate was negative and the likelihood fit
    /// was used instead.
    pub tau_fallback: Vec<bool>,
}

/// Per-sample tumor bias and tumor-vs-normal noise SD from paired counts.
///
/// eta_j is the median over positions of (tumor logit rate - normal logit
/// rate). tau by moments matches the variance of that difference against
/// tau^2 plus both binomial sampling terms; by likelihood it maximizes the
/// conditional tumor marginal, integrating the normal rate over its
/// posterior given x (quadrature nodes are tau-independent and cached per
/// position, and at most [`TAU_MLE_CAP`] positions enter the search).
pub fn estimate_eta_tau(
    m: &MatchedPileup,
    mu: &[Option<f64>],
    delta: &[f64],
    sigma: &[f64],
    method: SigmaMethod,
    genotypes: Option<&GenotypeAssignment>,
) -> Result<EtaTauFit, ModelError> {
    let normal = &m.normal;
    let tumor = &m.tumor;
    assert_eq!(mu.len(), normal.n_positions(), "one mu entry per position");
    assert_eq!(delta.len(), normal.n_samples(), "one delta entry per sample");
    assert_eq!(sigma.len(), normal.n_samples(), "one sigma entry per sample");
    let mut eta = Vec::with_capacity(normal.n_samples());
    let mut tau = Vec::with_capacity(normal.n_samples());
    let mut tau_fallback = Vec::with_capacity(normal.n_samples());
    for j in 0..normal.n_samples() {
        struct Pair {
            x: u64,
            n: u64,
            y: u64,
            m: u64,
            mu: f64,
            diff: f64,
        }
        let pairs: Vec<Pair> = (0..normal.n_positions())
            .filter_map(|i| {
                let n = normal.depth(i, j);
                let md = tumor.depth(i, j);
                if n == 0 || md == 0 {
                    return None;
                }
                let mu_ij = usable_mu(mu, genotypes, i, j)?;
                let (x, y) = (normal.x(i, j), tumor.x(i, j));
                Some(Pair {
                    x,
                    n,
                    y,
                    m: md,
                    mu: mu_ij,
                    diff: logit_rate(y, md) - logit_rate(x, n),
                })
            })
            .collect();
        if pairs.len() < MIN_POSITIONS_PER_SAMPLE {
            return Err(ModelError::TooFewPositions {
                sample: normal.sample(j).to_string(),
                got: pairs.len(),
                need: MIN_POSITIONS_PER_SAMPLE,
            });
        }
        let diffs: Vec<f64> = pairs.iter().map(|p| p.diff).collect();
        let eta_j = median(&diffs);

        let sample = normal.sample(j);
        let mle = |pairs: &[Pair]| -> Result<f64, ModelError> {
            // Thin deterministically; the likelihood is per-position i.i.d.
            // so any fixed subset is unbiased.
            let stride = pairs.len().div_ceil(TAU_MLE_CAP).max(1);
            let kept: Vec<&Pair> = pairs.iter().step_by(stride).collect();
            // Per position: tau-independent posterior nodes for the normal
            // rate, shifted by eta into tumor-rate component centers.
            let nodes: Vec<(u64, u64, Vec<(f64, f64)>)> = kept
                .iter()
                .map(|p| {
                    let prior = beta_approx(clamp_unit(inv_logit(logit(p.mu) + delta[j])), sigma[j]);
                    let pts = posterior_logit_nodes(prior, p.x, p.n)
                        .into_iter()
                        .map(|(ell, w)| (clamp_unit(inv_logit(ell + eta_j)), w.ln()))
                        .collect();
                    (p.y, p.m, pts)
                })
                .collect();
            let loglik = |t: f64| {
                let one = |(y, md, pts): &(u64, u64, Vec<(f64, f64)>)| {
                    let mut best = f64::NEG_INFINITY;
                    let terms: Vec<f64> = pts
                        .iter()
                        .map(|&(center, ln_w)| {
                            let (a, b) = beta_approx(center, t);
                            let v = ln_w + BetaBinomial::new(*md, a, b).ln_pmf(*y);
                            best = best.max(v);
                            v
                        })
                        .collect();
                    best + terms.iter().map(|v| (v - best).exp()).sum::<f64>().ln()
                };
                if nodes.len() > PAR_THRESHOLD {
                    nodes.par_iter().map(one).sum()
                } else {
                    nodes.iter().map(one).sum()
                }
            };
            let found = golden_max(SIGMA_LO, SIGMA_HI, SIGMA_TOL, loglik);
            if found > SIGMA_HI - 2.0 * SIGMA_TOL {
                return Err(ModelError::SearchNotBracketed { sample: sample.to_string() });
            }
            Ok(found)
        };

        let (tau_j, fb) = match method {
            SigmaMethod::Mle => (mle(&pairs)?, false),
            SigmaMethod::Moments => {
                let len = pairs.len() as f64;
                let mean_sq: f64 =
                    pairs.iter().map(|p| (p.diff - eta_j) * (p.diff - eta_j)).sum::<f64>() / len;
                let mean_noise: f64 = pairs
                    .iter()
                    .map(|p| {
                        let lp = logit(p.mu) + delta[j];
                        let pc = clamp_unit(inv_logit(lp));
                        let qc = clamp_unit(inv_logit(lp + eta_j));
                        1.0 / (p.n as f64 * pc * (1.0 - pc)) + 1.0 / (p.m as f64 * qc * (1.0 - qc))
                    })
                    .sum::<f64>()
                    / len;
                let v = mean_sq - mean_noise;
                if v > 0.0 {
                    (v.sqrt(), false)
                } else {
                    (mle(&pairs)?, true)
                }
            }
        };
        eta.push(eta_j);
        tau.push(tau_j);
        tau_fallback.push(fb);
    }
    Ok(EtaTauFit { eta, tau, tau_fallback })
}

/// Golden-section maximizer of a unimodal function on [lo, hi]; returns
/// the bracket midpoint once it shrinks below `tol`.
fn golden_max(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INVPHI * (hi - lo);
    let mut d = lo + INVPHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INVPHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INVPHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

//! Hierarchical beta-binomial error model for sequencing counts.
//!
//! Per position i and sample j, the nonreference count x is Binomial(N, p)
//! where logit p is normal with mean logit mu_i + delta_j and SD sigma_j:
//! mu_i is the position's baseline error rate, delta_j a sample-wide bias,
//! sigma_j the sample's excess noise. The logit-normal mixing layer is
//! approximated by a Beta with matching location and spread, so the
//! marginal null of x is beta-binomial. In matched designs the tumor rate
//! q takes a further normal step (eta_j, tau_j) from the same position's
//! normal-tissue rate, and the tumor null conditions on the observed
//! normal count. Germline variant positions are genotyped first so that
//! heterozygous and hom-alt samples do not contaminate the estimators.

mod estimate;
mod genotype;
mod nulls;

pub use estimate::{
    estimate_delta, estimate_eta_tau, estimate_mu, estimate_sigma, EtaTauFit, SigmaFit,
};
pub use genotype::{
    candidate_positions, genotype_positions, Genotype, GenotypeAssignment, GenotypeEntry,
};
pub use nulls::{
    beta_approx, matched_null, null_cdf_matched, null_cdf_unmatched, posterior_logit_nodes,
    unmatched_null, MixtureBetaBinomial,
};

use serde::{Deserialize, Serialize};

use crate::pileup::{MatchedPileup, PileupMatrix, RegionMap};

/// Pseudocount guarding x = 0 and x = N in logit transforms of raw rates.
pub const PSEUDOCOUNT: f64 = 0.5;

/// Usable positions a sample must contribute before its bias and noise
/// are estimable.
pub const MIN_POSITIONS_PER_SAMPLE: usize = 50;

/// Usable positions a (sample, region) pair must contribute to earn its
/// own noise estimate; smaller regions fall back to the pooled fit.
pub const MIN_POSITIONS_PER_REGION: usize = 30;

/// Default quantile across region-wise noise estimates.
pub const DEFAULT_REGION_QUANTILE: f64 = 0.9;

/// Default variance-inflation factor for positions whose genotype call is
/// uncertain (more than one genotype observed).
pub const DEFAULT_GENOTYPE_INFLATION: f64 = 1.5;

/// Observed rate on the logit scale with the 0.5 pseudocount, finite for
/// x = 0 and x = n.
pub fn logit_rate(x: u64, n: u64) -> f64 {
    let num = x as f64 + PSEUDOCOUNT;
    let den = (n - x) as f64 + PSEUDOCOUNT;
    (num / den).ln()
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("sample {sample}: {got} usable positions, need at least {need}")]
    TooFewPositions { sample: String, got: usize, need: usize },
    #[error("position index {index} has no estimable baseline rate")]
    UnestimablePosition { index: usize },
    #[error("region quantile {quantile} outside [0.5, 1)")]
    BadQuantile { quantile: f64 },
    #[error("sample {sample}: noise likelihood peaks at the search boundary")]
    SearchNotBracketed { sample: String },
}

/// How per-sample noise SDs are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    /// Match the empirical variance of logit rates against binomial
    /// sampling variance plus sigma^2. Fast, poor at low depth.
    Moments,
    /// Maximize the beta-binomial marginal likelihood by golden-section
    /// search over sigma.
    Mle,
}

impl std::str::FromStr for SigmaMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moments" => Ok(SigmaMethod::Moments),
            "mle" => Ok(SigmaMethod::Mle),
            other => Err(format!("unknown sigma method {other:?}; expected moments or mle")),
        }
    }
}

impl std::fmt::Display for SigmaMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SigmaMethod::Moments => "moments",
            SigmaMethod::Mle => "mle",
        })
    }
}

/// Provenance of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub sigma_method: SigmaMethod,
    pub pseudocount: f64,
    /// Quantile used to pool region-wise noise estimates, when regions
    /// were supplied.
    pub region_quantile: Option<f64>,
    /// Per sample: true when the moment estimate of sigma came out
    /// negative and the likelihood fit was used instead.
    pub moment_fallback: Vec<bool>,
    /// Run seed when the fit was part of a seeded pipeline.
    pub seed: Option<u64>,
}

/// Noise estimate for one region within one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSigma {
    pub region: u32,
    pub sigma: f64,
}

/// Fitted parameters of the single-matrix error model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelParams {
    /// Per-position baseline rate; None where no sample had coverage.
    pub mu: Vec<Option<f64>>,
    /// Per-sample bias on the logit scale.
    pub delta: Vec<f64>,
    /// Per-sample noise SD on the logit scale (region-pooled when regions
    /// were supplied).
    pub sigma: Vec<f64>,
    /// Region-wise noise estimates per sample, when regions were supplied.
    pub region_sigma: Option<Vec<Vec<RegionSigma>>>,
    pub meta: FitMeta,
}

impl ErrorModelParams {
    /// Fits mu, delta, and sigma treating every column of `m` as a mutual
    /// reference (appropriate when true signals are rare). Samples flagged
    /// non-hom-ref in `genotypes` are excluded from the estimators.
    pub fn fit(
        m: &PileupMatrix,
        method: SigmaMethod,
        regions: Option<&RegionMap>,
        quantile: f64,
        genotypes: Option<&GenotypeAssignment>,
    ) -> Result<Self, ModelError> {
        let mu = estimate_mu(m);
        let delta = estimate_delta(m, &mu, genotypes)?;
        let fit = estimate_sigma(m, &mu, &delta, method, regions, quantile, genotypes)?;
        Ok(ErrorModelParams {
            mu,
            delta,
            sigma: fit.sigma,
            region_sigma: fit.region_sigma,
            meta: FitMeta {
                sigma_method: method,
                pseudocount: PSEUDOCOUNT,
                region_quantile: regions.map(|_| quantile),
                moment_fallback: fit.moment_fallback,
                seed: None,
            },
        })
    }

    pub fn n_positions(&self) -> usize {
        self.mu.len()
    }

    pub fn n_samples(&self) -> usize {
        self.delta.len()
    }
}

/// Fitted parameters of the matched normal/tumor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedModelParams {
    /// Normal-tissue model.
    pub base: ErrorModelParams,
    /// Per-sample tumor bias on the logit scale.
    pub eta: Vec<f64>,
    /// Per-sample tumor-vs-normal noise SD on the logit scale.
    pub tau: Vec<f64>,
    /// Per sample: true when the moment estimate of tau came out negative
    /// and the likelihood fit was used instead.
    pub tau_fallback: Vec<bool>,
}

impl MatchedModelParams {
    /// Fits the normal-tissue model on `m.normal`, then the tumor bias and
    /// noise from the paired counts. Non-hom-ref cells are excluded
    /// throughout.
    pub fn fit(
        m: &MatchedPileup,
        method: SigmaMethod,
        regions: Option<&RegionMap>,
        quantile: f64,
        genotypes: Option<&GenotypeAssignment>,
    ) -> Result<Self, ModelError> {
        let base = ErrorModelParams::fit(&m.normal, method, regions, quantile, genotypes)?;
        let fit = estimate_eta_tau(m, &base.mu, &base.delta, &base.sigma, method, genotypes)?;
        Ok(MatchedModelParams {
            base,
            eta: fit.eta,
            tau: fit.tau,
            tau_fallback: fit.tau_fallback,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_rate_pseudocount_examples() {
        // x=10, N=1000: logit(10.5/1001) = ln(10.5/990.5).
        assert!((logit_rate(10, 1000) - (10.5f64 / 990.5).ln()).abs() < 1e-15);
        // Finite at both extremes.
        assert!(logit_rate(0, 100).is_finite());
        assert!(logit_rate(100, 100).is_finite());
        assert_eq!(logit_rate(0, 100), -logit_rate(100, 100));
    }

    #[test]
    fn sigma_method_round_trips_through_strings() {
        for m in [SigmaMethod::Moments, SigmaMethod::Mle] {
            let s = m.to_string();
            assert_eq!(s.parse::<SigmaMethod>().unwrap(), m);
        }
        assert!("gibbs".parse::<SigmaMethod>().is_err());
    }

    #[test]
    fn params_serialize_to_json_and_back() {
        let params = ErrorModelParams {
            mu: vec![Some(0.001), None, Some(0.02)],
            delta: vec![0.1, -0.2],
            sigma: vec![0.3, 0.25],
            region_sigma: Some(vec![
                vec![RegionSigma { region: 0, sigma: 0.28 }],
                vec![RegionSigma { region: 0, sigma: 0.22 }],
            ]),
            meta: FitMeta {
                sigma_method: SigmaMethod::Mle,
                pseudocount: PSEUDOCOUNT,
                region_quantile: Some(0.9),
                moment_fallback: vec![false, true],
                seed: Some(7),
            },
        };
        let text = serde_json::to_string(&params).unwrap();
        let back: ErrorModelParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, params);
        assert!(text.contains("\"mle\""));
    }
}

//! Empirical-Bayes mutation calling on deep sequencing count data.
//!
//! The library detects low-prevalence single-nucleotide mutations in mixed
//! samples by modeling per-position nonreference counts with a hierarchical
//! beta-binomial error model, converting each observation into a randomized
//! p-value under its discrete null, and scoring candidates with a local
//! false-discovery-rate estimate built from a log-spline marginal density.
//!
//! Modules:
//! - [`pileup`]: count matrices for unmatched and matched (normal/tumor)
//!   designs, TSV ingestion and serialization.
//! - [`statfun`]: special functions, the beta-binomial family, robust scale,
//!   and discrete-distribution distances.
//! - [`fdr`]: randomized p-values, empirical null correction, log-spline
//!   marginal density, local fdr, and the distance-identity checks for the
//!   p-value law.
//! - [`errormodel`]: estimation of positional rates, sample biases, and noise
//!   variances; null CDF construction for both designs; SNP genotyping.
//! - [`caller`]: end-to-end unmatched and matched calling pipelines.
//! - [`simgen`]: generative simulation with planted mutations and exact
//!   small-instance oracles.
//! - [`rng`]: deterministic counter-based random streams.

pub mod caller;
pub mod errormodel;
pub mod fdr;
pub mod pileup;
pub mod rng;
pub mod simgen;
pub mod statfun;

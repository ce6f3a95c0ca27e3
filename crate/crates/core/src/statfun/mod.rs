//! Numerical building blocks: gamma-family special functions, the normal
//! CDF and its inverse, the beta-binomial distribution, robust location and
//! scale, finite discrete distributions with KL and Kolmogorov distances,
//! Gauss-Legendre rules, and a Kolmogorov-Smirnov test statistic.
//!
//! Everything here is implemented in-crate so that results are reproducible
//! bit for bit across platforms and library versions.

mod betabinom;
mod discrete;
mod ks;
mod quad;
mod robust;
mod special;

pub use betabinom::BetaBinomial;
pub use discrete::{poisson_cdf, poisson_ln_pmf, DiscreteDist};
pub use ks::{ks_critical, ks_statistic_uniform};
pub use quad::gauss_legendre;
pub use robust::{median, quantile, sn_scale, sn_scale_naive};
pub use special::{
    digamma, erf, erfc, inv_logit, log_beta, log_choose, log_gamma, log_inv_logit, logit,
    normal_cdf, normal_pdf, probit, tetragamma, trigamma,
};

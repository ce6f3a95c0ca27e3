//! Discrete-null randomized p-values and local false discovery rates.
//!
//! An observation x with discrete null CDF F occupies the probability
//! interval [F(x-), F(x)]. Drawing r uniformly inside that interval gives a
//! p-value whose law is exactly uniform when F is the true law of x; the
//! mid-p variant takes the interval midpoint instead. Downstream, the
//! empirical null recenters and rescales r on the probit scale, and the
//! local fdr of an observation is the reciprocal of the estimated marginal
//! density averaged over its (corrected) interval.

mod spline;
mod theorem;

pub use spline::MarginalDensity;
pub use theorem::{verify_theorem, PvalueLawDistances, TheoremReport};

use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::statfun::{median, normal_cdf, probit, sn_scale, BetaBinomial};

/// Schema version written into serialized model documents.
pub const FORMAT_VERSION: u32 = 1;

/// p-values below this are clamped before probit transforms.
pub const PROBIT_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum FdrError {
    #[error("too few values: got {got}, need at least {need}")]
    TooFewValues { got: usize, need: usize },
    #[error("all values are identical; scale is not estimable")]
    DegenerateValues,
    #[error("spline degrees of freedom {df} outside supported range {lo}..={hi}")]
    DfOutOfRange { df: usize, lo: usize, hi: usize },
    #[error("density fit did not converge within {iters} iterations")]
    NonConvergence { iters: usize },
    #[error("{what} lengths differ: {a} vs {b}")]
    LengthMismatch { what: &'static str, a: usize, b: usize },
    #[error("empty table")]
    EmptyTable,
    #[error("table line {line}: {msg}")]
    BadTable { line: usize, msg: String },
}

/// Discrete null distribution interface: cumulative probabilities at and
/// strictly below an observed count.
pub trait NullCdf {
    /// P(X <= x).
    fn cdf(&self, x: u64) -> f64;
    /// P(X < x).
    fn left_cdf(&self, x: u64) -> f64;
    /// P(X > x); override when 1 - cdf would lose tail precision.
    fn survival(&self, x: u64) -> f64 {
        1.0 - self.cdf(x)
    }
    /// P(X = x); override when cdf - left_cdf would cancel in a tail.
    fn pmf(&self, x: u64) -> f64 {
        (self.cdf(x) - self.left_cdf(x)).max(0.0)
    }
    /// The p-value interval [P(X < x), P(X <= x)].
    fn interval(&self, x: u64) -> (f64, f64) {
        (self.left_cdf(x), self.cdf(x))
    }
}

impl NullCdf for BetaBinomial {
    fn cdf(&self, x: u64) -> f64 {
        BetaBinomial::cdf(self, x)
    }
    fn left_cdf(&self, x: u64) -> f64 {
        BetaBinomial::left_cdf(self, x)
    }
    fn survival(&self, x: u64) -> f64 {
        BetaBinomial::survival(self, x)
    }
    fn pmf(&self, x: u64) -> f64 {
        BetaBinomial::pmf(self, x)
    }
}

impl NullCdf for crate::statfun::DiscreteDist {
    fn cdf(&self, x: u64) -> f64 {
        crate::statfun::DiscreteDist::cdf(self, x as i64)
    }
    fn left_cdf(&self, x: u64) -> f64 {
        crate::statfun::DiscreteDist::left_cdf(self, x as i64)
    }
    fn survival(&self, x: u64) -> f64 {
        crate::statfun::DiscreteDist::survival(self, x as i64)
    }
    fn pmf(&self, x: u64) -> f64 {
        crate::statfun::DiscreteDist::pmf(self, x as i64)
    }
}

/// How the p-value is placed inside its null interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PvalueMode {
    /// Uniform draw inside [F(x-), F(x)]; exactly uniform under the null.
    #[default]
    Randomized,
    /// Interval midpoint; deterministic, slightly conservative.
    MidP,
}

impl std::str::FromStr for PvalueMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "randomized" => Ok(PvalueMode::Randomized),
            "mid_p" => Ok(PvalueMode::MidP),
            other => Err(format!("unknown p-value mode {other:?} (use randomized or mid_p)")),
        }
    }
}

impl std::fmt::Display for PvalueMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PvalueMode::Randomized => write!(f, "randomized"),
            PvalueMode::MidP => write!(f, "mid_p"),
        }
    }
}

/// Stream domain tag for p-value randomization.
const PVALUE_DOMAIN: u64 = 0x7076616c; // "pval"

/// The uniform placement variable for one observation's interval.
///
/// Keyed by (seed, stream index), so a fixed observation keeps its draw no
/// matter which other observations are present or in what order they are
/// evaluated.
pub fn pvalue_placement(seed: u64, index: u64, mode: PvalueMode) -> f64 {
    match mode {
        PvalueMode::MidP => 0.5,
        PvalueMode::Randomized => Stream::new(seed, &[PVALUE_DOMAIN, index]).next_f64(),
    }
}

/// Randomized (or mid-) p-values from precomputed null intervals.
///
/// `intervals[i]` is [F(x_i-), F(x_i)] for observation i; interval index
/// doubles as the randomization stream index.
pub fn randomized_pvalues_from_intervals(
    intervals: &[(f64, f64)],
    mode: PvalueMode,
    seed: u64,
) -> Vec<f64> {
    intervals
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            debug_assert!(lo <= hi + 1e-12, "interval endpoints out of order");
            let u = pvalue_placement(seed, i as u64, mode);
            lo + u * (hi - lo)
        })
        .collect()
}

/// Randomized p-values for counts under per-observation nulls.
pub fn randomized_pvalues<N: NullCdf>(
    x: &[u64],
    nulls: &[N],
    mode: PvalueMode,
    seed: u64,
) -> Result<Vec<f64>, FdrError> {
    if x.len() != nulls.len() {
        return Err(FdrError::LengthMismatch { what: "x/nulls", a: x.len(), b: nulls.len() });
    }
    let intervals: Vec<(f64, f64)> =
        x.iter().zip(nulls).map(|(&xi, n)| n.interval(xi)).collect();
    Ok(randomized_pvalues_from_intervals(&intervals, mode, seed))
}

/// Probit transform with clamping away from 0 and 1.
pub fn clamped_probit(p: f64) -> f64 {
    probit(p.clamp(PROBIT_CLAMP, 1.0 - PROBIT_CLAMP))
}

/// Location-scale correction of the theoretical null, fit on the probit
/// scale with robust statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNull {
    /// Median of probit(r).
    pub location: f64,
    /// Sn scale of probit(r).
    pub scale: f64,
}

impl EmpiricalNull {
    /// Fits location and scale from p-values, requiring at least
    /// `min_values` of them.
    pub fn fit_with_floor(r: &[f64], min_values: usize) -> Result<Self, FdrError> {
        if r.len() < min_values {
            return Err(FdrError::TooFewValues { got: r.len(), need: min_values });
        }
        let z: Vec<f64> = r.iter().map(|&p| clamped_probit(p)).collect();
        let location = median(&z);
        let scale = sn_scale(&z);
        if scale <= 0.0 {
            return Err(FdrError::DegenerateValues);
        }
        Ok(EmpiricalNull { location, scale })
    }

    /// Fits with the default floor of 100 values.
    pub fn fit(r: &[f64]) -> Result<Self, FdrError> {
        Self::fit_with_floor(r, 100)
    }

    /// Maps a raw p-value to its corrected version
    /// H(p) = Phi((probit(p) - location) / scale).
    pub fn correct(&self, p: f64) -> f64 {
        normal_cdf(self.standardize(clamped_probit(p)))
    }

    /// The corrected z-score (z - location) / scale, for callers that
    /// already hold a probit-scale value and need to stay on that scale.
    pub fn standardize(&self, z: f64) -> f64 {
        (z - self.location) / self.scale
    }
}

/// One scored observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrRow {
    /// Caller-chosen identifier (position:sample for pipeline output).
    pub id: String,
    /// Raw p-value.
    pub r: f64,
    /// Empirical-null corrected p-value (equal to r when no correction).
    pub r_tilde: f64,
    /// Corrected interval endpoints.
    pub interval_lo: f64,
    pub interval_hi: f64,
    /// Marginal density at the interval midpoint.
    pub f_marg: f64,
    /// Local fdr estimate, clipped to [0, 1].
    pub fdr: f64,
}

/// Scored observations plus CSV (de)serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FdrTable {
    pub rows: Vec<FdrRow>,
}

impl FdrTable {
    const HEADER: &'static str = "id,r,r_tilde,interval_lo,interval_hi,f_marg,fdr";

    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.id, row.r, row.r_tilde, row.interval_lo, row.interval_hi, row.f_marg, row.fdr
            )?;
        }
        Ok(())
    }

    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self, FdrError> {
        use std::io::BufRead;
        let reader = std::io::BufReader::new(r);
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| FdrError::BadTable { line: idx + 1, msg: e.to_string() })?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != Self::HEADER {
                    return Err(FdrError::BadTable {
                        line: idx + 1,
                        msg: format!("expected header {:?}", Self::HEADER),
                    });
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(FdrError::BadTable {
                    line: idx + 1,
                    msg: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let num = |k: usize| -> Result<f64, FdrError> {
                fields[k].parse::<f64>().map_err(|_| FdrError::BadTable {
                    line: idx + 1,
                    msg: format!("cannot parse {:?} as a number", fields[k]),
                })
            };
            rows.push(FdrRow {
                id: fields[0].to_string(),
                r: num(1)?,
                r_tilde: num(2)?,
                interval_lo: num(3)?,
                interval_hi: num(4)?,
                f_marg: num(5)?,
                fdr: num(6)?,
            });
        }
        if rows.is_empty() {
            return Err(FdrError::EmptyTable);
        }
        Ok(FdrTable { rows })
    }
}

/// Local fdr from a corrected interval and a marginal density: the
/// reciprocal of the density at the interval midpoint, clipped to [0, 1].
///
/// The interval width cancels between the null mass and the marginal mass,
/// so the midpoint formula stays valid even when the probit clamp collapses
/// an extreme observation's interval to a point. Only a zero (or non-finite)
/// marginal density leaves the ratio undefined; that case is conservatively
/// reported as fdr 1.
pub fn fdr_from_interval(lo: f64, hi: f64, marginal: &MarginalDensity) -> (f64, f64) {
    debug_assert!(lo <= hi + 1e-12);
    let mid = 0.5 * (lo + hi);
    let f = marginal.density(mid);
    let fdr = if f.is_finite() && f > 0.0 { (1.0 / f).min(1.0) } else { 1.0 };
    (f, fdr)
}

/// Scores observations under per-observation nulls: draws p-values, applies
/// an optional empirical-null correction, and evaluates local fdr against
/// the marginal density.
pub fn local_fdr<N: NullCdf>(
    x: &[u64],
    nulls: &[N],
    enull: Option<&EmpiricalNull>,
    marginal: &MarginalDensity,
    mode: PvalueMode,
    seed: u64,
) -> Result<FdrTable, FdrError> {
    if x.len() != nulls.len() {
        return Err(FdrError::LengthMismatch { what: "x/nulls", a: x.len(), b: nulls.len() });
    }
    let rows = x
        .iter()
        .zip(nulls)
        .enumerate()
        .map(|(i, (&xi, null))| {
            let (lo, hi) = null.interval(xi);
            let u = pvalue_placement(seed, i as u64, mode);
            let r = lo + u * (hi - lo);
            let (r_tilde, clo, chi) = match enull {
                Some(h) => (h.correct(r), h.correct(lo), h.correct(hi)),
                None => (r, lo, hi),
            };
            let (f_marg, fdr) = fdr_from_interval(clo, chi, marginal);
            FdrRow {
                id: i.to_string(),
                r,
                r_tilde,
                interval_lo: clo,
                interval_hi: chi,
                f_marg,
                fdr,
            }
        })
        .collect();
    Ok(FdrTable { rows })
}

/// Serialized form of the fitted fdr machinery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdrModelDoc {
    pub format_version: u32,
    pub empirical_null: Option<EmpiricalNull>,
    pub marginal: Option<MarginalDensity>,
}

impl FdrModelDoc {
    pub fn new(enull: Option<EmpiricalNull>, marginal: Option<MarginalDensity>) -> Self {
        FdrModelDoc { format_version: FORMAT_VERSION, empirical_null: enull, marginal }
    }
}

/// Histogram and QQ summaries of a scored table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Counts of r over equal bins on [0, 1].
    pub r_hist: Vec<u64>,
    /// Counts of r_tilde over the same bins.
    pub r_tilde_hist: Vec<u64>,
    /// (expected, observed) probit-scale quantile pairs for r_tilde.
    pub qq: Vec<(f64, f64)>,
}

/// Builds diagnostics with `bins` histogram bins (50 in the pipeline).
/// Errors on an empty table.
pub fn diagnostics(table: &FdrTable, bins: usize) -> Result<Diagnostics, FdrError> {
    if table.rows.is_empty() {
        return Err(FdrError::EmptyTable);
    }
    assert!(bins >= 2, "need at least 2 histogram bins");
    let mut r_hist = vec![0u64; bins];
    let mut rt_hist = vec![0u64; bins];
    for row in &table.rows {
        let bin = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
        r_hist[bin(row.r.clamp(0.0, 1.0))] += 1;
        rt_hist[bin(row.r_tilde.clamp(0.0, 1.0))] += 1;
    }
    let mut z: Vec<f64> = table.rows.iter().map(|row| clamped_probit(row.r_tilde)).collect();
    z.sort_unstable_by(f64::total_cmp);
    let n = z.len();
    let qq = z
        .iter()
        .enumerate()
        .map(|(k, &obs)| (probit((k as f64 + 0.5) / n as f64), obs))
        .collect();
    Ok(Diagnostics { r_hist, r_tilde_hist: rt_hist, qq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statfun::{ks_critical, ks_statistic_uniform, BetaBinomial, DiscreteDist};
    use proptest::prelude::*;

    #[test]
    fn randomized_pvalues_uniform_under_true_null() {
        // Observations drawn from their own nulls give exactly uniform r.
        let seed = 91;
        let mut xs = Vec::new();
        let mut nulls = Vec::new();
        for i in 0..20_000u64 {
            let mut s = crate::rng::Stream::new(seed, &[1, i]);
            let d = BetaBinomial::new(500 + (i % 7) * 100, 2.0 + (i % 5) as f64, 300.0);
            xs.push(d.quantile(s.next_f64()));
            nulls.push(d);
        }
        let r = randomized_pvalues(&xs, &nulls, PvalueMode::Randomized, seed + 1).unwrap();
        let d = ks_statistic_uniform(&r);
        assert!(d < ks_critical(r.len(), 0.01), "ks = {d}");
    }

    #[test]
    fn mid_p_is_interval_midpoint() {
        let null = DiscreteDist::binomial(10, 0.4);
        let r = randomized_pvalues(&[4], &[null.clone()], PvalueMode::MidP, 0).unwrap();
        let expect = 0.5 * (NullCdf::left_cdf(&null, 4) + NullCdf::cdf(&null, 4));
        assert!((r[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn mid_p_is_mean_of_randomized_over_seeds() {
        let null = BetaBinomial::new(60, 1.5, 40.0);
        let x = [7u64, 0, 33];
        let mid = randomized_pvalues(&x, &[null, null, null], PvalueMode::MidP, 0).unwrap();
        let mut sums = [0.0f64; 3];
        let reps = 10_000u64;
        for seed in 0..reps {
            let r =
                randomized_pvalues(&x, &[null, null, null], PvalueMode::Randomized, seed).unwrap();
            for (acc, v) in sums.iter_mut().zip(&r) {
                *acc += v;
            }
        }
        for (i, &m) in mid.iter().enumerate() {
            let avg = sums[i] / reps as f64;
            assert!((avg - m).abs() < 0.003, "obs {i}: avg {avg} vs mid {m}");
        }
    }

    #[test]
    fn placement_is_stable_per_index() {
        // The draw for index 5 does not depend on other indices existing.
        let a = pvalue_placement(9, 5, PvalueMode::Randomized);
        let b = pvalue_placement(9, 5, PvalueMode::Randomized);
        assert_eq!(a, b);
        assert_ne!(a, pvalue_placement(9, 6, PvalueMode::Randomized));
        assert_ne!(a, pvalue_placement(10, 5, PvalueMode::Randomized));
    }

    #[test]
    fn empirical_null_recovers_location_scale() {
        let mut s = crate::rng::Stream::new(17, &[3]);
        let r: Vec<f64> = (0..50_000)
            .map(|_| normal_cdf(0.3 + 0.8 * s.next_normal()))
            .collect();
        let h = EmpiricalNull::fit(&r).unwrap();
        assert!((h.location - 0.3).abs() < 0.02, "location {}", h.location);
        assert!((h.scale - 0.8).abs() < 0.03, "scale {}", h.scale);
        // Corrected values are uniform again.
        let corrected: Vec<f64> = r.iter().map(|&p| h.correct(p)).collect();
        let d = ks_statistic_uniform(&corrected);
        assert!(d < 2.0 * ks_critical(corrected.len(), 0.01), "ks = {d}");
    }

    #[test]
    fn empirical_null_error_conditions() {
        let few = vec![0.5; 10];
        assert!(matches!(
            EmpiricalNull::fit(&few),
            Err(FdrError::TooFewValues { got: 10, need: 100 })
        ));
        let identical = vec![0.25; 500];
        assert!(matches!(EmpiricalNull::fit(&identical), Err(FdrError::DegenerateValues)));
        let varied: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
        assert!(EmpiricalNull::fit_with_floor(&varied, 5).is_ok());
    }

    #[test]
    fn identity_empirical_null_is_noop() {
        let h = EmpiricalNull { location: 0.0, scale: 1.0 };
        for &p in &[1e-9, 0.01, 0.5, 0.9999] {
            assert!((h.correct(p) - p).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn zero_width_interval_still_scores_at_its_midpoint() {
        // The clamp can collapse an extreme observation's interval to a
        // point; the width cancels in the fdr ratio, so the score must
        // come from the density there, not a hardcoded 1.
        let marg = MarginalDensity::fit_binned(
            &(0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect::<Vec<_>>(),
            4,
            30,
        )
        .unwrap();
        let (f, fdr) = fdr_from_interval(0.3, 0.3, &marg);
        let (fw, fdrw) = fdr_from_interval(0.3 - 1e-6, 0.3 + 1e-6, &marg);
        assert!((f - fw).abs() < 1e-6);
        assert!((fdr - fdrw).abs() < 1e-6);
        assert!((fdr - 1.0).abs() < 0.15, "uniform data should give fdr near 1: {fdr}");
    }

    #[test]
    fn table_csv_round_trip() {
        let table = FdrTable {
            rows: vec![
                FdrRow {
                    id: "c1:7:s1".into(),
                    r: 0.25,
                    r_tilde: 0.26,
                    interval_lo: 0.2,
                    interval_hi: 0.3,
                    f_marg: 1.1,
                    fdr: 0.909,
                },
                FdrRow {
                    id: "c1:8:s1".into(),
                    r: 1e-9,
                    r_tilde: 2e-9,
                    interval_lo: 0.0,
                    interval_hi: 4e-9,
                    f_marg: 250.0,
                    fdr: 0.004,
                },
            ],
        };
        let mut buf = Vec::new();
        table.to_csv(&mut buf).unwrap();
        let loaded = FdrTable::from_csv(&buf[..]).unwrap();
        assert_eq!(table, loaded);
        // Comment lines are skipped.
        let mut with_comment = b"# fingerprint=abc\n".to_vec();
        with_comment.extend_from_slice(&buf);
        assert_eq!(FdrTable::from_csv(&with_comment[..]).unwrap(), table);
    }

    #[test]
    fn diagnostics_requires_rows() {
        let empty = FdrTable::default();
        assert!(matches!(diagnostics(&empty, 50), Err(FdrError::EmptyTable)));
    }

    #[test]
    fn diagnostics_qq_slope_reflects_underdispersion() {
        // r built from probit-normal(0, 0.8^2): QQ points line up on a
        // slope-0.8 line through the origin.
        let mut s = crate::rng::Stream::new(4, &[44]);
        let rows: Vec<FdrRow> = (0..20_000)
            .map(|i| {
                let r = normal_cdf(0.8 * s.next_normal());
                FdrRow {
                    id: i.to_string(),
                    r,
                    r_tilde: r,
                    interval_lo: r,
                    interval_hi: r,
                    f_marg: 1.0,
                    fdr: 1.0,
                }
            })
            .collect();
        let diag = diagnostics(&FdrTable { rows }, 50).unwrap();
        // Least-squares slope through the origin over the central half.
        let inner: Vec<&(f64, f64)> = diag
            .qq
            .iter()
            .filter(|(e, _)| e.abs() < 1.0)
            .collect();
        let num: f64 = inner.iter().map(|(e, o)| e * o).sum();
        let den: f64 = inner.iter().map(|(e, _)| e * e).sum();
        let slope = num / den;
        assert!((slope - 0.8).abs() < 0.03, "slope = {slope}");
        assert_eq!(diag.r_hist.iter().sum::<u64>(), 20_000);
    }

    proptest! {
        #[test]
        fn randomized_pvalue_lies_in_its_interval(
            n in 1u64..200,
            alpha in 0.1f64..20.0,
            beta in 0.1f64..20.0,
            seed in 0u64..1000,
            frac in 0.0f64..1.0,
        ) {
            let d = BetaBinomial::new(n, alpha, beta);
            let x = (frac * n as f64).round() as u64;
            let (lo, hi) = NullCdf::interval(&d, x);
            prop_assert!(lo <= hi);
            let r = randomized_pvalues(&[x], &[d], PvalueMode::Randomized, seed).unwrap();
            prop_assert!(r[0] >= lo - 1e-12 && r[0] <= hi + 1e-12);
        }
    }
}

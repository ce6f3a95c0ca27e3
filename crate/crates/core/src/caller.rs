//! End-to-end calling pipelines for both designs.
//!
//! Unmatched (pooled reference vs clinical samples): the error model is
//! fitted with baselines from the reference matrix and per-sample bias and
//! noise from the clinical matrix, each clinical count gets an upper-tail
//! randomized p-value under its beta-binomial null (only rates above the
//! baseline are candidate mutations), and calls are made at a local-fdr
//! threshold.
//!
//! Matched (normal/tumor pairs): the tumor count is scored against its
//! conditional null given the paired normal observation, p-values are
//! two-sided (a mutation can raise or lower the rate, as in loss of
//! heterozygosity), an empirical null is fitted per sample by default, and
//! a call additionally requires the shrunken effect estimate
//! delta_hat = (1 - fdr) * (y/M - x/N) to clear a threshold.
//!
//! Every (position, sample) cell yields a [`CallRecord`] whether or not it
//! was called, so output can be re-thresholded without recomputation. Cells
//! that cannot be scored (no coverage, no baseline, sample too sparse to
//! fit) are retained with reason codes and no fdr.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::errormodel::{
    candidate_positions, estimate_delta, estimate_mu, estimate_sigma, genotype_positions,
    logit_rate, matched_null, unmatched_null, ErrorModelParams, GenotypeAssignment,
    MatchedModelParams, ModelError, SigmaMethod, DEFAULT_GENOTYPE_INFLATION,
    DEFAULT_REGION_QUANTILE, MIN_POSITIONS_PER_SAMPLE, PSEUDOCOUNT,
};
use crate::fdr::{
    clamped_probit, fdr_from_interval, pvalue_placement, Diagnostics, EmpiricalNull, FdrError,
    FdrRow, FdrTable, MarginalDensity, PvalueMode,
};
use crate::pileup::{MatchedPileup, PileupMatrix, RegionMap};
use crate::statfun::normal_cdf;

/// Histogram bins used by pipeline diagnostics.
pub const DIAGNOSTIC_BINS: usize = 50;

/// Spline degrees of freedom for the marginal density fit.
pub const DEFAULT_MARGINAL_DF: usize = 7;

/// Cells needed before a per-sample empirical null is fitted; sparser
/// samples keep their theoretical null.
pub const EMPIRICAL_NULL_MIN_CELLS: usize = 100;

/// Above this many scored cells, null construction runs in parallel.
const PAR_THRESHOLD: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum CallerError {
    #[error("invalid {name}: {value} (must be {requirement})")]
    BadConfig { name: &'static str, value: f64, requirement: &'static str },
    #[error("reference and clinical matrices disagree at position index {index}")]
    PositionMismatch { index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fdr(#[from] FdrError),
}

/// Whether to recenter/rescale p-values with an empirical null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmpiricalNullMode {
    On,
    Off,
    /// Design default: off for unmatched calling, on (per sample) for
    /// matched calling.
    #[default]
    Auto,
}

impl std::str::FromStr for EmpiricalNullMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" => Ok(EmpiricalNullMode::On),
            "off" => Ok(EmpiricalNullMode::Off),
            "auto" => Ok(EmpiricalNullMode::Auto),
            other => Err(format!("unknown empirical-null mode {other:?} (use on, off, or auto)")),
        }
    }
}

impl std::fmt::Display for EmpiricalNullMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmpiricalNullMode::On => write!(f, "on"),
            EmpiricalNullMode::Off => write!(f, "off"),
            EmpiricalNullMode::Auto => write!(f, "auto"),
        }
    }
}

/// Pipeline settings. All fields have working defaults; `validate` runs at
/// the top of every pipeline call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Call when fdr <= this.
    pub fdr_threshold: f64,
    /// Matched designs also require |delta_hat| >= this.
    pub delta_threshold: f64,
    pub mode: PvalueMode,
    /// Seed for the p-value randomization streams.
    pub seed: u64,
    /// Spline degrees of freedom for the marginal density.
    pub df: usize,
    pub empirical_null: EmpiricalNullMode,
    /// Quantile pooling level for region-wise noise estimates.
    pub region_quantile: f64,
    pub sigma_method: SigmaMethod,
    /// Noise inflation at positions with uncertain genotype calls.
    pub genotype_inflation: f64,
    /// Use delta_hat = fdr * (y/M - x/N) instead of the default
    /// (1 - fdr) * (y/M - x/N). The default weights the rate difference by
    /// the posterior probability of a real difference; this switch exists
    /// for comparison against outputs that used the other convention.
    pub literal_delta_formula: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fdr_threshold: 0.1,
            delta_threshold: 0.25,
            mode: PvalueMode::Randomized,
            seed: 0,
            df: DEFAULT_MARGINAL_DF,
            empirical_null: EmpiricalNullMode::Auto,
            region_quantile: DEFAULT_REGION_QUANTILE,
            sigma_method: SigmaMethod::Moments,
            genotype_inflation: DEFAULT_GENOTYPE_INFLATION,
            literal_delta_formula: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CallerError> {
        let bad = |name, value, requirement| Err(CallerError::BadConfig { name, value, requirement });
        if !(0.0 < self.fdr_threshold && self.fdr_threshold <= 1.0) {
            return bad("fdr_threshold", self.fdr_threshold, "in (0, 1]");
        }
        if !(0.0 < self.delta_threshold && self.delta_threshold <= 1.0) {
            return bad("delta_threshold", self.delta_threshold, "in (0, 1]");
        }
        if !(3..=15).contains(&self.df) {
            return bad("df", self.df as f64, "in [3, 15]");
        }
        if !(0.5..1.0).contains(&self.region_quantile) {
            return bad("region_quantile", self.region_quantile, "in [0.5, 1)");
        }
        if !(self.genotype_inflation >= 1.0) || !self.genotype_inflation.is_finite() {
            return bad("genotype_inflation", self.genotype_inflation, "finite and >= 1");
        }
        Ok(())
    }

    /// Short digest of the full configuration, stamped into output headers
    /// so files can be traced back to their settings.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Why a record was not called (empty for calls).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// fdr above the calling threshold.
    FdrAboveThreshold,
    /// |delta_hat| below the effect threshold (matched only).
    SmallEffect,
    /// No normal-sample coverage, so the rate difference is undefined
    /// (matched only; the fdr itself uses the prior fallback null).
    EffectUndefined,
    /// The scored sample has no reads at this position.
    NoCoverage,
    /// No reference sample covered this position, so there is no baseline.
    NoBaseline,
    /// Too few covered positions in this sample to fit its bias and noise.
    SampleNotFitted,
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Reason::FdrAboveThreshold => "fdr_above_threshold",
            Reason::SmallEffect => "small_effect",
            Reason::EffectUndefined => "effect_undefined",
            Reason::NoCoverage => "no_coverage",
            Reason::NoBaseline => "no_baseline",
            Reason::SampleNotFitted => "sample_not_fitted",
        };
        f.write_str(s)
    }
}

/// Decision and evidence for one (position, sample) cell.
///
/// Unmatched records put the scored clinical observation in `x`/`n` and its
/// rate in `rate_normal`; `y`, `m`, `rate_tumor`, and `delta_hat` stay NA.
/// Matched records carry the normal pair in `x`/`n` and the tumor pair in
/// `y`/`m`. Cells that could not be scored have no `r`/`fdr` and a reason
/// code saying why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub contig: String,
    pub pos: u64,
    pub sample: String,
    pub x: u64,
    pub n: u64,
    pub y: Option<u64>,
    pub m: Option<u64>,
    pub rate_normal: Option<f64>,
    pub rate_tumor: Option<f64>,
    /// Raw randomized p-value (upper-tail for unmatched, lower-tail for
    /// matched before folding).
    pub r: Option<f64>,
    /// The p-value actually scored: empirical-null corrected, and folded
    /// two-sided for matched designs.
    pub r_tilde: Option<f64>,
    pub fdr: Option<f64>,
    /// Shrunken effect (1 - fdr) * (y/M - x/N); matched designs only.
    pub delta_hat: Option<f64>,
    pub called: bool,
    pub reasons: Vec<Reason>,
}

/// Parameters the pipeline fitted, restricted to the samples it could fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum FittedModel {
    Unmatched { samples: Vec<String>, params: ErrorModelParams },
    Matched { samples: Vec<String>, params: MatchedModelParams, genotypes: GenotypeAssignment },
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct CallOutput {
    /// One record per (position, sample) cell, position-major.
    pub records: Vec<CallRecord>,
    /// Scored cells only, id = "contig:pos:sample".
    pub table: FdrTable,
    /// None when no cell could be scored.
    pub diagnostics: Option<Diagnostics>,
    /// None when no sample had enough data to fit.
    pub model: Option<FittedModel>,
    /// Per scored sample; None where the correction was off or the sample
    /// had too few cells.
    pub empirical_nulls: Vec<Option<EmpiricalNull>>,
    pub marginal: Option<MarginalDensity>,
}

impl CallOutput {
    pub fn n_called(&self) -> usize {
        self.records.iter().filter(|r| r.called).count()
    }

    pub fn called(&self) -> impl Iterator<Item = &CallRecord> {
        self.records.iter().filter(|r| r.called)
    }
}

/// Column header of the call CSV.
pub const CALL_CSV_HEADER: &str =
    "contig,pos,sample,x,n,y,m,rate_normal,rate_tumor,r,r_tilde,fdr,delta_hat,called,reasons";

/// Writes records as CSV with a header comment carrying the config
/// fingerprint and seed. NA marks undefined fields; reason codes are
/// semicolon-separated.
pub fn records_to_csv<W: Write>(
    records: &[CallRecord],
    cfg: &PipelineConfig,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "# config {} seed {}", cfg.fingerprint(), cfg.seed)?;
    writeln!(w, "{CALL_CSV_HEADER}")?;
    let fm = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let iu = |v: Option<u64>| v.map_or("NA".to_string(), |x| x.to_string());
    for rec in records {
        let reasons =
            rec.reasons.iter().map(Reason::to_string).collect::<Vec<_>>().join(";");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.contig,
            rec.pos,
            rec.sample,
            rec.x,
            rec.n,
            iu(rec.y),
            iu(rec.m),
            fm(rec.rate_normal),
            fm(rec.rate_tumor),
            fm(rec.r),
            fm(rec.r_tilde),
            fm(rec.fdr),
            fm(rec.delta_hat),
            rec.called,
            reasons
        )?;
    }
    Ok(())
}

/// A cell that passed the usability gates, before p-value evaluation.
struct Cell {
    i: usize,
    j: usize,
    flat: u64,
}

/// (interval_lo, interval_hi, r) for one scored cell.
type Draw = (f64, f64, f64);

fn map_cells<T: Send, F: Fn(&Cell) -> T + Sync>(cells: &[Cell], f: F) -> Vec<T> {
    if cells.len() >= PAR_THRESHOLD {
        use rayon::prelude::*;
        cells.par_iter().map(|c| f(c)).collect()
    } else {
        cells.iter().map(f).collect()
    }
}

/// Per-sample empirical nulls fitted on raw p-values; samples with fewer
/// than [`EMPIRICAL_NULL_MIN_CELLS`] scored cells keep the theoretical
/// null.
fn fit_empirical_nulls(
    n_samples: usize,
    cells: &[Cell],
    raw: &[f64],
    enabled: bool,
) -> Vec<Option<EmpiricalNull>> {
    if !enabled {
        return vec![None; n_samples];
    }
    let mut by_sample: Vec<Vec<f64>> = vec![Vec::new(); n_samples];
    for (c, &r) in cells.iter().zip(raw) {
        by_sample[c.j].push(r);
    }
    by_sample
        .into_iter()
        .map(|rs| EmpiricalNull::fit_with_floor(&rs, EMPIRICAL_NULL_MIN_CELLS).ok())
        .collect()
}

/// Checked on every run: the decision invariant ties `called` to the
/// thresholds, and unscored cells are never called.
fn assert_decisions(records: &[CallRecord], cfg: &PipelineConfig, matched: bool) {
    for rec in records {
        let expected = match rec.fdr {
            Some(fdr) => {
                let effect_ok =
                    !matched || rec.delta_hat.is_some_and(|d| d.abs() >= cfg.delta_threshold);
                fdr <= cfg.fdr_threshold && effect_ok
            }
            None => false,
        };
        assert_eq!(
            rec.called, expected,
            "decision invariant violated at {}:{} sample {}",
            rec.contig, rec.pos, rec.sample
        );
        assert!(
            rec.fdr.is_some() || !rec.reasons.is_empty(),
            "unscored cell must carry a reason code"
        );
    }
}

/// Scatters a fit over the fittable column subset back to full-width
/// per-sample vectors.
fn scatter<T: Copy>(full_len: usize, idx: &[usize], values: &[T]) -> Vec<Option<T>> {
    let mut out = vec![None; full_len];
    for (&j, &v) in idx.iter().zip(values) {
        out[j] = Some(v);
    }
    out
}

/// Unmatched calling: baselines from `reference`, bias and noise per
/// clinical sample, upper-tail p-values, local fdr.
///
/// The two matrices must cover the same positions. An optional region map
/// pools noise estimates per (sample, region).
pub fn call_unmatched(
    reference: &PileupMatrix,
    clinical: &PileupMatrix,
    regions: Option<&RegionMap>,
    cfg: &PipelineConfig,
) -> Result<CallOutput, CallerError> {
    cfg.validate()?;
    if reference.positions() != clinical.positions() {
        let index = reference
            .positions()
            .iter()
            .zip(clinical.positions())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| reference.n_positions().min(clinical.n_positions()));
        return Err(CallerError::PositionMismatch { index });
    }
    let (p_count, s_count) = (clinical.n_positions(), clinical.n_samples());
    let mu = estimate_mu(reference);

    // Bias and noise are only estimable for samples with enough covered
    // positions; the rest are retained unscored.
    let fittable: Vec<usize> = (0..s_count)
        .filter(|&j| {
            (0..p_count).filter(|&i| clinical.depth(i, j) > 0 && mu[i].is_some()).count()
                >= MIN_POSITIONS_PER_SAMPLE
        })
        .collect();
    let (delta, sigma, model) = if fittable.is_empty() {
        (vec![None; s_count], vec![None; s_count], None)
    } else {
        let sub = clinical.select_samples(&fittable);
        let d = estimate_delta(&sub, &mu, None)?;
        let fit = estimate_sigma(
            &sub,
            &mu,
            &d,
            cfg.sigma_method,
            regions,
            cfg.region_quantile,
            None,
        )?;
        let params = ErrorModelParams {
            mu: mu.clone(),
            delta: d.clone(),
            sigma: fit.sigma.clone(),
            region_sigma: fit.region_sigma,
            meta: crate::errormodel::FitMeta {
                sigma_method: cfg.sigma_method,
                pseudocount: PSEUDOCOUNT,
                region_quantile: regions.map(|_| cfg.region_quantile),
                moment_fallback: fit.moment_fallback,
                seed: Some(cfg.seed),
            },
        };
        let model = FittedModel::Unmatched {
            samples: sub.samples().to_vec(),
            params,
        };
        (
            scatter(s_count, &fittable, &d),
            scatter(s_count, &fittable, &fit.sigma),
            Some(model),
        )
    };

    // Gate cells, keeping a reason for each one dropped.
    let mut flags: Vec<Option<Reason>> = vec![None; p_count * s_count];
    let mut cells = Vec::new();
    for i in 0..p_count {
        for j in 0..s_count {
            let flat = i * s_count + j;
            flags[flat] = if clinical.depth(i, j) == 0 {
                Some(Reason::NoCoverage)
            } else if mu[i].is_none() {
                Some(Reason::NoBaseline)
            } else if delta[j].is_none() {
                Some(Reason::SampleNotFitted)
            } else {
                cells.push(Cell { i, j, flat: flat as u64 });
                None
            };
        }
    }

    // Upper-tail randomized p-values: r in [S(x), S(x - 1)] is exactly
    // uniform under the null and keeps deep-tail precision that 1 - F(x)
    // would lose.
    let draws = map_cells(&cells, |c| {
        let null = unmatched_null(
            mu[c.i].unwrap(),
            delta[c.j].unwrap(),
            sigma[c.j].unwrap(),
            clinical.depth(c.i, c.j),
        );
        let x = clinical.x(c.i, c.j);
        let lo = null.survival(x);
        let hi = if x == 0 { 1.0 } else { null.survival(x - 1) };
        let u = pvalue_placement(cfg.seed, c.flat, cfg.mode);
        (lo, hi, lo + u * (hi - lo))
    });

    let enabled = cfg.empirical_null == EmpiricalNullMode::On; // Auto: off
    let raw: Vec<f64> = draws.iter().map(|&(_, _, r)| r).collect();
    let enulls = fit_empirical_nulls(s_count, &cells, &raw, enabled);
    let corrected: Vec<Draw> = cells
        .iter()
        .zip(&draws)
        .map(|(c, &(lo, hi, r))| match &enulls[c.j] {
            Some(h) => (h.correct(lo), h.correct(hi), h.correct(r)),
            None => (lo, hi, r),
        })
        .collect();

    let marginal = if corrected.is_empty() {
        None
    } else {
        let values: Vec<f64> = corrected.iter().map(|&(_, _, r)| r).collect();
        Some(MarginalDensity::fit(&values, cfg.df)?)
    };

    // Score, then assemble records in cell order.
    let mut rows = Vec::with_capacity(cells.len());
    let mut scored: Vec<Option<(f64, f64, f64)>> = vec![None; p_count * s_count];
    for (c, (&(lo, hi, r_tilde), &(_, _, r))) in
        cells.iter().zip(corrected.iter().zip(&draws))
    {
        let (f_marg, fdr) = fdr_from_interval(lo, hi, marginal.as_ref().unwrap());
        let pos = clinical.position(c.i);
        rows.push(FdrRow {
            id: format!("{}:{}:{}", pos.contig, pos.pos, clinical.sample(c.j)),
            r,
            r_tilde,
            interval_lo: lo,
            interval_hi: hi,
            f_marg,
            fdr,
        });
        scored[c.flat as usize] = Some((r, r_tilde, fdr));
    }

    let mut records = Vec::with_capacity(p_count * s_count);
    for i in 0..p_count {
        for j in 0..s_count {
            let flat = i * s_count + j;
            let pos = clinical.position(i);
            let (r, r_tilde, fdr, called, reasons) = match scored[flat] {
                Some((r, rt, fdr)) => {
                    let called = fdr <= cfg.fdr_threshold;
                    let reasons =
                        if called { Vec::new() } else { vec![Reason::FdrAboveThreshold] };
                    (Some(r), Some(rt), Some(fdr), called, reasons)
                }
                None => (None, None, None, false, vec![flags[flat].unwrap()]),
            };
            records.push(CallRecord {
                contig: pos.contig.clone(),
                pos: pos.pos,
                sample: clinical.sample(j).to_string(),
                x: clinical.x(i, j),
                n: clinical.depth(i, j),
                y: None,
                m: None,
                rate_normal: clinical.observed_rate(i, j),
                rate_tumor: None,
                r,
                r_tilde,
                fdr,
                delta_hat: None,
                called,
                reasons,
            });
        }
    }
    assert_decisions(&records, cfg, false);

    let table = FdrTable { rows };
    let diagnostics = if table.rows.is_empty() {
        None
    } else {
        Some(crate::fdr::diagnostics(&table, DIAGNOSTIC_BINS)?)
    };
    Ok(CallOutput { records, table, diagnostics, model, empirical_nulls: enulls, marginal })
}

/// Probit of a probability given both of its tails, evaluated from
/// whichever side is small. `lower + upper = 1` in exact arithmetic; for
/// an observation deep in the right tail `lower` rounds to 1 while `upper`
/// still carries the magnitude, and vice versa.
fn signed_probit(lower: f64, upper: f64) -> f64 {
    if lower <= upper {
        clamped_probit(lower)
    } else {
        -clamped_probit(upper)
    }
}

/// Folds a probit-scale p-value interval [z0, z1] and draw z into the
/// two-sided scale t = 2 Phi(-|z|). t is decreasing in |z|, so the folded
/// interval takes its endpoints from the interval ends, except that an
/// interval straddling 0 reaches t = 1 inside.
fn fold_two_sided_z(z0: f64, z1: f64, z: f64) -> Draw {
    debug_assert!(z0 <= z1 + 1e-9);
    let t = 2.0 * normal_cdf(-z.abs());
    let t0 = 2.0 * normal_cdf(-z0.abs());
    let t1 = 2.0 * normal_cdf(-z1.abs());
    if z1 <= 0.0 {
        (t0, t1, t)
    } else if z0 >= 0.0 {
        (t1, t0, t)
    } else {
        (t0.min(t1), 1.0, t)
    }
}

/// Matched calling: conditional tumor nulls given the paired normal
/// observation, genotype-aware baselines, two-sided p-values, per-sample
/// empirical null, and the shrunken-effect filter.
pub fn call_matched(
    data: &MatchedPileup,
    regions: Option<&RegionMap>,
    cfg: &PipelineConfig,
) -> Result<CallOutput, CallerError> {
    cfg.validate()?;
    let normal = &data.normal;
    let tumor = &data.tumor;
    let (p_count, s_count) = (normal.n_positions(), normal.n_samples());

    let mu = estimate_mu(normal);
    let candidates = candidate_positions(normal);
    let geno = genotype_positions(normal, &mu, &candidates, cfg.genotype_inflation);

    // A sample is fittable when enough hom-ref cells are covered in the
    // normal (for delta/sigma) and covered in both matrices (for eta/tau).
    let fittable: Vec<usize> = (0..s_count)
        .filter(|&j| {
            let usable =
                |i: usize| mu[i].is_some() && geno.is_hom_ref(i, j);
            let n_normal =
                (0..p_count).filter(|&i| normal.depth(i, j) > 0 && usable(i)).count();
            let n_pairs = (0..p_count)
                .filter(|&i| normal.depth(i, j) > 0 && tumor.depth(i, j) > 0 && usable(i))
                .count();
            n_normal >= MIN_POSITIONS_PER_SAMPLE && n_pairs >= MIN_POSITIONS_PER_SAMPLE
        })
        .collect();

    let (delta, sigma, eta, tau, model) = if fittable.is_empty() {
        let none = vec![None; s_count];
        (none.clone(), none.clone(), none.clone(), none, None)
    } else {
        let (params, samples) = if fittable.len() == s_count {
            let params = MatchedModelParams::fit(
                data,
                cfg.sigma_method,
                regions,
                cfg.region_quantile,
                Some(&geno),
            )?;
            (params, normal.samples().to_vec())
        } else {
            let sub = MatchedPileup::new(
                normal.select_samples(&fittable),
                tumor.select_samples(&fittable),
            )
            .expect("column subsets stay paired");
            let sub_geno = geno.select_samples(&fittable);
            let params = MatchedModelParams::fit(
                &sub,
                cfg.sigma_method,
                regions,
                cfg.region_quantile,
                Some(&sub_geno),
            )?;
            let samples = sub.normal.samples().to_vec();
            (params, samples)
        };
        let scattered = (
            scatter(s_count, &fittable, &params.base.delta),
            scatter(s_count, &fittable, &params.base.sigma),
            scatter(s_count, &fittable, &params.eta),
            scatter(s_count, &fittable, &params.tau),
        );
        let model = FittedModel::Matched { samples, params, genotypes: geno.clone() };
        (scattered.0, scattered.1, scattered.2, scattered.3, Some(model))
    };

    let mut flags: Vec<Option<Reason>> = vec![None; p_count * s_count];
    let mut cells = Vec::new();
    for i in 0..p_count {
        for j in 0..s_count {
            let flat = i * s_count + j;
            let baseline = geno.effective_mu(i, j).or(mu[i]);
            flags[flat] = if tumor.depth(i, j) == 0 {
                Some(Reason::NoCoverage)
            } else if baseline.is_none() {
                Some(Reason::NoBaseline)
            } else if delta[j].is_none() {
                Some(Reason::SampleNotFitted)
            } else {
                cells.push(Cell { i, j, flat: flat as u64 });
                None
            };
        }
    }

    // Both tail probabilities and the point mass, each computed on its own
    // side so neither tail is lost to rounding against 1.
    let draws = map_cells(&cells, |c| {
        let baseline = geno.effective_mu(c.i, c.j).or(mu[c.i]).unwrap();
        let null = matched_null(
            baseline,
            delta[c.j].unwrap(),
            sigma[c.j].unwrap() * geno.sigma_factor(c.i),
            eta[c.j].unwrap(),
            tau[c.j].unwrap(),
            normal.x(c.i, c.j),
            normal.depth(c.i, c.j),
            tumor.depth(c.i, c.j),
        );
        let y = tumor.x(c.i, c.j);
        (null.left_cdf(y), null.survival(y), null.pmf(y))
    });
    let raw: Vec<f64> = cells
        .iter()
        .zip(&draws)
        .map(|(c, &(pl, _, pmf))| {
            let u = pvalue_placement(cfg.seed, c.flat, cfg.mode);
            pl + u * pmf
        })
        .collect();

    let enabled = cfg.empirical_null != EmpiricalNullMode::Off; // Auto: on
    let enulls = fit_empirical_nulls(s_count, &cells, &raw, enabled);
    // Signed probits of the draw and the interval ends, corrected on the z
    // scale, then folded two-sided.
    let folded: Vec<Draw> = cells
        .iter()
        .zip(draws.iter().zip(&raw))
        .map(|(c, (&(pl, pu, pmf), &r))| {
            let u = pvalue_placement(cfg.seed, c.flat, cfg.mode);
            let z = signed_probit(r, pu + (1.0 - u) * pmf);
            let z0 = signed_probit(pl, pu + pmf);
            let z1 = signed_probit(pl + pmf, pu);
            let (z, z0, z1) = match &enulls[c.j] {
                Some(h) => (h.standardize(z), h.standardize(z0), h.standardize(z1)),
                None => (z, z0, z1),
            };
            fold_two_sided_z(z0, z1, z)
        })
        .collect();

    let marginal = if folded.is_empty() {
        None
    } else {
        let values: Vec<f64> = folded.iter().map(|&(_, _, t)| t).collect();
        Some(MarginalDensity::fit(&values, cfg.df)?)
    };

    let mut rows = Vec::with_capacity(cells.len());
    let mut scored: Vec<Option<(f64, f64, f64)>> = vec![None; p_count * s_count];
    for (c, (&(lo, hi, t), &r)) in cells.iter().zip(folded.iter().zip(&raw)) {
        let (f_marg, fdr) = fdr_from_interval(lo, hi, marginal.as_ref().unwrap());
        let pos = normal.position(c.i);
        rows.push(FdrRow {
            id: format!("{}:{}:{}", pos.contig, pos.pos, normal.sample(c.j)),
            r,
            r_tilde: t,
            interval_lo: lo,
            interval_hi: hi,
            f_marg,
            fdr,
        });
        scored[c.flat as usize] = Some((r, t, fdr));
    }

    let mut records = Vec::with_capacity(p_count * s_count);
    for i in 0..p_count {
        for j in 0..s_count {
            let flat = i * s_count + j;
            let pos = normal.position(i);
            let rate_normal = normal.observed_rate(i, j);
            let rate_tumor = tumor.observed_rate(i, j);
            let (r, r_tilde, fdr, delta_hat, called, reasons) = match scored[flat] {
                Some((r, t, fdr)) => {
                    let weight =
                        if cfg.literal_delta_formula { fdr } else { 1.0 - fdr };
                    let delta_hat = match (rate_tumor, rate_normal) {
                        (Some(rt), Some(rn)) => Some(weight * (rt - rn)),
                        _ => None,
                    };
                    let effect_ok =
                        delta_hat.is_some_and(|d| d.abs() >= cfg.delta_threshold);
                    let called = fdr <= cfg.fdr_threshold && effect_ok;
                    let mut reasons = Vec::new();
                    if !called {
                        if fdr > cfg.fdr_threshold {
                            reasons.push(Reason::FdrAboveThreshold);
                        }
                        match delta_hat {
                            None => reasons.push(Reason::EffectUndefined),
                            Some(d) if d.abs() < cfg.delta_threshold => {
                                reasons.push(Reason::SmallEffect)
                            }
                            Some(_) => {}
                        }
                    }
                    (Some(r), Some(t), Some(fdr), delta_hat, called, reasons)
                }
                None => (None, None, None, None, false, vec![flags[flat].unwrap()]),
            };
            records.push(CallRecord {
                contig: pos.contig.clone(),
                pos: pos.pos,
                sample: normal.sample(j).to_string(),
                x: normal.x(i, j),
                n: normal.depth(i, j),
                y: Some(tumor.x(i, j)),
                m: Some(tumor.depth(i, j)),
                rate_normal,
                rate_tumor,
                r,
                r_tilde,
                fdr,
                delta_hat,
                called,
                reasons,
            });
        }
    }
    assert_decisions(&records, cfg, true);

    let table = FdrTable { rows };
    let diagnostics = if table.rows.is_empty() {
        None
    } else {
        Some(crate::fdr::diagnostics(&table, DIAGNOSTIC_BINS)?)
    };
    Ok(CallOutput { records, table, diagnostics, model, empirical_nulls: enulls, marginal })
}

// Keep the logit helper reachable for doc references in this module.
#[allow(unused_imports)]
use logit_rate as _logit_rate_for_docs;

//! Generative simulation under the hierarchical error model, plus
//! small-instance brute-force oracles used by tests.
//!
//! A scenario draws, per position i and sample j:
//!
//! ```text
//!   mu_i        log-uniform over a rate range
//!   logit p_ij  ~ Normal(logit mu_i + delta_j, sigma_j^2)
//!   x_ij        ~ Binomial(N_ij, rate)
//! ```
//!
//! where rate = p for null cells and pi + (1 - pi) * p for a planted
//! mutation at prevalence pi (the mutant base adds its reads on top of the
//! error process). Matched scenarios add the tumor layer
//! logit q = logit p + eta_j + tau_j * z and y ~ Binomial(M, rate_q), with
//! planted mutations entering the tumor rate only.
//!
//! Every draw comes from a counter stream keyed by (domain, position,
//! sample), so generation is deterministic per seed, parallel-safe, and a
//! planted mutation perturbs no draws outside its own cells.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::pileup::{GenomePos, MatchedPileup, PileupMatrix};
use crate::rng::Stream;
use crate::statfun::{inv_logit, logit, DiscreteDist};

/// Contig name used for all simulated positions.
pub const SIM_CONTIG: &str = "sim";

/// Largest support accepted by the exact fdr oracle.
pub const ORACLE_MAX_SUPPORT: usize = 200;

const BASES: [u8; 4] = [b'A', b'C', b'G', b'T'];

// Stream domain tags (ASCII), one per draw kind.
const DOM_MU: u64 = 0x6d75; // "mu"
const DOM_DEPTH: u64 = 0x4e; // "N"
const DOM_P: u64 = 0x70; // "p"
const DOM_X: u64 = 0x78; // "x"
const DOM_TUMOR_DEPTH: u64 = 0x4d; // "M"
const DOM_Q: u64 = 0x71; // "q"
const DOM_Y: u64 = 0x79; // "y"

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("prior null weight {0} is outside [0, 1]")]
    BadWeight(f64),
    #[error("oracle support has {got} points (limit {limit})")]
    SupportTooLarge { got: usize, limit: usize },
    #[error("truth table line {line}: {msg}")]
    MalformedTruth { line: usize, msg: String },
}

/// How per-cell sequencing depths are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthLaw {
    /// Every cell gets the same depth (0 permitted, for no-coverage cases).
    Constant { n: u64 },
    /// log N ~ Uniform(log lo, log hi); lo >= 1.
    LogUniform { lo: f64, hi: f64 },
    /// Empirical quantile table: (level, depth) knots from level 0 to 1,
    /// interpolated linearly in log depth.
    Quantiles { knots: Vec<(f64, f64)> },
}

impl DepthLaw {
    fn validate(&self) -> Result<(), SimError> {
        match self {
            DepthLaw::Constant { .. } => Ok(()),
            DepthLaw::LogUniform { lo, hi } => {
                if !(1.0 <= *lo && *lo <= *hi && hi.is_finite()) {
                    return Err(SimError::BadScenario(format!(
                        "log-uniform depth range [{lo}, {hi}] needs 1 <= lo <= hi"
                    )));
                }
                Ok(())
            }
            DepthLaw::Quantiles { knots } => {
                if knots.len() < 2 || knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
                    return Err(SimError::BadScenario(
                        "quantile depth table must run from level 0 to level 1".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if !(w[0].0 < w[1].0) || !(w[0].1 <= w[1].1) {
                        return Err(SimError::BadScenario(
                            "quantile depth table needs increasing levels and nondecreasing \
                             depths"
                                .into(),
                        ));
                    }
                }
                if knots.iter().any(|&(_, d)| !(d >= 1.0) || !d.is_finite()) {
                    return Err(SimError::BadScenario(
                        "quantile depth table depths must be finite and >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Depth at quantile level u in [0, 1).
    fn sample(&self, u: f64) -> u64 {
        match self {
            DepthLaw::Constant { n } => *n,
            DepthLaw::LogUniform { lo, hi } => log_lerp(*lo, *hi, u).round() as u64,
            DepthLaw::Quantiles { knots } => {
                let k = knots
                    .windows(2)
                    .position(|w| u <= w[1].0)
                    .unwrap_or(knots.len() - 2);
                let (l0, d0) = knots[k];
                let (l1, d1) = knots[k + 1];
                let t = (u - l0) / (l1 - l0);
                log_lerp(d0, d1, t).round() as u64
            }
        }
    }
}

/// Geometric interpolation between lo and hi.
fn log_lerp(lo: f64, hi: f64, t: f64) -> f64 {
    (lo.ln() + t * (hi.ln() - lo.ln())).exp()
}

/// One planted mutation: a position carrying mutant reads at `prevalence`
/// in each listed sample (in the tumor for matched designs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub position: usize,
    pub samples: Vec<usize>,
    pub prevalence: f64,
}

/// Tumor layer of a matched scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedLayer {
    /// Per-sample tumor bias on the logit scale.
    pub eta: Vec<f64>,
    /// Per-sample tumor-vs-normal noise SD on the logit scale.
    pub tau: Vec<f64>,
    /// Depth law for tumor cells; the normal law when absent.
    pub tumor_depth: Option<DepthLaw>,
    /// Control mode: the tumor matrix is a byte-for-byte copy of the normal
    /// one (no q layer, no planted mutations admitted).
    #[serde(default)]
    pub duplicate_normal: bool,
}

/// Full description of one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub positions: usize,
    pub samples: usize,
    pub depth: DepthLaw,
    /// mu_i ~ log-uniform over this range.
    pub mu_range: (f64, f64),
    /// Overrides `mu_range` at positions carrying a planted mutation.
    #[serde(default)]
    pub planted_mu_range: Option<(f64, f64)>,
    /// Per-sample logit bias.
    pub delta: Vec<f64>,
    /// Per-sample logit noise SD.
    pub sigma: Vec<f64>,
    /// Present for matched (normal/tumor) designs.
    #[serde(default)]
    pub matched: Option<MatchedLayer>,
    #[serde(default)]
    pub planted: Vec<Planted>,
    pub seed: u64,
}

impl SimScenario {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::BadScenario(msg));
        if self.positions == 0 || self.samples == 0 {
            return bad("need at least one position and one sample".into());
        }
        if self.delta.len() != self.samples || self.sigma.len() != self.samples {
            return bad(format!(
                "delta and sigma must have one entry per sample ({})",
                self.samples
            ));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("sigma entries must be finite and >= 0".into());
        }
        for range in std::iter::once(self.mu_range).chain(self.planted_mu_range) {
            let (lo, hi) = range;
            if !(0.0 < lo && lo <= hi && hi < 1.0) {
                return bad(format!("rate range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"));
            }
        }
        self.depth.validate()?;
        if let Some(m) = &self.matched {
            if m.eta.len() != self.samples || m.tau.len() != self.samples {
                return bad("eta and tau must have one entry per sample".into());
            }
            if m.tau.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return bad("tau entries must be finite and >= 0".into());
            }
            if let Some(law) = &m.tumor_depth {
                law.validate()?;
            }
            if m.duplicate_normal && !self.planted.is_empty() {
                return bad("a duplicate-normal control admits no planted mutations".into());
            }
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.planted {
            if p.position >= self.positions {
                return bad(format!("planted position {} out of range", p.position));
            }
            if p.samples.is_empty() {
                return bad("planted mutation lists no samples".into());
            }
            if !(0.0 < p.prevalence && p.prevalence <= 1.0) {
                return bad(format!("prevalence {} outside (0, 1]", p.prevalence));
            }
            for &j in &p.samples {
                if j >= self.samples {
                    return bad(format!("planted sample {j} out of range"));
                }
                if !seen.insert((p.position, j)) {
                    return bad(format!(
                        "cell (position {}, sample {j}) planted twice",
                        p.position
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Locations and prevalences of the planted mutations; all other cells are
/// null by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub contig: String,
    pub pos: u64,
    pub sample: String,
    pub prevalence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub rows: Vec<TruthRow>,
}

impl TruthTable {
    pub const HEADER: &'static str = "contig,pos,sample,prevalence";

    pub fn contains(&self, contig: &str, pos: u64, sample: &str) -> bool {
        self.rows
            .iter()
            .any(|r| r.contig == contig && r.pos == pos && r.sample == sample)
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.contig, r.pos, r.sample, r.prevalence)?;
        }
        Ok(())
    }

    pub fn from_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rows = Vec::new();
        for (idx, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| SimError::MalformedTruth {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() || line.starts_with('#') || line == Self::HEADER {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let malformed = |msg: &str| SimError::MalformedTruth {
                line: idx + 1,
                msg: msg.to_string(),
            };
            if f.len() != 4 {
                return Err(malformed("expected 4 fields"));
            }
            rows.push(TruthRow {
                contig: f[0].to_string(),
                pos: f[1].parse().map_err(|_| malformed("bad pos"))?,
                sample: f[2].to_string(),
                prevalence: f[3].parse().map_err(|_| malformed("bad prevalence"))?,
            });
        }
        Ok(TruthTable { rows })
    }
}

/// Result of a simulation: one matrix for unmatched designs, a pair for
/// matched ones.
#[derive(Debug, Clone, PartialEq)]
pub enum SimOutput {
    Unmatched(PileupMatrix),
    Matched(MatchedPileup),
}

impl SimOutput {
    /// Panics if the scenario was matched.
    pub fn unwrap_unmatched(self) -> PileupMatrix {
        match self {
            SimOutput::Unmatched(m) => m,
            SimOutput::Matched(_) => panic!("expected an unmatched simulation"),
        }
    }

    /// Panics if the scenario was unmatched.
    pub fn unwrap_matched(self) -> MatchedPileup {
        match self {
            SimOutput::Matched(m) => m,
            SimOutput::Unmatched(_) => panic!("expected a matched simulation"),
        }
    }
}

/// Draws one data set. Deterministic per seed; the truth table depends only
/// on the scenario, never on the draws.
pub fn simulate(sc: &SimScenario) -> Result<(SimOutput, TruthTable), SimError> {
    sc.validate()?;
    let (p_count, s_count, seed) = (sc.positions, sc.samples, sc.seed);

    let positions: Vec<GenomePos> = (0..p_count)
        .map(|i| GenomePos { contig: SIM_CONTIG.to_string(), pos: i as u64 + 1 })
        .collect();
    let reference_base: Vec<u8> = (0..p_count).map(|i| BASES[i % 4]).collect();
    let samples: Vec<String> = (0..s_count).map(|j| format!("s{j}")).collect();

    let mut planted: HashMap<(usize, usize), f64> = HashMap::new();
    let mut truth = TruthTable::default();
    for pl in &sc.planted {
        for &j in &pl.samples {
            planted.insert((pl.position, j), pl.prevalence);
            truth.rows.push(TruthRow {
                contig: SIM_CONTIG.to_string(),
                pos: pl.position as u64 + 1,
                sample: samples[j].clone(),
                prevalence: pl.prevalence,
            });
        }
    }
    truth.rows.sort_by(|a, b| (a.pos, &a.sample).cmp(&(b.pos, &b.sample)));

    // Baseline rate per position; planted positions may use their own range.
    let mu: Vec<f64> = (0..p_count)
        .map(|i| {
            let on_plant = sc.planted.iter().any(|pl| pl.position == i);
            let (lo, hi) = match (on_plant, sc.planted_mu_range) {
                (true, Some(range)) => range,
                _ => sc.mu_range,
            };
            log_lerp(lo, hi, Stream::new(seed, &[DOM_MU, i as u64]).next_f64())
        })
        .collect();

    let cells = p_count * s_count;
    let mut xs = vec![0u64; cells];
    let mut ns = vec![0u64; cells];
    let mut logit_p = vec![0.0f64; cells];
    for i in 0..p_count {
        for j in 0..s_count {
            let (iu, ju) = (i as u64, j as u64);
            let n = sc
                .depth
                .sample(Stream::new(seed, &[DOM_DEPTH, iu, ju]).next_f64());
            let z = Stream::new(seed, &[DOM_P, iu, ju]).next_normal();
            let lp = logit(mu[i]) + sc.delta[j] + sc.sigma[j] * z;
            let p_err = inv_logit(lp);
            let rate = match (sc.matched.is_some(), planted.get(&(i, j))) {
                // Unmatched: the mutation sits in the sequenced sample itself.
                (false, Some(&pi)) => pi + (1.0 - pi) * p_err,
                _ => p_err,
            };
            let cell = i * s_count + j;
            logit_p[cell] = lp;
            ns[cell] = n;
            xs[cell] = Stream::new(seed, &[DOM_X, iu, ju]).next_binomial(n, rate.min(1.0));
        }
    }
    let normal = PileupMatrix::new(
        positions,
        reference_base,
        samples,
        xs,
        ns.clone(),
    )
    .expect("generated matrix is structurally valid");

    let Some(layer) = &sc.matched else {
        return Ok((SimOutput::Unmatched(normal), truth));
    };

    if layer.duplicate_normal {
        let pair = MatchedPileup::new(normal.clone(), normal).expect("identical matrices pair");
        return Ok((SimOutput::Matched(pair), truth));
    }

    let tumor_law = layer.tumor_depth.as_ref().unwrap_or(&sc.depth);
    let mut ys = vec![0u64; cells];
    let mut ms = vec![0u64; cells];
    for i in 0..p_count {
        for j in 0..s_count {
            let (iu, ju) = (i as u64, j as u64);
            let m = tumor_law.sample(Stream::new(seed, &[DOM_TUMOR_DEPTH, iu, ju]).next_f64());
            let z = Stream::new(seed, &[DOM_Q, iu, ju]).next_normal();
            let q_err = inv_logit(logit_p[i * s_count + j] + layer.eta[j] + layer.tau[j] * z);
            let rate = match planted.get(&(i, j)) {
                Some(&pi) => pi + (1.0 - pi) * q_err,
                None => q_err,
            };
            let cell = i * s_count + j;
            ms[cell] = m;
            ys[cell] = Stream::new(seed, &[DOM_Y, iu, ju]).next_binomial(m, rate.min(1.0));
        }
    }
    let tumor = PileupMatrix::new(
        normal.positions().to_vec(),
        (0..p_count).map(|i| normal.reference_base(i)).collect(),
        normal.samples().to_vec(),
        ys,
        ms,
    )
    .expect("generated matrix is structurally valid");
    let pair = MatchedPileup::new(normal, tumor).expect("matrices share positions and samples");
    Ok((SimOutput::Matched(pair), truth))
}

/// Exact local fdr over a finite support by direct enumeration:
/// fdr(x) = w P_F(x) / (w P_F(x) + (1 - w) P_A(x)). Support points with zero
/// probability under both laws get None (fdr undefined there).
pub fn exact_fdr_oracle(
    null: &DiscreteDist,
    alt: &DiscreteDist,
    w: f64,
    support: &[i64],
) -> Result<Vec<Option<f64>>, SimError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(SimError::BadWeight(w));
    }
    if support.len() > ORACLE_MAX_SUPPORT {
        return Err(SimError::SupportTooLarge {
            got: support.len(),
            limit: ORACLE_MAX_SUPPORT,
        });
    }
    Ok(support
        .iter()
        .map(|&x| {
            let num = w * null.pmf(x);
            let denom = num + (1.0 - w) * alt.pmf(x);
            if denom > 0.0 {
                Some(num / denom)
            } else {
                None
            }
        })
        .collect())
}

/// Deep-sequenced viral amplicon: 281 positions, three reference and three
/// clinical samples (columns 0-2 and 3-5), depths log-uniform around 7.75e5,
/// and 14 evenly spaced mutations planted in every clinical sample at
/// prevalence 0.001.
pub fn virus_scenario(seed: u64) -> SimScenario {
    let planted = (0..14)
        .map(|k| Planted {
            position: k * 281 / 14,
            samples: VIRUS_CLINICAL_SAMPLES.to_vec(),
            prevalence: 1e-3,
        })
        .collect();
    SimScenario {
        positions: 281,
        samples: 6,
        depth: DepthLaw::LogUniform { lo: 3.9e5, hi: 1.55e6 },
        mu_range: (5e-5, 5e-4),
        planted_mu_range: Some((2e-5, 2e-4)),
        delta: vec![0.0; 6],
        sigma: vec![0.3; 6],
        matched: None,
        planted,
        seed,
    }
}

/// Column indices of the virus preset's reference samples.
pub const VIRUS_REFERENCE_SAMPLES: &[usize] = &[0, 1, 2];
/// Column indices of the virus preset's clinical samples.
pub const VIRUS_CLINICAL_SAMPLES: &[usize] = &[3, 4, 5];

/// Matched exome-like pair: shallow, wildly uneven depths (median 171,
/// five orders of magnitude), two samples, 20 mutations planted in sample 0
/// at prevalence 0.3.
pub fn tumor_small_scenario(seed: u64) -> SimScenario {
    let planted = (0..20)
        .map(|k| Planted { position: k * 4000 / 20, samples: vec![0], prevalence: 0.3 })
        .collect();
    SimScenario {
        positions: 4000,
        samples: 2,
        depth: DepthLaw::Quantiles {
            knots: vec![
                (0.0, 4.0),
                (0.25, 60.0),
                (0.5, 171.0),
                (0.75, 600.0),
                (0.9, 6000.0),
                (1.0, 4e5),
            ],
        },
        mu_range: (2e-3, 2e-2),
        planted_mu_range: None,
        delta: vec![0.0; 2],
        sigma: vec![0.25; 2],
        matched: Some(MatchedLayer {
            eta: vec![0.05, -0.05],
            tau: vec![0.15; 2],
            tumor_depth: None,
            duplicate_normal: false,
        }),
        planted,
        seed,
    }
}

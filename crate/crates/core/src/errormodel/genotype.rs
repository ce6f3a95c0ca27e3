//! Germline-variant handling: fixed-center mixture genotyping.
//!
//! A heterozygous sample shows a nonreference rate near 0.5 and a hom-alt
//! sample near 1; both would wreck the error estimators if treated as
//! sequencing noise. Candidate positions are genotyped against the three
//! component centers {mu, 0.5, 1 - mu} with binomial sampling inside each
//! component, samples are hard-assigned by maximum posterior, and the
//! baseline rate is re-estimated per genotype. Positions showing more
//! than one genotype carry a variance-inflation flag for their nulls.

use serde::{Deserialize, Serialize};

use crate::pileup::PileupMatrix;
use crate::statfun::{inv_logit, median};

use super::logit_rate;

/// Depth below which an observed rate says nothing about genotype.
const CANDIDATE_MIN_DEPTH: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Genotype {
    HomRef,
    Het,
    HomAlt,
}

/// Genotype calls and per-genotype baselines for one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeEntry {
    /// Row index in the source matrix.
    pub position: usize,
    /// Per-sample call; None where the sample has no coverage.
    pub genotypes: Vec<Option<Genotype>>,
    /// Baseline rate per genotype, indexed by [`Genotype`] order;
    /// re-estimated from assigned samples when at least two carry the
    /// genotype, otherwise the component center.
    pub mu_by_genotype: [f64; 3],
    /// More than one genotype observed: genotyping could be wrong, so
    /// nulls at this position get inflated noise.
    pub inflated: bool,
}

/// Genotype calls for all candidate positions of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeAssignment {
    entries: Vec<GenotypeEntry>,
    inflation: f64,
}

impl GenotypeAssignment {
    pub fn new(entries: Vec<GenotypeEntry>, inflation: f64) -> Self {
        assert!(inflation >= 1.0, "inflation factor below 1 would reward bad calls");
        assert!(
            entries.windows(2).all(|w| w[0].position < w[1].position),
            "entries must be sorted by position and unique"
        );
        GenotypeAssignment { entries, inflation }
    }

    pub fn entries(&self) -> &[GenotypeEntry] {
        &self.entries
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    fn entry(&self, i: usize) -> Option<&GenotypeEntry> {
        self.entries
            .binary_search_by_key(&i, |e| e.position)
            .ok()
            .map(|idx| &self.entries[idx])
    }

    /// False only when sample j is called Het or HomAlt at position i;
    /// positions without an entry are hom-ref by default.
    pub fn is_hom_ref(&self, i: usize, j: usize) -> bool {
        match self.entry(i) {
            Some(e) => !matches!(e.genotypes[j], Some(Genotype::Het) | Some(Genotype::HomAlt)),
            None => true,
        }
    }

    /// Genotype-specific baseline for cell (i, j); None when the pooled
    /// baseline applies (no entry or no call).
    pub fn effective_mu(&self, i: usize, j: usize) -> Option<f64> {
        let e = self.entry(i)?;
        let g = e.genotypes[j]?;
        Some(e.mu_by_genotype[g as usize])
    }

    /// Noise multiplier for position i's nulls.
    pub fn sigma_factor(&self, i: usize) -> f64 {
        match self.entry(i) {
            Some(e) if e.inflated => self.inflation,
            _ => 1.0,
        }
    }

    /// Assignment restricted to the sample columns in `keep`, for fitting
    /// on a column subset of the source matrix. Per-position baselines and
    /// inflation flags keep their full-data values.
    pub fn select_samples(&self, keep: &[usize]) -> GenotypeAssignment {
        let entries = self
            .entries
            .iter()
            .map(|e| GenotypeEntry {
                position: e.position,
                genotypes: keep.iter().map(|&j| e.genotypes[j]).collect(),
                mu_by_genotype: e.mu_by_genotype,
                inflated: e.inflated,
            })
            .collect();
        GenotypeAssignment { entries, inflation: self.inflation }
    }
}

/// Positions worth genotyping: any sample at depth >= 20 with an observed
/// rate in [0.2, 0.8] (heterozygous territory) or >= 0.95 (hom-alt).
pub fn candidate_positions(m: &PileupMatrix) -> Vec<usize> {
    (0..m.n_positions())
        .filter(|&i| {
            (0..m.n_samples()).any(|j| {
                if m.depth(i, j) < CANDIDATE_MIN_DEPTH {
                    return false;
                }
                let rate = m.x(i, j) as f64 / m.depth(i, j) as f64;
                (0.2..=0.8).contains(&rate) || rate >= 0.95
            })
        })
        .collect()
}

/// Genotypes the candidate positions of `m` against centers derived from
/// the pooled baselines `mu`. Candidates without a baseline are skipped.
pub fn genotype_positions(
    m: &PileupMatrix,
    mu: &[Option<f64>],
    candidates: &[usize],
    inflation: f64,
) -> GenotypeAssignment {
    assert_eq!(mu.len(), m.n_positions(), "one mu entry per position");
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut entries = Vec::new();
    for &i in &sorted {
        let Some(mu_i) = mu[i] else { continue };
        let centers = [mu_i, 0.5, 1.0 - mu_i];
        let mut genotypes = Vec::with_capacity(m.n_samples());
        for j in 0..m.n_samples() {
            let n = m.depth(i, j);
            if n == 0 {
                genotypes.push(None);
                continue;
            }
            let x = m.x(i, j) as f64;
            let rest = (n - m.x(i, j)) as f64;
            // Equal priors and a shared binomial coefficient: the argmax
            // over log-likelihoods is the maximum-posterior call.
            let mut best = Genotype::HomRef;
            let mut best_ll = f64::NEG_INFINITY;
            for (g, &c) in [Genotype::HomRef, Genotype::Het, Genotype::HomAlt]
                .iter()
                .zip(&centers)
            {
                let ll = x * c.ln() + rest * (1.0 - c).ln();
                if ll > best_ll {
                    best_ll = ll;
                    best = *g;
                }
            }
            genotypes.push(Some(best));
        }
        let mut mu_by_genotype = centers;
        let mut seen = [0usize; 3];
        for g in 0..3usize {
            let rates: Vec<f64> = (0..m.n_samples())
                .filter(|&j| genotypes[j] == Some([Genotype::HomRef, Genotype::Het, Genotype::HomAlt][g]))
                .map(|j| logit_rate(m.x(i, j), m.depth(i, j)))
                .collect();
            seen[g] = rates.len();
            if rates.len() >= 2 {
                mu_by_genotype[g] = inv_logit(median(&rates));
            }
        }
        let inflated = seen.iter().filter(|&&c| c > 0).count() > 1;
        entries.push(GenotypeEntry { position: i, genotypes, mu_by_genotype, inflated });
    }
    GenotypeAssignment::new(entries, inflation)
}

//! Pileup count matrices and their TSV representations.
//!
//! A pileup matrix holds, for every genomic position and sample, the
//! nonreference read count x and the total depth N. Unmatched designs use
//! one matrix for reference samples and one for the samples being screened;
//! matched designs pair a normal and a tumor matrix over identical
//! positions.
//!
//! File formats (tab-separated, one header line, positions sorted by
//! (contig, pos) on output):
//!
//! ```text
//! unmatched:  contig  pos  ref  x_<sample>  n_<sample>  ...
//! matched:    contig  pos  ref  xn_<s>  nn_<s>  xt_<s>  nt_<s>  ...
//! region map: contig  pos  region_id
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PileupError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: count exceeds depth in column {column}")]
    CountExceedsDepth { line: usize, column: String },
    #[error("duplicate position {contig}:{pos}")]
    DuplicatePosition { contig: String, pos: u64 },
    #[error("line {line}: expected {expected} fields, got {got}")]
    InconsistentColumns { line: usize, expected: usize, got: usize },
    #[error("position sets differ between the two matrices")]
    PositionSetsDiffer,
    #[error("sample names differ between the two matrices")]
    SampleSetsDiffer,
    #[error("no data rows")]
    Empty,
    #[error("region map does not cover position {contig}:{pos}")]
    RegionMissing { contig: String, pos: u64 },
}

/// A genomic coordinate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GenomePos {
    pub contig: String,
    pub pos: u64,
}

impl std::fmt::Display for GenomePos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.contig, self.pos)
    }
}

/// Count matrix over positions (rows) and samples (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct PileupMatrix {
    positions: Vec<GenomePos>,
    reference_base: Vec<u8>,
    samples: Vec<String>,
    // Row-major: cell (i, j) at i * samples.len() + j.
    x: Vec<u64>,
    n: Vec<u64>,
}

impl PileupMatrix {
    /// Builds a matrix from parallel vectors. Positions are sorted by
    /// (contig, pos); duplicates and x > N are rejected.
    pub fn new(
        mut positions: Vec<GenomePos>,
        mut reference_base: Vec<u8>,
        samples: Vec<String>,
        mut x: Vec<u64>,
        mut n: Vec<u64>,
    ) -> Result<Self, PileupError> {
        let p = positions.len();
        let s = samples.len();
        if p == 0 || s == 0 {
            return Err(PileupError::Empty);
        }
        assert_eq!(reference_base.len(), p, "reference base per position");
        assert_eq!(x.len(), p * s, "x matrix shape");
        assert_eq!(n.len(), p * s, "n matrix shape");
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| positions[a].cmp(&positions[b]));
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            let old_pos = positions.clone();
            let old_base = reference_base.clone();
            let old_x = x.clone();
            let old_n = n.clone();
            for (i, &o) in order.iter().enumerate() {
                positions[i] = old_pos[o].clone();
                reference_base[i] = old_base[o];
                x[i * s..(i + 1) * s].copy_from_slice(&old_x[o * s..(o + 1) * s]);
                n[i * s..(i + 1) * s].copy_from_slice(&old_n[o * s..(o + 1) * s]);
            }
        }
        for w in positions.windows(2) {
            if w[0] == w[1] {
                return Err(PileupError::DuplicatePosition {
                    contig: w[0].contig.clone(),
                    pos: w[0].pos,
                });
            }
        }
        for (cell, (&xc, &nc)) in x.iter().zip(&n).enumerate() {
            if xc > nc {
                return Err(PileupError::CountExceedsDepth {
                    line: cell / s + 2,
                    column: samples[cell % s].clone(),
                });
            }
        }
        Ok(PileupMatrix { positions, reference_base, samples, x, n })
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn positions(&self) -> &[GenomePos] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &GenomePos {
        &self.positions[i]
    }

    pub fn reference_base(&self, i: usize) -> u8 {
        self.reference_base[i]
    }

    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    pub fn sample(&self, j: usize) -> &str {
        &self.samples[j]
    }

    /// Nonreference count at (position, sample).
    pub fn x(&self, i: usize, j: usize) -> u64 {
        self.x[i * self.samples.len() + j]
    }

    /// Depth at (position, sample).
    pub fn depth(&self, i: usize, j: usize) -> u64 {
        self.n[i * self.samples.len() + j]
    }

    /// x / N, or None where the position has no coverage.
    pub fn observed_rate(&self, i: usize, j: usize) -> Option<f64> {
        let n = self.depth(i, j);
        if n == 0 {
            None
        } else {
            Some(self.x(i, j) as f64 / n as f64)
        }
    }

    /// New matrix keeping only the sample columns in `keep` (distinct,
    /// in-range indices), in the given order.
    pub fn select_samples(&self, keep: &[usize]) -> PileupMatrix {
        let samples: Vec<String> = keep.iter().map(|&j| self.samples[j].clone()).collect();
        let mut x = Vec::with_capacity(self.positions.len() * keep.len());
        let mut n = Vec::with_capacity(self.positions.len() * keep.len());
        for i in 0..self.positions.len() {
            for &j in keep {
                x.push(self.x(i, j));
                n.push(self.depth(i, j));
            }
        }
        PileupMatrix::new(
            self.positions.clone(),
            self.reference_base.clone(),
            samples,
            x,
            n,
        )
        .expect("column subset of a valid matrix is valid")
    }

    /// Reads an unmatched pileup TSV in a single streaming pass.
    pub fn load(path: &Path) -> Result<Self, PileupError> {
        let file = std::fs::File::open(path).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), path)
    }

    fn from_reader<R: Read>(reader: BufReader<R>, path: &Path) -> Result<Self, PileupError> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((idx, line)) => {
                    let line = line.map_err(|source| PileupError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    if line.starts_with('#') || line.trim().is_empty() {
                        continue;
                    }
                    break (idx, line);
                }
                None => return Err(PileupError::Empty),
            }
        };
        let cols: Vec<&str> = header.1.split('\t').collect();
        if cols.len() < 5 || cols[0] != "contig" || cols[1] != "pos" || cols[2] != "ref" {
            return Err(PileupError::Malformed {
                line: header.0 + 1,
                msg: "header must start with contig, pos, ref and carry x_/n_ pairs".into(),
            });
        }
        let mut samples = Vec::new();
        let mut c = 3;
        while c < cols.len() {
            let xname = cols[c].strip_prefix("x_").ok_or_else(|| PileupError::Malformed {
                line: header.0 + 1,
                msg: format!("expected x_<sample> column, got {}", cols[c]),
            })?;
            if c + 1 >= cols.len() {
                return Err(PileupError::Malformed {
                    line: header.0 + 1,
                    msg: format!("missing n_{xname} column"),
                });
            }
            let nname = cols[c + 1].strip_prefix("n_").ok_or_else(|| PileupError::Malformed {
                line: header.0 + 1,
                msg: format!("expected n_<sample> column, got {}", cols[c + 1]),
            })?;
            if xname != nname {
                return Err(PileupError::Malformed {
                    line: header.0 + 1,
                    msg: format!("column pair mismatch: x_{xname} vs n_{nname}"),
                });
            }
            samples.push(xname.to_string());
            c += 2;
        }
        if samples.is_empty() {
            return Err(PileupError::Malformed {
                line: header.0 + 1,
                msg: "no sample columns".into(),
            });
        }
        let expected = 3 + 2 * samples.len();
        let mut positions = Vec::new();
        let mut bases = Vec::new();
        let mut xs = Vec::new();
        let mut ns = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|source| PileupError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != expected {
                return Err(PileupError::InconsistentColumns {
                    line: lineno,
                    expected,
                    got: fields.len(),
                });
            }
            let pos = parse_u64(fields[1], lineno, "pos")?;
            let base = parse_base(fields[2], lineno)?;
            positions.push(GenomePos { contig: fields[0].to_string(), pos });
            bases.push(base);
            for (j, s) in samples.iter().enumerate() {
                let xv = parse_u64(fields[3 + 2 * j], lineno, &format!("x_{s}"))?;
                let nv = parse_u64(fields[4 + 2 * j], lineno, &format!("n_{s}"))?;
                if xv > nv {
                    return Err(PileupError::CountExceedsDepth {
                        line: lineno,
                        column: s.clone(),
                    });
                }
                xs.push(xv);
                ns.push(nv);
            }
        }
        if positions.is_empty() {
            return Err(PileupError::Empty);
        }
        PileupMatrix::new(positions, bases, samples, xs, ns)
    }

    /// Serializes to the unmatched TSV format.
    pub fn to_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("contig\tpos\tref");
        for s in &self.samples {
            let _ = write!(header, "\tx_{s}\tn_{s}");
        }
        writeln!(w, "{header}")?;
        for i in 0..self.n_positions() {
            let mut row = format!(
                "{}\t{}\t{}",
                self.positions[i].contig, self.positions[i].pos, self.reference_base[i] as char
            );
            for j in 0..self.n_samples() {
                let _ = write!(row, "\t{}\t{}", self.x(i, j), self.depth(i, j));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PileupError> {
        let file = std::fs::File::create(path).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.to_tsv(std::io::BufWriter::new(file)).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Matched normal/tumor pair over identical positions and sample names.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPileup {
    pub normal: PileupMatrix,
    pub tumor: PileupMatrix,
}

impl MatchedPileup {
    /// Pairs two matrices; their position lists and sample names must agree
    /// exactly.
    pub fn new(normal: PileupMatrix, tumor: PileupMatrix) -> Result<Self, PileupError> {
        if normal.positions != tumor.positions {
            return Err(PileupError::PositionSetsDiffer);
        }
        if normal.samples != tumor.samples {
            return Err(PileupError::SampleSetsDiffer);
        }
        Ok(MatchedPileup { normal, tumor })
    }

    pub fn n_positions(&self) -> usize {
        self.normal.n_positions()
    }

    pub fn n_samples(&self) -> usize {
        self.normal.n_samples()
    }

    /// Reads a matched pileup TSV (xn_/nn_/xt_/nt_ column groups).
    pub fn load(path: &Path) -> Result<Self, PileupError> {
        let file = std::fs::File::open(path).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((idx, line)) => {
                    let line = line.map_err(|source| PileupError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    if line.starts_with('#') || line.trim().is_empty() {
                        continue;
                    }
                    break (idx, line);
                }
                None => return Err(PileupError::Empty),
            }
        };
        let cols: Vec<&str> = header.1.split('\t').collect();
        if cols.len() < 7 || cols[0] != "contig" || cols[1] != "pos" || cols[2] != "ref" {
            return Err(PileupError::Malformed {
                line: header.0 + 1,
                msg: "header must start with contig, pos, ref and carry xn_/nn_/xt_/nt_ groups"
                    .into(),
            });
        }
        let mut samples = Vec::new();
        let mut c = 3;
        while c < cols.len() {
            if c + 3 >= cols.len() {
                return Err(PileupError::Malformed {
                    line: header.0 + 1,
                    msg: "incomplete xn_/nn_/xt_/nt_ column group".into(),
                });
            }
            let name = cols[c].strip_prefix("xn_").ok_or_else(|| PileupError::Malformed {
                line: header.0 + 1,
                msg: format!("expected xn_<sample> column, got {}", cols[c]),
            })?;
            for (offset, prefix) in [(1usize, "nn_"), (2, "xt_"), (3, "nt_")] {
                let got = cols[c + offset];
                if got.strip_prefix(prefix) != Some(name) {
                    return Err(PileupError::Malformed {
                        line: header.0 + 1,
                        msg: format!("expected {prefix}{name}, got {got}"),
                    });
                }
            }
            samples.push(name.to_string());
            c += 4;
        }
        if samples.is_empty() {
            return Err(PileupError::Malformed {
                line: header.0 + 1,
                msg: "no sample columns".into(),
            });
        }
        let expected = 3 + 4 * samples.len();
        let mut positions = Vec::new();
        let mut bases = Vec::new();
        let (mut xn, mut nn, mut xt, mut nt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines {
            let line = line.map_err(|source| PileupError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != expected {
                return Err(PileupError::InconsistentColumns {
                    line: lineno,
                    expected,
                    got: fields.len(),
                });
            }
            let pos = parse_u64(fields[1], lineno, "pos")?;
            positions.push(GenomePos { contig: fields[0].to_string(), pos });
            bases.push(parse_base(fields[2], lineno)?);
            for (j, s) in samples.iter().enumerate() {
                let base = 3 + 4 * j;
                let xnv = parse_u64(fields[base], lineno, &format!("xn_{s}"))?;
                let nnv = parse_u64(fields[base + 1], lineno, &format!("nn_{s}"))?;
                let xtv = parse_u64(fields[base + 2], lineno, &format!("xt_{s}"))?;
                let ntv = parse_u64(fields[base + 3], lineno, &format!("nt_{s}"))?;
                if xnv > nnv {
                    return Err(PileupError::CountExceedsDepth {
                        line: lineno,
                        column: format!("xn_{s}"),
                    });
                }
                if xtv > ntv {
                    return Err(PileupError::CountExceedsDepth {
                        line: lineno,
                        column: format!("xt_{s}"),
                    });
                }
                xn.push(xnv);
                nn.push(nnv);
                xt.push(xtv);
                nt.push(ntv);
            }
        }
        if positions.is_empty() {
            return Err(PileupError::Empty);
        }
        let normal =
            PileupMatrix::new(positions.clone(), bases.clone(), samples.clone(), xn, nn)?;
        let tumor = PileupMatrix::new(positions, bases, samples, xt, nt)?;
        MatchedPileup::new(normal, tumor)
    }

    /// Serializes to the matched TSV format.
    pub fn to_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("contig\tpos\tref");
        for s in self.normal.samples() {
            let _ = write!(header, "\txn_{s}\tnn_{s}\txt_{s}\tnt_{s}");
        }
        writeln!(w, "{header}")?;
        for i in 0..self.n_positions() {
            let p = self.normal.position(i);
            let mut row =
                format!("{}\t{}\t{}", p.contig, p.pos, self.normal.reference_base(i) as char);
            for j in 0..self.n_samples() {
                let _ = write!(
                    row,
                    "\t{}\t{}\t{}\t{}",
                    self.normal.x(i, j),
                    self.normal.depth(i, j),
                    self.tumor.x(i, j),
                    self.tumor.depth(i, j)
                );
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PileupError> {
        let file = std::fs::File::create(path).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.to_tsv(std::io::BufWriter::new(file)).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Region labels aligned to a matrix's position order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub region_ids: Vec<u32>,
}

impl RegionMap {
    /// Reads a region-map TSV and aligns it to `matrix`'s positions. Every
    /// position must be covered exactly once.
    pub fn load(path: &Path, matrix: &PileupMatrix) -> Result<Self, PileupError> {
        let file = std::fs::File::open(path).map_err(|source| PileupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut by_pos: HashMap<GenomePos, u32> = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| PileupError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            if lineno == 1 && line.starts_with("contig\t") {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(PileupError::InconsistentColumns {
                    line: lineno,
                    expected: 3,
                    got: fields.len(),
                });
            }
            let pos = parse_u64(fields[1], lineno, "pos")?;
            let region = parse_u64(fields[2], lineno, "region_id")? as u32;
            let key = GenomePos { contig: fields[0].to_string(), pos };
            if by_pos.insert(key.clone(), region).is_some() {
                return Err(PileupError::DuplicatePosition { contig: key.contig, pos: key.pos });
            }
        }
        let mut region_ids = Vec::with_capacity(matrix.n_positions());
        for p in matrix.positions() {
            match by_pos.get(p) {
                Some(&r) => region_ids.push(r),
                None => {
                    return Err(PileupError::RegionMissing {
                        contig: p.contig.clone(),
                        pos: p.pos,
                    })
                }
            }
        }
        Ok(RegionMap { region_ids })
    }
}

fn parse_u64(field: &str, line: usize, what: &str) -> Result<u64, PileupError> {
    field.parse::<u64>().map_err(|_| PileupError::Malformed {
        line,
        msg: format!("cannot parse {what} value {field:?} as a nonnegative integer"),
    })
}

fn parse_base(field: &str, line: usize) -> Result<u8, PileupError> {
    let bytes = field.as_bytes();
    if bytes.len() == 1 && matches!(bytes[0], b'A' | b'C' | b'G' | b'T' | b'N') {
        Ok(bytes[0])
    } else {
        Err(PileupError::Malformed {
            line,
            msg: format!("reference base must be one of A, C, G, T, N, got {field:?}"),
        })
    }
}

//! Node similarity over either side of the bipartite graph.
//!
//! Three measures are provided:
//!
//! * cosine over full rating vectors, with unrated entries counted as zero;
//! * Pearson correlation summed over co-rated entries, with each node's mean
//!   taken over everything it rated;
//! * PIM, a Pearson variant that rewards large co-rating overlap relative to
//!   the dataset average, penalizes pairs involving very active nodes, and
//!   down-weights co-rated entries with many raters.
//!
//! Pairs with no co-rated entries or zero variance are *undefined*: their raw
//! value is stored as 0 and flagged, and normalization maps them to 0.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bigraph::{Axis, BipartiteGraph};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("need at least two {0} to average co-rating ratios")]
    TooFewNodes(Axis),
    #[error("matrix has no defined off-diagonal similarity to normalize")]
    NoDefinedPairs,
    #[error("similarity values must be symmetric and within [0, 1]")]
    InvalidValues,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense symmetric similarity matrix with a raw view and, once
/// [`normalize`]d, a min-max view in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    axis: Axis,
    n: usize,
    raw: Vec<f64>,
    defined: Vec<bool>,
    normalized: Option<Vec<f64>>,
}

impl SimilarityMatrix {
    fn from_parts(axis: Axis, n: usize, raw: Vec<f64>, defined: Vec<bool>) -> Self {
        Self {
            axis,
            n,
            raw,
            defined,
            normalized: None,
        }
    }

    /// The normalized identity: every node similar only to itself.
    pub fn identity(axis: Axis, n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self {
            axis,
            n,
            raw: values.clone(),
            defined: vec![true; n * n],
            normalized: Some(values),
        }
    }

    /// Wraps already-normalized values (row-major, `n * n`).
    pub fn from_normalized(axis: Axis, n: usize, values: Vec<f64>) -> Result<Self, SimError> {
        if values.len() != n * n || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SimError::InvalidValues);
        }
        for a in 0..n {
            for b in a + 1..n {
                if values[a * n + b] != values[b * n + a] {
                    return Err(SimError::InvalidValues);
                }
            }
        }
        let mut m = Self {
            axis,
            n,
            raw: values.clone(),
            defined: vec![true; n * n],
            normalized: Some(values),
        };
        m.force_unit_diagonal();
        Ok(m)
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized.is_some()
    }

    pub fn raw(&self, a: u32, b: u32) -> f64 {
        self.raw[a as usize * self.n + b as usize]
    }

    pub fn is_defined(&self, a: u32, b: u32) -> bool {
        self.defined[a as usize * self.n + b as usize]
    }

    /// Normalized value when available, raw otherwise.
    pub fn value(&self, a: u32, b: u32) -> f64 {
        self.row(a)[b as usize]
    }

    pub fn row(&self, a: u32) -> &[f64] {
        let start = a as usize * self.n;
        let values = self.normalized.as_ref().unwrap_or(&self.raw);
        &values[start..start + self.n]
    }

    fn force_unit_diagonal(&mut self) {
        for i in 0..self.n {
            let k = i * self.n + i;
            self.raw[k] = 1.0;
            self.defined[k] = true;
            if let Some(norm) = self.normalized.as_mut() {
                norm[k] = 1.0;
            }
        }
    }

    pub(crate) fn with_unit_diagonal(mut self) -> Self {
        self.force_unit_diagonal();
        self
    }

    /// Writes `a,b,raw,normalized` for every unordered pair `a < b`.
    /// Undefined raw values are written as `NA`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        writeln!(out, "a,b,raw,normalized")?;
        for a in 0..self.n as u32 {
            for b in a + 1..self.n as u32 {
                let raw = if self.is_defined(a, b) {
                    format!("{:.6}", self.raw(a, b))
                } else {
                    "NA".to_string()
                };
                let norm = match &self.normalized {
                    Some(v) => format!("{:.6}", v[a as usize * self.n + b as usize]),
                    None => String::new(),
                };
                writeln!(out, "{a},{b},{raw},{norm}")?;
            }
        }
        Ok(())
    }

    /// Raw values of defined off-diagonal pairs `a < b`, row-major.
    pub fn defined_pairs(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n as u32).flat_map(move |a| {
            (a + 1..self.n as u32)
                .filter(move |&b| self.is_defined(a, b))
                .map(move |b| (a, b, self.raw(a, b)))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum PenaltyVariant {
    /// Exponent `max(|I_u|, |I_v|) / (|I_u| + |I_v|)`.
    #[default]
    PairMax,
    /// Exponent `max_w |I_w| / (|I_u| + |I_v|)` over every node on the axis.
    GlobalMax,
}

impl std::str::FromStr for PenaltyVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pair-max" | "pair" => Ok(PenaltyVariant::PairMax),
            "global-max" | "global" => Ok(PenaltyVariant::GlobalMax),
            other => Err(format!("unknown penalty variant {other:?}")),
        }
    }
}

impl std::fmt::Display for PenaltyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyVariant::PairMax => "pair-max",
            PenaltyVariant::GlobalMax => "global-max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PimConfig {
    pub penalty: PenaltyVariant,
    /// Base of the logarithm in the popularity weight `1 / log(1 + degree)`.
    pub log_base: f64,
    /// Average co-rating ratio of the axis.
    pub ar: f64,
}

impl PimConfig {
    pub fn for_graph(g: &BipartiteGraph, axis: Axis, penalty: PenaltyVariant) -> Result<Self, SimError> {
        Ok(Self {
            penalty,
            log_base: 10.0,
            ar: average_cri_ratio(g, axis)?,
        })
    }
}

/// Sums gathered while merging two nodes' sorted edge lists.
#[derive(Debug, Default, Clone, Copy)]
struct PairStats {
    common: usize,
    dot: f64,
    cov: f64,
    weighted_cov: f64,
    var_a: f64,
    var_b: f64,
}

/// Per-axis data every kernel needs.
struct AxisData<'g> {
    g: &'g BipartiteGraph,
    axis: Axis,
    means: Vec<f64>,
    norms: Vec<f64>,
    /// Popularity weight of each node on the opposite axis.
    other_weight: Vec<f64>,
}

impl<'g> AxisData<'g> {
    fn new(g: &'g BipartiteGraph, axis: Axis, log_base: f64) -> Self {
        let n = g.len(axis);
        let means = (0..n as u32)
            .map(|a| g.mean_rating(axis, a).unwrap_or(0.0))
            .collect();
        let norms = (0..n as u32)
            .map(|a| g.edges(axis, a).iter().map(|e| e.rating * e.rating).sum::<f64>().sqrt())
            .collect();
        let other = axis.other();
        let other_weight = (0..g.len(other) as u32)
            .map(|k| 1.0 / (1.0 + g.degree(other, k) as f64).log(log_base))
            .collect();
        Self {
            g,
            axis,
            means,
            norms,
            other_weight,
        }
    }

    fn stats(&self, a: u32, b: u32) -> PairStats {
        let ea = self.g.edges(self.axis, a);
        let eb = self.g.edges(self.axis, b);
        let (ma, mb) = (self.means[a as usize], self.means[b as usize]);
        let mut s = PairStats::default();
        let (mut i, mut j) = (0, 0);
        while i < ea.len() && j < eb.len() {
            let (x, y) = (&ea[i], &eb[j]);
            if x.node < y.node {
                i += 1;
            } else if x.node > y.node {
                j += 1;
            } else {
                let (da, db) = (x.rating - ma, y.rating - mb);
                s.common += 1;
                s.dot += x.rating * y.rating;
                s.cov += da * db;
                s.weighted_cov += self.other_weight[x.node as usize] * da * db;
                s.var_a += da * da;
                s.var_b += db * db;
                i += 1;
                j += 1;
            }
        }
        s
    }
}

/// Fills the upper triangle in parallel (one task per row) and mirrors it.
fn build_matrix<F>(g: &BipartiteGraph, axis: Axis, pair: F) -> SimilarityMatrix
where
    F: Fn(u32, u32) -> Option<f64> + Sync,
{
    let n = g.len(axis);
    let upper: Vec<Vec<Option<f64>>> = (0..n as u32)
        .into_par_iter()
        .map(|a| (a + 1..n as u32).map(|b| pair(a, b)).collect())
        .collect();
    let mut raw = vec![0.0; n * n];
    let mut defined = vec![false; n * n];
    for (a, row) in upper.into_iter().enumerate() {
        for (off, value) in row.into_iter().enumerate() {
            let b = a + 1 + off;
            if let Some(v) = value {
                raw[a * n + b] = v;
                raw[b * n + a] = v;
                defined[a * n + b] = true;
                defined[b * n + a] = true;
            }
        }
    }
    SimilarityMatrix::from_parts(axis, n, raw, defined).with_unit_diagonal()
}

pub fn cosine_matrix(g: &BipartiteGraph, axis: Axis) -> SimilarityMatrix {
    let data = AxisData::new(g, axis, 10.0);
    build_matrix(g, axis, |a, b| {
        let denom = data.norms[a as usize] * data.norms[b as usize];
        (denom > 0.0).then(|| data.stats(a, b).dot / denom)
    })
}

pub fn pcc_matrix(g: &BipartiteGraph, axis: Axis) -> SimilarityMatrix {
    let data = AxisData::new(g, axis, 10.0);
    build_matrix(g, axis, |a, b| {
        let s = data.stats(a, b);
        let denom = (s.var_a * s.var_b).sqrt();
        (s.common > 0 && denom > 0.0).then(|| s.cov / denom)
    })
}

pub fn pim_matrix(g: &BipartiteGraph, axis: Axis, cfg: &PimConfig) -> SimilarityMatrix {
    let data = AxisData::new(g, axis, cfg.log_base);
    let max_degree = (0..g.len(axis) as u32)
        .map(|a| g.degree(axis, a))
        .max()
        .unwrap_or(0) as f64;
    build_matrix(g, axis, |a, b| {
        let s = data.stats(a, b);
        let denom = (s.var_a * s.var_b).sqrt();
        if s.common == 0 || denom <= 0.0 || cfg.ar <= 0.0 {
            return None;
        }
        let (da, db) = (g.degree(axis, a) as f64, g.degree(axis, b) as f64);
        let union = da + db - s.common as f64;
        let overlap = (1.0 + (s.common as f64 / union) / cfg.ar).ln();
        let top = match cfg.penalty {
            PenaltyVariant::PairMax => da.max(db),
            PenaltyVariant::GlobalMax => max_degree,
        };
        let penalty = 1.0 + (top / (da + db)).exp();
        Some(overlap * s.weighted_cov / denom / penalty)
    })
}

/// Mean Jaccard overlap `|∩| / |∪|` over all unordered node pairs of the
/// axis, isolated nodes included (their pairs count as zero).
pub fn average_cri_ratio(g: &BipartiteGraph, axis: Axis) -> Result<f64, SimError> {
    let n = g.len(axis);
    if n < 2 {
        return Err(SimError::TooFewNodes(axis));
    }
    let row_sums: Vec<f64> = (0..n as u32)
        .into_par_iter()
        .map(|a| {
            (a + 1..n as u32)
                .map(|b| cri_ratio(g, axis, a, b))
                .sum::<f64>()
        })
        .collect();
    let total: f64 = row_sums.iter().sum();
    Ok(2.0 * total / (n as f64 * (n as f64 - 1.0)))
}

/// `|∩| / |∪|` of two nodes' neighbor sets; 0 when both are isolated.
pub fn cri_ratio(g: &BipartiteGraph, axis: Axis, a: u32, b: u32) -> f64 {
    let ea = g.edges(axis, a);
    let eb = g.edges(axis, b);
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < ea.len() && j < eb.len() {
        match ea[i].node.cmp(&eb[j].node) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = ea.len() + eb.len() - common;
    if union == 0 {
        0.0
    } else {
        common as f64 / union as f64
    }
}

/// Min-max rescales defined off-diagonal values into `[0, 1]`. Undefined
/// pairs become 0 and the diagonal 1. When every defined value is equal
/// they all map to 0.5.
pub fn normalize(m: &SimilarityMatrix) -> Result<SimilarityMatrix, SimError> {
    let n = m.n;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, _, v) in m.defined_pairs() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(SimError::NoDefinedPairs);
    }
    let span = hi - lo;
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let k = a * n + b;
            values[k] = if a == b {
                1.0
            } else if !m.defined[k] {
                0.0
            } else if span > 0.0 {
                (m.raw[k] - lo) / span
            } else {
                0.5
            };
        }
    }
    Ok(SimilarityMatrix {
        normalized: Some(values),
        ..m.clone()
    })
}

/// Most similar defined neighbors of `node`, self excluded, by descending
/// value with ties broken by ascending id.
pub fn top_k_neighbors(m: &SimilarityMatrix, node: u32, k: usize) -> Vec<(u32, f64)> {
    let row = m.row(node);
    let mut out: Vec<(u32, f64)> = (0..m.n as u32)
        .filter(|&b| b != node && m.is_defined(node, b))
        .map(|b| (b, row[b as usize]))
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out.truncate(k);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Measure {
    Cosine,
    Pearson,
    Pim,
}

impl Measure {
    pub fn label(self) -> &'static str {
        match self {
            Measure::Cosine => "CS",
            Measure::Pearson => "PCC",
            Measure::Pim => "PIM",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cs" | "cosine" => Ok(Measure::Cosine),
            "pcc" | "pearson" => Ok(Measure::Pearson),
            "pim" => Ok(Measure::Pim),
            other => Err(format!("unknown similarity measure {other:?}")),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Computes and normalizes one measure over an axis.
pub fn similarity(
    g: &BipartiteGraph,
    axis: Axis,
    measure: Measure,
    penalty: PenaltyVariant,
) -> Result<SimilarityMatrix, SimError> {
    let raw = match measure {
        Measure::Cosine => cosine_matrix(g, axis),
        Measure::Pearson => pcc_matrix(g, axis),
        Measure::Pim => pim_matrix(g, axis, &PimConfig::for_graph(g, axis, penalty)?),
    };
    normalize(&raw)
}

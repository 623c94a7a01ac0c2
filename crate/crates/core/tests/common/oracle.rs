use diffrec::simkit::{average_cri_ratio, cosine_matrix, pcc_matrix, pim_matrix, similarity, PimConfig};
use diffrec::{Axis, BipartiteGraph, Measure, PenaltyVariant, SimilarityMatrix};

use super::{dataset, transpose, Dense};

// Scalar oracles over a dense grid whose rows are the nodes being compared.

pub fn rated(row: &[Option<f64>]) -> Vec<f64> {
    row.iter().flatten().copied().collect()
}

pub fn mean(row: &[Option<f64>]) -> f64 {
    let r = rated(row);
    r.iter().sum::<f64>() / r.len() as f64
}

pub fn cos_oracle(rows: &Dense, a: usize, b: usize) -> Option<f64> {
    let full = |r: &Vec<Option<f64>>| r.iter().map(|v| v.unwrap_or(0.0)).collect::<Vec<_>>();
    let (x, y) = (full(&rows[a]), full(&rows[b]));
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    (nx * ny > 0.0).then(|| dot / (nx * ny))
}

pub fn common_cols(rows: &Dense, a: usize, b: usize) -> Vec<usize> {
    (0..rows[a].len())
        .filter(|&c| rows[a][c].is_some() && rows[b][c].is_some())
        .collect()
}

pub fn pcc_oracle(rows: &Dense, a: usize, b: usize) -> Option<f64> {
    let cri = common_cols(rows, a, b);
    let (ma, mb) = (mean(&rows[a]), mean(&rows[b]));
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for &c in &cri {
        let da = rows[a][c].unwrap() - ma;
        let db = rows[b][c].unwrap() - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    (!cri.is_empty() && va * vb > 0.0).then(|| num / (va * vb).sqrt())
}

pub fn degree(row: &[Option<f64>]) -> usize {
    row.iter().filter(|v| v.is_some()).count()
}

pub fn jaccard(rows: &Dense, a: usize, b: usize) -> f64 {
    let both = common_cols(rows, a, b).len();
    let union = degree(&rows[a]) + degree(&rows[b]) - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

pub fn ar_oracle(rows: &Dense) -> f64 {
    let n = rows.len();
    let mut total = 0.0;
    let mut pairs = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            total += jaccard(rows, a, b);
            pairs += 1.0;
        }
    }
    total / pairs
}

pub fn pim_oracle(rows: &Dense, a: usize, b: usize, ar: f64, penalty: PenaltyVariant) -> Option<f64> {
    let cri = common_cols(rows, a, b);
    let (ma, mb) = (mean(&rows[a]), mean(&rows[b]));
    let col_degree = |c: usize| rows.iter().filter(|r| r[c].is_some()).count() as f64;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for &c in &cri {
        let da = rows[a][c].unwrap() - ma;
        let db = rows[b][c].unwrap() - mb;
        num += da * db / (1.0 + col_degree(c)).log10();
        va += da * da;
        vb += db * db;
    }
    if cri.is_empty() || va * vb <= 0.0 {
        return None;
    }
    let (da, db) = (degree(&rows[a]) as f64, degree(&rows[b]) as f64);
    let top = match penalty {
        PenaltyVariant::PairMax => da.max(db),
        PenaltyVariant::GlobalMax => rows.iter().map(|r| degree(r)).max().unwrap() as f64,
    };
    let reward = (1.0 + jaccard(rows, a, b) / ar).ln();
    Some(reward * num / (va * vb).sqrt() / (1.0 + (top / (da + db)).exp()))
}

pub fn check(m: &SimilarityMatrix, rows: &Dense, oracle: impl Fn(usize, usize) -> Option<f64>) {
    let n = rows.len();
    assert_eq!(m.len(), n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let want = oracle(a, b);
            assert_eq!(m.is_defined(a as u32, b as u32), want.is_some(), "defined({a},{b})");
            if let Some(w) = want {
                let got = m.raw(a as u32, b as u32);
                assert!((got - w).abs() <= 1e-9, "({a},{b}): {got} vs {w}");
            }
        }
    }
}

pub fn check_normalized(m: &SimilarityMatrix, rows: &Dense, oracle: impl Fn(usize, usize) -> Option<f64>) {
    let n = rows.len();
    let vals: Vec<f64> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .filter_map(|(a, b)| oracle(a, b))
        .collect();
    if vals.is_empty() {
        return;
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for a in 0..n {
        for b in 0..n {
            let want = if a == b {
                1.0
            } else {
                match oracle(a, b) {
                    None => 0.0,
                    Some(_) if hi == lo => 0.5,
                    Some(v) => (v - lo) / (hi - lo),
                }
            };
            let got = m.value(a as u32, b as u32);
            assert!((got - want).abs() <= 1e-9, "normalized ({a},{b}): {got} vs {want}");
        }
    }
}

pub fn check_all(d: &Dense) {
    let g = BipartiteGraph::new(&dataset(d)).unwrap();
    for axis in [Axis::Users, Axis::Items] {
        let rows = match axis {
            Axis::Users => d.clone(),
            Axis::Items => transpose(d),
        };
        let ar = ar_oracle(&rows);
        assert!((average_cri_ratio(&g, axis).unwrap() - ar).abs() <= 1e-12);

        check(&cosine_matrix(&g, axis), &rows, |a, b| cos_oracle(&rows, a, b));
        check(&pcc_matrix(&g, axis), &rows, |a, b| pcc_oracle(&rows, a, b));
        for penalty in [PenaltyVariant::PairMax, PenaltyVariant::GlobalMax] {
            let cfg = PimConfig::for_graph(&g, axis, penalty).unwrap();
            check(&pim_matrix(&g, axis, &cfg), &rows, |a, b| pim_oracle(&rows, a, b, ar, penalty));
        }

        for (measure, oracle) in [
            (Measure::Cosine, cos_oracle as fn(&Dense, usize, usize) -> Option<f64>),
            (Measure::Pearson, pcc_oracle),
        ] {
            if let Ok(m) = similarity(&g, axis, measure, PenaltyVariant::PairMax) {
                check_normalized(&m, &rows, |a, b| oracle(&rows, a, b));
            }
        }
        if let Ok(m) = similarity(&g, axis, Measure::Pim, PenaltyVariant::PairMax) {
            check_normalized(&m, &rows, |a, b| pim_oracle(&rows, a, b, ar, PenaltyVariant::PairMax));
        }
    }
}

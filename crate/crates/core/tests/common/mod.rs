#![allow(dead_code)]

pub mod oracle;

use diffrec::corpus::RawRating;
use diffrec::{RatingDataset, RatingScale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rating grid indexed `[user][item]`.
pub type Dense = Vec<Vec<Option<f64>>>;

pub fn fix4_dense() -> Dense {
    vec![
        vec![Some(5.0), None, Some(3.0), Some(2.0)],
        vec![None, Some(4.0), Some(3.0), None],
        vec![Some(4.0), None, Some(1.0), Some(2.0)],
        vec![None, Some(3.0), None, Some(5.0)],
    ]
}

pub fn transpose(d: &Dense) -> Dense {
    let cols = d.first().map_or(0, Vec::len);
    (0..cols).map(|c| d.iter().map(|row| row[c]).collect()).collect()
}

/// Labels `u1..` and `i1..` so that dense indices equal internal ids.
pub fn dataset(d: &Dense) -> RatingDataset {
    let mut raw = Vec::new();
    for (u, row) in d.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            if let Some(v) = v {
                raw.push(RawRating {
                    line: raw.len() as u64 + 1,
                    user: format!("u{}", u + 1),
                    item: format!("i{}", i + 1),
                    value: *v,
                    timestamp: None,
                });
            }
        }
    }
    RatingDataset::from_raw(&raw, RatingScale::STARS).expect("valid grid")
}

/// Random 1..=5 grid in which every row and column holds a rating.
pub fn random_dense<R: Rng>(rng: &mut R, users: usize, items: usize, density: f64) -> Dense {
    let mut d: Dense = (0..users)
        .map(|_| {
            (0..items)
                .map(|_| rng.random_bool(density).then(|| rng.random_range(1..=5) as f64))
                .collect()
        })
        .collect();
    for u in 0..users {
        if d[u].iter().all(Option::is_none) {
            let i = rng.random_range(0..items);
            d[u][i] = Some(rng.random_range(1..=5) as f64);
        }
    }
    for i in 0..items {
        if d.iter().all(|row| row[i].is_none()) {
            let u = rng.random_range(0..users);
            d[u][i] = Some(rng.random_range(1..=5) as f64);
        }
    }
    d
}

/// Skewed synthetic corpus: low item ids are popular, ratings drift with
/// item id so that similarities are not all flat.
pub fn synthetic_tsv(users: usize, items: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for u in 0..users {
        let mut any = false;
        for i in 0..items {
            let p = 0.7 / (1.0 + i as f64 / 6.0);
            if rng.random::<f64>() < p || (!any && i == items - 1) {
                let base = 1 + ((u + i) % 3) + usize::from(i < items / 3);
                let r = (base + rng.random_range(0..2)).min(5);
                out.push_str(&format!("{}\t{}\t{}\t0\n", u + 1, i + 1, r));
                any = true;
            }
        }
    }
    out
}

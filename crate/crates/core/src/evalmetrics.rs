//! Ranking accuracy, coverage, diversity and novelty metrics, plus
//! rating-prediction error and popularity summaries.
//!
//! All reductions run in a fixed order so results are bitwise reproducible.

use rayon::prelude::*;

use crate::bigraph::BipartiteGraph;
use crate::corpus::{ItemIdx, RatingDataset, RatingScale, UserIdx};
use crate::recommend::RecommendationList;
use crate::simkit::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no user has a liked test item among their candidates")]
    NoLikedItems,
    #[error("coverage needs at least two items and one recommendation")]
    DegenerateCounts,
    #[error("internal diversity needs a list of at least two items")]
    ListTooShort,
    #[error("inter-user diversity needs at least two users")]
    TooFewUsers,
    #[error("no user has both a history and a recommendation list")]
    NoEligibleUsers,
    #[error("no predictions to score")]
    NoPredictions,
    #[error("no recommended items")]
    EmptyLists,
}

/// Per-user test items rated at or above the like threshold, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct LikedTestSet {
    per_user: Vec<Vec<ItemIdx>>,
}

impl LikedTestSet {
    pub fn from_test(test: &RatingDataset, threshold: f64) -> Self {
        let mut per_user = vec![Vec::new(); test.n_users()];
        for r in test.ratings() {
            if r.value >= threshold - 1e-9 {
                per_user[r.user as usize].push(r.item);
            }
        }
        for items in &mut per_user {
            items.sort_unstable();
        }
        Self { per_user }
    }

    pub fn from_lists(per_user: Vec<Vec<ItemIdx>>) -> Self {
        let mut per_user = per_user;
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        Self { per_user }
    }

    pub fn liked(&self, user: UserIdx) -> &[ItemIdx] {
        self.per_user
            .get(user as usize)
            .map_or(&[][..], Vec::as_slice)
    }
}

/// Default like threshold: the smallest grid value at or above the scale
/// midpoint (3 on 1..5, 0.6 on 0..1 by 0.2).
pub fn default_like_threshold(scale: &RatingScale) -> f64 {
    let steps = ((scale.midpoint() - scale.min) / scale.step - 1e-9).ceil();
    scale.min + steps * scale.step
}

/// Average ranking score over full candidate rankings:
/// `|U'| / Σ_u Σ_{liked i} rank(i) / |L_u|`, where `U'` are users with at
/// least one liked candidate. Higher is better.
pub fn ars(lists: &[RecommendationList], likes: &LikedTestSet) -> Result<f64, MetricError> {
    let per_user: Vec<Option<f64>> = lists
        .par_iter()
        .map(|list| {
            let liked = likes.liked(list.user);
            if liked.is_empty() || list.ranked.is_empty() {
                return None;
            }
            let len = list.ranked.len() as f64;
            let mut sum = 0.0;
            let mut hits = 0usize;
            for (pos, (item, _)) in list.ranked.iter().enumerate() {
                if liked.binary_search(item).is_ok() {
                    sum += (pos + 1) as f64 / len;
                    hits += 1;
                }
            }
            (hits > 0).then_some(sum)
        })
        .collect();
    let mut users = 0usize;
    let mut total = 0.0;
    for s in per_user.into_iter().flatten() {
        users += 1;
        total += s;
    }
    if users == 0 {
        return Err(MetricError::NoLikedItems);
    }
    Ok(users as f64 / total)
}

/// Number of top-L appearances per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecCountVector(pub Vec<u64>);

impl RecCountVector {
    pub fn from_lists<L: AsRef<[ItemIdx]>>(lists: &[L], n_items: usize) -> Self {
        let mut counts = vec![0u64; n_items];
        for list in lists {
            for &i in list.as_ref() {
                counts[i as usize] += 1;
            }
        }
        Self(counts)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// One minus the Gini index of the recommendation counts: 1 when every item
/// is recommended equally often, 0 when one item takes everything.
pub fn gini(counts: &RecCountVector) -> Result<f64, MetricError> {
    let n = counts.0.len();
    let total = counts.total();
    if n < 2 || total == 0 {
        return Err(MetricError::DegenerateCounts);
    }
    let mut sorted = counts.0.clone();
    sorted.sort_unstable();
    let nf = n as f64;
    let concentration: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &c)| (2.0 * (k + 1) as f64 - nf - 1.0) * c as f64 / total as f64)
        .sum::<f64>()
        / (nf - 1.0);
    Ok(1.0 - concentration)
}

/// Mean over users of `1 - mean pairwise similarity` inside each list.
/// Lists shorter than two are skipped.
pub fn internal_diversity<L: AsRef<[ItemIdx]> + Sync>(
    lists: &[L],
    sim: &SimilarityMatrix,
) -> Result<f64, MetricError> {
    let per_user: Vec<Option<f64>> = lists
        .par_iter()
        .map(|list| {
            let items = list.as_ref();
            let l = items.len();
            if l < 2 {
                return None;
            }
            let mut sum = 0.0;
            for (a, &i) in items.iter().enumerate() {
                let row = sim.row(i);
                for &j in &items[a + 1..] {
                    sum += row[j as usize];
                }
            }
            Some(1.0 - 2.0 * sum / (l * (l - 1)) as f64)
        })
        .collect();
    mean_of(per_user).ok_or(MetricError::ListTooShort)
}

fn mean_of(values: Vec<Option<f64>>) -> Option<f64> {
    let (mut n, mut total) = (0usize, 0.0);
    for v in values.into_iter().flatten() {
        n += 1;
        total += v;
    }
    (n > 0).then(|| total / n as f64)
}

/// Mean Hamming distance `1 - |L_u ∩ L_v| / L` over all unordered user pairs.
pub fn inter_user_diversity<L: AsRef<[ItemIdx]> + Sync>(
    lists: &[L],
    list_len: usize,
    n_items: usize,
) -> Result<f64, MetricError> {
    let n = lists.len();
    if n < 2 {
        return Err(MetricError::TooFewUsers);
    }
    let l = list_len.max(1) as f64;
    let members: Vec<Vec<bool>> = lists
        .iter()
        .map(|list| {
            let mut m = vec![false; n_items];
            for &i in list.as_ref() {
                m[i as usize] = true;
            }
            m
        })
        .collect();
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mine = lists[u].as_ref();
            (u + 1..n)
                .map(|v| {
                    let common = mine.iter().filter(|&&i| members[v][i as usize]).count();
                    1.0 - common as f64 / l
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = row_sums.iter().sum();
    Ok(2.0 * total / (n as f64 * (n as f64 - 1.0)))
}

/// Mean over users of `1 - mean similarity` between recommended and
/// previously rated items.
pub fn novelty<L: AsRef<[ItemIdx]> + Sync, H: AsRef<[ItemIdx]> + Sync>(
    lists: &[L],
    histories: &[H],
    sim: &SimilarityMatrix,
) -> Result<f64, MetricError> {
    let per_user: Vec<Option<f64>> = lists
        .par_iter()
        .zip(histories.par_iter())
        .map(|(list, hist)| {
            let (list, hist) = (list.as_ref(), hist.as_ref());
            if list.is_empty() || hist.is_empty() {
                return None;
            }
            let mut sum = 0.0;
            for &i in list {
                let row = sim.row(i);
                for &j in hist {
                    sum += row[j as usize];
                }
            }
            Some(1.0 - sum / (list.len() * hist.len()) as f64)
        })
        .collect();
    mean_of(per_user).ok_or(MetricError::NoEligibleUsers)
}

/// Root-mean-square error of `(predicted, actual)` pairs over the rating range.
pub fn nrmse(predictions: &[(f64, f64)], scale: &RatingScale) -> Result<f64, MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::NoPredictions);
    }
    let sse: f64 = predictions.iter().map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sse / predictions.len() as f64).sqrt() / scale.range())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecCountRow {
    pub item: ItemIdx,
    pub degree: usize,
    pub count: u64,
}

/// Recommendation count of every item next to its training degree.
pub fn rec_count_distribution<L: AsRef<[ItemIdx]>>(lists: &[L], g: &BipartiteGraph) -> Vec<RecCountRow> {
    let counts = RecCountVector::from_lists(lists, g.n_items());
    counts
        .0
        .iter()
        .enumerate()
        .map(|(i, &count)| RecCountRow {
            item: i as u32,
            degree: g.item_degree(i as u32),
            count,
        })
        .collect()
}

/// Mean training degree over every recommended slot.
pub fn avg_popularity<L: AsRef<[ItemIdx]>>(lists: &[L], g: &BipartiteGraph) -> Result<f64, MetricError> {
    let (mut slots, mut total) = (0usize, 0.0);
    for list in lists {
        for &i in list.as_ref() {
            slots += 1;
            total += g.item_degree(i) as f64;
        }
    }
    if slots == 0 {
        return Err(MetricError::EmptyLists);
    }
    Ok(total / slots as f64)
}

//! Recommenders: neighborhood rating prediction (user- and item-based),
//! mass diffusion, the similarity-guided weighted resource walk (PIM+RA),
//! and a biased matrix-factorization baseline.
//!
//! Every recommender produces a full ranking of the user's candidate items:
//! items with at least one training rating that the user has not rated.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bigraph::{Axis, BipartiteGraph};
use crate::corpus::{ItemIdx, RatingDataset, RatingScale, UserIdx};
use crate::simkit::SimilarityMatrix;

#[derive(Debug, thiserror::Error)]
pub enum RecError {
    #[error("user {0} has no training ratings")]
    IsolatedUser(UserIdx),
    #[error("graph has no item similarity attached")]
    MissingSimilarity,
    #[error("{mode} needs a {expected} similarity matrix, got {found}")]
    AxisMismatch {
        mode: CfMode,
        expected: Axis,
        found: Axis,
    },
    #[error("theta must lie in [0, 1], got {0}")]
    InvalidTheta(f64),
    #[error("invalid matrix factorization config: {0}")]
    InvalidMfConfig(String),
    #[error("matrix factorization diverged in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A user's full candidate ranking, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: UserIdx,
    pub ranked: Vec<(ItemIdx, f64)>,
    pub seen: Vec<ItemIdx>,
}

impl RecommendationList {
    /// Ranks every candidate item of `user` by `scores` (indexed by item),
    /// descending, ties by ascending item id.
    pub fn from_scores(g: &BipartiteGraph, user: UserIdx, scores: &[f64]) -> Self {
        let seen: Vec<ItemIdx> = g.user_items(user).iter().map(|e| e.node).collect();
        let mut excluded = vec![false; g.n_items()];
        for &i in &seen {
            excluded[i as usize] = true;
        }
        let mut ranked: Vec<(ItemIdx, f64)> = (0..g.n_items() as u32)
            .filter(|&i| !excluded[i as usize] && g.item_degree(i) > 0)
            .map(|i| (i, scores[i as usize]))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { user, ranked, seen }
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn top(&self, len: usize) -> &[(ItemIdx, f64)] {
        &self.ranked[..len.min(self.ranked.len())]
    }

    pub fn top_items(&self, len: usize) -> Vec<ItemIdx> {
        self.top(len).iter().map(|(i, _)| *i).collect()
    }
}

/// Writes `user,rank,item,score` rows for the first `len` entries of each
/// list, using the dataset's external ids.
pub fn write_lists_csv<W: Write>(
    lists: &[RecommendationList],
    labels: &RatingDataset,
    len: usize,
    mut out: W,
) -> Result<(), RecError> {
    writeln!(out, "user,rank,item,score")?;
    for list in lists {
        for (rank, (item, score)) in list.top(len).iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.4}",
                labels.user_label(list.user),
                rank + 1,
                labels.item_label(*item),
                score
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CfMode {
    UserBased,
    ItemBased,
}

impl CfMode {
    pub fn axis(self) -> Axis {
        match self {
            CfMode::UserBased => Axis::Users,
            CfMode::ItemBased => Axis::Items,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CfMode::UserBased => "UBCF",
            CfMode::ItemBased => "IBCF",
        }
    }
}

impl fmt::Display for CfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ubcf" | "user" => Ok(CfMode::UserBased),
            "ibcf" | "item" => Ok(CfMode::ItemBased),
            other => Err(format!("unknown CF mode {other:?}")),
        }
    }
}

/// Neighbor entry: (similarity, neighbor id, neighbor's rating).
type Neighbor = (f64, u32, f64);

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Collects neighbors with positive similarity that carry a rating for the
/// target. User-based: other raters of `item`. Item-based: other items
/// rated by `user`.
fn collect_neighbors(
    sim: &SimilarityMatrix,
    g: &BipartiteGraph,
    mode: CfMode,
    user: UserIdx,
    item: ItemIdx,
    buf: &mut Vec<Neighbor>,
) {
    buf.clear();
    let (anchor, edges) = match mode {
        CfMode::UserBased => (user, g.item_users(item)),
        CfMode::ItemBased => (item, g.user_items(user)),
    };
    let row = sim.row(anchor);
    for e in edges {
        if e.node == anchor {
            continue;
        }
        let s = row[e.node as usize];
        if s > 0.0 && sim.is_defined(anchor, e.node) {
            buf.push((s, e.node, e.rating));
        }
    }
}

/// Keeps the `k` best neighbors, sorted.
fn keep_top(buf: &mut Vec<Neighbor>, k: usize) {
    if buf.len() > k && k > 0 {
        buf.select_nth_unstable_by(k - 1, neighbor_order);
        buf.truncate(k);
    }
    buf.sort_by(neighbor_order);
}

fn fallback(g: &BipartiteGraph, user: UserIdx, item: ItemIdx) -> f64 {
    g.mean_rating(Axis::Users, user)
        .or_else(|| g.mean_rating(Axis::Items, item))
        .unwrap_or_else(|| g.scale().midpoint())
}

fn weighted_mean(neighbors: &[Neighbor]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &(s, _, r) in neighbors {
        num += s * r;
        den += s;
    }
    (den > 0.0).then(|| num / den)
}

/// Similarity-weighted mean rating over the `k` most similar neighbors that
/// rated the target, clamped to the scale. Falls back to the user's mean,
/// then the item's mean, then the scale midpoint.
pub fn predict_rating_knn(
    sim: &SimilarityMatrix,
    g: &BipartiteGraph,
    user: UserIdx,
    item: ItemIdx,
    k: usize,
) -> f64 {
    let mode = match sim.axis() {
        Axis::Users => CfMode::UserBased,
        Axis::Items => CfMode::ItemBased,
    };
    let mut buf = Vec::new();
    predict_with(sim, g, mode, user, item, k, &mut buf)
}

fn predict_with(
    sim: &SimilarityMatrix,
    g: &BipartiteGraph,
    mode: CfMode,
    user: UserIdx,
    item: ItemIdx,
    k: usize,
    buf: &mut Vec<Neighbor>,
) -> f64 {
    collect_neighbors(sim, g, mode, user, item, buf);
    keep_top(buf, k);
    let pred = weighted_mean(buf).unwrap_or_else(|| fallback(g, user, item));
    g.scale().clamp(pred)
}

/// Predictions for several neighborhood sizes at once, in `ks` order.
pub fn predict_rating_knn_curve(
    sim: &SimilarityMatrix,
    g: &BipartiteGraph,
    mode: CfMode,
    user: UserIdx,
    item: ItemIdx,
    ks: &[usize],
) -> Vec<f64> {
    let mut buf = Vec::new();
    collect_neighbors(sim, g, mode, user, item, &mut buf);
    buf.sort_by(neighbor_order);
    let scale = g.scale();
    let fb = fallback(g, user, item);
    ks.iter()
        .map(|&k| {
            let take = &buf[..k.min(buf.len())];
            scale.clamp(weighted_mean(take).unwrap_or(fb))
        })
        .collect()
}

fn check_axis(sim: &SimilarityMatrix, mode: CfMode) -> Result<(), RecError> {
    if sim.axis() != mode.axis() {
        return Err(RecError::AxisMismatch {
            mode,
            expected: mode.axis(),
            found: sim.axis(),
        });
    }
    Ok(())
}

/// Ranks every candidate item by its predicted rating.
pub fn recommend_knn_cf(
    sim: &SimilarityMatrix,
    g: &BipartiteGraph,
    user: UserIdx,
    mode: CfMode,
    k: usize,
) -> Result<RecommendationList, RecError> {
    check_axis(sim, mode)?;
    let mut scores = vec![0.0; g.n_items()];
    let mut buf = Vec::new();
    let mut seen = vec![false; g.n_items()];
    for e in g.user_items(user) {
        seen[e.node as usize] = true;
    }
    for item in 0..g.n_items() as u32 {
        if !seen[item as usize] && g.item_degree(item) > 0 {
            scores[item as usize] = predict_with(sim, g, mode, user, item, k, &mut buf);
        }
    }
    Ok(RecommendationList::from_scores(g, user, &scores))
}

/// Intermediate vectors of one mass-diffusion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MdTrace {
    /// Resource held by each user after flowing back from the items.
    pub user_resource: Vec<f64>,
    /// Resource held by each item after the second spread, seen items included.
    pub item_resource: Vec<f64>,
}

/// Unweighted two-hop diffusion from one unit per rated item.
pub fn md_trace(g: &BipartiteGraph, user: UserIdx) -> Result<MdTrace, RecError> {
    if g.user_degree(user) == 0 {
        return Err(RecError::IsolatedUser(user));
    }
    let mut user_resource = vec![0.0; g.n_users()];
    for e in g.user_items(user) {
        let share = 1.0 / g.item_degree(e.node) as f64;
        for v in g.item_users(e.node) {
            user_resource[v.node as usize] += share;
        }
    }
    let mut item_resource = vec![0.0; g.n_items()];
    for (v, &res) in user_resource.iter().enumerate() {
        if res == 0.0 {
            continue;
        }
        let v = v as u32;
        let share = res / g.user_degree(v) as f64;
        for e in g.user_items(v) {
            item_resource[e.node as usize] += share;
        }
    }
    Ok(MdTrace {
        user_resource,
        item_resource,
    })
}

pub fn recommend_md(g: &BipartiteGraph, user: UserIdx) -> Result<RecommendationList, RecError> {
    let trace = md_trace(g, user)?;
    Ok(RecommendationList::from_scores(g, user, &trace.item_resource))
}

/// Which rating weights the final user-to-item hop of the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Step3Weight {
    /// `w_vi`, the rating on the edge the resource arrived through.
    #[default]
    Literal,
    /// `w_vj`, the rating on the edge the resource leaves through.
    Alternate,
}

impl FromStr for Step3Weight {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "literal" | "literal-w_vi" | "w_vi" => Ok(Step3Weight::Literal),
            "alt" | "alternate" | "alt-w_vj" | "w_vj" => Ok(Step3Weight::Alternate),
            other => Err(format!("unknown step-3 weight {other:?}")),
        }
    }
}

impl fmt::Display for Step3Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step3Weight::Literal => "literal",
            Step3Weight::Alternate => "alt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaConfig {
    pub theta: f64,
    pub step3_weight: Step3Weight,
}

impl RaConfig {
    pub fn new(theta: f64, step3_weight: Step3Weight) -> Result<Self, RecError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(RecError::InvalidTheta(theta));
        }
        Ok(Self {
            theta,
            step3_weight,
        })
    }
}

/// Initial resource placed on a rated item: `1/|I_u| + ln(|I_u| / |U_i|)`.
/// Negative for popular items picked by inactive users; kept signed.
pub fn initial_resource(user_degree: usize, item_degree: usize) -> f64 {
    let du = user_degree as f64;
    1.0 / du + (du / item_degree as f64).ln()
}

/// Intermediate state of one path-tracked walk.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTrace {
    /// Initial resource per rated item.
    pub initial: Vec<(ItemIdx, f64)>,
    /// Resource each user receives from the rated items.
    pub user_resource: Vec<f64>,
    /// Final resource per item, seen items included.
    pub scores: Vec<f64>,
}

fn ensure_walkable(g: &BipartiteGraph, user: UserIdx) -> Result<&SimilarityMatrix, RecError> {
    let sim = g.item_similarity().ok_or(RecError::MissingSimilarity)?;
    if g.user_degree(user) == 0 {
        return Err(RecError::IsolatedUser(user));
    }
    Ok(sim)
}

/// Enumerates every item → user → item path from the user's rated items.
/// Each path `(i, v, j)` delivers
/// `R1(i) · w_vi / w_i · w · sim(i, j) / (|U_j|^θ · w_v)`
/// with `w` chosen by [`Step3Weight`].
pub fn pimra_trace(g: &BipartiteGraph, user: UserIdx, cfg: &RaConfig) -> Result<WalkTrace, RecError> {
    let sim = ensure_walkable(g, user)?;
    let du = g.user_degree(user);
    let accessibility: Vec<f64> = (0..g.n_items() as u32)
        .map(|j| (g.item_degree(j) as f64).powf(cfg.theta))
        .collect();
    let mut initial = Vec::with_capacity(du);
    let mut user_resource = vec![0.0; g.n_users()];
    let mut scores = vec![0.0; g.n_items()];
    for ei in g.user_items(user) {
        let i = ei.node;
        let r1 = initial_resource(du, g.item_degree(i));
        initial.push((i, r1));
        let wi = g.item_weight(i);
        let sim_row = sim.row(i);
        for ev in g.item_users(i) {
            let v = ev.node;
            let r2 = r1 * ev.weight / wi;
            user_resource[v as usize] += r2;
            let wv = g.user_weight(v);
            for ej in g.user_items(v) {
                let j = ej.node as usize;
                let w = match cfg.step3_weight {
                    Step3Weight::Literal => ev.weight,
                    Step3Weight::Alternate => ej.weight,
                };
                scores[j] += r2 * w * sim_row[j] / (accessibility[j] * wv);
            }
        }
    }
    Ok(WalkTrace {
        initial,
        user_resource,
        scores,
    })
}

pub fn recommend_pimra(
    g: &BipartiteGraph,
    user: UserIdx,
    cfg: &RaConfig,
) -> Result<RecommendationList, RecError> {
    let trace = pimra_trace(g, user, cfg)?;
    Ok(RecommendationList::from_scores(g, user, &trace.scores))
}

/// Batch form of the walk. Summing paths through every shared rater gives
/// an item-item transfer matrix
/// `T(i, j) = sim(i, j) · Σ_{v ∈ U_i ∩ U_j} w_vi · w / w_v`
/// that does not depend on the target user or on θ, so a user's scores are
/// `Σ_{i ∈ I_u} R1(i) / w_i · T(i, j)`, divided by `|U_j|^θ`.
#[derive(Debug, Clone)]
pub struct PimRaScorer {
    n_items: usize,
    transfer: Vec<f64>,
}

impl PimRaScorer {
    pub fn new(g: &BipartiteGraph, step3_weight: Step3Weight) -> Result<Self, RecError> {
        let sim = g.item_similarity().ok_or(RecError::MissingSimilarity)?;
        let n = g.n_items();
        let mut transfer = vec![0.0; n * n];
        transfer
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for ev in g.item_users(i as u32) {
                    let wv = g.user_weight(ev.node);
                    for ej in g.user_items(ev.node) {
                        let w = match step3_weight {
                            Step3Weight::Literal => ev.weight,
                            Step3Weight::Alternate => ej.weight,
                        };
                        row[ej.node as usize] += ev.weight * w / wv;
                    }
                }
                for (cell, s) in row.iter_mut().zip(sim.row(i as u32)) {
                    *cell *= s;
                }
            });
        Ok(Self { n_items: n, transfer })
    }

    /// Scores before the `|U_j|^θ` division.
    pub fn raw_scores(&self, g: &BipartiteGraph, user: UserIdx) -> Result<Vec<f64>, RecError> {
        if g.user_degree(user) == 0 {
            return Err(RecError::IsolatedUser(user));
        }
        let du = g.user_degree(user);
        let mut raw = vec![0.0; self.n_items];
        for ei in g.user_items(user) {
            let i = ei.node;
            let coef = initial_resource(du, g.item_degree(i)) / g.item_weight(i);
            let row = &self.transfer[i as usize * self.n_items..(i as usize + 1) * self.n_items];
            for (acc, t) in raw.iter_mut().zip(row) {
                *acc += coef * t;
            }
        }
        Ok(raw)
    }

    pub fn apply_theta(g: &BipartiteGraph, raw: &[f64], theta: f64) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &r)| match g.item_degree(j as u32) {
                0 => 0.0,
                d => r / (d as f64).powf(theta),
            })
            .collect()
    }

    pub fn recommend(
        &self,
        g: &BipartiteGraph,
        user: UserIdx,
        theta: f64,
    ) -> Result<RecommendationList, RecError> {
        let raw = self.raw_scores(g, user)?;
        Ok(RecommendationList::from_scores(
            g,
            user,
            &Self::apply_theta(g, &raw, theta),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfConfig {
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            learning_rate: 0.005,
            regularization: 0.02,
            epochs: 50,
            seed: 42,
        }
    }
}

/// Biased latent-factor model: `mu + b_u + b_i + p_u · q_i`.
#[derive(Debug, Clone)]
pub struct MfModel {
    scale: RatingScale,
    factors: usize,
    global_mean: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    /// Training RMSE before the first epoch and after each epoch.
    pub rmse_history: Vec<f64>,
}

impl MfModel {
    fn raw_predict(&self, user: UserIdx, item: ItemIdx) -> f64 {
        let f = self.factors;
        let p = &self.user_factors[user as usize * f..(user as usize + 1) * f];
        let q = &self.item_factors[item as usize * f..(item as usize + 1) * f];
        let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
        self.global_mean + self.user_bias[user as usize] + self.item_bias[item as usize] + dot
    }

    pub fn predict(&self, user: UserIdx, item: ItemIdx) -> f64 {
        self.scale.clamp(self.raw_predict(user, item))
    }

    fn rmse(&self, ds: &RatingDataset) -> f64 {
        let sse: f64 = ds
            .ratings()
            .iter()
            .map(|r| (r.value - self.raw_predict(r.user, r.item)).powi(2))
            .sum();
        (sse / ds.len() as f64).sqrt()
    }

    pub fn factor_norm(&self) -> f64 {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Stochastic gradient descent on squared error, visiting ratings in a
/// seeded shuffled order each epoch.
pub fn train_mf(train: &RatingDataset, cfg: &MfConfig) -> Result<MfModel, RecError> {
    if cfg.factors == 0 {
        return Err(RecError::InvalidMfConfig("factors must be >= 1".into()));
    }
    if cfg.epochs == 0 {
        return Err(RecError::InvalidMfConfig("epochs must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(RecError::InvalidMfConfig("empty training set".into()));
    }
    let f = cfg.factors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = |n: usize| -> Vec<f64> { (0..n * f).map(|_| rng.random_range(-0.1..0.1)).collect() };
    let user_factors = init(train.n_users());
    let item_factors = init(train.n_items());
    let global_mean = train.ratings().iter().map(|r| r.value).sum::<f64>() / train.len() as f64;
    let mut model = MfModel {
        scale: train.scale(),
        factors: f,
        global_mean,
        user_bias: vec![0.0; train.n_users()],
        item_bias: vec![0.0; train.n_items()],
        user_factors,
        item_factors,
        rmse_history: Vec::with_capacity(cfg.epochs + 1),
    };
    model.rmse_history.push(model.rmse(train));

    let (lr, reg) = (cfg.learning_rate, cfg.regularization);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let r = train.ratings()[idx];
            let (u, i) = (r.user as usize, r.item as usize);
            let err = r.value - model.raw_predict(r.user, r.item);
            if !err.is_finite() {
                return Err(RecError::Divergence { epoch });
            }
            model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
            model.item_bias[i] += lr * (err - reg * model.item_bias[i]);
            let p = &mut model.user_factors[u * f..(u + 1) * f];
            let q = &mut model.item_factors[i * f..(i + 1) * f];
            for (pu, qi) in p.iter_mut().zip(q.iter_mut()) {
                let (a, b) = (*pu, *qi);
                *pu += lr * (err * b - reg * a);
                *qi += lr * (err * a - reg * b);
            }
        }
        let rmse = model.rmse(train);
        if !rmse.is_finite() {
            return Err(RecError::Divergence { epoch });
        }
        model.rmse_history.push(rmse);
    }
    Ok(model)
}

pub fn recommend_mf(model: &MfModel, g: &BipartiteGraph, user: UserIdx) -> RecommendationList {
    let scores: Vec<f64> = (0..g.n_items() as u32)
        .map(|i| model.predict(user, i))
        .collect();
    RecommendationList::from_scores(g, user, &scores)
}

//! Rating-weighted user-item bipartite network.
//!
//! Both orientations are stored as compressed adjacency lists sorted by
//! node id. Node similarity is attached as dense matrices rather than as
//! literal self-loops; the walk in [`crate::recommend`] reads them to move
//! resource between similar items.

use std::io::Write;
use std::sync::Arc;

use crate::corpus::{ItemIdx, RatingDataset, RatingScale, UserIdx};
use crate::simkit::SimilarityMatrix;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("cannot build a graph from an empty dataset")]
    Empty,
    #[error("rating {0} is negative and cannot weight an edge")]
    NegativeRating(f64),
    #[error("similarity matrix covers {found} {axis}, graph has {expected}")]
    DimensionMismatch {
        axis: Axis,
        expected: usize,
        found: usize,
    },
    #[error("expected a {expected} similarity matrix, got {found}")]
    WrongAxis { expected: Axis, found: Axis },
    #[error("similarity matrix must be normalized before attaching")]
    NotNormalized,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Axis {
    Users,
    Items,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Users => Axis::Items,
            Axis::Items => Axis::Users,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Users => "users",
            Axis::Items => "items",
        })
    }
}

/// One incident edge as seen from a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub node: u32,
    pub rating: f64,
    /// Diffusion weight: the rating, with zero ratings lifted to the scale step.
    pub weight: f64,
}

#[derive(Debug, Clone)]
struct Adjacency {
    offsets: Vec<usize>,
    edges: Vec<Edge>,
    weight_sums: Vec<f64>,
}

impl Adjacency {
    fn build(n: usize, mut pairs: Vec<(u32, Edge)>) -> Self {
        pairs.sort_by_key(|(owner, e)| (*owner, e.node));
        let mut offsets = vec![0usize; n + 1];
        for (owner, _) in &pairs {
            offsets[*owner as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let edges: Vec<Edge> = pairs.into_iter().map(|(_, e)| e).collect();
        let weight_sums = (0..n)
            .map(|i| edges[offsets[i]..offsets[i + 1]].iter().map(|e| e.weight).sum())
            .collect();
        Self {
            offsets,
            edges,
            weight_sums,
        }
    }

    fn row(&self, node: u32) -> &[Edge] {
        let n = node as usize;
        &self.edges[self.offsets[n]..self.offsets[n + 1]]
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Immutable bipartite graph over the id spaces of a [`RatingDataset`].
/// Nodes without ratings are kept with degree zero.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    scale: RatingScale,
    users: Adjacency,
    items: Adjacency,
    item_sim: Option<Arc<SimilarityMatrix>>,
    user_sim: Option<Arc<SimilarityMatrix>>,
}

pub fn build_graph(train: &RatingDataset) -> Result<BipartiteGraph, GraphError> {
    BipartiteGraph::new(train)
}

impl BipartiteGraph {
    pub fn new(train: &RatingDataset) -> Result<Self, GraphError> {
        if train.is_empty() {
            return Err(GraphError::Empty);
        }
        let scale = train.scale();
        let mut by_user = Vec::with_capacity(train.len());
        let mut by_item = Vec::with_capacity(train.len());
        for r in train.ratings() {
            if r.value < 0.0 {
                return Err(GraphError::NegativeRating(r.value));
            }
            let weight = if r.value == 0.0 { scale.step } else { r.value };
            by_user.push((
                r.user,
                Edge {
                    node: r.item,
                    rating: r.value,
                    weight,
                },
            ));
            by_item.push((
                r.item,
                Edge {
                    node: r.user,
                    rating: r.value,
                    weight,
                },
            ));
        }
        Ok(Self {
            scale,
            users: Adjacency::build(train.n_users(), by_user),
            items: Adjacency::build(train.n_items(), by_item),
            item_sim: None,
            user_sim: None,
        })
    }

    fn side(&self, axis: Axis) -> &Adjacency {
        match axis {
            Axis::Users => &self.users,
            Axis::Items => &self.items,
        }
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_links(&self) -> usize {
        self.users.edges.len()
    }

    pub fn len(&self, axis: Axis) -> usize {
        self.side(axis).len()
    }

    /// Edges of `node` on `axis`, sorted by the opposite node's id.
    pub fn edges(&self, axis: Axis, node: u32) -> &[Edge] {
        self.side(axis).row(node)
    }

    pub fn degree(&self, axis: Axis, node: u32) -> usize {
        let side = self.side(axis);
        let n = node as usize;
        side.offsets[n + 1] - side.offsets[n]
    }

    pub fn weight_sum(&self, axis: Axis, node: u32) -> f64 {
        self.side(axis).weight_sums[node as usize]
    }

    pub fn user_items(&self, user: UserIdx) -> &[Edge] {
        self.users.row(user)
    }

    pub fn item_users(&self, item: ItemIdx) -> &[Edge] {
        self.items.row(item)
    }

    /// |I_u|
    pub fn user_degree(&self, user: UserIdx) -> usize {
        self.degree(Axis::Users, user)
    }

    /// |U_i|
    pub fn item_degree(&self, item: ItemIdx) -> usize {
        self.degree(Axis::Items, item)
    }

    pub fn user_weight(&self, user: UserIdx) -> f64 {
        self.users.weight_sums[user as usize]
    }

    pub fn item_weight(&self, item: ItemIdx) -> f64 {
        self.items.weight_sums[item as usize]
    }

    pub fn rating(&self, user: UserIdx, item: ItemIdx) -> Option<f64> {
        let row = self.users.row(user);
        row.binary_search_by_key(&item, |e| e.node)
            .ok()
            .map(|i| row[i].rating)
    }

    /// Mean rating of a node over all its edges; `None` for isolated nodes.
    pub fn mean_rating(&self, axis: Axis, node: u32) -> Option<f64> {
        let row = self.edges(axis, node);
        (!row.is_empty()).then(|| row.iter().map(|e| e.rating).sum::<f64>() / row.len() as f64)
    }

    pub fn attach_similarity(self, item_sim: SimilarityMatrix) -> Result<Self, GraphError> {
        self.attach(Axis::Items, item_sim)
    }

    pub fn attach_user_similarity(self, user_sim: SimilarityMatrix) -> Result<Self, GraphError> {
        self.attach(Axis::Users, user_sim)
    }

    fn attach(mut self, axis: Axis, sim: SimilarityMatrix) -> Result<Self, GraphError> {
        if sim.axis() != axis {
            return Err(GraphError::WrongAxis {
                expected: axis,
                found: sim.axis(),
            });
        }
        if sim.len() != self.len(axis) {
            return Err(GraphError::DimensionMismatch {
                axis,
                expected: self.len(axis),
                found: sim.len(),
            });
        }
        if !sim.is_normalized() {
            return Err(GraphError::NotNormalized);
        }
        let sim = Arc::new(sim.with_unit_diagonal());
        match axis {
            Axis::Items => self.item_sim = Some(sim),
            Axis::Users => self.user_sim = Some(sim),
        }
        Ok(self)
    }

    pub fn item_similarity(&self) -> Option<&SimilarityMatrix> {
        self.item_sim.as_deref()
    }

    pub fn user_similarity(&self) -> Option<&SimilarityMatrix> {
        self.user_sim.as_deref()
    }

    /// Debug dump as `user,item,weight` over internal ids.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), GraphError> {
        writeln!(out, "user,item,weight")?;
        for user in 0..self.n_users() as u32 {
            for e in self.user_items(user) {
                writeln!(out, "{},{},{}", user, e.node, e.weight)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{fix4, RawRating};

    fn graph() -> BipartiteGraph {
        BipartiteGraph::new(&fix4()).unwrap()
    }

    #[test]
    fn fix4_degrees_and_sums() {
        let g = graph();
        assert_eq!(g.item_degree(2), 3);
        assert_eq!(g.user_degree(0), 3);
        assert_eq!(g.item_weight(2), 7.0);
        assert_eq!(g.user_weight(0), 10.0);
        assert_eq!(g.rating(0, 1), None);
        assert_eq!(g.rating(2, 2), Some(1.0));
    }

    #[test]
    fn orientations_agree() {
        let g = graph();
        let du: usize = (0..4).map(|u| g.user_degree(u)).sum();
        let di: usize = (0..4).map(|i| g.item_degree(i)).sum();
        assert_eq!((du, di), (10, 10));
        let wu: f64 = (0..4).map(|u| g.user_weight(u)).sum();
        let wi: f64 = (0..4).map(|i| g.item_weight(i)).sum();
        assert_eq!(wu, wi);
        for u in 0..4 {
            for e in g.user_items(u) {
                assert!(g.item_users(e.node).iter().any(|b| b.node == u && b.weight == e.weight));
            }
        }
    }

    #[test]
    fn single_triple() {
        let raw = [RawRating {
            line: 1,
            user: "a".into(),
            item: "b".into(),
            value: 4.0,
            timestamp: None,
        }];
        let ds = RatingDataset::from_raw(&raw, RatingScale::STARS).unwrap();
        let g = BipartiteGraph::new(&ds).unwrap();
        assert_eq!((g.user_degree(0), g.item_degree(0)), (1, 1));
        assert_eq!((g.user_weight(0), g.item_weight(0)), (4.0, 4.0));
    }

    #[test]
    fn zero_rating_is_clamped() {
        let scale = RatingScale::new(0.0, 1.0, 0.2).unwrap();
        let raw = [
            RawRating { line: 1, user: "a".into(), item: "x".into(), value: 0.0, timestamp: None },
            RawRating { line: 2, user: "a".into(), item: "y".into(), value: 0.6, timestamp: None },
        ];
        let g = BipartiteGraph::new(&RatingDataset::from_raw(&raw, scale).unwrap()).unwrap();
        assert_eq!(g.user_items(0)[0].weight, 0.2);
        assert_eq!(g.user_items(0)[0].rating, 0.0);
        assert!((g.user_weight(0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = RatingDataset::empty(RatingScale::STARS);
        assert!(matches!(BipartiteGraph::new(&ds), Err(GraphError::Empty)));
    }

    #[test]
    fn attach_checks_dimensions() {
        let g = graph();
        let bad = SimilarityMatrix::identity(Axis::Items, 3);
        assert!(matches!(
            g.clone().attach_similarity(bad),
            Err(GraphError::DimensionMismatch { expected: 4, found: 3, .. })
        ));
        let g = g.attach_similarity(SimilarityMatrix::identity(Axis::Items, 4)).unwrap();
        let sim = g.item_similarity().unwrap();
        for i in 0..4 {
            assert_eq!(sim.value(i, i), 1.0);
        }
    }

    #[test]
    fn dump() {
        let mut buf = Vec::new();
        graph().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("user,item,weight\n0,0,5\n"));
    }
}

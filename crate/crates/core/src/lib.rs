//! Similarity-aware mass diffusion on user-item rating graphs, with the
//! collaborative-filtering baselines and the evaluation harness used to
//! compare them.

pub mod bigraph;
pub mod conf;
pub mod corpus;
pub mod evalmetrics;
pub mod harness;
pub mod recommend;
pub mod simkit;

pub use bigraph::{build_graph, Axis, BipartiteGraph, GraphError};
pub use conf::{ConfigError, ExperimentConfig};
pub use corpus::{
    dataset_stats, filter_dataset, kfold_split, load_ratings, read_ratings, DataFormat,
    FilterSpec, FoldPair, RatingDataset, RatingScale,
};
pub use harness::{EvaluationReport, HarnessError, Method};
pub use recommend::{CfMode, MfConfig, RaConfig, RecommendationList, Step3Weight};
pub use simkit::{Measure, PenaltyVariant, SimilarityMatrix};

//! Experiment orchestration: fold preparation, method runs, parameter
//! sweeps, corpus analyses and CSV/JSON reporting.
//!
//! Similarity matrices are computed once per fold and shared by every
//! method and metric that needs them. Per-user work runs on the rayon pool;
//! every reduction happens in user order, so reports are byte-identical
//! across runs and thread counts.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bigraph::{Axis, BipartiteGraph, GraphError};
use crate::conf::{ConfigError, ExperimentConfig};
use crate::corpus::{
    self, explicit_split, filter_dataset, kfold_split, read_raw, CorpusError, FoldPair, ItemIdx,
    RatingDataset, UserIdx,
};
use crate::evalmetrics::{
    ars, avg_popularity, gini, internal_diversity, inter_user_diversity, novelty, nrmse,
    LikedTestSet, MetricError, RecCountVector,
};
use crate::recommend::{
    predict_rating_knn_curve, recommend_knn_cf, recommend_md, recommend_mf, train_mf,
    write_lists_csv, CfMode, MfConfig, PimRaScorer, RecError, RecommendationList,
};
use crate::simkit::{cri_ratio, similarity, Measure, SimError, SimilarityMatrix};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Similarity(#[from] SimError),
    #[error("{method} failed: {source}")]
    Method {
        method: String,
        #[source]
        source: RecError,
    },
    #[error("no input dataset given")]
    NoInput,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("regression needs at least three points with distinct x values")]
    Regression,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Ubcf,
    Ibcf,
    Svd,
    Md,
    PimRa,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ubcf,
        Method::Ibcf,
        Method::Svd,
        Method::Md,
        Method::PimRa,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ubcf => "UBCF",
            Method::Ibcf => "IBCF",
            Method::Svd => "SVD",
            Method::Md => "MD",
            Method::PimRa => "PIM+RA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ubcf" => Ok(Method::Ubcf),
            "ibcf" => Ok(Method::Ibcf),
            "svd" | "mf" => Ok(Method::Svd),
            "md" => Ok(Method::Md),
            "pim+ra" | "pimra" | "pim-ra" => Ok(Method::PimRa),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Loads the configured input and applies the configured filters.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<RatingDataset, HarnessError> {
    let path = cfg.input.as_deref().ok_or(HarnessError::NoInput)?;
    let ds = corpus::load_ratings(path, cfg.format, cfg.scale)?;
    if cfg.filter.is_noop() {
        return Ok(ds);
    }
    Ok(filter_dataset(&ds, &cfg.filter)?)
}

fn read_rows(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<corpus::RawRating>, HarnessError> {
    let file = corpus::open(path)?;
    Ok(read_raw(io::BufReader::new(file), cfg.format)?)
}

/// Train/test pairs: the explicit split when `test_input` is set, otherwise
/// a seeded k-fold partition of the filtered input.
pub fn prepare_folds(cfg: &ExperimentConfig) -> Result<Vec<FoldPair>, HarnessError> {
    cfg.validate()?;
    if let Some(test) = &cfg.test_input {
        let train_path = cfg.input.as_deref().ok_or(HarnessError::NoInput)?;
        let train = read_rows(train_path, cfg)?;
        let test = read_rows(test, cfg)?;
        return Ok(vec![explicit_split(&train, &test, cfg.scale)?]);
    }
    let ds = load_dataset(cfg)?;
    Ok(kfold_split(&ds, cfg.folds, cfg.seed)?)
}

/// One row of a report. `None` parameters print as empty cells and a
/// `None` value prints as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub dataset: String,
    /// `None` marks a cross-fold mean.
    pub fold: Option<usize>,
    pub method: String,
    pub theta: Option<f64>,
    pub list_len: Option<usize>,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_ratings: usize,
    pub test_ratings: usize,
    pub eval_users: usize,
    pub excluded_users: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub folds: Vec<FoldSummary>,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
    pub manifest: RunManifest,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Hex SHA-256 of the rendered configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.render().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

type RowKey = (String, Option<u64>, Option<usize>, String);

fn row_key(r: &MetricRow) -> RowKey {
    (
        r.method.clone(),
        r.theta.map(f64::to_bits),
        r.list_len,
        r.metric.clone(),
    )
}

impl EvaluationReport {
    fn new(command: &str, cfg: &ExperimentConfig, started: u64) -> Self {
        Self {
            rows: Vec::new(),
            manifest: RunManifest {
                command: command.to_string(),
                dataset: cfg.dataset_label(),
                seed: cfg.seed,
                config_hash: config_hash(cfg),
                config: cfg.render(),
                started_unix: started,
                finished_unix: started,
                folds: Vec::new(),
            },
        }
    }

    /// Appends one mean row per (method, theta, L, metric), in first
    /// appearance order, averaging the folds where the value is present.
    fn add_means(&mut self) {
        let mut order: Vec<RowKey> = Vec::new();
        let mut acc: Vec<(f64, usize)> = Vec::new();
        let mut proto: Vec<MetricRow> = Vec::new();
        for row in &self.rows {
            let key = row_key(row);
            let slot = match order.iter().position(|k| *k == key) {
                Some(s) => s,
                None => {
                    order.push(key);
                    acc.push((0.0, 0));
                    proto.push(row.clone());
                    order.len() - 1
                }
            };
            if let Some(v) = row.value {
                acc[slot].0 += v;
                acc[slot].1 += 1;
            }
        }
        for (mut row, (sum, n)) in proto.into_iter().zip(acc) {
            row.fold = None;
            row.value = (n > 0).then(|| sum / n as f64);
            self.rows.push(row);
        }
    }

    fn finish(&mut self) {
        self.add_means();
        self.manifest.finished_unix = unix_now();
    }

    /// Looks up a cross-fold mean.
    pub fn mean(&self, method: &str, metric: &str, theta: Option<f64>, list_len: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.fold.is_none()
                    && r.method == method
                    && r.metric == metric
                    && r.theta.map(f64::to_bits) == theta.map(f64::to_bits)
                    && r.list_len == list_len
            })
            .and_then(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "dataset,fold,method,theta,L,metric,value")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.dataset,
                r.fold.map_or("mean".to_string(), |f| f.to_string()),
                r.method,
                r.theta.map_or(String::new(), |t| t.to_string()),
                r.list_len.map_or(String::new(), |l| l.to_string()),
                r.metric,
                r.value.map_or("NA".to_string(), |v| format!("{v:.4}"))
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is UTF-8")
    }

    /// Writes `<stem>.csv` and `<stem>_manifest.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path, stem: &str) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        let json = fs::File::create(dir.join(format!("{stem}_manifest.json")))?;
        serde_json::to_writer_pretty(BufWriter::new(json), &self.manifest)?;
        Ok(())
    }
}

/// Similarity matrices of one fold, computed on first use.
struct SimCache {
    entries: Vec<((Axis, Measure), Arc<SimilarityMatrix>)>,
}

impl SimCache {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn get(
        &mut self,
        g: &BipartiteGraph,
        axis: Axis,
        measure: Measure,
        cfg: &ExperimentConfig,
    ) -> Result<Arc<SimilarityMatrix>, HarnessError> {
        if let Some((_, m)) = self.entries.iter().find(|(k, _)| *k == (axis, measure)) {
            return Ok(Arc::clone(m));
        }
        let m = match similarity(g, axis, measure, cfg.penalty) {
            Ok(m) => m,
            Err(SimError::NoDefinedPairs) => {
                warn!("no defined {measure} pairs over {axis}; using identity similarity");
                SimilarityMatrix::identity(axis, g.len(axis))
            }
            Err(e) => return Err(e.into()),
        };
        let m = Arc::new(m);
        self.entries.push(((axis, measure), Arc::clone(&m)));
        Ok(m)
    }
}

/// Everything a fold's methods and metrics share.
struct FoldContext {
    pair: FoldPair,
    graph: BipartiteGraph,
    sims: SimCache,
    likes: LikedTestSet,
    users: Vec<UserIdx>,
    excluded: usize,
}

impl FoldContext {
    fn new(pair: FoldPair, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let graph = BipartiteGraph::new(&pair.train)?;
        let likes = LikedTestSet::from_test(&pair.test, cfg.like_threshold());
        let mut test_users = vec![false; pair.test.n_users()];
        for r in pair.test.ratings() {
            test_users[r.user as usize] = true;
        }
        let users: Vec<UserIdx> = (0..graph.n_users() as u32)
            .filter(|&u| graph.user_degree(u) > 0 && !likes.liked(u).is_empty())
            .collect();
        let excluded = test_users.iter().filter(|&&t| t).count().saturating_sub(users.len());
        info!(
            "fold {}: {} train / {} test ratings, {} evaluated users, {} test users excluded",
            pair.fold,
            pair.train.len(),
            pair.test.len(),
            users.len(),
            excluded
        );
        Ok(Self {
            pair,
            graph,
            sims: SimCache::new(),
            likes,
            users,
            excluded,
        })
    }

    fn summary(&self) -> FoldSummary {
        FoldSummary {
            fold: self.pair.fold,
            train_ratings: self.pair.train.len(),
            test_ratings: self.pair.test.len(),
            eval_users: self.users.len(),
            excluded_users: self.excluded,
        }
    }

    fn sim(&mut self, axis: Axis, measure: Measure, cfg: &ExperimentConfig) -> Result<Arc<SimilarityMatrix>, HarnessError> {
        self.sims.get(&self.graph, axis, measure, cfg)
    }

    /// The training graph with the PIM item similarity attached.
    fn walk_graph(&mut self, cfg: &ExperimentConfig) -> Result<BipartiteGraph, HarnessError> {
        let pim = self.sim(Axis::Items, Measure::Pim, cfg)?;
        Ok(self.graph.clone().attach_similarity((*pim).clone())?)
    }

    fn pimra_scorer(&mut self, cfg: &ExperimentConfig) -> Result<(BipartiteGraph, PimRaScorer), HarnessError> {
        let g = self.walk_graph(cfg)?;
        let scorer = PimRaScorer::new(&g, cfg.step3_weight).map_err(|e| method_err(Method::PimRa, e))?;
        Ok((g, scorer))
    }

    fn rank(&mut self, method: Method, cfg: &ExperimentConfig) -> Result<Vec<RecommendationList>, HarnessError> {
        let users = &self.users;
        let lists: Result<Vec<_>, RecError> = match method {
            Method::Md => users.par_iter().map(|&u| recommend_md(&self.graph, u)).collect(),
            Method::PimRa => {
                let (g, scorer) = self.pimra_scorer(cfg)?;
                self.users
                    .par_iter()
                    .map(|&u| scorer.recommend(&g, u, cfg.theta))
                    .collect()
            }
            Method::Ubcf | Method::Ibcf => {
                let mode = if method == Method::Ubcf {
                    CfMode::UserBased
                } else {
                    CfMode::ItemBased
                };
                let sim = self.sim(mode.axis(), cfg.cf_measure, cfg)?;
                self.users
                    .par_iter()
                    .map(|&u| recommend_knn_cf(&sim, &self.graph, u, mode, cfg.knn_k))
                    .collect()
            }
            Method::Svd => {
                let mf = MfConfig {
                    seed: fold_seed(cfg.seed, self.pair.fold),
                    ..cfg.mf
                };
                let model = train_mf(&self.pair.train, &mf).map_err(|e| method_err(method, e))?;
                Ok(users
                    .par_iter()
                    .map(|&u| recommend_mf(&model, &self.graph, u))
                    .collect())
            }
        };
        lists.map_err(|e| method_err(method, e))
    }
}

fn method_err(method: Method, source: RecError) -> HarnessError {
    HarnessError::Method {
        method: method.label().to_string(),
        source,
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

fn present(metric: &str, result: Result<f64, MetricError>) -> Option<f64> {
    match result {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("{metric} marked absent: {e}");
            None
        }
    }
}

/// Top-`len` metrics of one set of rankings.
fn list_metrics(
    lists: &[RecommendationList],
    len: usize,
    g: &BipartiteGraph,
    metric_sim: &SimilarityMatrix,
) -> Vec<(&'static str, Option<f64>)> {
    let tops: Vec<Vec<ItemIdx>> = lists.iter().map(|l| l.top_items(len)).collect();
    let histories: Vec<&[ItemIdx]> = lists.iter().map(|l| l.seen.as_slice()).collect();
    let counts = RecCountVector::from_lists(&tops, g.n_items());
    vec![
        ("Gini", present("Gini", gini(&counts))),
        ("ID", present("ID", internal_diversity(&tops, metric_sim))),
        ("IUD", present("IUD", inter_user_diversity(&tops, len, g.n_items()))),
        ("Novelty", present("Novelty", novelty(&tops, &histories, metric_sim))),
        ("AvgPop", present("AvgPop", avg_popularity(&tops, g))),
    ]
}

struct RowSink<'a> {
    rows: &'a mut Vec<MetricRow>,
    dataset: &'a str,
    fold: usize,
}

impl RowSink<'_> {
    fn push(&mut self, method: &str, theta: Option<f64>, list_len: Option<usize>, metric: &str, value: Option<f64>) {
        self.rows.push(MetricRow {
            dataset: self.dataset.to_string(),
            fold: Some(self.fold),
            method: method.to_string(),
            theta,
            list_len,
            metric: metric.to_string(),
            value,
        });
    }

    fn push_ranking(
        &mut self,
        method: &str,
        theta: Option<f64>,
        lists: &[RecommendationList],
        ctx: &FoldContext,
        metric_sim: &SimilarityMatrix,
        len: usize,
    ) {
        self.push(method, theta, None, "ARS", present("ARS", ars(lists, &ctx.likes)));
        for (metric, value) in list_metrics(lists, len, &ctx.graph, metric_sim) {
            self.push(method, theta, Some(len), metric, value);
        }
    }
}

fn method_theta(method: Method, cfg: &ExperimentConfig) -> Option<f64> {
    (method == Method::PimRa).then_some(cfg.theta)
}

fn export_lists(
    cfg: &ExperimentConfig,
    name: &str,
    fold: usize,
    lists: &[RecommendationList],
    labels: &RatingDataset,
) -> Result<(), HarnessError> {
    let Some(dir) = cfg.out_dir.as_deref().filter(|_| cfg.export_recs) else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let file = fs::File::create(dir.join(format!("recs_{slug}_fold{fold}.csv")))?;
    let mut out = BufWriter::new(file);
    write_lists_csv(lists, labels, cfg.list_len, &mut out).map_err(|e| match e {
        RecError::Io(io) => HarnessError::Io(io),
        other => HarnessError::Method {
            method: name.to_string(),
            source: other,
        },
    })?;
    out.flush()?;
    Ok(())
}

fn run_folds<F>(cfg: &ExperimentConfig, command: &str, mut per_fold: F) -> Result<EvaluationReport, HarnessError>
where
    F: FnMut(&mut FoldContext, &mut RowSink<'_>) -> Result<(), HarnessError>,
{
    let started = unix_now();
    cfg.validate()?;
    let folds = prepare_folds(cfg)?;
    let mut report = EvaluationReport::new(command, cfg, started);
    let dataset = cfg.dataset_label();
    for pair in folds {
        let fold = pair.fold;
        let mut ctx = FoldContext::new(pair, cfg)?;
        let mut sink = RowSink {
            rows: &mut report.rows,
            dataset: &dataset,
            fold,
        };
        per_fold(&mut ctx, &mut sink)?;
        report.manifest.folds.push(ctx.summary());
    }
    report.finish();
    Ok(report)
}

/// Runs every configured method on every fold and scores ARS over the full
/// candidate rankings plus the top-L list metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvaluationReport, HarnessError> {
    run_folds(cfg, "eval", |ctx, sink| {
        let metric_sim = ctx.sim(Axis::Items, cfg.metric_sim, cfg)?;
        for &method in &cfg.methods {
            let lists = ctx.rank(method, cfg)?;
            export_lists(cfg, method.label(), ctx.pair.fold, &lists, &ctx.pair.train)?;
            sink.push_ranking(method.label(), method_theta(method, cfg), &lists, ctx, &metric_sim, cfg.list_len);
        }
        Ok(())
    })
}

/// PIM+RA over each configured θ. The θ-free part of every user's scores
/// is computed once per fold and rescaled per θ.
pub fn sweep_theta(cfg: &ExperimentConfig) -> Result<EvaluationReport, HarnessError> {
    run_folds(cfg, "sweep-theta", |ctx, sink| {
        let metric_sim = ctx.sim(Axis::Items, cfg.metric_sim, cfg)?;
        let (g, scorer) = ctx.pimra_scorer(cfg)?;
        let raw: Vec<Vec<f64>> = ctx
            .users
            .par_iter()
            .map(|&u| scorer.raw_scores(&g, u))
            .collect::<Result<_, _>>()
            .map_err(|e| method_err(Method::PimRa, e))?;
        for &theta in &cfg.thetas {
            let lists: Vec<RecommendationList> = ctx
                .users
                .par_iter()
                .zip(raw.par_iter())
                .map(|(&u, r)| RecommendationList::from_scores(&g, u, &PimRaScorer::apply_theta(&g, r, theta)))
                .collect();
            sink.push_ranking(Method::PimRa.label(), Some(theta), &lists, ctx, &metric_sim, cfg.list_len);
        }
        Ok(())
    })
}

/// Top-L metrics of every configured method over each list length. Each
/// method ranks once per fold.
pub fn sweep_list_length(cfg: &ExperimentConfig) -> Result<EvaluationReport, HarnessError> {
    run_folds(cfg, "sweep-length", |ctx, sink| {
        let metric_sim = ctx.sim(Axis::Items, cfg.metric_sim, cfg)?;
        for &method in &cfg.methods {
            let lists = ctx.rank(method, cfg)?;
            for &len in &cfg.lengths {
                for (metric, value) in list_metrics(&lists, len, &ctx.graph, &metric_sim) {
                    sink.push(method.label(), method_theta(method, cfg), Some(len), metric, value);
                }
            }
        }
        Ok(())
    })
}

/// Method label used by the neighborhood sweep, e.g. `UBCF-PIM(k=20)`.
pub fn knn_label(mode: CfMode, measure: Measure, k: usize) -> String {
    format!("{}-{}(k={})", mode.label(), measure.label(), k)
}

/// NRMSE of neighborhood rating prediction on every test rating, for each
/// similarity measure, CF mode and neighborhood size.
pub fn sweep_knn(cfg: &ExperimentConfig) -> Result<EvaluationReport, HarnessError> {
    run_folds(cfg, "sweep-knn", |ctx, sink| {
        let scale = ctx.graph.scale();
        for &measure in &cfg.measures {
            for &mode in &cfg.modes {
                let sim = ctx.sim(mode.axis(), measure, cfg)?;
                let g = &ctx.graph;
                let curves: Vec<(Vec<f64>, f64)> = ctx
                    .pair
                    .test
                    .ratings()
                    .par_iter()
                    .map(|r| (predict_rating_knn_curve(&sim, g, mode, r.user, r.item, &cfg.ks), r.value))
                    .collect();
                for (slot, &k) in cfg.ks.iter().enumerate() {
                    let pairs: Vec<(f64, f64)> = curves.iter().map(|(p, a)| (p[slot], *a)).collect();
                    let value = present("NRMSE", nrmse(&pairs, &scale));
                    sink.push(&knn_label(mode, measure, k), None, None, "NRMSE", value);
                }
            }
        }
        Ok(())
    })
}

/// Full-data ranking for one user, as served by the `recommend` command.
pub fn recommend_user(
    cfg: &ExperimentConfig,
    user: &str,
    method: Method,
) -> Result<(RatingDataset, RecommendationList), HarnessError> {
    let ds = load_dataset(cfg)?;
    let idx = ds
        .user_index(user)
        .ok_or_else(|| HarnessError::UnknownUser(user.to_string()))?;
    let pair = FoldPair {
        fold: 0,
        train: ds.clone(),
        test: RatingDataset::empty(ds.scale()),
    };
    let mut ctx = FoldContext::new(pair, cfg)?;
    ctx.users = vec![idx];
    let list = ctx.rank(method, cfg)?.pop().expect("one user ranked");
    Ok((ds, list))
}

/// Ordinary least-squares fit of `y = intercept + slope · x` with the
/// two-sided p-value of the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regression {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub p_value: f64,
}

pub fn ols(points: &[(f64, f64)]) -> Result<Regression, HarnessError> {
    let n = points.len();
    if n < 3 {
        return Err(HarnessError::Regression);
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Regression);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let p_value = if se == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, nf - 2.0).expect("positive degrees of freedom");
        2.0 * (1.0 - t.cdf((slope / se).abs()))
    };
    Ok(Regression {
        n,
        slope,
        intercept,
        p_value,
    })
}

/// Standardized third central moment; 0 for an empty or constant sample.
pub fn skewness(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// One degree level: how many nodes have it and the mean of a per-node value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub nodes: usize,
    pub mean: f64,
}

fn group_by_level(points: &[(usize, f64)]) -> Vec<LevelRow> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    let mut out: Vec<LevelRow> = Vec::new();
    for (level, value) in sorted {
        match out.last_mut() {
            Some(row) if row.level == level => {
                row.mean += value;
                row.nodes += 1;
            }
            _ => out.push(LevelRow {
                level,
                nodes: 1,
                mean: value,
            }),
        }
    }
    for row in &mut out {
        row.mean /= row.nodes as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilaritySample {
    pub user_a: UserIdx,
    pub user_b: UserIdx,
    pub cri_ratio: f64,
    pub pcc: f64,
    pub pim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusAnalysis {
    /// Seeded sample of active users; every unordered pair is reported.
    pub sampled_users: Vec<UserIdx>,
    pub pairs: Vec<SimilaritySample>,
    pub cri_skewness: f64,
    /// Activity level against the mean popularity of the items rated.
    pub activity: Vec<LevelRow>,
    pub activity_fit: Regression,
    /// Popularity level against the mean rating received.
    pub popularity: Vec<LevelRow>,
    pub popularity_fit: Regression,
}

/// Co-rating, activity/popularity and similarity-distribution analyses.
/// Regressions are fitted over individual users and items, not levels.
pub fn analyze_corpus(ds: &RatingDataset, cfg: &ExperimentConfig) -> Result<CorpusAnalysis, HarnessError> {
    let g = BipartiteGraph::new(ds)?;
    let active: Vec<UserIdx> = (0..g.n_users() as u32).filter(|&u| g.user_degree(u) > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let take = cfg.sample_users.min(active.len());
    let mut sampled: Vec<UserIdx> = rand::seq::index::sample(&mut rng, active.len(), take)
        .into_iter()
        .map(|k| active[k])
        .collect();
    sampled.sort_unstable();

    let pcc = similarity(&g, Axis::Users, Measure::Pearson, cfg.penalty)?;
    let pim = similarity(&g, Axis::Users, Measure::Pim, cfg.penalty)?;
    let mut pairs = Vec::new();
    for (k, &a) in sampled.iter().enumerate() {
        for &b in &sampled[k + 1..] {
            pairs.push(SimilaritySample {
                user_a: a,
                user_b: b,
                cri_ratio: cri_ratio(&g, Axis::Users, a, b),
                pcc: pcc.value(a, b),
                pim: pim.value(a, b),
            });
        }
    }
    let ratios: Vec<f64> = pairs.iter().map(|p| p.cri_ratio).collect();

    let activity_points: Vec<(usize, f64)> = active
        .iter()
        .map(|&u| {
            let items = g.user_items(u);
            let pop = items.iter().map(|e| g.item_degree(e.node) as f64).sum::<f64>() / items.len() as f64;
            (items.len(), pop)
        })
        .collect();
    let popularity_points: Vec<(usize, f64)> = (0..g.n_items() as u32)
        .filter_map(|i| g.mean_rating(Axis::Items, i).map(|m| (g.item_degree(i), m)))
        .collect();
    let as_f64 = |pts: &[(usize, f64)]| pts.iter().map(|&(x, y)| (x as f64, y)).collect::<Vec<_>>();

    Ok(CorpusAnalysis {
        sampled_users: sampled,
        cri_skewness: skewness(&ratios),
        pairs,
        activity_fit: ols(&as_f64(&activity_points))?,
        activity: group_by_level(&activity_points),
        popularity_fit: ols(&as_f64(&popularity_points))?,
        popularity: group_by_level(&popularity_points),
    })
}

impl CorpusAnalysis {
    /// `statistic,value` summary lines.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("statistic,value\n");
        let stats = [
            ("cri_skewness", self.cri_skewness),
            ("activity_slope", self.activity_fit.slope),
            ("activity_p_value", self.activity_fit.p_value),
            ("popularity_slope", self.popularity_fit.slope),
            ("popularity_p_value", self.popularity_fit.p_value),
        ];
        for (name, v) in stats {
            out.push_str(&format!("{name},{v:.4}\n"));
        }
        out
    }

    /// Writes the summary plus one table per analysis into `dir`.
    pub fn write_to_dir(&self, dir: &Path, labels: &RatingDataset) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("analysis_summary.csv"), self.summary_csv())?;
        let mut pairs = BufWriter::new(fs::File::create(dir.join("user_pairs.csv"))?);
        writeln!(pairs, "user_a,user_b,cri_ratio,pcc,pim")?;
        for p in &self.pairs {
            writeln!(
                pairs,
                "{},{},{:.4},{:.4},{:.4}",
                labels.user_label(p.user_a),
                labels.user_label(p.user_b),
                p.cri_ratio,
                p.pcc,
                p.pim
            )?;
        }
        pairs.flush()?;
        for (name, header, rows) in [
            ("activity_popularity.csv", "activity,users,mean_item_popularity", &self.activity),
            ("popularity_rating.csv", "popularity,items,mean_rating", &self.popularity),
        ] {
            let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
            writeln!(out, "{header}")?;
            for r in rows {
                writeln!(out, "{},{},{:.4}", r.level, r.nodes, r.mean)?;
            }
            out.flush()?;
        }
        Ok(())
    }
}

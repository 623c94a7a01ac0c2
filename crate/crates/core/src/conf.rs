//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments. Lists are comma separated. Every
//! key accepted by [`ExperimentConfig::set`] is also emitted by
//! [`ExperimentConfig::render`], so a rendered config parses back to itself.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::corpus::{DataFormat, FilterSpec, RatingScale};
use crate::evalmetrics::default_like_threshold;
use crate::harness::Method;
use crate::recommend::{CfMode, MfConfig, Step3Weight};
use crate::simkit::{Measure, PenaltyVariant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key}: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{key}: {message}")]
    Override { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: Option<String>,
    pub input: Option<PathBuf>,
    pub format: DataFormat,
    pub scale: RatingScale,
    /// Fixed test set; when present the input is the single training split.
    pub test_input: Option<PathBuf>,
    pub filter: FilterSpec,
    pub folds: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub list_len: usize,
    /// `None` picks the default for the scale.
    pub like_threshold: Option<f64>,
    /// Item similarity used by internal diversity and novelty.
    pub metric_sim: Measure,
    pub knn_k: usize,
    /// Similarity behind the UBCF and IBCF baselines.
    pub cf_measure: Measure,
    pub theta: f64,
    pub penalty: PenaltyVariant,
    pub step3_weight: Step3Weight,
    pub mf: MfConfig,
    pub thetas: Vec<f64>,
    pub lengths: Vec<usize>,
    pub ks: Vec<usize>,
    pub measures: Vec<Measure>,
    pub modes: Vec<CfMode>,
    pub sample_users: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
    pub export_recs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            input: None,
            format: DataFormat::Ml100kTsv,
            scale: RatingScale::STARS,
            test_input: None,
            filter: FilterSpec::default(),
            folds: 5,
            seed: 42,
            methods: Method::ALL.to_vec(),
            list_len: 100,
            like_threshold: None,
            metric_sim: Measure::Cosine,
            knn_k: 20,
            cf_measure: Measure::Pearson,
            theta: 0.6,
            penalty: PenaltyVariant::PairMax,
            step3_weight: Step3Weight::Literal,
            mf: MfConfig::default(),
            thetas: (0..=10).map(|t| t as f64 / 10.0).collect(),
            lengths: (1..=10).map(|l| l * 10).collect(),
            ks: vec![5, 10, 20, 30, 40, 50, 60, 80, 100],
            measures: vec![Measure::Cosine, Measure::Pearson, Measure::Pim],
            modes: vec![CfMode::UserBased, CfMode::ItemBased],
            sample_users: 50,
            threads: 0,
            out_dir: None,
            export_recs: false,
        }
    }
}

fn list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn one<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Applies every line of `text` on top of the current values.
    pub fn merge(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let key = key.trim();
            match self.set(key, value.trim()) {
                Ok(()) => {}
                Err(SetError::Unknown) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Err(SetError::Bad(message)) => {
                    return Err(ConfigError::Value {
                        line,
                        key: key.to_string(),
                        message,
                    })
                }
            }
        }
        Ok(())
    }

    /// Sets one key outside of a file, as command-line flags do.
    pub fn set_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set(key, value).map_err(|e| ConfigError::Override {
            key: key.to_string(),
            message: match e {
                SetError::Unknown => "unknown key".to_string(),
                SetError::Bad(m) => m,
            },
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "input" => self.input = Some(PathBuf::from(value)),
            "format" => self.format = one(value)?,
            "scale" => self.scale = one(value)?,
            "test_input" => self.test_input = Some(PathBuf::from(value)),
            "top_items" => self.filter.top_items = one(value)?,
            "item_ratings_above" => self.filter.item_ratings_above = one(value)?,
            "user_ratings_above" => self.filter.user_ratings_above = one(value)?,
            "folds" => self.folds = one(value)?,
            "seed" => self.seed = one(value)?,
            "methods" => self.methods = list(value)?,
            "list_len" | "L" => self.list_len = one(value)?,
            "like_threshold" => {
                self.like_threshold = match value {
                    "auto" => None,
                    v => Some(one(v)?),
                }
            }
            "metric_sim" => self.metric_sim = one(value)?,
            "knn_k" | "k" => self.knn_k = one(value)?,
            "cf_measure" => self.cf_measure = one(value)?,
            "theta" => self.theta = one(value)?,
            "penalty" => self.penalty = one(value)?,
            "step3_weight" => self.step3_weight = one(value)?,
            "mf_factors" => self.mf.factors = one(value)?,
            "mf_learning_rate" => self.mf.learning_rate = one(value)?,
            "mf_regularization" => self.mf.regularization = one(value)?,
            "mf_epochs" => self.mf.epochs = one(value)?,
            "thetas" => self.thetas = list(value)?,
            "lengths" => self.lengths = list(value)?,
            "ks" => self.ks = list(value)?,
            "measures" => self.measures = list(value)?,
            "modes" => self.modes = list(value)?,
            "sample_users" => self.sample_users = one(value)?,
            "threads" => self.threads = one(value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "export_recs" => self.export_recs = one(value)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.test_input.is_none() && self.folds < 2 {
            return fail("folds must be at least 2");
        }
        if self.methods.is_empty() {
            return fail("no methods selected");
        }
        if self.list_len == 0 {
            return fail("list length must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.theta) || self.thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return fail("theta values must lie in [0, 1]");
        }
        if self.lengths.contains(&0) {
            return fail("list lengths must be at least 1");
        }
        if self.knn_k == 0 || self.ks.contains(&0) {
            return fail("neighborhood sizes must be at least 1");
        }
        if self.mf.factors == 0 || self.mf.epochs == 0 {
            return fail("mf_factors and mf_epochs must be at least 1");
        }
        if self.like_threshold.is_some_and(|t| !t.is_finite()) {
            return fail("like_threshold must be finite");
        }
        if self.test_input.is_some() && !self.filter.is_noop() {
            return fail("filters apply to k-fold runs only, not to an explicit test split");
        }
        Ok(())
    }

    pub fn like_threshold(&self) -> f64 {
        self.like_threshold
            .unwrap_or_else(|| default_like_threshold(&self.scale))
    }

    /// Label used in report rows: the `dataset` key, else the input file stem.
    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.dataset {
            return name.clone();
        }
        self.input
            .as_deref()
            .and_then(|p| p.file_stem())
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
    }

    /// The fully resolved configuration in the same `key = value` syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(d) = &self.dataset {
            put("dataset", d.clone());
        }
        if let Some(p) = &self.input {
            put("input", p.display().to_string());
        }
        put("format", self.format.to_string());
        put("scale", self.scale.to_string());
        if let Some(p) = &self.test_input {
            put("test_input", p.display().to_string());
        }
        put("top_items", self.filter.top_items.to_string());
        put("item_ratings_above", self.filter.item_ratings_above.to_string());
        put("user_ratings_above", self.filter.user_ratings_above.to_string());
        put("folds", self.folds.to_string());
        put("seed", self.seed.to_string());
        put("methods", join(&self.methods));
        put("list_len", self.list_len.to_string());
        put(
            "like_threshold",
            self.like_threshold.map_or("auto".to_string(), |t| t.to_string()),
        );
        put("metric_sim", self.metric_sim.to_string());
        put("knn_k", self.knn_k.to_string());
        put("cf_measure", self.cf_measure.to_string());
        put("theta", self.theta.to_string());
        put("penalty", self.penalty.to_string());
        put("step3_weight", self.step3_weight.to_string());
        put("mf_factors", self.mf.factors.to_string());
        put("mf_learning_rate", self.mf.learning_rate.to_string());
        put("mf_regularization", self.mf.regularization.to_string());
        put("mf_epochs", self.mf.epochs.to_string());
        put("thetas", join(&self.thetas));
        put("lengths", join(&self.lengths));
        put("ks", join(&self.ks));
        put("measures", join(&self.measures));
        put("modes", join(&self.modes));
        put("sample_users", self.sample_users.to_string());
        put("threads", self.threads.to_string());
        if let Some(p) = &self.out_dir {
            put("out_dir", p.display().to_string());
        }
        put("export_recs", self.export_recs.to_string());
        out
    }
}

enum SetError {
    Unknown,
    Bad(String),
}

impl From<String> for SetError {
    fn from(m: String) -> Self {
        SetError::Bad(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# a run\n\ninput = data/u.data\nmethods = MD, pim+ra\nL = 10\nscale = 0:1:0.2\nlike_threshold = 0.8\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.methods, vec![Method::Md, Method::PimRa]);
        assert_eq!(cfg.list_len, 10);
        assert_eq!(cfg.like_threshold(), 0.8);
        assert_eq!(cfg.dataset_label(), "u");
        let back = ExperimentConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert_eq!(
            ExperimentConfig::parse("seed = 1\nbogus = 2\n"),
            Err(ConfigError::UnknownKey { line: 2, key: "bogus".into() })
        );
        assert_eq!(ExperimentConfig::parse("just words"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            ExperimentConfig::parse("folds = many"),
            Err(ConfigError::Value { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("methods = MD, HC"),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.folds = 1;
        assert!(cfg.validate().is_err());
        cfg.folds = 5;
        cfg.thetas.push(1.5);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set_override("L", "0").unwrap();
        assert!(cfg.validate().is_err());
        assert!(cfg.set_override("nope", "1").is_err());
    }

    #[test]
    fn default_threshold_follows_scale() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.like_threshold(), 3.0);
        cfg.scale = RatingScale::new(0.0, 1.0, 0.2).unwrap();
        assert!((cfg.like_threshold() - 0.6).abs() < 1e-12);
    }
}

//! Rating datasets: loading, validation, filtering, k-fold splitting and
//! summary statistics.
//!
//! Users and items are re-indexed to dense `u32` ids on load. External ids
//! are kept in shared lookup tables so that folds cut from the same source
//! dataset agree on every id.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub type UserIdx = u32;
pub type ItemIdx = u32;

const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid rating scale: {0}")]
    InvalidScale(String),
    #[error("line {line}: malformed row: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: rating {value} is not on the scale {scale}")]
    OffScale {
        line: u64,
        value: f64,
        scale: RatingScale,
    },
    #[error("line {line}: duplicate rating for user {user:?}, item {item:?}")]
    Duplicate { line: u64, user: String, item: String },
    #[error("filter removed every rating")]
    EmptyAfterFilter,
    #[error("k-fold split needs k >= 2, got {0}")]
    InvalidFolds(usize),
    #[error("cannot split {ratings} ratings into {k} folds")]
    TooFewRatings { ratings: usize, k: usize },
    #[error("unknown dataset format {0:?} (expected ml100k-tsv or generic-csv)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Open { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Rating interval `[min, max]` with grid spacing `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl RatingScale {
    /// The `[1,5,1]` star scale used by MovieLens and Netflix.
    pub const STARS: RatingScale = RatingScale {
        min: 1.0,
        max: 5.0,
        step: 1.0,
    };

    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, CorpusError> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(CorpusError::InvalidScale("bounds must be finite".into()));
        }
        if min >= max {
            return Err(CorpusError::InvalidScale(format!("min {min} >= max {max}")));
        }
        if step <= 0.0 {
            return Err(CorpusError::InvalidScale(format!("step {step} <= 0")));
        }
        let steps = (max - min) / step;
        if (steps - steps.round()).abs() > GRID_TOLERANCE {
            return Err(CorpusError::InvalidScale(format!(
                "range {} is not a multiple of step {step}",
                max - min
            )));
        }
        Ok(Self { min, max, step })
    }

    pub fn contains(&self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        let eps = GRID_TOLERANCE * self.step;
        if value < self.min - eps || value > self.max + eps {
            return false;
        }
        let steps = (value - self.min) / self.step;
        (steps - steps.round()).abs() <= GRID_TOLERANCE
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

impl fmt::Display for RatingScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.step)
    }
}

impl FromStr for RatingScale {
    type Err = CorpusError;

    /// Parses `min:max:step`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(CorpusError::InvalidScale(format!(
                "expected min:max:step, got {s:?}"
            )));
        }
        let mut nums = [0.0; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| CorpusError::InvalidScale(format!("not a number: {part:?}")))?;
        }
        RatingScale::new(nums[0], nums[1], nums[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DataFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header.
    Ml100kTsv,
    /// `user,item,rating[,timestamp]` with a header row.
    GenericCsv,
}

impl FromStr for DataFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ml100k-tsv" => Ok(DataFormat::Ml100kTsv),
            "generic-csv" => Ok(DataFormat::GenericCsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Ml100kTsv => "ml100k-tsv",
            DataFormat::GenericCsv => "generic-csv",
        })
    }
}

/// One parsed input row, before re-indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub line: u64,
    pub user: String,
    pub item: String,
    pub value: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: UserIdx,
    pub item: ItemIdx,
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// A set of ratings with no duplicate `(user, item)` pair.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    scale: RatingScale,
    users: Arc<Vec<String>>,
    items: Arc<Vec<String>>,
    ratings: Vec<Rating>,
}

impl PartialEq for RatingDataset {
    fn eq(&self, other: &Self) -> bool {
        self.scale == other.scale
            && self.users == other.users
            && self.items == other.items
            && self.ratings == other.ratings
    }
}

/// Orders ids numerically when both parse as integers, otherwise lexically,
/// with numeric ids first.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn dense_ids<'a>(labels: impl Iterator<Item = &'a str>) -> (Vec<String>, HashMap<&'a str, u32>) {
    let mut uniq: Vec<&str> = labels.collect();
    uniq.sort_by(|a, b| natural_cmp(a, b));
    uniq.dedup();
    let index = uniq
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as u32))
        .collect();
    (uniq.into_iter().map(str::to_string).collect(), index)
}

impl RatingDataset {
    pub fn empty(scale: RatingScale) -> Self {
        Self {
            scale,
            users: Arc::new(Vec::new()),
            items: Arc::new(Vec::new()),
            ratings: Vec::new(),
        }
    }

    /// Validates and re-indexes raw rows. Dense ids follow the natural order
    /// of the external ids.
    pub fn from_raw(rows: &[RawRating], scale: RatingScale) -> Result<Self, CorpusError> {
        let (users, user_index) = dense_ids(rows.iter().map(|r| r.user.as_str()));
        let (items, item_index) = dense_ids(rows.iter().map(|r| r.item.as_str()));
        let mut seen = HashMap::with_capacity(rows.len());
        let mut ratings = Vec::with_capacity(rows.len());
        for row in rows {
            if !scale.contains(row.value) {
                return Err(CorpusError::OffScale {
                    line: row.line,
                    value: row.value,
                    scale,
                });
            }
            let user = user_index[row.user.as_str()];
            let item = item_index[row.item.as_str()];
            if seen.insert((user, item), row.line).is_some() {
                return Err(CorpusError::Duplicate {
                    line: row.line,
                    user: row.user.clone(),
                    item: row.item.clone(),
                });
            }
            ratings.push(Rating {
                user,
                item,
                value: row.value,
                timestamp: row.timestamp,
            });
        }
        Ok(Self {
            scale,
            users: Arc::new(users),
            items: Arc::new(items),
            ratings,
        })
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Size of the user id space (shared with sibling folds).
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_label(&self, user: UserIdx) -> &str {
        &self.users[user as usize]
    }

    pub fn item_label(&self, item: ItemIdx) -> &str {
        &self.items[item as usize]
    }

    pub fn user_index(&self, label: &str) -> Option<UserIdx> {
        self.users.iter().position(|u| u == label).map(|i| i as u32)
    }

    pub fn item_index(&self, label: &str) -> Option<ItemIdx> {
        self.items.iter().position(|u| u == label).map(|i| i as u32)
    }

    /// Keeps the ratings at `indices` without touching the id space.
    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            scale: self.scale,
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
            ratings: indices.iter().map(|&i| self.ratings[i]).collect(),
        }
    }

    /// Writes the dataset in generic-csv form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut out = csv::Writer::from_writer(writer);
        let with_ts = self.ratings.iter().any(|r| r.timestamp.is_some());
        if with_ts {
            out.write_record(["user", "item", "rating", "timestamp"])?;
        } else {
            out.write_record(["user", "item", "rating"])?;
        }
        for r in &self.ratings {
            let value = r.value.to_string();
            let user = self.user_label(r.user);
            let item = self.item_label(r.item);
            if with_ts {
                let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
                out.write_record([user, item, value.as_str(), ts.as_str()])?;
            } else {
                out.write_record([user, item, value.as_str()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str, line: u64) -> Result<T, CorpusError> {
    let raw = field.ok_or_else(|| CorpusError::Malformed {
        line,
        reason: format!("missing {name}"),
    })?;
    raw.trim().parse().map_err(|_| CorpusError::Malformed {
        line,
        reason: format!("bad {name} {raw:?}"),
    })
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<RawRating, CorpusError> {
    if record.len() < 3 || record.len() > 4 {
        return Err(CorpusError::Malformed {
            line,
            reason: format!("expected 3 or 4 fields, found {}", record.len()),
        });
    }
    let user = record[0].trim();
    let item = record[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            reason: "empty user or item id".into(),
        });
    }
    let value: f64 = parse_field(record.get(2), "rating", line)?;
    if !value.is_finite() {
        return Err(CorpusError::Malformed {
            line,
            reason: format!("non-finite rating {value}"),
        });
    }
    let timestamp = match record.get(3).map(str::trim) {
        None | Some("") => None,
        Some(_) => Some(parse_field(record.get(3), "timestamp", line)?),
    };
    Ok(RawRating {
        line,
        user: user.to_string(),
        item: item.to_string(),
        value,
        timestamp,
    })
}

/// Parses rows without validating them against a scale.
pub fn read_raw<R: Read>(reader: R, format: DataFormat) -> Result<Vec<RawRating>, CorpusError> {
    let mut builder = csv::ReaderBuilder::new();
    builder.flexible(true).trim(csv::Trim::All);
    match format {
        DataFormat::Ml100kTsv => {
            builder.delimiter(b'\t').has_headers(false).quoting(false);
        }
        DataFormat::GenericCsv => {
            builder.delimiter(b',').has_headers(true);
        }
    }
    let mut rdr = builder.from_reader(reader);
    if format == DataFormat::GenericCsv {
        let header = rdr.headers()?.clone();
        if !header.is_empty() {
            let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
            let ok = (names.len() == 3 || names.len() == 4)
                && names[..3] == ["user", "item", "rating"]
                && names.get(3).is_none_or(|n| n == "timestamp");
            if !ok {
                return Err(CorpusError::Malformed {
                    line: 1,
                    reason: format!("expected header user,item,rating[,timestamp], got {names:?}"),
                });
            }
        }
    }
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(CorpusError::Malformed {
                    line: e.position().map_or(line, |p| p.line()),
                    reason: e.to_string(),
                })
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push(parse_row(&record, line)?);
    }
    Ok(rows)
}

/// Parses and validates a dataset from any reader.
pub fn read_ratings<R: Read>(
    reader: R,
    format: DataFormat,
    scale: RatingScale,
) -> Result<RatingDataset, CorpusError> {
    let rows = read_raw(reader, format)?;
    RatingDataset::from_raw(&rows, scale)
}

pub(crate) fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| CorpusError::Open {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_ratings(
    path: impl AsRef<Path>,
    format: DataFormat,
    scale: RatingScale,
) -> Result<RatingDataset, CorpusError> {
    let file = open(path.as_ref())?;
    read_ratings(io::BufReader::new(file), format, scale)
}

/// Builds a train/test pair over one shared id space from two row sets.
/// A `(user, item)` pair present in both is a duplicate.
pub fn explicit_split(
    train: &[RawRating],
    test: &[RawRating],
    scale: RatingScale,
) -> Result<FoldPair, CorpusError> {
    let mut all = Vec::with_capacity(train.len() + test.len());
    all.extend_from_slice(train);
    all.extend_from_slice(test);
    let ds = RatingDataset::from_raw(&all, scale)?;
    let train_idx: Vec<usize> = (0..train.len()).collect();
    let test_idx: Vec<usize> = (train.len()..all.len()).collect();
    Ok(FoldPair {
        fold: 0,
        train: ds.subset(&train_idx),
        test: ds.subset(&test_idx),
    })
}

/// Dataset reduction thresholds. Zero disables a filter. Counts are
/// strict: a user survives `user_ratings_above = 50` with 51 ratings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterSpec {
    /// Keep only the N items with the most ratings.
    pub top_items: usize,
    pub item_ratings_above: usize,
    pub user_ratings_above: usize,
}

impl FilterSpec {
    pub fn is_noop(&self) -> bool {
        *self == FilterSpec::default()
    }
}

/// Applies item filters, then the user filter on what remains, one pass
/// each, and re-densifies both id spaces.
pub fn filter_dataset(ds: &RatingDataset, spec: &FilterSpec) -> Result<RatingDataset, CorpusError> {
    let mut item_counts = vec![0usize; ds.n_items()];
    for r in &ds.ratings {
        item_counts[r.item as usize] += 1;
    }
    let mut keep_item: Vec<bool> = item_counts.iter().map(|&c| c > 0).collect();
    if spec.top_items > 0 {
        let mut order: Vec<usize> = (0..ds.n_items()).filter(|&i| item_counts[i] > 0).collect();
        order.sort_by(|&a, &b| item_counts[b].cmp(&item_counts[a]).then(a.cmp(&b)));
        keep_item.iter_mut().for_each(|k| *k = false);
        for &i in order.iter().take(spec.top_items) {
            keep_item[i] = true;
        }
    }
    if spec.item_ratings_above > 0 {
        for (keep, &count) in keep_item.iter_mut().zip(&item_counts) {
            *keep &= count > spec.item_ratings_above;
        }
    }

    let mut user_counts = vec![0usize; ds.n_users()];
    for r in ds.ratings.iter().filter(|r| keep_item[r.item as usize]) {
        user_counts[r.user as usize] += 1;
    }
    let keep_user: Vec<bool> = user_counts
        .iter()
        .map(|&c| c > 0 && c > spec.user_ratings_above)
        .collect();

    let kept: Vec<&Rating> = ds
        .ratings
        .iter()
        .filter(|r| keep_item[r.item as usize] && keep_user[r.user as usize])
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyAfterFilter);
    }
    let remap = |keep: &[bool]| -> Vec<Option<u32>> {
        let mut next = 0u32;
        keep.iter()
            .map(|&k| {
                k.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let user_map = remap(&keep_user);
    let item_map = remap(&keep_item);
    let users = (0..ds.n_users())
        .filter(|&u| keep_user[u])
        .map(|u| ds.users[u].clone())
        .collect();
    let items = (0..ds.n_items())
        .filter(|&i| keep_item[i])
        .map(|i| ds.items[i].clone())
        .collect();
    let ratings = kept
        .into_iter()
        .map(|r| Rating {
            user: user_map[r.user as usize].expect("kept user"),
            item: item_map[r.item as usize].expect("kept item"),
            ..*r
        })
        .collect();
    Ok(RatingDataset {
        scale: ds.scale,
        users: Arc::new(users),
        items: Arc::new(items),
        ratings,
    })
}

#[derive(Debug, Clone)]
pub struct FoldPair {
    pub fold: usize,
    pub train: RatingDataset,
    pub test: RatingDataset,
}

/// Splits ratings into `k` disjoint test folds whose sizes differ by at most
/// one. Rows keep their source order inside each split.
pub fn kfold_split(ds: &RatingDataset, k: usize, seed: u64) -> Result<Vec<FoldPair>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidFolds(k));
    }
    if k > ds.len() {
        return Err(CorpusError::TooFewRatings {
            ratings: ds.len(),
            k,
        });
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut assignment = vec![0usize; ds.len()];
    for (pos, &row) in perm.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&row| assignment[row] == fold);
            FoldPair {
                fold,
                train: ds.subset(&train),
                test: ds.subset(&test),
            }
        })
        .collect())
}

/// Writes `fold,user,item,rating,split` rows for every fold.
pub fn write_fold_manifest<W: Write>(folds: &[FoldPair], writer: W) -> Result<(), CorpusError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["fold", "user", "item", "rating", "split"])?;
    for pair in folds {
        let fold = pair.fold.to_string();
        for (split, ds) in [("train", &pair.train), ("test", &pair.test)] {
            for r in ds.ratings() {
                let value = r.value.to_string();
                out.write_record([
                    fold.as_str(),
                    ds.user_label(r.user),
                    ds.item_label(r.item),
                    value.as_str(),
                    split,
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub links: usize,
    pub sparsity: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{:.4}",
            self.users, self.items, self.links, self.sparsity
        )
    }
}

/// Counts users and items that carry at least one rating.
pub fn dataset_stats(ds: &RatingDataset) -> DatasetStats {
    let mut user_seen = vec![false; ds.n_users()];
    let mut item_seen = vec![false; ds.n_items()];
    for r in ds.ratings() {
        user_seen[r.user as usize] = true;
        item_seen[r.item as usize] = true;
    }
    let users = user_seen.iter().filter(|&&s| s).count();
    let items = item_seen.iter().filter(|&&s| s).count();
    let links = ds.len();
    let cells = users * items;
    let sparsity = if cells == 0 {
        0.0
    } else {
        1.0 - links as f64 / cells as f64
    };
    DatasetStats {
        users,
        items,
        links,
        sparsity,
    }
}

/// The 4x4 rating matrix used throughout the test suites:
/// u1:{i1=5,i3=3,i4=2}, u2:{i2=4,i3=3}, u3:{i1=4,i3=1,i4=2}, u4:{i2=3,i4=5}.
pub fn fix4() -> RatingDataset {
    let rows = [
        ("u1", "i1", 5.0),
        ("u1", "i3", 3.0),
        ("u1", "i4", 2.0),
        ("u2", "i2", 4.0),
        ("u2", "i3", 3.0),
        ("u3", "i1", 4.0),
        ("u3", "i3", 1.0),
        ("u3", "i4", 2.0),
        ("u4", "i2", 3.0),
        ("u4", "i4", 5.0),
    ];
    let raw: Vec<RawRating> = rows
        .iter()
        .enumerate()
        .map(|(n, (u, i, v))| RawRating {
            line: n as u64 + 2,
            user: u.to_string(),
            item: i.to_string(),
            value: *v,
            timestamp: None,
        })
        .collect();
    RatingDataset::from_raw(&raw, RatingScale::STARS).expect("fixture is valid")
}

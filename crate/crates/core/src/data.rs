//! Interaction logs, sparse matrices, degree statistics and temporal splits.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One implicit-feedback event after index compaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Ordered list of (user, item, timestamp) events over dense 0-based indices.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    events: Vec<Event>,
    num_users: usize,
    num_items: usize,
}

impl InteractionLog {
    pub fn new(events: Vec<Event>, num_users: usize, num_items: usize) -> Result<Self> {
        for e in &events {
            if e.user as usize >= num_users || e.item as usize >= num_items {
                return Err(Error::DimensionMismatch(format!(
                    "event ({}, {}) outside {} x {}",
                    e.user, e.item, num_users, num_items
                )));
            }
        }
        Ok(Self {
            events,
            num_users,
            num_items,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Items of one user, sorted and deduplicated.
    pub fn user_items(&self, user: usize) -> Vec<u32> {
        let mut items: Vec<u32> = self
            .events
            .iter()
            .filter(|e| e.user as usize == user)
            .map(|e| e.item)
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Users with at least one event, ascending.
    pub fn active_users(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_users];
        for e in &self.events {
            seen[e.user as usize] = true;
        }
        seen.iter()
            .enumerate()
            .filter_map(|(u, s)| s.then_some(u))
            .collect()
    }
}

/// Raw-identifier sidecar: `users[k]` / `items[k]` is the original id of
/// compacted index `k`, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// Input file delimiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Detect from the first data line: `::`, tab, then comma.
    #[default]
    Auto,
    Comma,
    Tab,
    /// `::`-separated records, the MovieLens export layout.
    DoubleColon,
}

impl Delimiter {
    fn detect(line: &str) -> Delimiter {
        if line.contains("::") {
            Delimiter::DoubleColon
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Comma
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Auto => unreachable!("auto resolved before splitting"),
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
        }
    }
}

/// Parse a delimited interaction file into a compacted log plus id sidecar.
///
/// Records are `user<sep>item<sep>timestamp` or
/// `user<sep>item<sep>rating<sep>timestamp` (the rating is ignored). Lines
/// starting with `#` are skipped, and a header line is detected by a
/// non-integer timestamp field. Identifiers are compacted to dense indices in
/// first-appearance order, which keeps runs reproducible.
pub fn ingest(path: impl AsRef<Path>, format: Delimiter) -> Result<(InteractionLog, IdMap)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut delim = format;
    let mut events = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut map = IdMap::default();
    let mut first_data_line = true;

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if delim == Delimiter::Auto {
            delim = Delimiter::detect(trimmed);
        }
        let fields = delim.split(trimmed);
        let (user_f, item_f, ts_f) = match fields.len() {
            3 => (fields[0], fields[1], fields[2]),
            4 => (fields[0], fields[1], fields[3]),
            n => {
                if first_data_line {
                    // Whatever this is, it is not a record; treat as header.
                    first_data_line = false;
                    continue;
                }
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("expected 3 or 4 fields, found {n}"),
                });
            }
        };
        let ts: i64 = match ts_f.trim().parse() {
            Ok(t) => t,
            Err(_) if first_data_line => {
                // Header row: the timestamp column is not an integer.
                first_data_line = false;
                continue;
            }
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("timestamp {ts_f:?} is not an integer"),
                });
            }
        };
        first_data_line = false;

        let next_user = user_index.len() as u32;
        let user = *user_index
            .entry(user_f.trim().to_owned())
            .or_insert_with(|| {
                map.users.push(user_f.trim().to_owned());
                next_user
            });
        let next_item = item_index.len() as u32;
        let item = *item_index
            .entry(item_f.trim().to_owned())
            .or_insert_with(|| {
                map.items.push(item_f.trim().to_owned());
                next_item
            });
        events.push(Event {
            user,
            item,
            timestamp: ts,
        });
    }

    if events.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} holds no events",
            path.display()
        )));
    }
    let log = InteractionLog {
        events,
        num_users: map.users.len(),
        num_items: map.items.len(),
    };
    Ok((log, map))
}

/// Chronological train / warm / test partition with boundary timestamps.
#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub train: InteractionLog,
    pub warm: InteractionLog,
    pub test: InteractionLog,
    /// Inclusive upper bound of the train subset.
    pub t1: i64,
    /// Inclusive upper bound of the warm subset.
    pub t2: i64,
}

/// Split a log into train/warm/test by timestamp so that cumulative event
/// counts best match `fractions`. Events tied with a boundary timestamp all go
/// to the earlier subset, which keeps the split leakage-free and
/// deterministic.
pub fn temporal_split(log: &InteractionLog, fractions: (f64, f64, f64)) -> Result<TemporalSplit> {
    let (f_train, f_warm, f_test) = fractions;
    if f_train <= 0.0 || f_warm <= 0.0 || f_test <= 0.0 {
        return Err(Error::InvalidArgument(
            "split fractions must be positive".into(),
        ));
    }
    if (f_train + f_warm + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "split fractions must sum to 1".into(),
        ));
    }
    if log.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty log".into()));
    }

    // Event counts per distinct timestamp, ascending.
    let mut by_ts: Vec<(i64, usize)> = {
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for e in &log.events {
            *counts.entry(e.timestamp).or_default() += 1;
        }
        counts.into_iter().collect()
    };
    by_ts.sort_unstable_by_key(|&(ts, _)| ts);
    if by_ts.len() < 3 {
        return Err(Error::DegenerateSplit(format!(
            "need at least 3 distinct timestamps, found {}",
            by_ts.len()
        )));
    }

    let total = log.len() as f64;
    let mut prefix = Vec::with_capacity(by_ts.len());
    let mut acc = 0usize;
    for &(_, c) in &by_ts {
        acc += c;
        prefix.push(acc);
    }

    // t1 must leave at least two distinct timestamps after it; t2 at least one.
    let pick = |lo: usize, hi: usize, target: f64| -> usize {
        let mut best = lo;
        let mut best_err = f64::INFINITY;
        for idx in lo..=hi {
            let err = (prefix[idx] as f64 - target).abs();
            if err < best_err {
                best_err = err;
                best = idx;
            }
        }
        best
    };
    let last = by_ts.len() - 1;
    let i1 = pick(0, last - 2, f_train * total);
    let i2 = pick(i1 + 1, last - 1, (f_train + f_warm) * total);
    let t1 = by_ts[i1].0;
    let t2 = by_ts[i2].0;

    let mut train = Vec::new();
    let mut warm = Vec::new();
    let mut test = Vec::new();
    for e in &log.events {
        if e.timestamp <= t1 {
            train.push(*e);
        } else if e.timestamp <= t2 {
            warm.push(*e);
        } else {
            test.push(*e);
        }
    }
    let sub = |events: Vec<Event>| InteractionLog {
        events,
        num_users: log.num_users,
        num_items: log.num_items,
    };
    Ok(TemporalSplit {
        train: sub(train),
        warm: sub(warm),
        test: sub(test),
        t1,
        t2,
    })
}

/// Binary user-item matrix in compressed sparse row form; values are
/// implicitly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
}

impl InteractionMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Sorted item indices of row `u`: the support of the interaction vector.
    pub fn row(&self, u: usize) -> &[u32] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    pub fn contains(&self, u: usize, i: u32) -> bool {
        self.row(u).binary_search(&i).is_ok()
    }

    pub fn row_degrees(&self) -> Vec<u32> {
        (0..self.rows)
            .map(|u| (self.row_offsets[u + 1] - self.row_offsets[u]) as u32)
            .collect()
    }

    pub fn col_degrees(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.cols];
        for &j in &self.col_indices {
            d[j as usize] += 1;
        }
        d
    }

    /// `y = A x`.
    pub fn matvec<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec: {} columns vs vector of length {}",
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![T::zero(); self.rows];
        for u in 0..self.rows {
            let mut acc = T::zero();
            for &j in self.row(u) {
                acc += x[j as usize];
            }
            y[u] = acc;
        }
        Ok(y)
    }

    /// `y = Aᵀ x`.
    pub fn matvec_t<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "matvec_t: {} rows vs vector of length {}",
                self.rows,
                x.len()
            )));
        }
        let mut y = vec![T::zero(); self.cols];
        for u in 0..self.rows {
            let xu = x[u];
            for &j in self.row(u) {
                y[j as usize] += xu;
            }
        }
        Ok(y)
    }
}

/// Build the binary CSR matrix from a log. Duplicate (user, item) pairs
/// collapse to a single entry; rows come out sorted by column index.
pub fn build_matrix(log: &InteractionLog, dims: (usize, usize)) -> Result<InteractionMatrix> {
    let (rows, cols) = dims;
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(log.len());
    for e in &log.events {
        if e.user as usize >= rows || e.item as usize >= cols {
            return Err(Error::DimensionMismatch(format!(
                "event ({}, {}) outside {} x {}",
                e.user, e.item, rows, cols
            )));
        }
        pairs.push((e.user, e.item));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut row_offsets = vec![0usize; rows + 1];
    for &(u, _) in &pairs {
        row_offsets[u as usize + 1] += 1;
    }
    for u in 0..rows {
        row_offsets[u + 1] += row_offsets[u];
    }
    let col_indices = pairs.into_iter().map(|(_, i)| i).collect();
    Ok(InteractionMatrix {
        rows,
        cols,
        row_offsets,
        col_indices,
    })
}

/// Degree vectors and the derived per-user / per-item weights.
///
/// The user weight is `sqrt(d_u + 1) / d_u`, undefined at `d_u = 0` (stored
/// as NaN and exposed as `None`); the item weight is `1 / sqrt(d_i + 1)`,
/// defined everywhere.
#[derive(Debug, Clone)]
pub struct GraphStats<T> {
    pub user_degrees: Vec<u32>,
    pub item_degrees: Vec<u32>,
    beta_u: Vec<T>,
    beta_i: Vec<T>,
}

/// `sqrt(d_u + 1) / d_u` for `d_u >= 1`.
pub fn beta_user_from_degree<T: Scalar>(degree: u32) -> Option<T> {
    if degree == 0 {
        None
    } else {
        Some(T::from_f64_lossy(
            (degree as f64 + 1.0).sqrt() / degree as f64,
        ))
    }
}

/// `1 / sqrt(d_i + 1)`, defined for every degree.
pub fn beta_item_from_degree<T: Scalar>(degree: u32) -> T {
    T::from_f64_lossy(1.0 / (degree as f64 + 1.0).sqrt())
}

impl<T: Scalar> GraphStats<T> {
    pub fn from_degrees(user_degrees: Vec<u32>, item_degrees: Vec<u32>) -> Self {
        let beta_u = user_degrees
            .iter()
            .map(|&d| beta_user_from_degree(d).unwrap_or_else(T::nan))
            .collect();
        let beta_i = item_degrees
            .iter()
            .map(|&d| beta_item_from_degree(d))
            .collect();
        Self {
            user_degrees,
            item_degrees,
            beta_u,
            beta_i,
        }
    }

    /// Reassemble from stored vectors, e.g. when loading a model container.
    pub fn from_parts(
        user_degrees: Vec<u32>,
        item_degrees: Vec<u32>,
        beta_u: Vec<T>,
        beta_i: Vec<T>,
    ) -> Self {
        assert_eq!(user_degrees.len(), beta_u.len());
        assert_eq!(item_degrees.len(), beta_i.len());
        Self {
            user_degrees,
            item_degrees,
            beta_u,
            beta_i,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_degrees.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_degrees.len()
    }

    /// `None` for zero-degree users, whose weight is undefined.
    pub fn beta_user(&self, u: usize) -> Option<T> {
        let b = self.beta_u[u];
        if b.is_nan() {
            None
        } else {
            Some(b)
        }
    }

    pub fn beta_item(&self, i: usize) -> T {
        self.beta_i[i]
    }

    pub fn beta_items(&self) -> &[T] {
        &self.beta_i
    }

    /// Raw user weights with NaN marking undefined entries.
    pub fn beta_users_raw(&self) -> &[T] {
        &self.beta_u
    }
}

/// Degrees and weights of an interaction matrix.
pub fn graph_stats<T: Scalar>(matrix: &InteractionMatrix) -> GraphStats<T> {
    GraphStats::from_degrees(matrix.row_degrees(), matrix.col_degrees())
}

/// A user's merged train + warm interactions with the refreshed degree and
/// weight, ready to drive a fold-in update.
#[derive(Debug, Clone)]
pub struct UserHistory<T> {
    pub user: usize,
    /// Sorted, deduplicated union of train-row and warm items.
    pub items: Vec<u32>,
    pub degree: u32,
    pub beta_u: T,
}

/// Union of a user's train row and warm events, with the degree and user
/// weight recomputed over the union.
pub fn merge_for_foldin<T: Scalar>(
    train: &InteractionMatrix,
    warm: &InteractionLog,
    user: usize,
) -> Result<UserHistory<T>> {
    if user >= train.rows() {
        return Err(Error::DimensionMismatch(format!(
            "user {user} outside {} rows",
            train.rows()
        )));
    }
    let mut items: Vec<u32> = train.row(user).to_vec();
    for e in warm.events() {
        if e.user as usize == user {
            items.push(e.item);
        }
    }
    items.sort_unstable();
    items.dedup();
    if items.is_empty() {
        return Err(Error::ColdUser { user });
    }
    let degree = items.len() as u32;
    let beta_u = beta_user_from_degree(degree).expect("degree >= 1");
    Ok(UserHistory {
        user,
        items,
        degree,
        beta_u,
    })
}

//! Temporal token reservoir and history retention policies.
//!
//! The reservoir keeps every fused prompt token written during a stream.
//! Capacity is applied only when history is read: a [`RetentionPolicy`]
//! chooses which timestamps (1-based) are handed to memory aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Var};

/// Default read capacity.
pub const DEFAULT_N_MAX: usize = 32;

/// Chooses a sorted, duplicate-free subset of `{1..n}` of size at most `n_max`.
pub trait RetentionPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, n: usize, n_max: usize) -> Result<Vec<usize>>;
}

fn check_args(n: usize, n_max: usize) -> Result<()> {
    if n_max < 2 {
        return Err(Error::InvalidCapacity(n_max));
    }
    if n == 0 {
        return Err(Error::invalid("history length must be at least 1"));
    }
    Ok(())
}

/// Nonlinear time warping `φ(u) = 1 − (1 − u)²`: sparse in the distant
/// past, dense near the present.
///
/// With `u = k/m`, `φ(u)·(n − 1) = k(2m − k)(n − 1)/m²`, evaluated in
/// integers so the floor is exact; in floating point, products that land
/// on an integer can round just below it and lose one step.
pub fn dense_to_sparse_indices(n: usize, n_max: usize) -> Result<Vec<usize>> {
    check_args(n, n_max)?;
    if n <= n_max {
        return Ok((1..=n).collect());
    }
    let m = (n_max - 1) as u128;
    let span = (n - 1) as u128;
    let mut out: Vec<usize> = (0..=m)
        .map(|k| (k * (2 * m - k) * span / (m * m)) as usize + 1)
        .collect();
    out.dedup();
    Ok(out)
}

/// Evenly spaced indices `⌊k·(n−1)/(n_max−1)⌋ + 1`.
pub fn uniform_indices(n: usize, n_max: usize) -> Result<Vec<usize>> {
    check_args(n, n_max)?;
    if n <= n_max {
        return Ok((1..=n).collect());
    }
    let mut out: Vec<usize> = (0..n_max).map(|k| k * (n - 1) / (n_max - 1) + 1).collect();
    out.dedup();
    Ok(out)
}

pub struct DenseToSparse;

impl RetentionPolicy for DenseToSparse {
    fn name(&self) -> &'static str {
        "dense_to_sparse"
    }

    fn select(&self, n: usize, n_max: usize) -> Result<Vec<usize>> {
        dense_to_sparse_indices(n, n_max)
    }
}

pub struct Uniform;

impl RetentionPolicy for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn select(&self, n: usize, n_max: usize) -> Result<Vec<usize>> {
        uniform_indices(n, n_max)
    }
}

/// Naive truncation: the last `n_max` steps.
pub struct MostRecent;

impl RetentionPolicy for MostRecent {
    fn name(&self) -> &'static str {
        "most_recent"
    }

    fn select(&self, n: usize, n_max: usize) -> Result<Vec<usize>> {
        check_args(n, n_max)?;
        Ok((n.saturating_sub(n_max) + 1..=n).collect())
    }
}

/// Retention policies by name.
#[derive(Clone)]
pub struct RetentionRegistry {
    policies: BTreeMap<&'static str, Arc<dyn RetentionPolicy>>,
}

impl RetentionRegistry {
    pub fn empty() -> Self {
        Self {
            policies: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(DenseToSparse));
        r.register(Arc::new(Uniform));
        r.register(Arc::new(MostRecent));
        r
    }

    pub fn register(&mut self, policy: Arc<dyn RetentionPolicy>) {
        self.policies.insert(policy.name(), policy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn RetentionPolicy>> {
        self.policies.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown retention policy {name:?} (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.policies.keys().copied()
    }
}

/// Anything that can sit in the reservoir: a plain vector, or a tape node
/// while training.
pub trait ReservoirToken: Clone {
    fn token_dim(&self) -> usize;
}

impl ReservoirToken for Vec<f64> {
    fn token_dim(&self) -> usize {
        self.len()
    }
}

impl ReservoirToken for Var {
    fn token_dim(&self) -> usize {
        self.cols()
    }
}

/// Append-only store of `(timestamp, token)` pairs.
#[derive(Clone, Debug)]
pub struct ReservoirState<T = Vec<f64>> {
    entries: Vec<(usize, T)>,
    written: usize,
    n_max: usize,
    compact: bool,
}

impl<T: ReservoirToken> ReservoirState<T> {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::InvalidCapacity(n_max));
        }
        Ok(Self {
            entries: Vec::new(),
            written: 0,
            n_max,
            compact: false,
        })
    }

    /// Compacted mode drops entries the policy did not select at the last
    /// write. Reads then map each wanted timestamp to the closest retained
    /// one at or before it.
    pub fn compacted(mut self, on: bool) -> Self {
        self.compact = on;
        self
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of tokens ever written; equals the latest timestamp.
    pub fn len(&self) -> usize {
        self.written
    }

    pub fn is_empty(&self) -> bool {
        self.written == 0
    }

    pub fn stored(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|(_, t)| t.token_dim())
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    /// Appends `token` at timestamp `len() + 1`.
    pub fn write(&mut self, token: T, policy: &dyn RetentionPolicy) -> Result<usize> {
        if let Some(d) = self.dim() {
            if token.token_dim() != d {
                return Err(Error::shape(format!(
                    "reservoir holds {d}-dim tokens, got {}",
                    token.token_dim()
                )));
            }
        }
        self.written += 1;
        self.entries.push((self.written, token));
        if self.compact {
            let keep = policy.select(self.written, self.n_max)?;
            self.entries.retain(|(t, _)| keep.binary_search(t).is_ok());
        }
        Ok(self.written)
    }

    /// Timestamps handed to aggregation, in increasing order.
    pub fn read_indices(&self, policy: &dyn RetentionPolicy) -> Result<Vec<usize>> {
        if self.written == 0 {
            return Ok(Vec::new());
        }
        let wanted = policy.select(self.written, self.n_max)?;
        if !self.compact {
            return Ok(wanted);
        }
        let mut out: Vec<usize> = wanted
            .iter()
            .filter_map(|&w| {
                let pos = self.entries.partition_point(|(t, _)| *t <= w);
                if pos > 0 {
                    Some(self.entries[pos - 1].0)
                } else {
                    self.entries.first().map(|(t, _)| *t)
                }
            })
            .collect();
        out.dedup();
        Ok(out)
    }

    /// Same entries and timestamps with every token converted by `f`.
    pub fn map_tokens<U: ReservoirToken>(&self, mut f: impl FnMut(&T) -> U) -> ReservoirState<U> {
        ReservoirState {
            entries: self.entries.iter().map(|(t, v)| (*t, f(v))).collect(),
            written: self.written,
            n_max: self.n_max,
            compact: self.compact,
        }
    }

    /// Tokens at [`read_indices`](Self::read_indices), oldest first.
    pub fn read_tokens(&self, policy: &dyn RetentionPolicy) -> Result<Vec<T>> {
        let idx = self.read_indices(policy)?;
        Ok(idx
            .into_iter()
            .map(|t| {
                let pos = self
                    .entries
                    .binary_search_by_key(&t, |(ts, _)| *ts)
                    .expect("read index refers to a stored entry");
                self.entries[pos].1.clone()
            })
            .collect())
    }
}

impl ReservoirState<Vec<f64>> {
    /// Sampled history as an `N × d` matrix; `0 × d` when empty (`d = 0`
    /// before the first write).
    pub fn read_history(&self, policy: &dyn RetentionPolicy) -> Result<Matrix> {
        let rows = self.read_tokens(policy)?;
        Matrix::from_rows(&rows, self.dim().unwrap_or(0))
    }

    /// One `t=<i> [v1, v2, …]` line per stored entry.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        for (t, v) in &self.entries {
            let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(s, "t={t} [{}]", vals.join(", "));
        }
        s
    }
}

//! Spatio-temporal feature memory.
//!
//! A [`MemoryBank`] keeps at most `N` per-frame token maps for one attention
//! layer. Below capacity every frame is appended. At capacity the bank looks
//! at the gaps between neighbouring stored frames and, scanning from the
//! newest gap backwards, drops the right-hand member of the first gap that is
//! no wider than the gap to the incoming frame. The first stored frame is
//! never dropped, and if no gap qualifies the incoming frame is not stored.
//! The net effect is a roughly even sampling of the whole history.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("token map needs at least one token and one dimension, got {n_tokens}x{dim}")]
    EmptyMap { n_tokens: usize, dim: usize },
    #[error("token map {n_tokens}x{dim} needs {} values, got {found}", n_tokens * dim)]
    ValueCount {
        n_tokens: usize,
        dim: usize,
        found: usize,
    },
    #[error("token map contains non-finite values")]
    NonFinite,
    #[error("token shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("layer mismatch: bank holds '{expected}', entry is '{found}'")]
    LayerMismatch { expected: String, found: String },
    #[error("frame {found} is not after the last stored frame {last}")]
    NonMonotonicFrame { last: usize, found: usize },
    #[error("memory bank capacity must be positive")]
    ZeroCapacity,
    #[error("memory bank is empty")]
    EmptyBank,
}

/// One frame's spatial-attention output tokens for a single layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTokenMap {
    frame_index: usize,
    layer_id: String,
    n_tokens: usize,
    dim: usize,
    tokens: Vec<f32>,
    // Squared row norms; sqrt(x*x) == |x| keeps self-similarity at exactly 1.
    sq_norms: Option<Vec<f64>>,
}

impl FeatureTokenMap {
    pub fn new(
        frame_index: usize,
        layer_id: impl Into<String>,
        n_tokens: usize,
        dim: usize,
        tokens: Vec<f32>,
    ) -> Result<Self, MemoryError> {
        if n_tokens == 0 || dim == 0 {
            return Err(MemoryError::EmptyMap { n_tokens, dim });
        }
        if tokens.len() != n_tokens * dim {
            return Err(MemoryError::ValueCount {
                n_tokens,
                dim,
                found: tokens.len(),
            });
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::NonFinite);
        }
        Ok(Self {
            frame_index,
            layer_id: layer_id.into(),
            n_tokens,
            dim,
            tokens,
            sq_norms: None,
        })
    }

    /// Returns the map with its row norms precomputed.
    pub fn with_norms(mut self) -> Self {
        self.ensure_norms();
        self
    }

    pub fn ensure_norms(&mut self) {
        if self.sq_norms.is_none() {
            self.sq_norms = Some(self.rows().map(sq_norm).collect());
        }
    }

    pub fn has_norms(&self) -> bool {
        self.sq_norms.is_some()
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_tokens, self.dim)
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<f32> {
        self.tokens
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.tokens.chunks_exact(self.dim)
    }

    /// Squared Euclidean norm of row `i`, from the cache when present.
    pub fn row_sq_norm(&self, i: usize) -> f64 {
        match &self.sq_norms {
            Some(n) => n[i],
            None => sq_norm(self.row(i)),
        }
    }

    /// Euclidean norm of row `i`.
    pub fn row_norm(&self, i: usize) -> f64 {
        self.row_sq_norm(i).sqrt()
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }

    /// Same shape, layer and frame, new token values.
    pub fn replace_tokens(&self, tokens: Vec<f32>) -> Result<Self, MemoryError> {
        Self::new(self.frame_index, self.layer_id.clone(), self.n_tokens, self.dim, tokens)
    }

    fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim];
        for row in self.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += f64::from(v);
            }
        }
        let n = self.n_tokens as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

pub(crate) fn sq_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine from a dot product and two squared norms; 0 when either is zero.
pub(crate) fn cosine_from_parts(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        return 0.0;
    }
    (dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
}

/// How distance between two stored frames is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Absolute difference of frame indices.
    #[default]
    FrameGap,
    /// `1 − cos` between the mean token rows of two maps.
    MeanTokenCosine,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::FrameGap => "frame-gap",
            DistanceMetric::MeanTokenCosine => "mean-token-cosine",
        })
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frame-gap" => Ok(Self::FrameGap),
            "mean-token-cosine" | "cosine" => Ok(Self::MeanTokenCosine),
            other => Err(format!(
                "unknown memory metric '{other}' (expected frame-gap or mean-token-cosine)"
            )),
        }
    }
}

pub fn entry_distance(
    a: &FeatureTokenMap,
    b: &FeatureTokenMap,
    metric: DistanceMetric,
) -> Result<f64, MemoryError> {
    match metric {
        DistanceMetric::FrameGap => Ok(a.frame_index.abs_diff(b.frame_index) as f64),
        DistanceMetric::MeanTokenCosine => {
            if a.dim != b.dim {
                return Err(MemoryError::ShapeMismatch {
                    expected: a.shape(),
                    found: b.shape(),
                });
            }
            let (ma, mb) = (a.mean_row(), b.mean_row());
            let d: f64 = ma.iter().zip(&mb).map(|(x, y)| x * y).sum();
            let na: f64 = ma.iter().map(|x| x * x).sum();
            let nb: f64 = mb.iter().map(|x| x * x).sum();
            Ok((1.0 - cosine_from_parts(d, na, nb)).max(0.0))
        }
    }
}

/// Outcome of one [`MemoryBank::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertReport {
    pub frame_index: usize,
    pub admitted: bool,
    pub evicted: Option<usize>,
}

/// Bounded, frame-ordered store of token maps for one layer.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    entries: Vec<FeatureTokenMap>,
    capacity: usize,
    metric: DistanceMetric,
}

pub const DEFAULT_CAPACITY: usize = 5;

impl MemoryBank {
    pub fn new(capacity: usize, metric: DistanceMetric) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self {
            entries: Vec::with_capacity(capacity),
            capacity,
            metric,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureTokenMap] {
        &self.entries
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    pub fn layer_id(&self) -> Option<&str> {
        self.entries.first().map(|e| e.layer_id())
    }

    /// Token shape shared by every entry, if any entry is stored.
    pub fn token_shape(&self) -> Option<(usize, usize)> {
        self.entries.first().map(|e| e.shape())
    }

    /// Number of feature values currently retained.
    pub fn stored_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tokens.len()).sum()
    }

    fn check_compatible(&self, entry: &FeatureTokenMap) -> Result<(), MemoryError> {
        let Some(last) = self.entries.last() else {
            return Ok(());
        };
        if entry.layer_id != last.layer_id {
            return Err(MemoryError::LayerMismatch {
                expected: last.layer_id.clone(),
                found: entry.layer_id.clone(),
            });
        }
        if entry.shape() != last.shape() {
            return Err(MemoryError::ShapeMismatch {
                expected: last.shape(),
                found: entry.shape(),
            });
        }
        if entry.frame_index <= last.frame_index {
            return Err(MemoryError::NonMonotonicFrame {
                last: last.frame_index,
                found: entry.frame_index,
            });
        }
        Ok(())
    }

    /// Offers a new frame to the bank.
    pub fn insert(&mut self, mut entry: FeatureTokenMap) -> Result<InsertReport, MemoryError> {
        self.check_compatible(&entry)?;
        entry.ensure_norms();
        let frame_index = entry.frame_index;
        let n = self.entries.len();
        if n < self.capacity {
            self.entries.push(entry);
            return Ok(InsertReport {
                frame_index,
                admitted: true,
                evicted: None,
            });
        }

        // gaps[i] is the distance between entries i and i + 1.
        let gaps = self
            .entries
            .windows(2)
            .map(|w| entry_distance(&w[0], &w[1], self.metric))
            .collect::<Result<Vec<_>, _>>()?;
        let incoming = entry_distance(&self.entries[n - 1], &entry, self.metric)?;

        for i in (0..gaps.len()).rev() {
            if gaps[i] <= incoming {
                let removed = self.entries.remove(i + 1);
                self.entries.push(entry);
                return Ok(InsertReport {
                    frame_index,
                    admitted: true,
                    evicted: Some(removed.frame_index),
                });
            }
        }
        Ok(InsertReport {
            frame_index,
            admitted: false,
            evicted: None,
        })
    }

    /// Stacks every stored token row in entry order.
    pub fn concat_tokens(&self) -> Result<MemoryTokens, MemoryError> {
        let first = self.entries.first().ok_or(MemoryError::EmptyBank)?;
        let dim = first.dim;
        let rows = self.entries.iter().map(|e| e.n_tokens).sum();
        let mut values = Vec::with_capacity(rows * dim);
        let mut provenance = Vec::with_capacity(rows);
        let mut sq_norms = Vec::with_capacity(rows);
        for e in &self.entries {
            values.extend_from_slice(&e.tokens);
            for t in 0..e.n_tokens {
                provenance.push(TokenOrigin {
                    frame_index: e.frame_index,
                    token_index: t,
                });
                sq_norms.push(e.row_sq_norm(t));
            }
        }
        Ok(MemoryTokens {
            dim,
            values,
            provenance,
            sq_norms,
        })
    }
}

/// Location of a token inside the memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub frame_index: usize,
    pub token_index: usize,
}

/// Row-stacked memory tokens with per-row provenance and squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTokens {
    dim: usize,
    values: Vec<f32>,
    provenance: Vec<TokenOrigin>,
    sq_norms: Vec<f64>,
}

impl MemoryTokens {
    /// Builds a memory matrix directly, computing norms.
    pub fn from_rows(dim: usize, values: Vec<f32>, provenance: Vec<TokenOrigin>) -> Result<Self, MemoryError> {
        if dim == 0 || provenance.is_empty() {
            return Err(MemoryError::EmptyBank);
        }
        if values.len() != provenance.len() * dim {
            return Err(MemoryError::ValueCount {
                n_tokens: provenance.len(),
                dim,
                found: values.len(),
            });
        }
        let sq_norms = values.chunks_exact(dim).map(sq_norm).collect();
        Ok(Self {
            dim,
            values,
            provenance,
            sq_norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.provenance.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn provenance(&self) -> &[TokenOrigin] {
        &self.provenance
    }

    pub fn sq_norm(&self, j: usize) -> f64 {
        self.sq_norms[j]
    }
}

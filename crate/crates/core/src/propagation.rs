//! Most-similar token propagation.
//!
//! Every token of the current frame is compared against every token held in
//! a [`MemoryBank`]. When the best match reaches the threshold λ the current
//! token is replaced by a verbatim copy of the matched memory token;
//! otherwise it is kept. Tokens are never blended.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::memory::{
    cosine_from_parts, dot, FeatureTokenMap, MemoryBank, MemoryError, MemoryTokens, TokenOrigin,
};

pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("token dimension {current} does not match memory dimension {memory}")]
    DimensionMismatch { current: usize, memory: usize },
    #[error("memory holds no tokens")]
    EmptyMemory,
    #[error("score matrix has no columns")]
    EmptyScores,
    #[error("similarity threshold must be finite, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Score used to rank memory tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// Unit-normalised inner product; zero-norm rows score 0.
    #[default]
    Cosine,
    /// Raw inner product, for ablations.
    InnerProduct,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Cosine => "cosine",
            Similarity::InnerProduct => "inner-product",
        })
    }
}

impl std::str::FromStr for Similarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "inner-product" | "dot" => Ok(Self::InnerProduct),
            other => Err(format!("unknown similarity '{other}' (expected cosine or inner-product)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub lambda: f64,
    pub similarity: Similarity,
    pub execution: Execution,
}

impl PropagationConfig {
    pub fn new(lambda: f64) -> Result<Self, PropagationError> {
        let cfg = Self {
            lambda,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if !self.lambda.is_finite() {
            return Err(PropagationError::InvalidLambda(self.lambda));
        }
        Ok(())
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            similarity: Similarity::Cosine,
            execution: Execution::default(),
        }
    }
}

/// Where an output token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenSource {
    /// The current frame's own token was kept.
    Current,
    /// Copied from this memory token.
    Memory(TokenOrigin),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub tokens_out: FeatureTokenMap,
    pub sources: Vec<TokenSource>,
    /// Best score per token; `None` when the memory was empty.
    pub best_similarity: Vec<Option<f64>>,
}

impl PropagationResult {
    pub fn replaced_count(&self) -> usize {
        self.sources
            .iter()
            .filter(|s| matches!(s, TokenSource::Memory(_)))
            .count()
    }

    pub fn replacement_rate(&self) -> f64 {
        self.replaced_count() as f64 / self.sources.len() as f64
    }

    /// Every token kept, no scores.
    pub fn unchanged(current: &FeatureTokenMap) -> Self {
        Self {
            tokens_out: current.clone(),
            sources: vec![TokenSource::Current; current.n_tokens()],
            best_similarity: vec![None; current.n_tokens()],
        }
    }
}

/// Dense n_tokens × n_memory score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

#[inline]
fn score(
    current: &FeatureTokenMap,
    i: usize,
    memory: &MemoryTokens,
    j: usize,
    similarity: Similarity,
) -> f64 {
    let d = dot(current.row(i), memory.row(j));
    match similarity {
        Similarity::Cosine => cosine_from_parts(d, current.row_sq_norm(i), memory.sq_norm(j)),
        Similarity::InnerProduct => d,
    }
}

fn check_dims(current: &FeatureTokenMap, memory: &MemoryTokens) -> Result<(), PropagationError> {
    if memory.n_rows() == 0 {
        return Err(PropagationError::EmptyMemory);
    }
    if current.dim() != memory.dim() {
        return Err(PropagationError::DimensionMismatch {
            current: current.dim(),
            memory: memory.dim(),
        });
    }
    Ok(())
}

/// Full similarity matrix between current tokens and memory rows.
pub fn similarity_scores(
    current: &FeatureTokenMap,
    memory: &MemoryTokens,
    similarity: Similarity,
    execution: Execution,
) -> Result<ScoreMatrix, PropagationError> {
    check_dims(current, memory)?;
    let cols = memory.n_rows();
    let rows = current.n_tokens();
    let mut values = vec![0.0f64; rows * cols];
    exec::for_each_row_mut(&mut values, cols, execution, |i, out| {
        for (j, v) in out.iter_mut().enumerate() {
            *v = score(current, i, memory, j, similarity);
        }
    });
    Ok(ScoreMatrix { rows, cols, values })
}

/// Per-row argmax; ties go to the lowest column.
pub fn select_best(scores: &ScoreMatrix) -> Result<Vec<(usize, f64)>, PropagationError> {
    if scores.cols == 0 {
        return Err(PropagationError::EmptyScores);
    }
    Ok((0..scores.rows)
        .map(|i| {
            let row = scores.row(i);
            let mut best = (0, row[0]);
            for (j, &s) in row.iter().enumerate().skip(1) {
                if s > best.1 {
                    best = (j, s);
                }
            }
            best
        })
        .collect())
}

/// Best memory row for current token `i`, scanning memory once.
fn best_match(
    current: &FeatureTokenMap,
    i: usize,
    memory: &MemoryTokens,
    similarity: Similarity,
) -> (usize, f64) {
    let mut best = (0, score(current, i, memory, 0, similarity));
    for j in 1..memory.n_rows() {
        let s = score(current, i, memory, j, similarity);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Propagates memory tokens into `current` (the hot path).
///
/// Rows are processed independently, in parallel when requested, without
/// materialising the score matrix.
pub fn propagate(
    current: &FeatureTokenMap,
    bank: &MemoryBank,
    cfg: &PropagationConfig,
) -> Result<PropagationResult, PropagationError> {
    cfg.validate()?;
    if bank.is_empty() {
        return Ok(PropagationResult::unchanged(current));
    }
    let memory = bank.concat_tokens()?;
    propagate_against(current, &memory, cfg)
}

/// As [`propagate`], against an already concatenated memory.
pub fn propagate_against(
    current: &FeatureTokenMap,
    memory: &MemoryTokens,
    cfg: &PropagationConfig,
) -> Result<PropagationResult, PropagationError> {
    cfg.validate()?;
    check_dims(current, memory)?;
    let mut current = current.clone();
    current.ensure_norms();
    let best = exec::map_indices(current.n_tokens(), cfg.execution, |i| {
        best_match(&current, i, memory, cfg.similarity)
    });

    let dim = current.dim();
    let mut tokens = current.tokens().to_vec();
    let mut sources = Vec::with_capacity(best.len());
    let mut best_similarity = Vec::with_capacity(best.len());
    for (i, (j, s)) in best.into_iter().enumerate() {
        best_similarity.push(Some(s));
        if s >= cfg.lambda {
            tokens[i * dim..(i + 1) * dim].copy_from_slice(memory.row(j));
            sources.push(TokenSource::Memory(memory.provenance()[j]));
        } else {
            sources.push(TokenSource::Current);
        }
    }
    Ok(PropagationResult {
        tokens_out: current.replace_tokens(tokens)?,
        sources,
        best_similarity,
    })
}

/// Reference implementation with explicit loops over stored frames and
/// tokens, recomputing every norm. Same contract as [`propagate`].
pub fn propagate_bruteforce(
    current: &FeatureTokenMap,
    bank: &MemoryBank,
    cfg: &PropagationConfig,
) -> Result<PropagationResult, PropagationError> {
    cfg.validate()?;
    if bank.is_empty() {
        return Ok(PropagationResult::unchanged(current));
    }
    let dim = current.dim();
    for entry in bank.entries() {
        if entry.dim() != dim {
            return Err(PropagationError::DimensionMismatch {
                current: dim,
                memory: entry.dim(),
            });
        }
    }

    let mut tokens = current.tokens().to_vec();
    let mut sources = Vec::new();
    let mut best_similarity = Vec::new();
    for i in 0..current.n_tokens() {
        let a = current.row(i);
        let mut best: Option<(f64, &[f32], TokenOrigin)> = None;
        for entry in bank.entries() {
            for t in 0..entry.n_tokens() {
                let b = entry.row(t);
                let mut ab = 0.0f64;
                let mut aa = 0.0f64;
                let mut bb = 0.0f64;
                for k in 0..dim {
                    ab += f64::from(a[k]) * f64::from(b[k]);
                    aa += f64::from(a[k]) * f64::from(a[k]);
                    bb += f64::from(b[k]) * f64::from(b[k]);
                }
                let s = match cfg.similarity {
                    Similarity::InnerProduct => ab,
                    Similarity::Cosine if aa == 0.0 || bb == 0.0 => 0.0,
                    Similarity::Cosine => (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0),
                };
                let origin = TokenOrigin {
                    frame_index: entry.frame_index(),
                    token_index: t,
                };
                match best {
                    Some((bs, _, _)) if s <= bs => {}
                    _ => best = Some((s, b, origin)),
                }
            }
        }
        let (s, row, origin) = best.expect("bank is non-empty");
        best_similarity.push(Some(s));
        if s >= cfg.lambda {
            tokens[i * dim..(i + 1) * dim].copy_from_slice(row);
            sources.push(TokenSource::Memory(origin));
        } else {
            sources.push(TokenSource::Current);
        }
    }
    Ok(PropagationResult {
        tokens_out: current.replace_tokens(tokens)?,
        sources,
        best_similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::DistanceMetric;

    fn fmap(frame: usize, n: usize, dim: usize, v: Vec<f32>) -> FeatureTokenMap {
        FeatureTokenMap::new(frame, "l", n, dim, v).unwrap()
    }

    fn unit_bank() -> MemoryBank {
        let mut bank = MemoryBank::new(5, DistanceMetric::FrameGap).unwrap();
        bank.insert(fmap(0, 2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        bank
    }

    #[test]
    fn self_similarity_is_one() {
        let bank = unit_bank();
        let mem = bank.concat_tokens().unwrap();
        let cur = fmap(1, 1, 2, vec![0.0, 1.0]);
        let s = similarity_scores(&cur, &mem, Similarity::Cosine, Execution::Sequential).unwrap();
        assert!((s.row(0)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_and_hand_scores() {
        let mem = unit_bank().concat_tokens().unwrap();
        let s = similarity_scores(&fmap(1, 1, 2, vec![1.0, 0.0]), &mem, Similarity::Cosine, Execution::Parallel).unwrap();
        assert_eq!(s.values, vec![1.0, 0.0]);
        let s = similarity_scores(&fmap(1, 1, 2, vec![0.8, 0.6]), &mem, Similarity::Cosine, Execution::Parallel).unwrap();
        assert!((s.values[0] - 0.8).abs() < 1e-6 && (s.values[1] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn zero_norm_scores_zero() {
        let mem = unit_bank().concat_tokens().unwrap();
        let s = similarity_scores(&fmap(1, 1, 2, vec![0.0, 0.0]), &mem, Similarity::Cosine, Execution::Sequential).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
    }

    #[test]
    fn score_errors() {
        let mem = unit_bank().concat_tokens().unwrap();
        assert_eq!(
            similarity_scores(&fmap(1, 1, 3, vec![0.0; 3]), &mem, Similarity::Cosine, Execution::Sequential).unwrap_err(),
            PropagationError::DimensionMismatch { current: 3, memory: 2 }
        );
        let empty = ScoreMatrix { rows: 1, cols: 0, values: vec![] };
        assert_eq!(select_best(&empty).unwrap_err(), PropagationError::EmptyScores);
    }

    #[test]
    fn select_best_examples() {
        let m = ScoreMatrix { rows: 2, cols: 3, values: vec![0.2, 0.9, 0.5, 0.7, 0.7, 0.1] };
        assert_eq!(select_best(&m).unwrap(), vec![(1, 0.9), (0, 0.7)]);
    }

    #[test]
    fn empty_bank_is_identity() {
        let bank = MemoryBank::new(5, DistanceMetric::FrameGap).unwrap();
        let cur = fmap(0, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        for r in [
            propagate(&cur, &bank, &PropagationConfig::default()).unwrap(),
            propagate_bruteforce(&cur, &bank, &PropagationConfig::default()).unwrap(),
        ] {
            assert_eq!(r.tokens_out, cur);
            assert!(r.sources.iter().all(|s| *s == TokenSource::Current));
        }
    }

    #[test]
    fn unreachable_threshold_is_identity() {
        let cur = fmap(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let r = propagate(&cur, &unit_bank(), &PropagationConfig::new(1.1).unwrap()).unwrap();
        assert_eq!(r.tokens_out.tokens(), cur.tokens());
        assert_eq!(r.replaced_count(), 0);
    }

    #[test]
    fn hand_example_copies_best_token() {
        let cur = fmap(1, 1, 2, vec![0.8, 0.6]);
        let cfg = PropagationConfig::new(0.7).unwrap();
        for r in [
            propagate(&cur, &unit_bank(), &cfg).unwrap(),
            propagate_bruteforce(&cur, &unit_bank(), &cfg).unwrap(),
        ] {
            assert_eq!(r.tokens_out.tokens(), &[1.0, 0.0]);
            assert_eq!(r.sources[0], TokenSource::Memory(TokenOrigin { frame_index: 0, token_index: 0 }));
            assert!((r.best_similarity[0].unwrap() - 0.8).abs() < 1e-6);
        }
    }

    #[test]
    fn always_fire_threshold_replaces_everything() {
        let cur = fmap(1, 2, 2, vec![-1.0, -1.0, 0.3, -0.2]);
        let r = propagate_bruteforce(&cur, &unit_bank(), &PropagationConfig::new(-1.0).unwrap()).unwrap();
        assert_eq!(r.replaced_count(), 2);
    }

    #[test]
    fn inner_product_mode_uses_raw_scores() {
        let cfg = PropagationConfig { lambda: 1.5, similarity: Similarity::InnerProduct, ..Default::default() };
        let cur = fmap(1, 1, 2, vec![2.0, 0.0]);
        let r = propagate(&cur, &unit_bank(), &cfg).unwrap();
        assert_eq!(r.best_similarity[0], Some(2.0));
        assert_eq!(r.replaced_count(), 1);
    }

    #[test]
    fn rejects_non_finite_lambda() {
        assert!(PropagationConfig::new(f64::NAN).is_err());
    }
}

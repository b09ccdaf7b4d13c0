//! Instance masks from cross-attention, plus contour-based temporal overlap.

mod attention;
mod binary;
mod morphology;

use thiserror::Error;

pub use attention::{
    aggregate, attention_prob, extract_mask, AttentionRecord, LayerSelection, MaskConfig,
    ProbMatrix, ProbMode, StepWindow, WordSelection, DEFAULT_AGGREGATE_SIDE, DEFAULT_TAU,
};
pub use binary::BinaryMask;
pub use morphology::{
    components, contour_union, contours, fill, temporal_overlap, upsample_nearest, Connectivity,
};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("query/key widths differ: q has d_k={q}, k has d_k={k}")]
    KeyWidthMismatch { q: usize, k: usize },
    #[error("attention record needs d_k > 0 and at least one token and one word")]
    EmptyRecord,
    #[error("{what}: expected {expected} values, got {found}")]
    ValueCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("spatial shape {h}x{w} does not cover {n_tokens} tokens")]
    SpatialShape { h: usize, w: usize, n_tokens: usize },
    #[error("attention values must be finite")]
    NonFinite,
    #[error("no attention records match the aggregation settings")]
    EmptySelection,
    #[error("records disagree on shape: {0}")]
    InconsistentRecords(String),
    #[error("word selection needs at least one index below {n_words}, got {indices:?}")]
    InvalidSelection { n_words: usize, indices: Vec<usize> },
    #[error("probability matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    ProbShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("cannot upsample {from:?} to {to:?}: target must be an integer multiple")]
    ScaleFactor { from: (usize, usize), to: (usize, usize) },
    #[error("mask threshold must lie in [0, 1), got {0}")]
    InvalidTau(f64),
    #[error("invalid mask configuration: {0}")]
    InvalidConfig(String),
}

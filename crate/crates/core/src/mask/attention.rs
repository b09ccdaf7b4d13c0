use std::fmt;

use super::{BinaryMask, Connectivity, MaskError};
use crate::exec::{self, Execution};

pub const DEFAULT_TAU: f64 = 0.3;
/// Spatial side of the attention maps aggregated by default.
pub const DEFAULT_AGGREGATE_SIDE: usize = 16;

/// Cross-attention queries and keys for one (frame, step, layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub frame_index: usize,
    pub step_index: usize,
    pub layer_id: String,
    pub head_index: usize,
    height: usize,
    width: usize,
    d_k: usize,
    n_words: usize,
    q: Vec<f32>,
    k: Vec<f32>,
}

impl AttentionRecord {
    /// `q` is `(height·width) × d_k`, `k` is `n_words × d_k`, both row-major.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        frame_index: usize,
        step_index: usize,
        layer_id: impl Into<String>,
        head_index: usize,
        spatial: (usize, usize),
        d_k: usize,
        q: Vec<f32>,
        k: Vec<f32>,
    ) -> Result<Self, MaskError> {
        let (height, width) = spatial;
        let n_tokens = height * width;
        if d_k == 0 || n_tokens == 0 || k.is_empty() {
            return Err(MaskError::EmptyRecord);
        }
        if q.len() != n_tokens * d_k {
            return Err(MaskError::ValueCount {
                what: "attention queries",
                expected: n_tokens * d_k,
                found: q.len(),
            });
        }
        if k.len() % d_k != 0 {
            return Err(MaskError::ValueCount {
                what: "attention keys (a multiple of d_k)",
                expected: (k.len() / d_k + 1) * d_k,
                found: k.len(),
            });
        }
        if q.iter().chain(&k).any(|v| !v.is_finite()) {
            return Err(MaskError::NonFinite);
        }
        Ok(Self {
            frame_index,
            step_index,
            layer_id: layer_id.into(),
            head_index,
            height,
            width,
            d_k,
            n_words: k.len() / d_k,
            q,
            k,
        })
    }

    /// Builds a record from separately shaped Q (`n_tokens × d_q`) and
    /// K (`n_words × d_k`) matrices, checking that the widths agree.
    #[allow(clippy::too_many_arguments)]
    pub fn from_matrices(
        frame_index: usize,
        step_index: usize,
        layer_id: impl Into<String>,
        head_index: usize,
        spatial: (usize, usize),
        q: (usize, usize, Vec<f32>),
        k: (usize, usize, Vec<f32>),
    ) -> Result<Self, MaskError> {
        let (q_rows, q_cols, q_vals) = q;
        let (_, k_cols, k_vals) = k;
        if q_cols != k_cols {
            return Err(MaskError::KeyWidthMismatch { q: q_cols, k: k_cols });
        }
        if q_rows != spatial.0 * spatial.1 {
            return Err(MaskError::SpatialShape {
                h: spatial.0,
                w: spatial.1,
                n_tokens: q_rows,
            });
        }
        Self::new(frame_index, step_index, layer_id, head_index, spatial, q_cols, q_vals, k_vals)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn q(&self) -> &[f32] {
        &self.q
    }

    pub fn k(&self) -> &[f32] {
        &self.k
    }
}

/// How Q·Kᵀ logits become the map that is thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbMode {
    /// Row softmax of `Q·Kᵀ/√d_k`.
    #[default]
    Softmax,
    /// Raw `Q·Kᵀ`, for ablations.
    RawLogits,
}

impl fmt::Display for ProbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbMode::Softmax => "softmax",
            ProbMode::RawLogits => "raw",
        })
    }
}

impl std::str::FromStr for ProbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "raw" => Ok(Self::RawLogits),
            other => Err(format!("unknown attention mode '{other}' (expected softmax or raw)")),
        }
    }
}

/// Token × word attention map on an h×w grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    pub spatial: (usize, usize),
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ProbMatrix {
    pub fn rows(&self) -> usize {
        self.spatial.0 * self.spatial.1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, w: usize) -> f64 {
        self.values[i * self.cols + w]
    }

    /// Nearest-neighbour enlargement to an integer multiple of the grid.
    fn upsampled(&self, target: (usize, usize)) -> Result<ProbMatrix, MaskError> {
        if target == self.spatial {
            return Ok(self.clone());
        }
        let (h, w) = self.spatial;
        let (th, tw) = target;
        if th < h || tw < w || th % h != 0 || tw % w != 0 {
            return Err(MaskError::ScaleFactor { from: self.spatial, to: target });
        }
        let (fy, fx) = (th / h, tw / w);
        let mut values = Vec::with_capacity(th * tw * self.cols);
        for y in 0..th {
            for x in 0..tw {
                values.extend_from_slice(self.row((y / fy) * w + x / fx));
            }
        }
        Ok(ProbMatrix {
            spatial: target,
            cols: self.cols,
            values,
        })
    }
}

/// Per-token attention over prompt words.
pub fn attention_prob(rec: &AttentionRecord, mode: ProbMode) -> ProbMatrix {
    let d_k = rec.d_k;
    let n_words = rec.n_words;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut values = vec![0.0f64; rec.n_tokens() * n_words];
    for (i, out) in values.chunks_exact_mut(n_words).enumerate() {
        let q = &rec.q[i * d_k..(i + 1) * d_k];
        for (w, o) in out.iter_mut().enumerate() {
            let k = &rec.k[w * d_k..(w + 1) * d_k];
            *o = q.iter().zip(k).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        }
        if mode == ProbMode::Softmax {
            let max = out.iter().map(|v| v * scale).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for o in out.iter_mut() {
                *o = (*o * scale - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
    }
    ProbMatrix {
        spatial: rec.spatial(),
        cols: n_words,
        values,
    }
}

/// Which attention layers feed mask aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    /// Every layer whose attention grid is `side × side`.
    SpatialSide(usize),
    Ids(Vec<String>),
}

impl Default for LayerSelection {
    fn default() -> Self {
        LayerSelection::SpatialSide(DEFAULT_AGGREGATE_SIDE)
    }
}

impl LayerSelection {
    pub fn matches(&self, layer_id: &str, spatial: (usize, usize)) -> bool {
        match self {
            LayerSelection::All => true,
            LayerSelection::SpatialSide(s) => spatial == (*s, *s),
            LayerSelection::Ids(ids) => ids.iter().any(|id| id == layer_id),
        }
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::All => f.write_str("all"),
            LayerSelection::SpatialSide(s) => write!(f, "side:{s}"),
            LayerSelection::Ids(ids) => f.write_str(&ids.join(",")),
        }
    }
}

impl std::str::FromStr for LayerSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "all" {
            return Ok(Self::All);
        }
        if let Some(side) = s.strip_prefix("side:") {
            return side
                .parse()
                .map(Self::SpatialSide)
                .map_err(|_| format!("bad layer side '{side}'"));
        }
        let ids: Vec<String> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        if ids.is_empty() {
            return Err("empty layer selection".into());
        }
        Ok(Self::Ids(ids))
    }
}

/// Sampling steps whose attention is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepWindow {
    /// Steps `0..⌈T/2⌉` of a T-step sampling run.
    #[default]
    FirstHalf,
    /// Inclusive explicit range.
    Range { start: usize, end: usize },
}

impl StepWindow {
    pub fn resolve(&self, total_steps: usize) -> (usize, usize) {
        match *self {
            StepWindow::FirstHalf => (0, total_steps.div_ceil(2).saturating_sub(1)),
            StepWindow::Range { start, end } => (start, end),
        }
    }

    pub fn contains(&self, step: usize, total_steps: usize) -> bool {
        let (a, b) = self.resolve(total_steps);
        (a..=b).contains(&step)
    }
}

impl fmt::Display for StepWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepWindow::FirstHalf => f.write_str("first-half"),
            StepWindow::Range { start, end } => write!(f, "{start}-{end}"),
        }
    }
}

impl std::str::FromStr for StepWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "first-half" {
            return Ok(Self::FirstHalf);
        }
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("step range '{s}' should look like START-END"))?;
        let start = a.trim().parse().map_err(|_| format!("bad step '{a}'"))?;
        let end = b.trim().parse().map_err(|_| format!("bad step '{b}'"))?;
        if start > end {
            return Err(format!("empty step range {start}-{end}"));
        }
        Ok(Self::Range { start, end })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskConfig {
    pub tau: f64,
    pub steps: StepWindow,
    pub layers: LayerSelection,
    pub mode: ProbMode,
    pub connectivity: Connectivity,
    pub execution: Execution,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            steps: StepWindow::default(),
            layers: LayerSelection::default(),
            mode: ProbMode::default(),
            connectivity: Connectivity::default(),
            execution: Execution::default(),
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(MaskError::InvalidTau(self.tau));
        }
        if let StepWindow::Range { start, end } = self.steps {
            if start > end {
                return Err(MaskError::InvalidConfig(format!("empty step range {start}-{end}")));
            }
        }
        if let LayerSelection::Ids(ids) = &self.layers {
            if ids.is_empty() {
                return Err(MaskError::InvalidConfig("empty layer set".into()));
            }
        }
        Ok(())
    }

    pub fn selects(&self, rec: &AttentionRecord, total_steps: usize) -> bool {
        self.steps.contains(rec.step_index, total_steps)
            && self.layers.matches(&rec.layer_id, rec.spatial())
    }
}

/// Mean attention map over the records selected by `cfg`.
///
/// Maps from coarser layers are upsampled (nearest) to the finest selected
/// grid before averaging.
pub fn aggregate<'a, I>(records: I, cfg: &MaskConfig, total_steps: usize) -> Result<ProbMatrix, MaskError>
where
    I: IntoIterator<Item = &'a AttentionRecord>,
{
    let selected: Vec<&AttentionRecord> = records
        .into_iter()
        .filter(|r| cfg.selects(r, total_steps))
        .collect();
    let first = selected.first().ok_or(MaskError::EmptySelection)?;
    let n_words = first.n_words();
    if let Some(bad) = selected.iter().find(|r| r.n_words() != n_words) {
        return Err(MaskError::InconsistentRecords(format!(
            "record for layer '{}' step {} has {} words, expected {n_words}",
            bad.layer_id,
            bad.step_index,
            bad.n_words()
        )));
    }
    let target = selected
        .iter()
        .map(|r| r.spatial())
        .max_by_key(|(h, w)| h * w)
        .expect("non-empty");

    let probs = exec::try_map_indices(selected.len(), cfg.execution, |i| {
        attention_prob(selected[i], cfg.mode).upsampled(target)
    })?;
    let mut values = vec![0.0f64; target.0 * target.1 * n_words];
    for p in &probs {
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += v;
        }
    }
    let n = probs.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(ProbMatrix {
        spatial: target,
        cols: n_words,
        values,
    })
}

/// Binary selection over prompt-word columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSelection {
    flags: Vec<bool>,
}

impl WordSelection {
    pub fn new(n_words: usize, indices: &[usize]) -> Result<Self, MaskError> {
        if indices.is_empty() || indices.iter().any(|&i| i >= n_words) {
            return Err(MaskError::InvalidSelection {
                n_words,
                indices: indices.to_vec(),
            });
        }
        let mut flags = vec![false; n_words];
        indices.iter().for_each(|&i| flags[i] = true);
        Ok(Self { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }
}

/// Pixels whose summed selected-word mass exceeds `tau`.
pub fn extract_mask(
    prob: &ProbMatrix,
    sel: &WordSelection,
    tau: f64,
    shape: (usize, usize),
) -> Result<BinaryMask, MaskError> {
    if !tau.is_finite() {
        return Err(MaskError::InvalidTau(tau));
    }
    let rows = shape.0 * shape.1;
    if prob.cols != sel.len() || prob.rows() != rows || prob.values.len() != rows * prob.cols {
        return Err(MaskError::ProbShape {
            rows: prob.rows(),
            cols: prob.cols,
            expected_rows: rows,
            expected_cols: sel.len(),
        });
    }
    let bits = (0..rows)
        .map(|i| {
            let mass: f64 = prob
                .row(i)
                .iter()
                .zip(sel.flags())
                .filter(|(_, f)| **f)
                .map(|(p, _)| p)
                .sum();
            mass > tau
        })
        .collect();
    BinaryMask::new(shape.0, shape.1, bits)
}

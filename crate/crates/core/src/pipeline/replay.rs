//! Memory, propagation and masks over tensors recorded from a real model.
//!
//! No latent is sampled: recorded spatial features go through the same
//! propagate-then-capture cycle as in a live edit, and recorded cross-attention
//! Q/K produce the per-frame masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::io::{
    read_manifest, read_tensor, write_manifest, write_mask_pgm, write_tensor, ManifestRecord,
    RecordKind, RecordManifest, Tensor,
};
use crate::mask::{AttentionRecord, BinaryMask};
use crate::memory::{FeatureTokenMap, MemoryBank};
use crate::propagation::{propagate_against, PropagationResult};

use super::edit::{build_mask, commit_features};
use super::{EditConfig, EditReport, FrameReport, PipelineError, StepRecord, StorageStats};

/// Subdirectory of the output directory holding per-frame masks.
pub const REPLAY_MASK_DIR: &str = "masks";

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    /// Propagated features captured for the memory, per frame and layer.
    pub features: Vec<Vec<FeatureTokenMap>>,
    pub masks: Vec<Option<BinaryMask>>,
    pub report: EditReport,
}

type FeatureKey = (usize, usize, String);
type AttentionKey = (usize, usize, String, usize);

/// Manifest contents grouped and checked for completeness.
struct Recording {
    frames: Vec<usize>,
    steps: Vec<usize>,
    layers: Vec<String>,
    features: BTreeMap<FeatureKey, ManifestRecord>,
    /// (step, layer, head) triples recorded for cross-attention.
    attention_sites: BTreeSet<(usize, String, usize)>,
    queries: BTreeMap<AttentionKey, ManifestRecord>,
    keys: BTreeMap<AttentionKey, ManifestRecord>,
}

fn missing(frame: usize, step: usize, layer: &str, kind: impl ToString) -> PipelineError {
    PipelineError::MissingRecord {
        frame,
        step,
        layer: layer.to_string(),
        kind: kind.to_string(),
    }
}

impl Recording {
    fn index(manifest: &RecordManifest) -> Result<Self, PipelineError> {
        let mut frames = BTreeSet::new();
        let mut steps = BTreeSet::new();
        let mut layers = BTreeSet::new();
        let mut attention_sites = BTreeSet::new();
        let mut features = BTreeMap::new();
        let mut queries = BTreeMap::new();
        let mut keys = BTreeMap::new();
        for r in &manifest.records {
            frames.insert(r.frame);
            match r.kind {
                RecordKind::SpatialFeatures => {
                    steps.insert(r.step);
                    layers.insert(r.layer.clone());
                    features.insert((r.frame, r.step, r.layer.clone()), r.clone());
                }
                RecordKind::CrossQ | RecordKind::CrossK => {
                    let head = r.head.unwrap_or(0);
                    attention_sites.insert((r.step, r.layer.clone(), head));
                    let map = if r.kind == RecordKind::CrossQ { &mut queries } else { &mut keys };
                    map.insert((r.frame, r.step, r.layer.clone(), head), r.clone());
                }
                RecordKind::Latent => {}
            }
        }
        let rec = Self {
            frames: frames.into_iter().collect(),
            steps: steps.into_iter().collect(),
            layers: layers.into_iter().collect(),
            features,
            attention_sites,
            queries,
            keys,
        };
        rec.check_complete()?;
        Ok(rec)
    }

    fn check_complete(&self) -> Result<(), PipelineError> {
        for &f in &self.frames {
            for &s in &self.steps {
                for l in &self.layers {
                    if !self.features.contains_key(&(f, s, l.clone())) {
                        return Err(missing(f, s, l, RecordKind::SpatialFeatures));
                    }
                }
            }
            for (s, l, h) in &self.attention_sites {
                let key = (f, *s, l.clone(), *h);
                if !self.queries.contains_key(&key) {
                    return Err(missing(f, *s, l, format!("{} (head {h})", RecordKind::CrossQ)));
                }
                if !self.keys.contains_key(&key) {
                    return Err(missing(f, *s, l, format!("{} (head {h})", RecordKind::CrossK)));
                }
            }
        }
        Ok(())
    }
}

fn load(manifest: &RecordManifest, record: &ManifestRecord) -> Result<Tensor, PipelineError> {
    read_tensor(manifest.resolve(record)).map_err(|source| PipelineError::Record {
        path: record.path.clone(),
        source,
    })
}

fn matrix(manifest: &RecordManifest, record: &ManifestRecord, rows: Option<usize>) -> Result<(usize, usize, Vec<f32>), PipelineError> {
    let t = load(manifest, record)?;
    let bad = |message: String| PipelineError::BadRecord {
        path: record.path.clone(),
        message,
    };
    let [r, c] = t.dims[..] else {
        return Err(bad(format!("expected a rank-2 tensor, got dims {:?}", t.dims)));
    };
    if let Some(expected) = rows {
        if r != expected {
            return Err(bad(format!("has {r} rows but the record declares {expected} tokens")));
        }
    }
    Ok((r, c, t.values))
}

fn load_features(manifest: &RecordManifest, record: &ManifestRecord) -> Result<FeatureTokenMap, PipelineError> {
    let (n, d, values) = matrix(manifest, record, Some(record.h * record.w))?;
    Ok(FeatureTokenMap::new(record.frame, record.layer.clone(), n, d, values)?)
}

fn load_attention(
    manifest: &RecordManifest,
    q: &ManifestRecord,
    k: &ManifestRecord,
) -> Result<AttentionRecord, PipelineError> {
    let qm = matrix(manifest, q, Some(q.h * q.w))?;
    let km = matrix(manifest, k, None)?;
    Ok(AttentionRecord::from_matrices(
        q.frame,
        q.step,
        q.layer.clone(),
        q.head.unwrap_or(0),
        (q.h, q.w),
        qm,
        km,
    )?)
}

fn file_stem(layer: &str) -> String {
    layer
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// Recorded step whose features feed the memory: the latest recorded step
/// not after the configured one, else the first recorded step.
fn capture_step(steps: &[usize], wanted: usize) -> Option<usize> {
    steps
        .iter()
        .rev()
        .find(|&&s| s <= wanted)
        .or(steps.first())
        .copied()
}

/// Runs memory, propagation and masking over the recording in `record_dir`.
///
/// With `out_dir`, propagated features are written as tensors under
/// `features/` with their own manifest, and masks as PGM files under
/// [`REPLAY_MASK_DIR`].
pub fn replay_edit(
    record_dir: &Path,
    cfg: &EditConfig,
    out_dir: Option<&Path>,
) -> Result<ReplayOutput, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let prop_cfg = cfg.propagation_config()?;
    let mask_cfg = cfg.mask_config();
    let manifest = read_manifest(record_dir)?;
    let rec = Recording::index(&manifest)?;
    let capture = capture_step(&rec.steps, cfg.resolved_update_step());

    let feature_root = out_dir.map(|d| d.join("features"));
    if let Some(dir) = &feature_root {
        fs::create_dir_all(dir).map_err(|e| crate::io::IoError::io(dir, e))?;
    }
    if let Some(dir) = out_dir {
        let masks = dir.join(REPLAY_MASK_DIR);
        fs::create_dir_all(&masks).map_err(|e| crate::io::IoError::io(&masks, e))?;
    }

    let mut banks: BTreeMap<String, MemoryBank> = BTreeMap::new();
    let mut prev_mask: Option<BinaryMask> = None;
    let mut storage = StorageStats::default();
    let mut out_records = Vec::new();
    let mut all_features = Vec::with_capacity(rec.frames.len());
    let mut masks = Vec::with_capacity(rec.frames.len());
    let mut frames = Vec::with_capacity(rec.frames.len());

    for &frame in &rec.frames {
        let mut run = || -> Result<(FrameReport, Vec<FeatureTokenMap>, Option<BinaryMask>), PipelineError> {
            let memory = banks
                .iter()
                .filter(|(_, b)| !b.is_empty())
                .map(|(id, b)| Ok((id.clone(), b.concat_tokens()?)))
                .collect::<Result<BTreeMap<_, _>, PipelineError>>()?;
            let mut staged = Vec::new();
            let mut steps = Vec::with_capacity(rec.steps.len());
            let mut replaced_fraction: BTreeMap<String, f64> = BTreeMap::new();
            let mut peak_features = 0usize;
            let mut records = Vec::new();
            for &step in &rec.steps {
                let mut replaced = BTreeMap::new();
                let mut propagated = Vec::with_capacity(rec.layers.len());
                for layer in &rec.layers {
                    let record = &rec.features[&(frame, step, layer.clone())];
                    let current = load_features(&manifest, record)?;
                    let result = match memory.get(layer) {
                        Some(m) if cfg.propagation => propagate_against(&current, m, &prop_cfg)?,
                        _ => PropagationResult::unchanged(&current),
                    };
                    *replaced_fraction.entry(layer.clone()).or_insert(0.0) += result.replacement_rate();
                    replaced.insert(layer.clone(), result.replaced_count());
                    if let Some(root) = &feature_root {
                        let rel = format!("f{frame:04}/s{step:03}_{}.eyit", file_stem(layer));
                        let path = root.join(&rel);
                        if let Some(parent) = path.parent() {
                            fs::create_dir_all(parent).map_err(|e| crate::io::IoError::io(parent, e))?;
                        }
                        let out = &result.tokens_out;
                        write_tensor(&path, &[out.n_tokens(), out.dim()], out.tokens())?;
                        out_records.push(ManifestRecord {
                            path: rel,
                            ..record.clone()
                        });
                    }
                    propagated.push(result.tokens_out);
                }
                peak_features = peak_features.max(propagated.iter().map(|f| 2 * f.tokens().len()).sum());
                if Some(step) == capture {
                    staged = propagated;
                }
                steps.push(StepRecord {
                    frame,
                    step,
                    latent_norm: None,
                    replaced,
                    injected: false,
                });
            }

            for (step, layer, head) in &rec.attention_sites {
                if !mask_cfg.steps.contains(*step, cfg.steps) {
                    continue;
                }
                let key = (frame, *step, layer.clone(), *head);
                let r = load_attention(&manifest, &rec.queries[&key], &rec.keys[&key])?;
                if mask_cfg.selects(&r, cfg.steps) {
                    records.push(r);
                }
            }
            let attention_elements: usize = records.iter().map(|r| r.q().len() + r.k().len()).sum();
            let built = build_mask(&records, &mask_cfg, cfg, None, prev_mask.as_ref())?;
            let (mask, raw) = match built {
                Some((m, r)) => (Some(m), Some(r)),
                None => (None, None),
            };
            if let (Some(dir), Some(m)) = (out_dir, &mask) {
                write_mask_pgm(dir.join(REPLAY_MASK_DIR).join(format!("f{frame:04}.pgm")), m)?;
            }
            prev_mask = raw;

            let memory_events = commit_features(&mut banks, &staged, cfg)?;
            let retained_per_layer: BTreeMap<String, usize> =
                banks.iter().map(|(id, b)| (id.clone(), b.stored_elements())).collect();
            let retained_elements = retained_per_layer.values().sum();
            let staged_elements: usize = staged.iter().map(|f| f.tokens().len()).sum();
            let transient_elements = memory.values().map(|m| m.values().len()).sum::<usize>()
                + peak_features
                + attention_elements
                + staged_elements;
            storage.peak_retained = storage.peak_retained.max(retained_elements);
            storage.peak_transient = storage.peak_transient.max(transient_elements);
            storage.retained_per_layer = retained_per_layer;

            let n_steps = rec.steps.len().max(1) as f64;
            let report = FrameReport {
                frame,
                replacement_rate: replaced_fraction.into_iter().map(|(l, v)| (l, v / n_steps)).collect(),
                memory_events,
                mask_pixels: mask.as_ref().map(BinaryMask::count),
                retained_elements,
                transient_elements,
                steps,
            };
            Ok((report, staged, mask))
        };
        let (report, staged, mask) = run().map_err(|e| e.in_frame(frame))?;
        frames.push(report);
        all_features.push(staged);
        masks.push(mask);
    }

    if let Some(root) = &feature_root {
        write_manifest(root, &out_records)?;
    }
    Ok(ReplayOutput {
        features: all_features,
        masks,
        report: EditReport {
            frames,
            storage,
            elapsed: started.elapsed(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_step_choice() {
        assert_eq!(capture_step(&[0, 10, 20], 15), Some(10));
        assert_eq!(capture_step(&[0, 10, 20], 20), Some(20));
        assert_eq!(capture_step(&[5, 10], 2), Some(5));
        assert_eq!(capture_step(&[], 2), None);
    }

    #[test]
    fn layer_names_become_file_safe() {
        assert_eq!(file_stem("up_blocks/1 attn"), "up_blocks_1_attn");
    }
}

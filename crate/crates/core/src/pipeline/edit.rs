use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::blend::{in_window, inject_background, InjectionWindow};
use crate::diffusion::{
    ddim_invert, ddim_sample, BoxError, Conditioning, DenoiserBackend, GridShape, Guidance,
    GuidanceConfig, LatentGrid, NoiseSchedule, SampleOptions, SampleStep, StepHook,
};
use crate::exec;
use crate::mask::{
    aggregate, extract_mask, temporal_overlap, upsample_nearest, AttentionRecord, BinaryMask,
    MaskConfig, MaskError, WordSelection,
};
use crate::memory::{FeatureTokenMap, MemoryBank, MemoryTokens};
use crate::propagation::{propagate_against, PropagationConfig, PropagationResult};

use super::{
    EditConfig, EditReport, FrameReport, LatentVideo, MaskSource, MemoryEvent, PipelineError,
    StepRecord, StorageStats,
};

/// Conditioning embeddings for one edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    /// Used for inversion.
    pub source: Conditioning,
    /// Used for sampling.
    pub edit: Conditioning,
    /// Enables classifier-free guidance when present.
    pub unconditional: Option<Conditioning>,
}

/// Everything produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: usize,
    pub latent: LatentGrid,
    /// Mask used for injection, if any.
    pub mask: Option<BinaryMask>,
    /// Propagated features captured at the memory update step, per layer.
    pub features: Vec<FeatureTokenMap>,
    pub report: FrameReport,
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    pub video: LatentVideo,
    pub masks: Vec<Option<BinaryMask>>,
    pub features: Vec<Vec<FeatureTokenMap>>,
    pub report: EditReport,
}

/// Stateful frame-by-frame editor. Frames must be fed in order.
#[derive(Debug)]
pub struct Editor {
    cfg: EditConfig,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    propagation: PropagationConfig,
    mask_cfg: MaskConfig,
    window: InjectionWindow,
    banks: BTreeMap<String, MemoryBank>,
    prev_mask: Option<BinaryMask>,
    shape: Option<GridShape>,
    next_frame: usize,
    storage: StorageStats,
}

impl Editor {
    pub fn new(cfg: EditConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            schedule: cfg.schedule()?,
            guidance: cfg.guidance_config()?,
            propagation: cfg.propagation_config()?,
            mask_cfg: cfg.mask_config(),
            window: cfg.injection_window()?,
            cfg,
            banks: BTreeMap::new(),
            prev_mask: None,
            shape: None,
            next_frame: 0,
            storage: StorageStats::default(),
        })
    }

    pub fn config(&self) -> &EditConfig {
        &self.cfg
    }

    /// Memory banks keyed by layer id.
    pub fn banks(&self) -> &BTreeMap<String, MemoryBank> {
        &self.banks
    }

    pub fn storage(&self) -> &StorageStats {
        &self.storage
    }

    /// Index the next call to [`Editor::process_frame`] will use.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    pub fn process_frame<B: DenoiserBackend + ?Sized>(
        &mut self,
        z0: &LatentGrid,
        backend: &mut B,
        prompts: &Prompts,
    ) -> Result<FrameOutput, PipelineError> {
        let frame = self.next_frame;
        let out = self
            .run_frame(frame, z0, backend, prompts)
            .map_err(|e| e.in_frame(frame))?;
        self.next_frame += 1;
        Ok(out)
    }

    fn run_frame<B: DenoiserBackend + ?Sized>(
        &mut self,
        frame: usize,
        z0: &LatentGrid,
        backend: &mut B,
        prompts: &Prompts,
    ) -> Result<FrameOutput, PipelineError> {
        let shape = z0.shape();
        match self.shape {
            Some(expected) if expected != shape => {
                return Err(PipelineError::ShapeDrift {
                    frame,
                    expected,
                    found: shape,
                })
            }
            _ => self.shape = Some(shape),
        }
        let steps = self.cfg.steps;

        let trajectory = ddim_invert(z0, backend, &self.schedule, &prompts.source, frame)?;
        let z_t = trajectory[steps].clone();
        let source: Vec<Option<LatentGrid>> = trajectory
            .into_iter()
            .enumerate()
            .map(|(level, z)| {
                let used = level < steps
                    && in_window((steps - level) as f64 / steps as f64, &self.window);
                (self.cfg.cache_source_trajectory || used).then_some(z)
            })
            .collect();
        let source_elements = source.iter().flatten().map(|z| z.values().len()).sum::<usize>();

        let memory = self
            .banks
            .iter()
            .filter(|(_, b)| !b.is_empty())
            .map(|(id, b)| Ok((id.clone(), b.concat_tokens()?)))
            .collect::<Result<BTreeMap<_, _>, PipelineError>>()?;
        let memory_elements = memory.values().map(|m| m.values().len()).sum::<usize>();

        let fixed_mask = match &self.cfg.mask_source {
            MaskSource::Attention => None,
            MaskSource::AllForeground => Some(BinaryMask::full(shape.height, shape.width)),
            MaskSource::AllBackground => Some(BinaryMask::empty(shape.height, shape.width)),
            MaskSource::Fixed(m) => Some(m.clone()),
        };

        let mut hook = FrameHook {
            cfg: &self.cfg,
            propagation: &self.propagation,
            mask_cfg: &self.mask_cfg,
            window: &self.window,
            memory: &memory,
            source: &source,
            latent_dims: (shape.height, shape.width),
            update_step: self.cfg.resolved_update_step(),
            finalize_step: self.cfg.mask_finalize_step(),
            prev_mask: self.prev_mask.as_ref(),
            mask: fixed_mask,
            raw_mask: None,
            attention: Vec::new(),
            staged: Vec::new(),
            steps: Vec::with_capacity(steps),
            replaced_fraction: BTreeMap::new(),
            peak_step_elements: 0,
        };
        let options = SampleOptions {
            frame_index: frame,
            guidance: prompts.unconditional.as_ref().map(|u| Guidance {
                unconditional: u,
                config: self.guidance,
            }),
        };
        let latent = ddim_sample(&z_t, backend, &self.schedule, &prompts.edit, options, &mut [&mut hook])?;

        let FrameHook {
            mask,
            raw_mask,
            staged,
            steps: step_records,
            replaced_fraction,
            peak_step_elements,
            ..
        } = hook;

        let memory_events = commit_features(&mut self.banks, &staged, &self.cfg)?;
        if matches!(self.cfg.mask_source, MaskSource::Attention) {
            self.prev_mask = raw_mask;
        }

        let retained_per_layer: BTreeMap<String, usize> = self
            .banks
            .iter()
            .map(|(id, b)| (id.clone(), b.stored_elements()))
            .collect();
        let retained_elements = retained_per_layer.values().sum();
        let transient_elements = source_elements + memory_elements + peak_step_elements;
        self.storage.peak_retained = self.storage.peak_retained.max(retained_elements);
        self.storage.peak_transient = self.storage.peak_transient.max(transient_elements);
        self.storage.retained_per_layer = retained_per_layer;

        let replacement_rate = replaced_fraction
            .into_iter()
            .map(|(layer, total)| (layer, total / steps as f64))
            .collect();
        Ok(FrameOutput {
            frame,
            latent,
            report: FrameReport {
                frame,
                replacement_rate,
                memory_events,
                mask_pixels: mask.as_ref().map(BinaryMask::count),
                retained_elements,
                transient_elements,
                steps: step_records,
            },
            mask,
            features: staged,
        })
    }
}

/// Per-frame state threaded through the sampling loop.
struct FrameHook<'a> {
    cfg: &'a EditConfig,
    propagation: &'a PropagationConfig,
    mask_cfg: &'a MaskConfig,
    window: &'a InjectionWindow,
    memory: &'a BTreeMap<String, MemoryTokens>,
    /// Source latents by noise level; `None` where not retained.
    source: &'a [Option<LatentGrid>],
    latent_dims: (usize, usize),
    update_step: usize,
    finalize_step: usize,
    prev_mask: Option<&'a BinaryMask>,
    mask: Option<BinaryMask>,
    /// Current frame's mask before temporal overlap.
    raw_mask: Option<BinaryMask>,
    attention: Vec<AttentionRecord>,
    staged: Vec<FeatureTokenMap>,
    steps: Vec<StepRecord>,
    replaced_fraction: BTreeMap<String, f64>,
    peak_step_elements: usize,
}

impl FrameHook<'_> {
    fn propagate_layers(&self, frame: usize, features: &[FeatureTokenMap]) -> Result<Vec<PropagationResult>, PipelineError> {
        let mut seen = BTreeSet::new();
        for f in features {
            if f.frame_index() != frame {
                return Err(PipelineError::FeatureFrame {
                    layer: f.layer_id().to_string(),
                    expected: frame,
                    found: f.frame_index(),
                });
            }
            if !seen.insert(f.layer_id()) {
                return Err(PipelineError::DuplicateLayer(f.layer_id().to_string()));
            }
        }
        let cfg = self.propagation;
        exec::try_map_indices(features.len(), cfg.execution, |i| {
            let current = &features[i];
            match self.memory.get(current.layer_id()) {
                Some(memory) if self.cfg.propagation => Ok(propagate_against(current, memory, cfg)?),
                _ => Ok(PropagationResult::unchanged(current)),
            }
        })
    }

    fn finalize_mask(&mut self) -> Result<(), PipelineError> {
        let records = std::mem::take(&mut self.attention);
        if let Some((mask, raw)) =
            build_mask(&records, self.mask_cfg, self.cfg, Some(self.latent_dims), self.prev_mask)?
        {
            self.mask = Some(mask);
            self.raw_mask = Some(raw);
        }
        Ok(())
    }

    fn step(&mut self, step: &SampleStep<'_>, latent: &mut LatentGrid) -> Result<Vec<FeatureTokenMap>, PipelineError> {
        let features = &step.observations.features;
        let results = self.propagate_layers(step.frame_index, features)?;

        let mut replaced = BTreeMap::new();
        for r in &results {
            let layer = r.tokens_out.layer_id().to_string();
            *self.replaced_fraction.entry(layer.clone()).or_insert(0.0) += r.replacement_rate();
            replaced.insert(layer, r.replaced_count());
        }
        let propagated: Vec<FeatureTokenMap> = results.into_iter().map(|r| r.tokens_out).collect();
        if step.step_index == self.update_step {
            self.staged = propagated.clone();
        }

        if matches!(self.cfg.mask_source, MaskSource::Attention) && step.step_index <= self.finalize_step {
            self.attention.extend(
                step.observations
                    .attention
                    .iter()
                    .filter(|r| self.mask_cfg.selects(r, self.cfg.steps))
                    .cloned(),
            );
        }
        let feature_elements: usize = features.iter().map(|f| f.tokens().len()).sum();
        let attention_elements: usize = self.attention.iter().map(|r| r.q().len() + r.k().len()).sum();
        let staged_elements: usize = self.staged.iter().map(|f| f.tokens().len()).sum();
        self.peak_step_elements = self
            .peak_step_elements
            .max(2 * feature_elements + attention_elements + staged_elements);

        if step.step_index == self.finalize_step && matches!(self.cfg.mask_source, MaskSource::Attention) {
            self.finalize_mask()?;
        }

        let mut injected = false;
        if let Some(mask) = &self.mask {
            let pos = step.elapsed_fraction();
            if in_window(pos, self.window) {
                let src = self.source[step.level]
                    .as_ref()
                    .expect("in-window source levels are retained");
                *latent = inject_background(latent, src, mask, pos, self.window)?;
                injected = true;
            }
        }

        self.steps.push(StepRecord {
            frame: step.frame_index,
            step: step.step_index,
            latent_norm: Some(latent.l2_norm()),
            replaced,
            injected,
        });
        Ok(propagated)
    }
}

impl StepHook for FrameHook<'_> {
    fn after_step(
        &mut self,
        step: &SampleStep<'_>,
        latent: &mut LatentGrid,
    ) -> Result<Option<Vec<FeatureTokenMap>>, BoxError> {
        let propagated = self.step(step, latent).map_err(Box::new)?;
        Ok((!propagated.is_empty()).then_some(propagated))
    }
}

/// Offers each layer's captured features to its bank, creating banks on
/// first sight.
pub(super) fn commit_features(
    banks: &mut BTreeMap<String, MemoryBank>,
    staged: &[FeatureTokenMap],
    cfg: &EditConfig,
) -> Result<Vec<MemoryEvent>, PipelineError> {
    let mut events = Vec::with_capacity(staged.len());
    for features in staged {
        let layer = features.layer_id().to_string();
        if !banks.contains_key(&layer) {
            banks.insert(layer.clone(), MemoryBank::new(cfg.sfm_capacity, cfg.sfm_metric)?);
        }
        let bank = banks.get_mut(&layer).expect("bank just ensured");
        let insert = bank.insert(features.clone())?;
        events.push(MemoryEvent {
            layer,
            insert,
            bank_frames: bank.frame_indices(),
        });
    }
    Ok(events)
}

/// Aggregates `records` into this frame's raw mask (optionally upsampled to
/// `target`) and overlaps it with the previous frame's raw mask. Returns
/// `(overlapped, raw)`, or `None` when no record was selected.
pub(super) fn build_mask(
    records: &[AttentionRecord],
    mask_cfg: &MaskConfig,
    cfg: &EditConfig,
    target: Option<(usize, usize)>,
    prev: Option<&BinaryMask>,
) -> Result<Option<(BinaryMask, BinaryMask)>, PipelineError> {
    let prob = match aggregate(records, mask_cfg, cfg.steps) {
        Ok(p) => p,
        Err(MaskError::EmptySelection) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let sel = WordSelection::new(prob.cols, &cfg.words)?;
    let mut raw = extract_mask(&prob, &sel, cfg.tau, prob.spatial)?;
    if let Some(target) = target {
        raw = upsample_nearest(&raw, target)?;
    }
    let prev = prev.unwrap_or(&raw);
    let mask = temporal_overlap(prev, &raw, cfg.connectivity)?;
    Ok(Some((mask, raw)))
}

/// Edits every frame in order, handing each finished frame to `sink`.
pub fn edit_video_streaming<B, F, E>(
    src: &LatentVideo,
    prompts: &Prompts,
    cfg: &EditConfig,
    backend: &mut B,
    mut sink: F,
) -> Result<EditReport, E>
where
    B: DenoiserBackend + ?Sized,
    F: FnMut(FrameOutput) -> Result<(), E>,
    E: From<PipelineError>,
{
    let started = Instant::now();
    let mut editor = Editor::new(cfg.clone())?;
    let mut frames = Vec::with_capacity(src.len());
    for z0 in src.frames() {
        let out = editor.process_frame(z0, backend, prompts)?;
        frames.push(out.report.clone());
        sink(out)?;
    }
    Ok(EditReport {
        frames,
        storage: editor.storage().clone(),
        elapsed: started.elapsed(),
    })
}

/// Edits a whole video and collects latents, masks and captured features.
pub fn edit_video<B: DenoiserBackend + ?Sized>(
    src: &LatentVideo,
    prompts: &Prompts,
    cfg: &EditConfig,
    backend: &mut B,
) -> Result<EditOutput, PipelineError> {
    let mut latents = Vec::with_capacity(src.len());
    let mut masks = Vec::with_capacity(src.len());
    let mut features = Vec::with_capacity(src.len());
    let report = edit_video_streaming(src, prompts, cfg, backend, |out| -> Result<(), PipelineError> {
        latents.push(out.latent);
        masks.push(out.mask);
        features.push(out.features);
        Ok(())
    })?;
    Ok(EditOutput {
        video: LatentVideo::new(latents)?,
        masks,
        features,
        report,
    })
}

use std::fmt;

use crate::blend::{InjectionWindow, DEFAULT_INJECT_END, DEFAULT_INJECT_START};
use crate::diffusion::{
    make_linear_schedule, GuidanceConfig, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START,
    DEFAULT_GUIDANCE_SCALE, DEFAULT_STEPS,
};
use crate::exec::Execution;
use crate::mask::{Connectivity, LayerSelection, MaskConfig, ProbMode, StepWindow, DEFAULT_TAU};
use crate::memory::{DistanceMetric, DEFAULT_CAPACITY};
use crate::propagation::{PropagationConfig, Similarity, DEFAULT_LAMBDA};

use super::PipelineError;

/// Where the per-frame instance mask comes from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MaskSource {
    /// Extracted from aggregated cross-attention.
    #[default]
    Attention,
    /// Every cell is foreground; injection never changes anything.
    AllForeground,
    /// Every cell is background; injection restores the whole source.
    AllBackground,
    /// A caller-supplied mask at latent resolution, used for every frame.
    Fixed(crate::mask::BinaryMask),
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSource::Attention => "attention",
            MaskSource::AllForeground => "all",
            MaskSource::AllBackground => "none",
            MaskSource::Fixed(_) => "fixed",
        })
    }
}

/// Everything that parameterises one edit.
#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub guidance: f64,
    /// When false the memory is still maintained but tokens are never replaced.
    pub propagation: bool,
    pub lambda: f64,
    pub similarity: Similarity,
    pub sfm_capacity: usize,
    pub sfm_metric: DistanceMetric,
    /// Sampling step at which a frame's features are captured for the memory;
    /// `None` means the midpoint step.
    pub sfm_update_step: Option<usize>,
    pub tau: f64,
    pub mask_steps: StepWindow,
    pub mask_layers: LayerSelection,
    pub attention_mode: ProbMode,
    pub connectivity: Connectivity,
    /// Prompt-token indices of the edited object.
    pub words: Vec<usize>,
    pub mask_source: MaskSource,
    pub inject_start: f64,
    pub inject_end: f64,
    /// Keep every level of the source inversion trajectory (true) or only
    /// the levels the injection window will read (false).
    pub cache_source_trajectory: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            guidance: DEFAULT_GUIDANCE_SCALE,
            propagation: true,
            lambda: DEFAULT_LAMBDA,
            similarity: Similarity::Cosine,
            sfm_capacity: DEFAULT_CAPACITY,
            sfm_metric: DistanceMetric::FrameGap,
            sfm_update_step: None,
            tau: DEFAULT_TAU,
            mask_steps: StepWindow::FirstHalf,
            mask_layers: LayerSelection::default(),
            attention_mode: ProbMode::Softmax,
            connectivity: Connectivity::Four,
            words: vec![1],
            mask_source: MaskSource::Attention,
            inject_start: DEFAULT_INJECT_START,
            inject_end: DEFAULT_INJECT_END,
            cache_source_trajectory: true,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.steps == 0 {
            return invalid("steps must be positive".into());
        }
        self.schedule()?;
        self.guidance_config()?;
        self.propagation_config()?;
        if self.sfm_capacity == 0 {
            return invalid("sfm_len must be positive".into());
        }
        if let Some(s) = self.sfm_update_step {
            if s >= self.steps {
                return invalid(format!("sfm_update_step {s} must be below steps {}", self.steps));
            }
        }
        self.mask_config().validate()?;
        if self.words.is_empty() {
            return invalid("at least one word index is required".into());
        }
        self.injection_window()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, PipelineError> {
        Ok(make_linear_schedule(self.steps, self.beta_start, self.beta_end)?)
    }

    pub fn guidance_config(&self) -> Result<GuidanceConfig, PipelineError> {
        Ok(GuidanceConfig::new(self.guidance)?)
    }

    pub fn propagation_config(&self) -> Result<PropagationConfig, PipelineError> {
        let cfg = PropagationConfig {
            lambda: self.lambda,
            similarity: self.similarity,
            execution: self.execution,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig {
            tau: self.tau,
            steps: self.mask_steps,
            layers: self.mask_layers.clone(),
            mode: self.attention_mode,
            connectivity: self.connectivity,
            execution: self.execution,
        }
    }

    pub fn injection_window(&self) -> Result<InjectionWindow, PipelineError> {
        Ok(InjectionWindow::new(self.inject_start, self.inject_end)?)
    }

    /// Sampling step at which memory features are captured.
    pub fn resolved_update_step(&self) -> usize {
        self.sfm_update_step.unwrap_or(self.steps / 2)
    }

    /// Last sampling step contributing to the mask; the mask is finalised there.
    pub fn mask_finalize_step(&self) -> usize {
        self.mask_steps.resolve(self.steps).1.min(self.steps - 1)
    }
}

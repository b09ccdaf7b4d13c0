use std::fmt;

use super::LatentGrid;
use crate::mask::AttentionRecord;
use crate::memory::FeatureTokenMap;

/// Boxed error type returned by backends and step hooks.
pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Opaque conditioning embedding (text encoder output or a toy stand-in).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conditioning(pub Vec<f32>);

impl Conditioning {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Inversion,
    Sampling,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Inversion => "inversion",
            Phase::Sampling => "sampling",
        })
    }
}

/// Which half of a classifier-free guidance pair is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Conditional,
    Unconditional,
}

/// Where in the edit a noise prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub frame_index: usize,
    pub phase: Phase,
    /// Position within the trajectory, counting from 0 in execution order.
    pub step_index: usize,
    /// Schedule index handed to the denoiser, in `0..T`.
    pub timestep: usize,
    pub pass: Pass,
}

/// Intermediate activations a backend chooses to expose for one step.
#[derive(Debug, Clone, Default)]
pub struct Observations {
    pub features: Vec<FeatureTokenMap>,
    pub attention: Vec<AttentionRecord>,
}

impl Observations {
    pub fn is_empty(&self) -> bool {
        self.features.is_empty() && self.attention.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NoisePrediction {
    pub eps: LatentGrid,
    pub observations: Observations,
}

impl NoisePrediction {
    pub fn bare(eps: LatentGrid) -> Self {
        Self {
            eps,
            observations: Observations::default(),
        }
    }
}

/// A noise-prediction network.
///
/// Implementations must return a prediction with the same shape as the
/// input latent and be deterministic for fixed inputs.
pub trait DenoiserBackend {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        conditioning: &Conditioning,
        ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError>;

    /// Receives features after propagation so a backend can substitute them
    /// for its own spatial-attention output. Open-loop backends ignore this.
    fn accept_features(&mut self, _ctx: &StepContext, _features: &[FeatureTokenMap]) {}
}

impl<B: DenoiserBackend + ?Sized> DenoiserBackend for &mut B {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        conditioning: &Conditioning,
        ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError> {
        (**self).predict_noise(latent, conditioning, ctx)
    }

    fn accept_features(&mut self, ctx: &StepContext, features: &[FeatureTokenMap]) {
        (**self).accept_features(ctx, features)
    }
}

impl<B: DenoiserBackend + ?Sized> DenoiserBackend for Box<B> {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        conditioning: &Conditioning,
        ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError> {
        (**self).predict_noise(latent, conditioning, ctx)
    }

    fn accept_features(&mut self, ctx: &StepContext, features: &[FeatureTokenMap]) {
        (**self).accept_features(ctx, features)
    }
}

/// One completed sampling step, as seen by a [`StepHook`].
#[derive(Debug, Clone, Copy)]
pub struct SampleStep<'a> {
    pub frame_index: usize,
    /// 0-based position in the sampling loop.
    pub step_index: usize,
    pub total_steps: usize,
    /// Noise level of the latent now held by the hook.
    pub level: usize,
    pub context: StepContext,
    pub observations: &'a Observations,
}

impl SampleStep<'_> {
    /// Fraction of sampling steps completed, in (0, 1].
    pub fn elapsed_fraction(&self) -> f64 {
        (self.step_index + 1) as f64 / self.total_steps as f64
    }
}

/// Callback run after every sampling step. It may rewrite the latent in
/// place and may return features to feed back to the backend.
pub trait StepHook {
    fn after_step(
        &mut self,
        step: &SampleStep<'_>,
        latent: &mut LatentGrid,
    ) -> Result<Option<Vec<FeatureTokenMap>>, BoxError>;
}

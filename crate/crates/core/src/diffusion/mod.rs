//! Noise schedules, the DDIM update, guidance and denoiser backends.

mod backend;
mod ddim;
mod latent;
mod schedule;
mod toy;

use thiserror::Error;

pub use backend::{
    BoxError, Conditioning, DenoiserBackend, NoisePrediction, Observations, Pass, Phase,
    SampleStep, StepContext, StepHook,
};
pub use ddim::{
    combine_guidance, ddim_invert, ddim_sample, ddim_step, Guidance, GuidanceConfig,
    SampleOptions, DEFAULT_GUIDANCE_SCALE,
};
pub use latent::{GridShape, LatentGrid};
pub use schedule::{
    make_linear_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
pub use toy::{toy_attractor_backend, toy_constant_backend, AttractorBackend, ConstantBackend};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("latent grid {0} has no elements")]
    EmptyGrid(GridShape),
    #[error("latent grid {shape} needs {} values, got {found}", shape.len())]
    ValueCount { shape: GridShape, found: usize },
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: GridShape, found: GridShape },
    #[error("noise level {index} outside 0..={max}")]
    InvalidStep { index: usize, max: usize },
    #[error("latent contains non-finite values")]
    NonFinite,
    #[error("guidance scale must be finite and non-negative, got {0}")]
    InvalidGuidance(f64),
    #[error("backend failed during {phase} at step {step}: {source}")]
    Backend {
        phase: Phase,
        step: usize,
        #[source]
        source: BoxError,
    },
    #[error("step hook failed at step {step}: {source}")]
    Hook {
        step: usize,
        #[source]
        source: BoxError,
    },
}

//! Analytic backends for verifying the DDIM machinery without a network.

use super::backend::{BoxError, Conditioning, DenoiserBackend, NoisePrediction, StepContext};
use super::{LatentGrid, NoiseSchedule};

/// Predicts the same ε for every input, which makes inversion exactly
/// reversible by sampling.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    eps: LatentGrid,
}

pub fn toy_constant_backend(eps_value: LatentGrid) -> ConstantBackend {
    ConstantBackend { eps: eps_value }
}

impl DenoiserBackend for ConstantBackend {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        _conditioning: &Conditioning,
        _ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError> {
        if latent.shape() != self.eps.shape() {
            return Err(format!(
                "constant noise has shape {} but latent has shape {}",
                self.eps.shape(),
                latent.shape()
            )
            .into());
        }
        Ok(NoisePrediction::bare(self.eps.clone()))
    }
}

/// Predicts `ε = (z − √ᾱ·μ)/√(1−ᾱ)`, whose implied clean latent is always
/// `μ`. Sampling from any start therefore lands on `μ`.
#[derive(Debug, Clone)]
pub struct AttractorBackend {
    mean: LatentGrid,
    sched: NoiseSchedule,
}

pub fn toy_attractor_backend(target_mean: LatentGrid, sched: NoiseSchedule) -> AttractorBackend {
    AttractorBackend {
        mean: target_mean,
        sched,
    }
}

impl DenoiserBackend for AttractorBackend {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        _conditioning: &Conditioning,
        ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError> {
        latent.ensure_same_shape(&self.mean)?;
        let a = *self
            .sched
            .alpha_bar()
            .get(ctx.timestep)
            .ok_or_else(|| format!("timestep {} outside schedule", ctx.timestep))?;
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        let values = latent
            .values()
            .iter()
            .zip(self.mean.values())
            .map(|(&z, &m)| ((f64::from(z) - sa * f64::from(m)) / sb) as f32)
            .collect();
        Ok(NoisePrediction::bare(LatentGrid::new(latent.shape(), values)?))
    }
}

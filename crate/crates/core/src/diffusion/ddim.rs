use super::backend::{
    BoxError, Conditioning, DenoiserBackend, Pass, Phase, SampleStep, StepContext, StepHook,
};
use super::{DiffusionError, LatentGrid, NoiseSchedule};

/// Classifier-free guidance strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
}

pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;

impl GuidanceConfig {
    pub fn new(scale: f64) -> Result<Self, DiffusionError> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(DiffusionError::InvalidGuidance(scale));
        }
        Ok(Self { scale })
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_GUIDANCE_SCALE,
        }
    }
}

/// Unconditional embedding plus scale for guided sampling.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub unconditional: &'a Conditioning,
    pub config: GuidanceConfig,
}

/// `eps_uncond + scale * (eps_cond - eps_uncond)`.
pub fn combine_guidance(
    eps_uncond: &LatentGrid,
    eps_cond: &LatentGrid,
    cfg: GuidanceConfig,
) -> Result<LatentGrid, DiffusionError> {
    eps_uncond.ensure_same_shape(eps_cond)?;
    let s = cfg.scale;
    let values = eps_uncond
        .values()
        .iter()
        .zip(eps_cond.values())
        .map(|(&u, &c)| {
            let (u, c) = (f64::from(u), f64::from(c));
            (u + s * (c - u)) as f32
        })
        .collect();
    LatentGrid::new(eps_uncond.shape(), values)
}

/// One deterministic DDIM move from noise level `from` to level `to`.
///
/// Uses the x₀-prediction form
/// `z' = √ᾱ' · (z − √(1−ᾱ)·ε)/√ᾱ + √(1−ᾱ')·ε`, which serves both
/// directions: `to < from` samples, `to > from` inverts.
pub fn ddim_step(
    z: &LatentGrid,
    eps: &LatentGrid,
    from: usize,
    to: usize,
    sched: &NoiseSchedule,
) -> Result<LatentGrid, DiffusionError> {
    z.ensure_same_shape(eps)?;
    let a_from = sched.level_alpha_bar(from)?;
    let a_to = sched.level_alpha_bar(to)?;
    if a_from == a_to {
        return Ok(z.clone());
    }
    let (sa_from, sb_from) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (sa_to, sb_to) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    let values = z
        .values()
        .iter()
        .zip(eps.values())
        .map(|(&zv, &ev)| {
            let (zv, ev) = (f64::from(zv), f64::from(ev));
            let x0 = (zv - sb_from * ev) / sa_from;
            (sa_to * x0 + sb_to * ev) as f32
        })
        .collect();
    LatentGrid::new(z.shape(), values)
}

fn check_prediction(latent: &LatentGrid, eps: &LatentGrid, phase: Phase, step: usize) -> Result<(), DiffusionError> {
    if latent.shape() != eps.shape() {
        return Err(DiffusionError::Backend {
            phase,
            step,
            source: format!(
                "prediction shape {} does not match latent shape {}",
                eps.shape(),
                latent.shape()
            )
            .into(),
        });
    }
    Ok(())
}

/// Runs DDIM inversion from the clean latent up to level T.
///
/// Returns the whole trajectory `[z_0, z_1, …, z_T]`. Each move from level
/// `t` to `t+1` uses ε predicted at the current latent `z_t` with schedule
/// index `t`.
pub fn ddim_invert<B: DenoiserBackend + ?Sized>(
    z0: &LatentGrid,
    backend: &mut B,
    sched: &NoiseSchedule,
    conditioning: &Conditioning,
    frame_index: usize,
) -> Result<Vec<LatentGrid>, DiffusionError> {
    if !z0.is_finite() {
        return Err(DiffusionError::NonFinite);
    }
    let steps = sched.num_steps();
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(z0.clone());
    for level in 0..steps {
        let ctx = StepContext {
            frame_index,
            phase: Phase::Inversion,
            step_index: level,
            timestep: level,
            pass: Pass::Conditional,
        };
        let current = &trajectory[level];
        let pred = backend
            .predict_noise(current, conditioning, &ctx)
            .map_err(|source| DiffusionError::Backend {
                phase: Phase::Inversion,
                step: level,
                source,
            })?;
        check_prediction(current, &pred.eps, Phase::Inversion, level)?;
        let next = ddim_step(current, &pred.eps, level, level + 1, sched)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Options for [`ddim_sample`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions<'a> {
    pub frame_index: usize,
    pub guidance: Option<Guidance<'a>>,
}

/// Denoises from level T down to the clean level.
///
/// After every step the hooks run in order on the freshly computed latent;
/// any features they return are passed to [`DenoiserBackend::accept_features`].
pub fn ddim_sample<B: DenoiserBackend + ?Sized>(
    z_t: &LatentGrid,
    backend: &mut B,
    sched: &NoiseSchedule,
    conditioning: &Conditioning,
    options: SampleOptions<'_>,
    hooks: &mut [&mut dyn StepHook],
) -> Result<LatentGrid, DiffusionError> {
    if !z_t.is_finite() {
        return Err(DiffusionError::NonFinite);
    }
    let steps = sched.num_steps();
    let mut latent = z_t.clone();
    for step_index in 0..steps {
        let level = steps - step_index;
        let ctx = StepContext {
            frame_index: options.frame_index,
            phase: Phase::Sampling,
            step_index,
            timestep: level - 1,
            pass: Pass::Conditional,
        };
        let backend_err = |source: BoxError| DiffusionError::Backend {
            phase: Phase::Sampling,
            step: step_index,
            source,
        };
        let pred = backend
            .predict_noise(&latent, conditioning, &ctx)
            .map_err(backend_err)?;
        check_prediction(&latent, &pred.eps, Phase::Sampling, step_index)?;
        let eps = match options.guidance {
            Some(g) => {
                let uctx = StepContext {
                    pass: Pass::Unconditional,
                    ..ctx
                };
                let uncond = backend
                    .predict_noise(&latent, g.unconditional, &uctx)
                    .map_err(backend_err)?;
                check_prediction(&latent, &uncond.eps, Phase::Sampling, step_index)?;
                combine_guidance(&uncond.eps, &pred.eps, g.config)?
            }
            None => pred.eps,
        };
        latent = ddim_step(&latent, &eps, level, level - 1, sched)?;

        let step = SampleStep {
            frame_index: options.frame_index,
            step_index,
            total_steps: steps,
            level: level - 1,
            context: ctx,
            observations: &pred.observations,
        };
        let shape = latent.shape();
        for hook in hooks.iter_mut() {
            let feedback = hook
                .after_step(&step, &mut latent)
                .map_err(|source| DiffusionError::Hook {
                    step: step_index,
                    source,
                })?;
            if latent.shape() != shape || !latent.is_finite() {
                return Err(DiffusionError::Hook {
                    step: step_index,
                    source: "hook produced a latent of a different shape or with non-finite values"
                        .into(),
                });
            }
            if let Some(features) = feedback {
                backend.accept_features(&ctx, &features);
            }
        }
    }
    Ok(latent)
}

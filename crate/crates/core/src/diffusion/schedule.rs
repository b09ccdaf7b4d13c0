use super::DiffusionError;

/// Default number of DDIM steps.
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

/// β schedule with its cumulative products ᾱ.
///
/// Trajectories are indexed by *noise level*: level 0 is the clean latent
/// (ᾱ = 1) and level `k` in `1..=T` sits at `alpha_bar[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::InvalidSchedule(
                "at least one step is required".into(),
            ));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "beta {b} outside (0, 1)"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        if alpha_bar.iter().any(|a| *a <= 0.0) {
            return Err(DiffusionError::InvalidSchedule(
                "cumulative product underflowed to zero".into(),
            ));
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// ᾱ at a noise level in `0..=T`.
    pub fn level_alpha_bar(&self, level: usize) -> Result<f64, DiffusionError> {
        match level {
            0 => Ok(1.0),
            l if l <= self.alpha_bar.len() => Ok(self.alpha_bar[l - 1]),
            l => Err(DiffusionError::InvalidStep {
                index: l,
                max: self.alpha_bar.len(),
            }),
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_linear_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `steps` entries.
pub fn make_linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidSchedule(
            "number of steps must be positive".into(),
        ));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

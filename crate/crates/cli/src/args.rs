use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sfmedit_core::io::{parse_run_config, render_run_config};
use sfmedit_core::memory::DistanceMetric;
use sfmedit_core::pipeline::{EditConfig, MaskSource};
use sfmedit_core::Execution;

#[derive(Debug, Parser)]
#[command(name = "sfmedit", version, about = "Feature-memory video editing on toy or recorded diffusion features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit a synthetic video end to end with the toy backend.
    Simulate(SimulateArgs),
    /// Run memory, propagation and masks over a recorded manifest.
    Replay(ReplayArgs),
    /// Extract a mask from one cross-attention Q/K pair.
    Mask(MaskArgs),
    /// Per-frame PSNR/SSIM between two latent directories, plus token drift.
    Metrics(MetricsArgs),
    /// Time propagation with sequential and parallel execution.
    FmpBench(FmpBenchArgs),
    /// Dump the memory bank after every inserted frame.
    SfmTrace(SfmTraceArgs),
}

/// Settings shared by every command that builds an edit configuration.
/// Flags override `--config`, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct EditArgs {
    /// key = value run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Similarity threshold for token replacement.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Mask threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Memory bank capacity.
    #[arg(long)]
    pub sfm_len: Option<usize>,
    /// frame-gap or mean-token-cosine.
    #[arg(long)]
    pub sfm_metric: Option<DistanceMetric>,
    #[arg(long)]
    pub inject_start: Option<f64>,
    #[arg(long)]
    pub inject_end: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated prompt-word indices of the edited object.
    #[arg(long, value_delimiter = ',')]
    pub words: Option<Vec<usize>>,
    /// attention, all (no background) or none (all background).
    #[arg(long)]
    pub mask_source: Option<String>,
    /// Keep memory updates but never replace tokens.
    #[arg(long)]
    pub no_propagation: bool,
    /// Disable data-parallel loops.
    #[arg(long)]
    pub sequential: bool,
}

impl EditArgs {
    pub fn resolve(&self) -> Result<EditConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_run_config(&text).with_context(|| format!("config {}", path.display()))?
            }
            None => EditConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.guidance {
            cfg.guidance = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.sfm_len {
            cfg.sfm_capacity = v;
        }
        if let Some(v) = self.sfm_metric {
            cfg.sfm_metric = v;
        }
        if let Some(v) = self.inject_start {
            cfg.inject_start = v;
        }
        if let Some(v) = self.inject_end {
            cfg.inject_end = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.words {
            cfg.words = v.clone();
        }
        if let Some(v) = &self.mask_source {
            cfg.mask_source = match v.as_str() {
                "attention" => MaskSource::Attention,
                "all" => MaskSource::AllForeground,
                "none" => MaskSource::AllBackground,
                other => anyhow::bail!("unknown mask source '{other}' (expected attention, all or none)"),
            };
        }
        if self.no_propagation {
            cfg.propagation = false;
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of `run.meta`: the resolved configuration preceded by
/// command-specific comment lines.
pub fn run_meta(command: &str, extra: &[(&str, String)], cfg: &EditConfig) -> String {
    let mut out = format!("# command = {command}\n");
    for (k, v) in extra {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str(&render_run_config(cfg));
    out
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub edit: EditArgs,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Appearance drift per frame of the synthetic features.
    #[arg(long, default_value_t = 0.15)]
    pub drift: f64,
    #[arg(long, default_value = "sfmedit-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Directory holding manifest.jsonl.
    pub record_dir: PathBuf,
    #[command(flatten)]
    pub edit: EditArgs,
    #[arg(long, default_value = "sfmedit-replay")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Query tensor, (h·w) × d_k.
    #[arg(long)]
    pub q: PathBuf,
    /// Key tensor, n_words × d_k.
    #[arg(long)]
    pub k: PathBuf,
    /// Attention grid height; defaults to a square grid.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub words: Vec<usize>,
    /// Previous frame's mask for temporal overlap.
    #[arg(long)]
    pub prev: Option<PathBuf>,
    /// Enlarge the mask to this height (width scales alike).
    #[arg(long)]
    pub upsample: Option<usize>,
    #[arg(long, default_value = "mask.pgm")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub dir_a: PathBuf,
    pub dir_b: PathBuf,
    /// Directory of per-frame PGM masks; adds background-only columns.
    #[arg(long)]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FmpBenchArgs {
    /// Token grid side; the frame has side² tokens.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Frames held in the memory.
    #[arg(long)]
    pub sfm_len: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0.15)]
    pub drift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SfmTraceArgs {
    #[arg(long, default_value_t = 9)]
    pub frames: usize,
    #[arg(long)]
    pub sfm_len: Option<usize>,
    #[arg(long)]
    pub sfm_metric: Option<DistanceMetric>,
    #[arg(long, default_value_t = 0.15)]
    pub drift: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write trace.tsv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

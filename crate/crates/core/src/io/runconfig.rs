//! `key = value` run configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! steps = 50
//! lambda = 0.9
//! words = 1,2
//! sfm_update_step = mid
//! ```
//!
//! Keys not present keep their defaults; unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::pipeline::{EditConfig, MaskSource};

use super::IoError;

const KEYS: &[&str] = &[
    "steps",
    "beta_start",
    "beta_end",
    "guidance",
    "propagation",
    "lambda",
    "similarity",
    "sfm_len",
    "sfm_metric",
    "sfm_update_step",
    "tau",
    "mask_steps",
    "mask_layers",
    "attention_mode",
    "connectivity",
    "words",
    "mask_source",
    "inject_start",
    "inject_end",
    "cache_source_trajectory",
    "seed",
    "execution",
];

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("bad value '{value}': {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("expected true or false, got '{other}'")),
    }
}

/// Applies one `key = value` assignment to `cfg`.
pub fn apply_setting(cfg: &mut EditConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "steps" => cfg.steps = parse(value)?,
        "beta_start" => cfg.beta_start = parse(value)?,
        "beta_end" => cfg.beta_end = parse(value)?,
        "guidance" => cfg.guidance = parse(value)?,
        "propagation" => cfg.propagation = parse_bool(value)?,
        "lambda" => cfg.lambda = parse(value)?,
        "similarity" => cfg.similarity = parse(value)?,
        "sfm_len" => cfg.sfm_capacity = parse(value)?,
        "sfm_metric" => cfg.sfm_metric = parse(value)?,
        "sfm_update_step" => {
            cfg.sfm_update_step = if value == "mid" { None } else { Some(parse(value)?) }
        }
        "tau" => cfg.tau = parse(value)?,
        "mask_steps" => cfg.mask_steps = parse(value)?,
        "mask_layers" => cfg.mask_layers = parse(value)?,
        "attention_mode" => cfg.attention_mode = parse(value)?,
        "connectivity" => cfg.connectivity = parse(value)?,
        "words" => {
            cfg.words = value
                .split(',')
                .map(|w| parse::<usize>(w.trim()))
                .collect::<Result<_, _>>()?
        }
        "mask_source" => {
            cfg.mask_source = match value {
                "attention" => MaskSource::Attention,
                "all" => MaskSource::AllForeground,
                "none" => MaskSource::AllBackground,
                other => return Err(format!("unknown mask source '{other}' (expected attention, all or none)")),
            }
        }
        "inject_start" => cfg.inject_start = parse(value)?,
        "inject_end" => cfg.inject_end = parse(value)?,
        "cache_source_trajectory" => cfg.cache_source_trajectory = parse_bool(value)?,
        "seed" => cfg.seed = parse(value)?,
        "execution" => cfg.execution = parse(value)?,
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}

/// Parses a run config on top of `base`, then validates the result.
pub fn parse_run_config_onto(text: &str, base: EditConfig) -> Result<EditConfig, IoError> {
    let mut cfg = base;
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| IoError::Config { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key '{key}'")));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(format!("key '{key}' given twice")));
        }
        apply_setting(&mut cfg, key, value).map_err(err)?;
    }
    cfg.validate().map_err(|e| IoError::InvalidConfig(e.to_string()))?;
    Ok(cfg)
}

/// Parses a run config on top of the defaults.
pub fn parse_run_config(text: &str) -> Result<EditConfig, IoError> {
    parse_run_config_onto(text, EditConfig::default())
}

pub fn read_run_config(path: impl AsRef<Path>) -> Result<EditConfig, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_run_config(&text)
}

/// Renders every setting. A fixed caller-supplied mask cannot be written and
/// is rendered as `mask_source = fixed`, which does not parse back.
pub fn render_run_config(cfg: &EditConfig) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("steps", cfg.steps.to_string());
    line("beta_start", cfg.beta_start.to_string());
    line("beta_end", cfg.beta_end.to_string());
    line("guidance", cfg.guidance.to_string());
    line("propagation", cfg.propagation.to_string());
    line("lambda", cfg.lambda.to_string());
    line("similarity", cfg.similarity.to_string());
    line("sfm_len", cfg.sfm_capacity.to_string());
    line("sfm_metric", cfg.sfm_metric.to_string());
    line(
        "sfm_update_step",
        cfg.sfm_update_step.map_or_else(|| "mid".to_string(), |s| s.to_string()),
    );
    line("tau", cfg.tau.to_string());
    line("mask_steps", cfg.mask_steps.to_string());
    line("mask_layers", cfg.mask_layers.to_string());
    line("attention_mode", cfg.attention_mode.to_string());
    line("connectivity", cfg.connectivity.to_string());
    line(
        "words",
        cfg.words.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
    );
    line("mask_source", cfg.mask_source.to_string());
    line("inject_start", cfg.inject_start.to_string());
    line("inject_end", cfg.inject_end.to_string());
    line("cache_source_trajectory", cfg.cache_source_trajectory.to_string());
    line("seed", cfg.seed.to_string());
    line("execution", cfg.execution.to_string());
    out
}

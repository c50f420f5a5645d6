//! JSON run configuration and its merge with command-line overrides.
//!
//! Every knob resolves with the same precedence: an explicit command-line
//! flag wins over a JSON field, which wins over the built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tie_core::pipeline::{EditMode, TaskPreset, DEFAULT_BATCH_SIZE, DEFAULT_GUIDANCE_SCALE};
use tie_core::schedule::DEFAULT_INFERENCE_STEPS;
use tie_core::{Error, Result};

/// On-disk run configuration. All fields are optional; unknown keys are
/// rejected so typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Where the per-frame metrics CSV goes; omit to skip the report.
    pub metrics_csv: Option<PathBuf>,
    /// Denoiser weight file; omit to use the built-in seeded weights.
    pub weights: Option<PathBuf>,
    pub prompt: Option<String>,
    pub guidance_scale: Option<f32>,
    pub seed: Option<u64>,
    pub num_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub mode: Option<String>,
    pub task: Option<String>,
    pub composite_unmasked: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides shared by the `edit` and `invert` subcommands.
/// `None` means "flag not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    pub gs: Option<f32>,
    /// Seed for the per-step batch partitions.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attention coupling: "eattn" or "frame_by_frame".
    #[arg(long)]
    pub mode: Option<String>,
    /// Frames per denoising batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Task preset: "removal", "replacement" or "retargeting".
    #[arg(long)]
    pub task: Option<String>,
    /// Text prompt (presets fill in a default when omitted).
    #[arg(long)]
    pub prompt: Option<String>,
    /// Copy original pixels back outside the mask.
    #[arg(long)]
    pub composite: bool,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub input_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub output_dir: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub prompt: String,
    pub guidance_scale: f32,
    pub seed: u64,
    pub num_steps: usize,
    pub batch_size: usize,
    pub mode: EditMode,
    pub task: TaskPreset,
    pub composite_unmasked: bool,
}

fn required(dir: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    dir.ok_or_else(|| Error::Config(format!("missing \"{key}\" in the run configuration")))
}

/// Merges flags over the JSON config over the defaults.
pub fn resolve(config: RunConfig, flags: &Overrides) -> Result<Resolved> {
    let mode = match flags.mode.clone().or(config.mode) {
        Some(s) => s.parse::<EditMode>()?,
        None => EditMode::EAttn,
    };
    let task = match flags.task.clone().or(config.task) {
        Some(s) => s.parse::<TaskPreset>()?,
        None => TaskPreset::Removal,
    };
    Ok(Resolved {
        input_dir: required(config.input_dir, "input_dir")?,
        mask_dir: required(config.mask_dir, "mask_dir")?,
        output_dir: required(config.output_dir, "output_dir")?,
        metrics_csv: config.metrics_csv,
        weights: config.weights,
        prompt: flags.prompt.clone().or(config.prompt).unwrap_or_default(),
        guidance_scale: flags.gs.or(config.guidance_scale).unwrap_or(DEFAULT_GUIDANCE_SCALE),
        seed: flags.seed.or(config.seed).unwrap_or(0),
        num_steps: config.num_steps.unwrap_or(DEFAULT_INFERENCE_STEPS),
        batch_size: flags.batch_size.or(config.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
        mode,
        task,
        composite_unmasked: flags.composite || config.composite_unmasked.unwrap_or(false),
    })
}

/// Loads the optional config file named by `--config` and merges the rest
/// of the flags over it.
pub fn resolve_from_flags(flags: &Overrides) -> Result<Resolved> {
    let config = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    resolve(config, flags)
}

/// Checks every path before any pipeline work starts.
pub fn validate_paths(resolved: &Resolved) -> Result<()> {
    for (dir, key) in [(&resolved.input_dir, "input_dir"), (&resolved.mask_dir, "mask_dir")] {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "{key} \"{}\" is not a directory",
                dir.display()
            )));
        }
    }
    if let Some(weights) = &resolved.weights {
        if !weights.is_file() {
            return Err(Error::Config(format!(
                "weights \"{}\" is not a file",
                weights.display()
            )));
        }
    }
    fs::create_dir_all(&resolved.output_dir).map_err(|e| {
        Error::Config(format!(
            "cannot create output_dir \"{}\": {e}",
            resolved.output_dir.display()
        ))
    })?;
    if let Some(csv) = &resolved.metrics_csv {
        if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| {
                Error::Config(format!("cannot create \"{}\": {e}", parent.display()))
            })?;
        }
    }
    Ok(())
}

//! The `tie` command line: `edit` runs the full video edit, `invert` stops
//! after DDIM inversion and stores the noisy latents, `metrics` scores one
//! frame directory against another, and `synth` generates test clips.
//!
//! All diagnostics go to standard error; files written to disk (frames,
//! CSV, manifest, latents) are byte-deterministic for a given
//! configuration. Exit codes: 0 success, 2 configuration error, 1 runtime
//! error.

use std::fs::File;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use tie_core::codec::{CodecParams, DEFAULT_CODEC_SEED};
use tie_core::conditioning::{build_bundle, TextEmbedder, DEFAULT_TEXT_SEED};
use tie_core::denoiser::{DenoiserModel, DEFAULT_WEIGHT_SEED};
use tie_core::pipeline::{run_edit, validate_request, EditRequest, EditResult};
use tie_core::schedule::{NoiseSchedule, DEFAULT_TRAIN_STEPS};
use tie_core::{Error, Result, Tensor};

pub mod config;
pub mod pnm;
pub mod report;
pub mod synth;

use config::{resolve_from_flags, validate_paths, Overrides, Resolved};

/// Mask-and-prompt video editing on a deterministic latent diffusion stack.
#[derive(Debug, Parser)]
#[command(name = "tie", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit a frame sequence according to masks and a prompt.
    Edit(Overrides),
    /// Run DDIM inversion only and store the final noisy latents.
    Invert(Overrides),
    /// Score an edited frame directory against a reference directory.
    Metrics(MetricsArgs),
    /// Generate a synthetic clip (frames + masks) into a directory.
    Synth(SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct MetricsArgs {
    /// Directory with the reference frames.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Directory with the frames under test.
    #[arg(long = "test")]
    pub candidate: PathBuf,
    /// Directory with the masks (excluded from temporal consistency).
    #[arg(long)]
    pub masks: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Clip kind: "static", "translating_square" or "two_objects".
    #[arg(long)]
    pub kind: String,
    /// Number of frames.
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (receives frame_%05d.ppm and mask_%05d.pgm).
    #[arg(long)]
    pub out: PathBuf,
}

/// Dispatches one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Edit(flags) => cmd_edit(&flags),
        Command::Invert(flags) => cmd_invert(&flags),
        Command::Metrics(args) => cmd_metrics(&args),
        Command::Synth(args) => {
            synth::synth_to_dir(&args.kind, args.frames, args.width, args.height, args.seed, &args.out)
        }
    }
}

fn load_model(resolved: &Resolved) -> Result<DenoiserModel> {
    match &resolved.weights {
        Some(path) => DenoiserModel::load_weights(File::open(path).map_err(Error::from)?),
        None => Ok(DenoiserModel::from_seed(DEFAULT_WEIGHT_SEED)),
    }
}

fn build_request(resolved: &Resolved) -> Result<EditRequest> {
    let frames = pnm::load_frames(&resolved.input_dir)?;
    let masks = pnm::load_masks(&resolved.mask_dir, frames.len())?;
    let mut request = EditRequest::new(frames, masks);
    request.prompt = resolved.prompt.clone();
    request.guidance_scale = resolved.guidance_scale;
    request.seed = resolved.seed;
    request.num_steps = resolved.num_steps;
    request.batch_size = resolved.batch_size;
    request.mode = resolved.mode;
    request.composite_unmasked = resolved.composite_unmasked;
    request.task = resolved.task;
    Ok(request)
}

/// Runs an edit for already-resolved settings and writes all artifacts.
/// Shared with the test suite, which drives it without a process spawn.
pub fn execute_edit(resolved: &Resolved) -> Result<EditResult> {
    validate_paths(resolved)?;
    let request = build_request(resolved)?;
    let model = load_model(resolved)?;
    let codec = CodecParams::from_seed(DEFAULT_CODEC_SEED);
    let embedder = TextEmbedder::from_seed(DEFAULT_TEXT_SEED);
    let schedule = NoiseSchedule::new(DEFAULT_TRAIN_STEPS, resolved.num_steps)?;

    let result = run_edit(&request, &model, &codec, &embedder, &schedule)?;

    pnm::write_frames(&resolved.output_dir, &result.edited_frames)?;
    report::write_manifest(&resolved.output_dir.join("run_manifest.json"), &result.run_manifest)?;
    if let Some(csv) = &resolved.metrics_csv {
        match &result.per_frame_metrics {
            Some(rows) => report::write_metrics_csv(csv, rows)?,
            None => {
                report::write_metrics_csv(csv, &[])?;
                eprintln!(
                    "note: frames are smaller than the 11x11 SSIM window; {} has headers only",
                    csv.display()
                );
            }
        }
    }
    Ok(result)
}

fn cmd_edit(flags: &Overrides) -> Result<()> {
    let resolved = resolve_from_flags(flags)?;
    let result = execute_edit(&resolved)?;
    eprintln!(
        "edited {} frame(s) into {} in {} ms",
        result.edited_frames.len(),
        resolved.output_dir.display(),
        result.run_manifest.wall_ms
    );
    Ok(())
}

/// File name used for the latents written by `invert`.
pub const LATENTS_FILE: &str = "latents.tie";

fn cmd_invert(flags: &Overrides) -> Result<()> {
    let started = Instant::now();
    let resolved = resolve_from_flags(flags)?;
    validate_paths(&resolved)?;
    let request = build_request(&resolved)?;
    let model = load_model(&resolved)?;
    let codec = CodecParams::from_seed(DEFAULT_CODEC_SEED);
    let embedder = TextEmbedder::from_seed(DEFAULT_TEXT_SEED);
    let schedule: NoiseSchedule<f32> = NoiseSchedule::new(DEFAULT_TRAIN_STEPS, resolved.num_steps)?;
    validate_request(&request, &schedule)?;

    let mut bundles = Vec::with_capacity(request.frames.len());
    let mut latents = Vec::with_capacity(request.frames.len());
    for (frame, mask) in request.frames.iter().zip(&request.masks) {
        let image: Tensor<f32> = frame.to_tensor();
        let mask: Tensor<f32> = mask.to_tensor();
        bundles.push(build_bundle(&codec, &embedder, &image, &mask, &request.prompt)?);
        latents.push(codec.encode(&image)?);
    }
    let inverted = schedule.invert_to_final(&latents, &bundles, &model)?;

    let names: Vec<String> = (0..inverted.len()).map(|i| format!("latent_{i:05}")).collect();
    let entries = names.iter().map(String::as_str).zip(inverted.iter());
    let path = resolved.output_dir.join(LATENTS_FILE);
    write_entries_to(&path, entries)?;
    eprintln!(
        "inverted {} frame(s) into {} in {} ms",
        inverted.len(),
        path.display(),
        started.elapsed().as_millis()
    );
    Ok(())
}

fn write_entries_to<'a>(
    path: &std::path::Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let file = File::create(path).map_err(Error::from)?;
    tie_core::weights::write_entries(file, entries).map_err(Error::from)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    if let Some(parent) = args.csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| {
            Error::Config(format!("cannot create \"{}\": {e}", parent.display()))
        })?;
    }
    let reference = pnm::load_frames(&args.reference)?;
    let candidate = pnm::load_frames(&args.candidate)?;
    let masks = pnm::load_masks(&args.masks, reference.len())?;
    let rows = tie_core::metrics::evaluate_sequences(&reference, &candidate, &masks)?;
    report::write_metrics_csv(&args.csv, &rows)?;
    eprintln!("scored {} frame(s) into {}", rows.len(), args.csv.display());
    Ok(())
}

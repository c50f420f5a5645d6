//! Metrics CSV and run-manifest emission.
//!
//! Both artifacts are pure functions of the run request, so repeated runs
//! produce byte-identical files. Wall-clock time is therefore reported on
//! standard error instead of being written into the manifest.

use std::fs;
use std::path::Path;

use serde::Serialize;
use tie_core::metrics::MetricRow;
use tie_core::pipeline::RunManifest;
use tie_core::{Error, Result};

/// CSV column order; `temporal_mse` is empty for the first frame.
pub const CSV_HEADER: &str = "frame,psnr_db,ssim,temporal_mse";

/// Renders metric rows as CSV. Floats use shortest round-trip formatting
/// (infinite PSNR prints as `inf`), keeping the file deterministic.
pub fn render_metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let temporal = row.temporal_mse.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{temporal}\n",
            row.frame_index, row.psnr_db, row.ssim
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, render_metrics_csv(rows))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    seed: u64,
    guidance_scale: f32,
    mode: &'a str,
    task: &'a str,
    prompt: &'a str,
    num_steps: usize,
    batch_size: usize,
    frame_count: usize,
    schedule_hash: String,
}

/// Renders the reproducibility manifest as pretty-printed JSON. Every
/// field is deterministic; timing stays out of the file by design.
pub fn render_manifest(manifest: &RunManifest) -> String {
    let doc = ManifestDoc {
        seed: manifest.seed,
        guidance_scale: manifest.guidance_scale,
        mode: manifest.mode.as_str(),
        task: manifest.task.as_str(),
        prompt: &manifest.prompt,
        num_steps: manifest.num_steps,
        batch_size: manifest.batch_size,
        frame_count: manifest.frame_count,
        schedule_hash: format!("{:016x}", manifest.schedule_hash),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("manifest fields always serialize");
    json.push('\n');
    json
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(path, render_manifest(manifest))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tie_core::pipeline::{EditMode, TaskPreset};

    fn rows() -> Vec<MetricRow> {
        vec![
            MetricRow { frame_index: 0, psnr_db: f64::INFINITY, ssim: 1.0, temporal_mse: None },
            MetricRow { frame_index: 1, psnr_db: 28.13, ssim: 0.75, temporal_mse: Some(2.5) },
        ]
    }

    #[test]
    fn csv_has_the_documented_header_and_inf_spelling() {
        let csv = render_metrics_csv(&rows());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,psnr_db,ssim,temporal_mse");
        assert_eq!(lines[1], "0,inf,1,");
        assert_eq!(lines[2], "1,28.13,0.75,2.5");
    }

    #[test]
    fn manifest_is_deterministic_and_omits_timing() {
        let manifest = RunManifest {
            seed: 7,
            guidance_scale: 7.5,
            mode: EditMode::EAttn,
            task: TaskPreset::Removal,
            prompt: "background".to_string(),
            num_steps: 50,
            batch_size: 5,
            frame_count: 4,
            schedule_hash: 0xdead_beef,
            wall_ms: 1234,
        };
        let a = render_manifest(&manifest);
        let mut later = manifest.clone();
        later.wall_ms = 99999;
        let b = render_manifest(&later);
        assert_eq!(a, b, "timing must not leak into the manifest file");
        assert!(a.contains("\"schedule_hash\": \"00000000deadbeef\""), "{a}");
        assert!(a.contains("\"guidance_scale\": 7.5"), "{a}");
        assert!(!a.contains("wall"), "{a}");
    }
}

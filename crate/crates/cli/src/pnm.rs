//! Binary PPM (P6) and PGM (P5) frame files, plus directory-level loading
//! of `frame_%05d` / `mask_%05d` sequences. PNG alternatives are accepted
//! when the `png` feature is enabled; writing always emits PPM/PGM.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use tie_core::image::{FrameSequence, Image8, MaskSequence};
use tie_core::{Error, Result};

/// Maximum header dimension accepted before we assume a corrupt file.
const MAX_DIM: usize = 1 << 16;

fn io_err(path: &Path, what: &str, err: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {what}: {err}", path.display()))
}

fn format_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {what}", path.display()))
}

/// Pulls one whitespace-delimited ASCII integer out of a PNM header,
/// skipping `#` comment lines.
fn next_header_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(format_err(path, "malformed header: expected an integer"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed header: integer out of range"))
}

fn read_pnm(path: &Path, magic: &[u8; 2], channels: usize) -> Result<Image8> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, "cannot read", e))?;
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            format!("not a {} file (bad magic)", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut pos = 2;
    let width = next_header_int(&bytes, &mut pos, path)?;
    let height = next_header_int(&bytes, &mut pos, path)?;
    let maxval = next_header_int(&bytes, &mut pos, path)?;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(format_err(path, format!("implausible dimensions {width}x{height}")));
    }
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval} (only 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing whitespace after maxval"));
    }
    pos += 1;
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(format_err(
            path,
            format!("raster holds {} bytes, expected {expected}", raster.len()),
        ));
    }
    Image8::new(width, height, channels, raster.to_vec())
}

/// Reads a binary `P6` RGB image with maxval 255.
pub fn read_ppm(path: &Path) -> Result<Image8> {
    read_pnm(path, b"P6", 3)
}

/// Reads a binary `P5` grayscale image with maxval 255.
pub fn read_pgm(path: &Path) -> Result<Image8> {
    read_pnm(path, b"P5", 1)
}

fn write_pnm(path: &Path, image: &Image8, magic: &str, channels: usize) -> Result<()> {
    if image.channels != channels {
        return Err(Error::shape(
            "write_pnm",
            format!("{magic} wants {channels} channel(s), image has {}", image.channels),
        ));
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, "cannot create", e))?;
    let mut out = BufWriter::new(file);
    out.write_all(format!("{magic}\n{} {}\n255\n", image.width, image.height).as_bytes())
        .and_then(|()| out.write_all(&image.data))
        .and_then(|()| out.flush())
        .map_err(|e| io_err(path, "cannot write", e))
}

/// Writes a binary `P6` RGB image.
pub fn write_ppm(path: &Path, image: &Image8) -> Result<()> {
    write_pnm(path, image, "P6", 3)
}

/// Writes a binary `P5` grayscale image.
pub fn write_pgm(path: &Path, image: &Image8) -> Result<()> {
    write_pnm(path, image, "P5", 1)
}

#[cfg(feature = "png")]
fn read_png(path: &Path, channels: usize) -> Result<Image8> {
    let dynamic = image::open(path).map_err(|e| io_err(path, "cannot decode", e))?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data = match channels {
        3 => dynamic.into_rgb8().into_raw(),
        _ => dynamic.into_luma8().into_raw(),
    };
    Image8::new(width, height, channels, data)
}

/// Locates `prefix_%05d.<ext>` for the given index, trying the native PNM
/// extension first and PNG second when that support is compiled in.
fn sequence_path(dir: &Path, prefix: &str, index: usize, pnm_ext: &str) -> Option<PathBuf> {
    let pnm = dir.join(format!("{prefix}_{index:05}.{pnm_ext}"));
    if pnm.is_file() {
        return Some(pnm);
    }
    let png = dir.join(format!("{prefix}_{index:05}.png"));
    if png.is_file() {
        return Some(png);
    }
    None
}

fn read_sequence_image(path: &Path, channels: usize) -> Result<Image8> {
    if path.extension().is_some_and(|e| e == "png") {
        #[cfg(feature = "png")]
        return read_png(path, channels);
        #[cfg(not(feature = "png"))]
        return Err(format_err(path, "PNG support is not compiled in (feature \"png\")"));
    }
    read_pnm(path, if channels == 3 { b"P6" } else { b"P5" }, channels)
}

/// Highest index present for `prefix_%05d.*`, or `None` for an empty set.
fn max_sequence_index(dir: &Path, prefix: &str) -> Result<Option<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, "cannot list", e))?;
    let mut max: Option<usize> = None;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, "cannot list", e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(stem) = name.split('.').next() else { continue };
        let Some(digits) = stem.strip_prefix(&format!("{prefix}_")) else { continue };
        if digits.len() == 5 {
            if let Ok(i) = digits.parse::<usize>() {
                max = Some(max.map_or(i, |m| m.max(i)));
            }
        }
    }
    Ok(max)
}

/// Loads `frame_%05d.ppm` (or `.png`) with contiguous indices from 0. All
/// frames must share one size with dimensions divisible by 8.
pub fn load_frames(dir: &Path) -> Result<FrameSequence> {
    let last = max_sequence_index(dir, "frame")?.ok_or_else(|| {
        format_err(dir, "no frame_%05d.ppm files found")
    })?;
    let mut frames: FrameSequence = Vec::with_capacity(last + 1);
    for i in 0..=last {
        let path = sequence_path(dir, "frame", i, "ppm").ok_or_else(|| {
            format_err(dir, format!("missing frame_{i:05} (indices must be contiguous)"))
        })?;
        let frame = read_sequence_image(&path, 3)?;
        if frame.width % 8 != 0 || frame.height % 8 != 0 {
            return Err(format_err(
                &path,
                format!("dimensions {}x{} are not divisible by 8", frame.width, frame.height),
            ));
        }
        if let Some(first) = frames.first() {
            let (w, h) = (first.width, first.height);
            if frame.width != w || frame.height != h {
                return Err(format_err(
                    &path,
                    format!("size {}x{} differs from first frame {w}x{h}", frame.width, frame.height),
                ));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Loads `mask_%05d.pgm` (or `.png`), requiring exactly `n` masks.
pub fn load_masks(dir: &Path, n: usize) -> Result<MaskSequence> {
    let count = max_sequence_index(dir, "mask")?.map_or(0, |last| last + 1);
    if count != n {
        return Err(Error::Config(format!("mask count {count} != frame count {n}")));
    }
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let path = sequence_path(dir, "mask", i, "pgm").ok_or_else(|| {
            format_err(dir, format!("missing mask_{i:05} (indices must be contiguous)"))
        })?;
        masks.push(read_sequence_image(&path, 1)?);
    }
    Ok(masks)
}

/// Writes `frame_%05d.ppm` for every frame.
pub fn write_frames(dir: &Path, frames: &[Image8]) -> Result<()> {
    for (i, frame) in frames.iter().enumerate() {
        write_ppm(&dir.join(format!("frame_{i:05}.ppm")), frame)?;
    }
    Ok(())
}

/// Writes `mask_%05d.pgm` for every mask.
pub fn write_masks(dir: &Path, masks: &[Image8]) -> Result<()> {
    for (i, mask) in masks.iter().enumerate() {
        write_pgm(&dir.join(format!("mask_{i:05}.pgm")), mask)?;
    }
    Ok(())
}

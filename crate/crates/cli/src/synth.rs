//! Seeded synthetic clips: deterministic striped backgrounds with moving
//! squares, used as desk-scale stand-ins for real video corpora.

use std::path::Path;

use tie_core::image::{FrameSequence, Image8, MaskSequence};
use tie_core::rng::splitmix64;
use tie_core::{Error, Result};

use crate::pnm::{write_frames, write_masks};

/// Valid generator kinds, in the order they are documented.
pub const KINDS: [&str; 3] = ["static", "translating_square", "two_objects"];

const STRIPE_HEIGHT: usize = 4;
const STEP_PX: usize = 2;
const MARGIN: usize = 4;

struct Palette {
    stripe_a: [u8; 3],
    stripe_b: [u8; 3],
    square: [u8; 3],
    square2: [u8; 3],
}

/// Colors derived from the seed, with forced contrast so the squares are
/// always visible against the stripes.
fn palette(seed: u64) -> Palette {
    let bits = splitmix64(seed ^ 0x7331_BEEF);
    let stripe_a = [bits as u8, (bits >> 8) as u8, (bits >> 16) as u8];
    let stripe_b = [
        stripe_a[0] ^ 0x60,
        stripe_a[1] ^ 0x60,
        stripe_a[2] ^ 0x60,
    ];
    let square = [
        (bits >> 24) as u8 | 0x80,
        (bits >> 32) as u8 | 0x80,
        (bits >> 40) as u8 & 0x3f,
    ];
    let square2 = [square[2], square[0] ^ 0xff, square[1]];
    Palette { stripe_a, stripe_b, square, square2 }
}

fn striped_background(width: usize, height: usize, p: &Palette) -> Image8 {
    let mut img = Image8::filled(width, height, 3, 0);
    for y in 0..height {
        let color = if (y / STRIPE_HEIGHT) % 2 == 0 { p.stripe_a } else { p.stripe_b };
        for x in 0..width {
            img.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
    img
}

fn draw_square(img: &mut Image8, x0: usize, y0: usize, side: usize, color: [u8; 3]) {
    for y in y0..(y0 + side).min(img.height) {
        for x in x0..(x0 + side).min(img.width) {
            img.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
}

fn square_mask(width: usize, height: usize, x0: usize, y0: usize, side: usize) -> Image8 {
    let mut m = Image8::filled(width, height, 1, 0);
    for y in y0..(y0 + side).min(height) {
        for x in x0..(x0 + side).min(width) {
            m.pixel_mut(x, y)[0] = 255;
        }
    }
    m
}

fn check_travel(kind: &str, width: usize, n_frames: usize, side: usize, extent: usize) -> Result<()> {
    let needed = MARGIN + STEP_PX * (n_frames - 1) + extent;
    if needed > width {
        return Err(Error::Config(format!(
            "{kind}: {n_frames} frames of travel need width {needed}, image is only {width} \
             (side {side}, {STEP_PX} px per frame)"
        )));
    }
    Ok(())
}

/// Generates `n_frames` RGB frames plus aligned single-channel masks.
///
/// - `"static"`: identical striped frames with one fixed square mask.
/// - `"translating_square"`: a square sliding 2 px per frame across the
///   stripes; the mask is the square's footprint at `x0 + 2t`.
/// - `"two_objects"`: a moving pair where the front square partially
///   occludes the back one; the mask tracks the back square.
pub fn synth_video(
    kind: &str,
    n_frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<(FrameSequence, MaskSequence)> {
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be >= 1".to_string()));
    }
    if width % 8 != 0 || height % 8 != 0 || width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "synthetic frames must have nonzero dimensions divisible by 8, got {width}x{height}"
        )));
    }
    let p = palette(seed);
    let side = (width.min(height) / 4).max(4);
    let y_mid = (height - side) / 2;

    match kind {
        "static" => {
            let frame = striped_background(width, height, &p);
            let mask = square_mask(width, height, width / 4, height / 4, side);
            Ok((vec![frame; n_frames], vec![mask; n_frames]))
        }
        "translating_square" => {
            check_travel(kind, width, n_frames, side, side)?;
            let background = striped_background(width, height, &p);
            let mut frames = Vec::with_capacity(n_frames);
            let mut masks = Vec::with_capacity(n_frames);
            for t in 0..n_frames {
                let x = MARGIN + STEP_PX * t;
                let mut frame = background.clone();
                draw_square(&mut frame, x, y_mid, side, p.square);
                frames.push(frame);
                masks.push(square_mask(width, height, x, y_mid, side));
            }
            Ok((frames, masks))
        }
        "two_objects" => {
            // The back square trails half a side behind and below the
            // front one, so the two always overlap.
            let offset = side / 2;
            check_travel(kind, width, n_frames, side, side + offset)?;
            if y_mid + offset + side > height {
                return Err(Error::Config(format!(
                    "{kind}: height {height} too small for two stacked squares of side {side}"
                )));
            }
            let background = striped_background(width, height, &p);
            let mut frames = Vec::with_capacity(n_frames);
            let mut masks = Vec::with_capacity(n_frames);
            for t in 0..n_frames {
                let x = MARGIN + STEP_PX * t;
                let (bx, by) = (x + offset, y_mid + offset);
                let mut frame = background.clone();
                draw_square(&mut frame, bx, by, side, p.square2);
                draw_square(&mut frame, x, y_mid, side, p.square);
                frames.push(frame);
                masks.push(square_mask(width, height, bx, by, side));
            }
            Ok((frames, masks))
        }
        other => Err(Error::Config(format!(
            "unknown synthetic clip kind \"{other}\" (expected one of {KINDS:?})"
        ))),
    }
}

/// Generates a clip and writes `frame_%05d.ppm` + `mask_%05d.pgm` into one
/// directory, ready to serve as both `input_dir` and `mask_dir`.
pub fn synth_to_dir(
    kind: &str,
    n_frames: usize,
    width: usize,
    height: usize,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    let (frames, masks) = synth_video(kind, n_frames, width, height, seed)?;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create \"{}\": {e}", dir.display())))?;
    write_frames(dir, &frames)?;
    write_masks(dir, &masks)
}

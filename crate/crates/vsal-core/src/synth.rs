//! Synthetic clip generator: a textured static background, a moving square
//! (the salient object by construction), optional static distractor, seeded
//! noise, and per-frame binary ground truth. Camouflaged objects draw their
//! texture from the background's own value distribution so motion is the
//! only cue.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{quantize_u8, write_pgm, write_ppm, Frame, GrayMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    /// Moving square texture-matched to the background.
    CamouflagedMoving,
    /// Moving square in a distinct color family.
    ColoredMoving,
    /// Colored moving square plus a same-colored static distractor that the
    /// ground truth excludes.
    ColoredMovingWithDistractor,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub kind: ObjectKind,
    /// Object displacement in pixels per frame.
    pub motion: (f64, f64),
    /// Amplitude of per-pixel additive uniform noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: ObjectKind, frames: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            width: 64,
            height: 64,
            frames,
            kind,
            motion: (2.0, 0.0),
            noise: 0.02,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub gt: Vec<GrayMap>,
}

fn value_noise(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = x as f64 / cell as f64;
            let gy = y as f64 / cell as f64;
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let g = |xx: usize, yy: usize| grid[yy * gw + xx];
            let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
            let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Muted textured background: shared luminance noise with a faint per-channel
/// tint field.
fn background(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
    let luma = value_noise(w, h, 5, rng);
    let tint = value_noise(w, h, 9, rng);
    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let base = 0.3 + 0.4 * luma[i];
        let t = 0.08 * (tint[i] - 0.5);
        data.push((base + t).clamp(0.0, 1.0));
        data.push(base.clamp(0.0, 1.0));
        data.push((base - t).clamp(0.0, 1.0));
    }
    Frame {
        width: w,
        height: h,
        data,
    }
}

/// Remap the values of `patch` (per channel) onto the empirical quantiles of
/// the background, equalizing the color histograms while keeping the
/// patch's spatial structure.
fn quantile_match(patch: &mut [f64], reference: &Frame, channel: usize) {
    let mut ref_sorted: Vec<f64> = reference
        .data
        .iter()
        .skip(channel)
        .step_by(3)
        .cloned()
        .collect();
    ref_sorted.sort_unstable_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..patch.len()).collect();
    order.sort_unstable_by(|&a, &b| patch[a].total_cmp(&patch[b]));
    let n = patch.len();
    for (rank, &idx) in order.iter().enumerate() {
        let q = if n == 1 {
            0.5
        } else {
            rank as f64 / (n - 1) as f64
        };
        let ref_idx = (q * (ref_sorted.len() - 1) as f64).round() as usize;
        patch[idx] = ref_sorted[ref_idx];
    }
}

/// Square texture for the moving object (and the distractor), as side*side
/// RGB triples.
fn object_texture(
    kind: ObjectKind,
    side: usize,
    bg: &Frame,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let n = side * side;
    match kind {
        ObjectKind::CamouflagedMoving => {
            let mut channels: Vec<Vec<f64>> = (0..3)
                .map(|_| value_noise(side, side, 3, rng))
                .collect();
            for (c, chan) in channels.iter_mut().enumerate() {
                quantile_match(chan, bg, c);
            }
            (0..n)
                .map(|i| [channels[0][i], channels[1][i], channels[2][i]])
                .collect()
        }
        _ => {
            let texture = value_noise(side, side, 3, rng);
            (0..n)
                .map(|i| {
                    let t = texture[i];
                    [
                        (0.75 + 0.2 * t).clamp(0.0, 1.0),
                        (0.08 + 0.12 * t).clamp(0.0, 1.0),
                        (0.08 + 0.1 * (1.0 - t)).clamp(0.0, 1.0),
                    ]
                })
                .collect()
        }
    }
}

fn paste(frame: &mut Frame, texture: &[[f64; 3]], side: usize, x0: usize, y0: usize) {
    for dy in 0..side {
        for dx in 0..side {
            let i = ((y0 + dy) * frame.width + x0 + dx) * 3;
            frame.data[i..i + 3].copy_from_slice(&texture[dy * side + dx]);
        }
    }
}

/// Render a clip. The background and any distractor are static; only the
/// object moves, so its mask is the ground truth. Frames are pre-quantized
/// to the 8-bit grid, making in-memory use agree with files on disk.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Clip> {
    if spec.frames == 0 {
        return Err(Error::Invalid("clip needs at least one frame".into()));
    }
    if spec.width < 16 || spec.height < 16 {
        return Err(Error::Invalid(format!(
            "clip resolution {}x{} is below the 16x16 minimum",
            spec.width, spec.height
        )));
    }
    if !(0.0..=0.2).contains(&spec.noise) {
        return Err(Error::Invalid(format!(
            "noise level {} outside [0, 0.2]",
            spec.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let min_dim = w.min(h);
    let side = ((min_dim as f64 * rng.random_range(0.18..0.28)).round() as usize).max(6);

    // Feasible start range so the whole trajectory stays in bounds.
    let margin = 1.0;
    let range_for = |len: usize, vel: f64| -> Result<(f64, f64)> {
        let travel = vel * (spec.frames - 1) as f64;
        let lo = margin - travel.min(0.0);
        let hi = (len - side) as f64 - margin - travel.max(0.0);
        if lo > hi {
            return Err(Error::Invalid(format!(
                "object leaves frame bounds: side {side}, travel {travel:.1}, extent {len}"
            )));
        }
        Ok((lo, hi))
    };
    let (x_lo, x_hi) = range_for(w, spec.motion.0)?;
    let (y_lo, y_hi) = range_for(h, spec.motion.1)?;
    let start = (
        rng.random_range(x_lo..=x_hi),
        rng.random_range(y_lo..=y_hi),
    );

    let bg = background(w, h, &mut rng);
    let texture = object_texture(spec.kind, side, &bg, &mut rng);

    let distractor = if spec.kind == ObjectKind::ColoredMovingWithDistractor {
        // The distractor must clear the object in every frame (padded), not
        // just the trajectory's bounding box.
        let pad = 2.0;
        let clear_of_object = |dx: usize, dy: usize| -> bool {
            (0..spec.frames).all(|t| {
                let ox = (start.0 + spec.motion.0 * t as f64).round();
                let oy = (start.1 + spec.motion.1 * t as f64).round();
                let sep_x = (dx + side) as f64 <= ox - pad || dx as f64 >= ox + side as f64 + pad;
                let sep_y = (dy + side) as f64 <= oy - pad || dy as f64 >= oy + side as f64 + pad;
                sep_x || sep_y
            })
        };
        let texture = object_texture(ObjectKind::ColoredMoving, side, &bg, &mut rng);
        let mut placed = None;
        for _ in 0..500 {
            let dx = rng.random_range(1..w - side - 1);
            let dy = rng.random_range(1..h - side - 1);
            if clear_of_object(dx, dy) {
                placed = Some((dx, dy));
                break;
            }
        }
        let (dx, dy) = placed.ok_or_else(|| {
            Error::Invalid("no room for a distractor clear of the object trajectory".into())
        })?;
        Some((dx, dy, texture))
    } else {
        None
    };

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gts = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let x0 = (start.0 + spec.motion.0 * t as f64).round() as usize;
        let y0 = (start.1 + spec.motion.1 * t as f64).round() as usize;
        let mut frame = bg.clone();
        if let Some((dx, dy, ref tex)) = distractor {
            paste(&mut frame, tex, side, dx, dy);
        }
        paste(&mut frame, &texture, side, x0, y0);
        if spec.noise > 0.0 {
            for v in frame.data.iter_mut() {
                *v = (*v + rng.random_range(-spec.noise..spec.noise)).clamp(0.0, 1.0);
            }
        }
        // Snap to the 8-bit grid the files will carry.
        for v in frame.data.iter_mut() {
            *v = quantize_u8(*v) as f64 / 255.0;
        }
        let mut gt = GrayMap::filled(w, h, 0.0);
        for dy in 0..side {
            for dx in 0..side {
                gt.data[(y0 + dy) * w + x0 + dx] = 1.0;
            }
        }
        frames.push(frame);
        gts.push(gt);
    }
    Ok(Clip { frames, gt: gts })
}

/// Still-image corpus for pretraining the color model: one colored square
/// per frame at a random position.
pub fn gen_pretrain_corpus(
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<(Frame, GrayMap)>> {
    (0..count)
        .map(|i| {
            let spec = SyntheticSpec {
                width,
                height,
                frames: 1,
                kind: ObjectKind::ColoredMoving,
                motion: (0.0, 0.0),
                noise: 0.02,
                seed: seed.wrapping_add(i as u64),
            };
            let mut clip = gen_synthetic(&spec)?;
            Ok((clip.frames.remove(0), clip.gt.remove(0)))
        })
        .collect()
}

/// Write a clip as `frames/NNNNN.ppm` and `gt/NNNNN.pgm` under `dir`.
pub fn write_clip(clip: &Clip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    let gt_dir = dir.join("gt");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    for (i, (frame, gt)) in clip.frames.iter().zip(&clip.gt).enumerate() {
        write_ppm(frame, frames_dir.join(format!("{i:05}.ppm")))?;
        write_pgm(gt, gt_dir.join(format!("{i:05}.pgm")))?;
    }
    Ok(())
}

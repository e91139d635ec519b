//! Dense optical flow between consecutive frames.
//!
//! Coarse-to-fine Horn-Schunck with a single warp per pyramid level. The
//! solver runs on one thread per frame pair; the pipeline parallelizes across
//! pairs. Output is deterministic for a fixed config.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Frame;

/// Per-pixel displacement field in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            vx: vec![0.0; width * height],
            vy: vec![0.0; width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.vx.len() != n || self.vy.len() != n {
            return Err(Error::shape(
                "flow buffer length",
                n,
                format!("vx={}, vy={}", self.vx.len(), self.vy.len()),
            ));
        }
        if self.vx.iter().chain(self.vy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(())
    }

    pub fn magnitude_at(&self, i: usize) -> f64 {
        self.vx[i].hypot(self.vy[i])
    }
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Smoothness weight; tuned for luma in 0..255 units.
    pub alpha: f64,
    /// Fixed-point (Jacobi) iterations per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            alpha: 15.0,
            iterations: 100,
            pyramid_levels: 3,
        }
    }
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        // Replicate-edge addressing.
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.data[y0 * self.w + x0] * (1.0 - fx) + self.data[y0 * self.w + x1] * fx;
        let bot = self.data[y1 * self.w + x0] * (1.0 - fx) + self.data[y1 * self.w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Luma in 0..255 units (BT.601 weights), matching the classic alpha scale.
fn to_luma(frame: &Frame) -> Plane {
    let mut data = Vec::with_capacity(frame.width * frame.height);
    for px in frame.data.chunks_exact(3) {
        data.push(255.0 * (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]));
    }
    Plane {
        w: frame.width,
        h: frame.height,
        data,
    }
}

/// 1-2-1 smoothing followed by factor-2 decimation.
fn downsample(src: &Plane) -> Plane {
    let blur = |p: &Plane, horizontal: bool| -> Plane {
        let mut data = vec![0.0; p.w * p.h];
        for y in 0..p.h {
            for x in 0..p.w {
                let (xi, yi) = (x as isize, y as isize);
                let v = if horizontal {
                    0.25 * p.at(xi - 1, yi) + 0.5 * p.at(xi, yi) + 0.25 * p.at(xi + 1, yi)
                } else {
                    0.25 * p.at(xi, yi - 1) + 0.5 * p.at(xi, yi) + 0.25 * p.at(xi, yi + 1)
                };
                data[y * p.w + x] = v;
            }
        }
        Plane { w: p.w, h: p.h, data }
    };
    let smooth = blur(&blur(src, true), false);
    let w = src.w.div_ceil(2);
    let h = src.h.div_ceil(2);
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = smooth.data[(y * 2) * src.w + x * 2];
        }
    }
    Plane { w, h, data }
}

fn upsample_flow(v: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let plane = Plane {
        w: sw,
        h: sh,
        data: v.to_vec(),
    };
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let sy = ((y as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        for x in 0..dw {
            let sx = ((x as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
            // Displacements double when the grid doubles.
            out[y * dw + x] = 2.0 * plane.sample_bilinear(sx, sy);
        }
    }
    out
}

/// Estimate dense flow from `a` to `b`.
pub fn horn_schunck(a: &Frame, b: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            "flow input dimensions",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    if cfg.iterations == 0 || cfg.pyramid_levels == 0 {
        return Err(Error::Invalid(
            "flow config needs at least one iteration and one pyramid level".into(),
        ));
    }

    let mut pyr_a = vec![to_luma(a)];
    let mut pyr_b = vec![to_luma(b)];
    for _ in 1..cfg.pyramid_levels {
        let top_a = pyr_a.last().unwrap();
        if top_a.w.min(top_a.h) < 16 {
            break;
        }
        pyr_a.push(downsample(top_a));
        pyr_b.push(downsample(pyr_b.last().unwrap()));
    }

    let coarsest = pyr_a.len() - 1;
    let mut u = vec![0.0; pyr_a[coarsest].w * pyr_a[coarsest].h];
    let mut v = vec![0.0; u.len()];

    for level in (0..=coarsest).rev() {
        let la = &pyr_a[level];
        let lb = &pyr_b[level];
        if level != coarsest {
            let (pw, ph) = (pyr_a[level + 1].w, pyr_a[level + 1].h);
            u = upsample_flow(&u, pw, ph, la.w, la.h);
            v = upsample_flow(&v, pw, ph, la.w, la.h);
        }
        solve_level(la, lb, &mut u, &mut v, cfg);
    }

    let field = FlowField {
        width: a.width,
        height: a.height,
        vx: u,
        vy: v,
    };
    field.validate()?;
    Ok(field)
}

/// Flow for every consecutive pair of a sequence; pairs run in parallel,
/// results in frame order.
pub fn sequence_flow(frames: &[Frame], cfg: &FlowConfig) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        return Err(Error::Invalid(
            "flow needs at least two frames (one consecutive pair)".into(),
        ));
    }
    crate::par::map_indices(frames.len() - 1, |i| horn_schunck(&frames[i], &frames[i + 1], cfg))
        .into_iter()
        .collect()
}

/// One incremental Horn-Schunck solve: warp `b` by the incoming flow, then
/// run Jacobi iterations on the linearized constancy constraint.
fn solve_level(a: &Plane, b: &Plane, u: &mut Vec<f64>, v: &mut Vec<f64>, cfg: &FlowConfig) {
    let (w, h) = (a.w, a.h);
    let n = w * h;
    let u0 = u.clone();
    let v0 = v.clone();

    let mut warped = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            warped[i] = b.sample_bilinear(x as f64 + u0[i], y as f64 + v0[i]);
        }
    }
    let wp = Plane { w, h, data: warped };

    // Central-difference gradients of the frame average, temporal difference
    // against the warped second frame.
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut denom = vec![0.0; n];
    let alpha_sq = cfg.alpha * cfg.alpha;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5
                * (0.5 * (a.at(xi + 1, yi) + wp.at(xi + 1, yi))
                    - 0.5 * (a.at(xi - 1, yi) + wp.at(xi - 1, yi)));
            let gy = 0.5
                * (0.5 * (a.at(xi, yi + 1) + wp.at(xi, yi + 1))
                    - 0.5 * (a.at(xi, yi - 1) + wp.at(xi, yi - 1)));
            let gt = wp.data[i] - a.data[i];
            ix[i] = gx;
            iy[i] = gy;
            // Constraint is linearized around the warp base (u0, v0).
            rhs[i] = gt - gx * u0[i] - gy * v0[i];
            denom[i] = alpha_sq + gx * gx + gy * gy;
        }
    }

    let mut un = vec![0.0; n];
    let mut vn = vec![0.0; n];
    for _ in 0..cfg.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (ub, vb) = neighbor_average(u, v, x, y, w, h);
                let t = (ix[i] * ub + iy[i] * vb + rhs[i]) / denom[i];
                un[i] = ub - ix[i] * t;
                vn[i] = vb - iy[i] * t;
            }
        }
        std::mem::swap(u, &mut un);
        std::mem::swap(v, &mut vn);
    }
}

/// Classic weighted 8-neighborhood average (1/6 cardinal, 1/12 diagonal),
/// replicate at edges.
#[inline]
fn neighbor_average(u: &[f64], v: &[f64], x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
    let idx = |x: isize, y: isize| -> usize {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        y * w + x
    };
    let (xi, yi) = (x as isize, y as isize);
    let card = [
        idx(xi - 1, yi),
        idx(xi + 1, yi),
        idx(xi, yi - 1),
        idx(xi, yi + 1),
    ];
    let diag = [
        idx(xi - 1, yi - 1),
        idx(xi + 1, yi - 1),
        idx(xi - 1, yi + 1),
        idx(xi + 1, yi + 1),
    ];
    let mut ub = 0.0;
    let mut vb = 0.0;
    for &i in &card {
        ub += u[i] / 6.0;
        vb += v[i] / 6.0;
    }
    for &i in &diag {
        ub += u[i] / 12.0;
        vb += v[i] / 12.0;
    }
    (ub, vb)
}

// ---------------------------------------------------------------------------
// Middlebury .flo interchange
// ---------------------------------------------------------------------------

const FLO_SENTINEL: f32 = 202021.25;

/// Write a flow field in `.flo` layout (f32 sentinel, i32 width/height,
/// row-major interleaved (u,v) f32 pairs; all little-endian).
pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    field.validate()?;
    let mut out = Vec::with_capacity(12 + field.vx.len() * 8);
    out.extend_from_slice(&FLO_SENTINEL.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for i in 0..field.vx.len() {
        out.extend_from_slice(&(field.vx[i] as f32).to_le_bytes());
        out.extend_from_slice(&(field.vy[i] as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated header"));
    }
    let sentinel = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sentinel != FLO_SENTINEL {
        return Err(Error::format(
            path,
            format!("bad sentinel: expected {FLO_SENTINEL}, found {sentinel}"),
        ));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::format(
            path,
            format!("non-positive dimensions {width}x{height}"),
        ));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width * height;
    let expected = 12 + n * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("payload size mismatch: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let mut vx = Vec::with_capacity(n);
    let mut vy = Vec::with_capacity(n);
    for i in 0..n {
        let off = 12 + i * 8;
        vx.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        vy.push(f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as f64);
    }
    let field = FlowField {
        width,
        height,
        vx,
        vy,
    };
    field.validate()?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture: value noise from a coarse seeded grid.
    pub(crate) fn textured_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = 4;
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let gx = x as f64 / cell as f64;
                let gy = y as f64 / cell as f64;
                let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
                let g = |xx: usize, yy: usize| grid[yy * gw + xx];
                let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
                let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                data.extend_from_slice(&[v, v, v]);
            }
        }
        Frame {
            width: w,
            height: h,
            data,
        }
    }

    /// Translate with wraparound by integer offsets.
    fn translate_wrap(f: &Frame, dx: isize, dy: isize) -> Frame {
        let (w, h) = (f.width as isize, f.height as isize);
        let mut data = vec![0.0; f.data.len()];
        for y in 0..h {
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w) as usize;
                let sy = (y - dy).rem_euclid(h) as usize;
                let src = (sy as usize * f.width + sx) * 3;
                let dst = (y as usize * f.width + x as usize) * 3;
                data[dst..dst + 3].copy_from_slice(&f.data[src..src + 3]);
            }
        }
        Frame {
            width: f.width,
            height: f.height,
            data,
        }
    }

    /// Translate by fractional offsets with bilinear resampling, edge clamp.
    pub(crate) fn translate_bilinear(f: &Frame, dx: f64, dy: f64) -> Frame {
        let mut data = vec![0.0; f.data.len()];
        for y in 0..f.height {
            for x in 0..f.width {
                let sx = (x as f64 - dx).clamp(0.0, (f.width - 1) as f64);
                let sy = (y as f64 - dy).clamp(0.0, (f.height - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(f.width - 1), (y0 + 1).min(f.height - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for c in 0..3 {
                    let g = |xx: usize, yy: usize| f.data[(yy * f.width + xx) * 3 + c];
                    let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
                    let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
                    data[(y * f.width + x) * 3 + c] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Frame {
            width: f.width,
            height: f.height,
            data,
        }
    }

    pub(crate) fn interior_mean_epe(field: &FlowField, tx: f64, ty: f64, margin: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in margin..field.height - margin {
            for x in margin..field.width - margin {
                let i = y * field.width + x;
                sum += ((field.vx[i] - tx).powi(2) + (field.vy[i] - ty).powi(2)).sqrt();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = textured_frame(48, 40, 3);
        let f = horn_schunck(&a, &a, &FlowConfig::default()).unwrap();
        let max = f
            .vx
            .iter()
            .chain(f.vy.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3, "max |v| = {max}");
    }

    #[test]
    fn recovers_integer_translation() {
        let a = textured_frame(64, 64, 7);
        let b = translate_wrap(&a, 1, 0);
        let f = horn_schunck(&a, &b, &FlowConfig::default()).unwrap();
        let epe = interior_mean_epe(&f, 1.0, 0.0, 8);
        assert!(epe < 0.3, "interior mean EPE = {epe}");
    }

    #[test]
    fn recovers_fractional_translation() {
        let a = textured_frame(64, 64, 11);
        let b = translate_bilinear(&a, 1.0, 0.5);
        let f = horn_schunck(&a, &b, &FlowConfig::default()).unwrap();
        let epe = interior_mean_epe(&f, 1.0, 0.5, 8);
        assert!(epe < 0.5, "interior mean EPE = {epe}");
    }

    #[test]
    fn forward_flow_negates_backward_flow() {
        let a = textured_frame(64, 64, 13);
        let b = translate_wrap(&a, 1, 0);
        let cfg = FlowConfig::default();
        let fwd = horn_schunck(&a, &b, &cfg).unwrap();
        let bwd = horn_schunck(&b, &a, &cfg).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 8..56 {
            for x in 8..56 {
                let i = y * 64 + x;
                let du = fwd.vx[i] + bwd.vx[i];
                let dv = fwd.vy[i] + bwd.vy[i];
                sum += (du * du + dv * dv).sqrt();
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(mean < 0.5, "mean EPE of sum = {mean}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let a = textured_frame(16, 16, 1);
        let b = textured_frame(16, 18, 1);
        assert!(horn_schunck(&a, &b, &FlowConfig::default()).is_err());
    }

    #[test]
    fn flo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut field = FlowField::zeros(6, 4);
        for v in field.vx.iter_mut().chain(field.vy.iter_mut()) {
            // Values representable in f32 so the round trip is lossless.
            *v = rng.random_range(-8.0f32..8.0f32) as f64;
        }
        write_flo(&field, &path).unwrap();
        let back = read_flo(&path).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn flo_rejects_bad_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let mut bytes = vec![];
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(&path, bytes).unwrap();
        let err = read_flo(&path).unwrap_err();
        assert!(err.to_string().contains("sentinel"), "{err}");
    }

    #[test]
    fn flo_byte_layout_matches_hand_assembly() {
        // 1x1 field (u,v) = (2.5, -1.25) must serialize to exactly 20 bytes
        // with the documented layout.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let field = FlowField {
            width: 1,
            height: 1,
            vx: vec![2.5],
            vy: vec![-1.25],
        };
        write_flo(&field, &path).unwrap();
        let got = fs::read(&path).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(&202021.25f32.to_le_bytes());
        want.extend_from_slice(&1i32.to_le_bytes());
        want.extend_from_slice(&1i32.to_le_bytes());
        want.extend_from_slice(&2.5f32.to_le_bytes());
        want.extend_from_slice(&(-1.25f32).to_le_bytes());
        assert_eq!(got.len(), 20);
        assert_eq!(got, want);
    }

    #[test]
    fn flo_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let field = FlowField::zeros(2, 2);
        write_flo(&field, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(read_flo(&path).is_err());
    }
}

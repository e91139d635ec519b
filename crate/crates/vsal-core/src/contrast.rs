//! Hand-crafted motion saliency baseline: windowed contrast over the flow
//! field, distance-weighted, then min-max normalized.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::GrayMap;
use crate::par;

#[derive(Debug, Clone)]
pub struct ContrastConfig {
    /// Square neighborhood half-width in pixels.
    pub radius: usize,
    /// Distance weighting parameter; a pure global scale, so it cancels
    /// under the final normalization.
    pub omega: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            radius: 5,
            omega: 1.0,
        }
    }
}

/// Per-pixel sum over the neighborhood of flow-vector distance divided by
/// omega-scaled spatial distance (center excluded), min-max normalized.
/// The window is clipped at image borders.
pub fn contrast_motion_saliency(field: &FlowField, cfg: &ContrastConfig) -> Result<GrayMap> {
    if cfg.radius < 1 {
        return Err(Error::Invalid("contrast radius must be >= 1".into()));
    }
    if !(cfg.omega > 0.0) {
        return Err(Error::Invalid(format!(
            "contrast omega must be positive, got {}",
            cfg.omega
        )));
    }
    field.validate()?;

    let r = cfg.radius as isize;
    let mut offsets = Vec::with_capacity(((2 * r + 1) * (2 * r + 1) - 1) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx == 0 && dy == 0 {
                continue;
            }
            let dist = ((dx * dx + dy * dy) as f64).sqrt();
            offsets.push((dy, dx, 1.0 / (cfg.omega * dist)));
        }
    }

    let (w, h) = (field.width, field.height);
    let mut raw = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut raw, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let (cx, cy) = (field.vx[i], field.vy[i]);
            let mut acc = 0.0;
            for &(dy, dx, inv) in &offsets {
                let uy = y as isize + dy;
                let ux = x as isize + dx;
                if uy < 0 || uy >= h as isize || ux < 0 || ux >= w as isize {
                    continue;
                }
                let j = uy as usize * w + ux as usize;
                let dvx = cx - field.vx[j];
                let dvy = cy - field.vy[j];
                acc += (dvx * dvx + dvy * dvy).sqrt() * inv;
            }
            *out = acc;
        }
    });

    Ok(GrayMap {
        width: w,
        height: h,
        data: raw,
    }
    .min_max_normalize())
}

/// Same computation without the final normalization; used by tests that
/// check scale and shift behavior.
pub fn contrast_raw(field: &FlowField, cfg: &ContrastConfig) -> Result<Vec<f64>> {
    if cfg.radius < 1 {
        return Err(Error::Invalid("contrast radius must be >= 1".into()));
    }
    field.validate()?;
    let r = cfg.radius as isize;
    let (w, h) = (field.width, field.height);
    let mut raw = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = (y * w as isize + x) as usize;
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (uy, ux) = (y + dy, x + dx);
                    if uy < 0 || uy >= h as isize || ux < 0 || ux >= w as isize {
                        continue;
                    }
                    let j = (uy * w as isize + ux) as usize;
                    let dvx = field.vx[i] - field.vx[j];
                    let dvy = field.vy[i] - field.vy[j];
                    let dist = ((dx * dx + dy * dy) as f64).sqrt();
                    acc += (dvx * dvx + dvy * dvy).sqrt() / (cfg.omega * dist);
                }
            }
            raw[i] = acc;
        }
    }
    Ok(raw)
}

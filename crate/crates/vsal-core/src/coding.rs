//! Color coding of flow fields: hue encodes orientation, saturation encodes
//! magnitude, using the 55-anchor Middlebury wheel. Zero motion renders
//! white; magnitudes at or above the normalizer render the fully saturated
//! wheel color.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Frame;
use crate::par;

pub const ANCHOR_COUNT: usize = 55;

/// Sector sizes around the hue loop, starting at pure red.
const SECTORS: [(usize, [f64; 3], [f64; 3]); 6] = [
    // (steps, from, towards)
    (15, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]), // red -> yellow
    (6, [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),  // yellow -> green
    (4, [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),  // green -> cyan
    (11, [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]), // cyan -> blue
    (13, [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]), // blue -> magenta
    (6, [1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),  // magenta -> red
];

#[derive(Debug, Clone)]
pub struct ColorWheel {
    anchors: Vec<[f64; 3]>,
}

impl ColorWheel {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchor(&self, i: usize) -> [f64; 3] {
        self.anchors[i]
    }

    /// Color for one flow vector, normalized by `max_mag`.
    pub fn color_for(&self, vx: f64, vy: f64, max_mag: f64) -> [f64; 3] {
        let mag = vx.hypot(vy);
        let rad = (mag / max_mag).min(1.0);
        // Standard flow-visualization angle convention.
        let angle = (-vy).atan2(-vx) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (ANCHOR_COUNT - 1) as f64;
        let k0 = (fk.floor() as usize).min(ANCHOR_COUNT - 1);
        let k1 = (k0 + 1) % ANCHOR_COUNT;
        let f = fk - k0 as f64;
        let mut out = [0.0; 3];
        for c in 0..3 {
            let col = (1.0 - f) * self.anchors[k0][c] + f * self.anchors[k1][c];
            // (1 - rad) + rad*col blends from white toward the wheel color
            // and reproduces the anchor exactly at rad = 1.
            out[c] = (1.0 - rad) + rad * col;
        }
        out
    }
}

/// Deterministic wheel construction by linear interpolation across the six
/// hue sectors.
pub fn build_wheel() -> ColorWheel {
    let mut anchors = Vec::with_capacity(ANCHOR_COUNT);
    for (steps, from, towards) in SECTORS {
        for i in 0..steps {
            let f = i as f64 / steps as f64;
            anchors.push([
                from[0] + (towards[0] - from[0]) * f,
                from[1] + (towards[1] - from[1]) * f,
                from[2] + (towards[2] - from[2]) * f,
            ]);
        }
    }
    debug_assert_eq!(anchors.len(), ANCHOR_COUNT);
    ColorWheel { anchors }
}

/// 99th-percentile flow magnitude with a small floor, used when no explicit
/// normalizer is given.
pub fn auto_max_magnitude(fields: &[&FlowField]) -> f64 {
    let mut mags: Vec<f64> = fields
        .iter()
        .flat_map(|f| (0..f.vx.len()).map(|i| f.magnitude_at(i)))
        .collect();
    if mags.is_empty() {
        return 1e-6;
    }
    mags.sort_unstable_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * 0.99).round() as usize;
    mags[idx].max(1e-6)
}

/// Render a flow field as an RGB frame. `max_mag = None` normalizes by the
/// field's own 99th-percentile magnitude.
pub fn color_code(field: &FlowField, max_mag: Option<f64>) -> Result<Frame> {
    field.validate()?;
    let max_mag = match max_mag {
        Some(m) if m > 0.0 => m,
        Some(m) => {
            return Err(Error::Invalid(format!(
                "max magnitude must be positive, got {m}"
            )))
        }
        None => auto_max_magnitude(&[field]),
    };
    let wheel = build_wheel();
    let w = field.width;
    let mut data = vec![0.0; w * field.height * 3];
    par::for_each_chunk_mut(&mut data, w * 3, |y, row| {
        for x in 0..w {
            let i = y * w + x;
            let rgb = wheel.color_for(field.vx[i], field.vy[i], max_mag);
            row[x * 3..x * 3 + 3].copy_from_slice(&rgb);
        }
    });
    Frame::new(w, field.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wheel_has_55_anchors() {
        assert_eq!(build_wheel().len(), ANCHOR_COUNT);
    }

    #[test]
    fn anchor_zero_is_pure_red() {
        assert_eq!(build_wheel().anchor(0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn anchor_after_first_sector_is_pure_yellow() {
        // Independently sum the sector sizes: the first sector spans 15
        // steps, so index 15 is the start of the second sector.
        let sector_sizes = [15, 6, 4, 11, 13, 6];
        assert_eq!(sector_sizes.iter().sum::<usize>(), ANCHOR_COUNT);
        let first_sector: usize = sector_sizes[0];
        assert_eq!(build_wheel().anchor(first_sector), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_flow_renders_white() {
        let field = FlowField::zeros(4, 3);
        let frame = color_code(&field, None).unwrap();
        assert!(frame.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn saturated_magnitude_hits_wheel_color_exactly() {
        let mut field = FlowField::zeros(1, 1);
        field.vx[0] = 3.0;
        field.vy[0] = 0.0;
        let frame = color_code(&field, Some(1.5)).unwrap();
        // Magnitude >= max_mag clamps the radius to 1, so the output is the
        // wheel color for that orientation with no white remaining.
        let wheel = build_wheel();
        let want = wheel.color_for(3.0, 0.0, 3.0);
        assert_eq!(frame.pixel(0, 0), want);
        assert_eq!(frame.pixel(0, 0), wheel.anchor(0));
    }

    #[test]
    fn unit_flow_matches_scalar_transcription() {
        // Independent scalar transcription of the wheel lookup.
        let mut field = FlowField::zeros(1, 1);
        field.vx[0] = 1.0;
        field.vy[0] = 0.0;
        let got = color_code(&field, Some(1.0)).unwrap();

        let wheel = build_wheel();
        let angle = (-0.0f64).atan2(-1.0) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * 54.0;
        let k0 = fk.floor() as usize;
        let k1 = (k0 + 1) % 55;
        let f = fk - k0 as f64;
        for c in 0..3 {
            let col = (1.0 - f) * wheel.anchor(k0)[c] + f * wheel.anchor(k1)[c];
            let want = (1.0 - 1.0) + 1.0 * col;
            assert!((got.data[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_saturation() {
        // Saturation here is the Chebyshev distance from white; every wheel
        // color has a zero channel, so it equals the clamped radius.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut field = FlowField::zeros(8, 8);
        for i in 0..field.vx.len() {
            field.vx[i] = rng.random_range(-2.0..2.0);
            field.vy[i] = rng.random_range(-2.0..2.0);
        }
        let theta: f64 = 1.1;
        let mut rotated = FlowField::zeros(8, 8);
        for i in 0..field.vx.len() {
            rotated.vx[i] = field.vx[i] * theta.cos() - field.vy[i] * theta.sin();
            rotated.vy[i] = field.vx[i] * theta.sin() + field.vy[i] * theta.cos();
        }
        let a = color_code(&field, Some(2.0)).unwrap();
        let b = color_code(&rotated, Some(2.0)).unwrap();
        for i in 0..64 {
            let sat = |f: &Frame| {
                (0..3)
                    .map(|c| 1.0 - f.data[i * 3 + c])
                    .fold(0.0f64, f64::max)
            };
            assert!((sat(&a) - sat(&b)).abs() < 1e-9);
        }
    }

    #[test]
    fn power_of_two_rescaling_is_bitwise_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut field = FlowField::zeros(6, 6);
        for i in 0..field.vx.len() {
            field.vx[i] = rng.random_range(-3.0..3.0);
            field.vy[i] = rng.random_range(-3.0..3.0);
        }
        for k in [0.5, 2.0, 4.0] {
            let mut scaled = field.clone();
            for v in scaled.vx.iter_mut().chain(scaled.vy.iter_mut()) {
                *v *= k;
            }
            let a = color_code(&field, Some(1.7)).unwrap();
            let b = color_code(&scaled, Some(1.7 * k)).unwrap();
            assert_eq!(a.data, b.data, "scale {k}");
        }
    }

    #[test]
    fn output_is_valid_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut field = FlowField::zeros(9, 5);
        for i in 0..field.vx.len() {
            field.vx[i] = rng.random_range(-10.0..10.0);
            field.vy[i] = rng.random_range(-10.0..10.0);
        }
        let frame = color_code(&field, None).unwrap();
        frame.validate().unwrap();
    }

    #[test]
    fn rejects_non_finite_flow() {
        let mut field = FlowField::zeros(2, 2);
        field.vx[1] = f64::NAN;
        assert!(color_code(&field, Some(1.0)).is_err());
    }

    #[test]
    fn rejects_non_positive_max_mag() {
        let field = FlowField::zeros(2, 2);
        assert!(color_code(&field, Some(0.0)).is_err());
    }
}

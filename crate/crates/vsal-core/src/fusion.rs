//! Low-level saliency fusion and keyframe selection.
//!
//! The non-overlapping ratio scores how consistently the motion and color
//! maps agree; frames scoring below the threshold become keyframes whose
//! fused low-level map serves as pseudo ground truth for online learning.

use crate::error::{Error, Result};
use crate::image::GrayMap;
use crate::par;

/// Activation threshold of the hard filter.
pub const HARD_THRESHOLD: f64 = 0.1;
/// Division guard in the per-pixel ratio.
pub const NR_CONSTANT: f64 = 0.001;
/// Frames with a ratio below this are keyframes.
pub const NR_KEYFRAME_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone)]
pub struct KeyframeRecord {
    pub frame_index: usize,
    pub nr: f64,
    /// Fused low-level map used as the pseudo ground truth.
    pub low_level_map: GrayMap,
}

#[derive(Debug, Clone)]
pub struct NrOptions {
    /// Values below this are zeroed by the hard filter.
    pub hard_threshold: f64,
    pub constant: f64,
    /// Alternative reading of the filter: binarize surviving values to 1
    /// instead of keeping them.
    pub binarize: bool,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions {
            hard_threshold: HARD_THRESHOLD,
            constant: NR_CONSTANT,
            binarize: false,
        }
    }
}

fn shape_check(a: &GrayMap, b: &GrayMap, what: &str) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            what.to_string(),
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(())
}

/// Element-wise product of the motion and color maps.
pub fn fuse_low_level(ms: &GrayMap, cs: &GrayMap) -> Result<GrayMap> {
    shape_check(ms, cs, "low-level fusion inputs")?;
    Ok(GrayMap {
        width: ms.width,
        height: ms.height,
        data: ms.data.iter().zip(&cs.data).map(|(a, b)| a * b).collect(),
    })
}

/// Values below `t` become 0; values at or above keep their original value.
pub fn hard_threshold(map: &GrayMap, t: f64) -> GrayMap {
    GrayMap {
        width: map.width,
        height: map.height,
        data: map
            .data
            .iter()
            .map(|&v| if v < t { 0.0 } else { v })
            .collect(),
    }
}

/// Non-overlapping ratio between two saliency maps, in [0,1]. Low values
/// mean the maps agree. The size-invariant factor divides by the count of
/// active pixels of the filtered sum; when both maps are empty the pair
/// carries no evidence and scores the maximally untrusted 1.0.
pub fn non_overlap_ratio(ms: &GrayMap, cs: &GrayMap, opts: &NrOptions) -> Result<f64> {
    shape_check(ms, cs, "non-overlap ratio inputs")?;
    let t = opts.hard_threshold;
    let filter = |v: f64| -> f64 {
        if v < t {
            0.0
        } else if opts.binarize {
            1.0
        } else {
            v
        }
    };
    let mut numerator = 0.0;
    let mut active = 0usize;
    for (&m, &c) in ms.data.iter().zip(&cs.data) {
        let a = filter(m);
        let b = filter(c);
        if filter(m + c) != 0.0 {
            active += 1;
        }
        if a != b {
            numerator += (a - b).abs() / (a + b + opts.constant);
        }
    }
    if active == 0 {
        return Ok(1.0);
    }
    let nr = numerator / active as f64;
    assert!((0.0..=1.0).contains(&nr), "non-overlap ratio {nr} out of [0,1]");
    Ok(nr)
}

/// Score every frame and keep those below the threshold, preserving order.
/// Each record carries the fused low-level map.
pub fn select_keyframes(
    ms: &[GrayMap],
    cs: &[GrayMap],
    nr_threshold: f64,
    opts: &NrOptions,
) -> Result<Vec<KeyframeRecord>> {
    if ms.len() != cs.len() {
        return Err(Error::shape("motion vs color map counts", ms.len(), cs.len()));
    }
    let scored: Vec<Result<(f64, GrayMap)>> = par::map_indices(ms.len(), |i| {
        let nr = non_overlap_ratio(&ms[i], &cs[i], opts)?;
        let ls = fuse_low_level(&ms[i], &cs[i])?;
        Ok((nr, ls))
    });
    let mut records = Vec::new();
    for (i, entry) in scored.into_iter().enumerate() {
        let (nr, ls) = entry?;
        if nr < nr_threshold {
            records.push(KeyframeRecord {
                frame_index: i,
                nr,
                low_level_map: ls,
            });
        }
    }
    Ok(records)
}

/// Per-frame scores for all frames (selected or not), for reporting.
pub fn score_frames(ms: &[GrayMap], cs: &[GrayMap], opts: &NrOptions) -> Result<Vec<f64>> {
    if ms.len() != cs.len() {
        return Err(Error::shape("motion vs color map counts", ms.len(), cs.len()));
    }
    par::map_indices(ms.len(), |i| non_overlap_ratio(&ms[i], &cs[i], opts))
        .into_iter()
        .collect()
}

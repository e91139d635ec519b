//! Saliency metrics: precision/recall over the 256-level threshold sweep,
//! the precision-biased F-measure, and mean absolute error.
//!
//! Predictions are quantized to 8 bits before thresholding. Precision of an
//! empty prediction is 1 by convention; frames with empty ground truth are
//! excluded from aggregation.

use crate::error::{Error, Result};
use crate::image::{quantize_u8, GrayMap};
use crate::par;

pub const BETA_SQ: f64 = 0.3;
pub const THRESHOLD_LEVELS: usize = 256;

/// How per-frame precision/recall feed the F-measure sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FAveraging {
    /// Average precision and recall over frames per threshold, then compute
    /// F (the default protocol).
    #[default]
    PooledPrecisionRecall,
    /// Compute F per frame per threshold, then average the F values.
    PerFrameF,
}

fn require_binary(g: &GrayMap) -> Result<()> {
    if g.data.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("ground truth is not binary".into()));
    }
    Ok(())
}

fn shape_check(s: &GrayMap, g: &GrayMap) -> Result<()> {
    if (s.width, s.height) != (g.width, g.height) {
        return Err(Error::shape(
            "prediction vs ground truth shape",
            format!("{}x{}", g.width, g.height),
            format!("{}x{}", s.width, s.height),
        ));
    }
    Ok(())
}

/// Byte histograms of the prediction over ground-truth positives and
/// negatives; suffix sums give the confusion matrix at every threshold.
struct FrameHist {
    pos: [u64; 256],
    neg: [u64; 256],
    gt_positives: u64,
}

fn frame_hist(s: &GrayMap, g: &GrayMap) -> FrameHist {
    let mut h = FrameHist {
        pos: [0; 256],
        neg: [0; 256],
        gt_positives: 0,
    };
    for (&sv, &gv) in s.data.iter().zip(&g.data) {
        let b = quantize_u8(sv) as usize;
        if gv == 1.0 {
            h.pos[b] += 1;
            h.gt_positives += 1;
        } else {
            h.neg[b] += 1;
        }
    }
    h
}

impl FrameHist {
    /// (tp, fp, fn) when binarizing at byte value > t.
    fn confusion(&self, t: usize) -> (u64, u64, u64) {
        let tp: u64 = self.pos[t + 1..].iter().sum();
        let fp: u64 = self.neg[t + 1..].iter().sum();
        (tp, fp, self.gt_positives - tp)
    }
}

fn precision_recall(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    (precision, recall)
}

/// Precision and recall of one prediction against binary ground truth at an
/// integer threshold. Errors on empty ground truth (such frames are excluded
/// from aggregation by the sweep functions).
pub fn pr_at_threshold(s: &GrayMap, g: &GrayMap, t: u8) -> Result<(f64, f64)> {
    shape_check(s, g)?;
    require_binary(g)?;
    let h = frame_hist(s, g);
    if h.gt_positives == 0 {
        return Err(Error::Invalid(
            "ground truth is empty; frame is excluded from aggregation".into(),
        ));
    }
    let (tp, fp, fn_) = h.confusion(t as usize);
    Ok(precision_recall(tp, fp, fn_))
}

/// Precision-biased F-measure; 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (beta_sq + 1.0) * precision * recall / denom
    }
}

/// Full threshold sweep over aligned prediction/ground-truth lists. Returns
/// (maxF, avgF) where avgF is the mean F over all 256 thresholds, plus the
/// per-threshold pooled precision/recall curves.
pub fn threshold_sweep(
    preds: &[GrayMap],
    gts: &[GrayMap],
    beta_sq: f64,
    mode: FAveraging,
) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    if preds.is_empty() || gts.is_empty() {
        return Err(Error::Invalid("metric input lists are empty".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::shape("prediction vs ground truth counts", gts.len(), preds.len()));
    }
    for (s, g) in preds.iter().zip(gts) {
        shape_check(s, g)?;
        require_binary(g)?;
    }
    let hists: Vec<FrameHist> = par::map_indices(preds.len(), |i| frame_hist(&preds[i], &gts[i]));
    let kept: Vec<&FrameHist> = hists.iter().filter(|h| h.gt_positives > 0).collect();
    if kept.is_empty() {
        return Err(Error::Invalid(
            "every frame has empty ground truth; nothing to evaluate".into(),
        ));
    }

    let mut curves = Vec::with_capacity(THRESHOLD_LEVELS);
    let mut max_f = 0.0f64;
    let mut sum_f = 0.0f64;
    for t in 0..THRESHOLD_LEVELS {
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut f_sum = 0.0;
        for h in &kept {
            let (tp, fp, fn_) = h.confusion(t);
            let (p, r) = precision_recall(tp, fp, fn_);
            p_sum += p;
            r_sum += r;
            f_sum += f_measure(p, r, beta_sq);
        }
        let n = kept.len() as f64;
        let (p_avg, r_avg) = (p_sum / n, r_sum / n);
        let f = match mode {
            FAveraging::PooledPrecisionRecall => f_measure(p_avg, r_avg, beta_sq),
            FAveraging::PerFrameF => f_sum / n,
        };
        curves.push((p_avg, r_avg));
        max_f = max_f.max(f);
        sum_f += f;
    }
    Ok((max_f, sum_f / THRESHOLD_LEVELS as f64, curves))
}

/// (maxF, avgF) over aligned lists with the default pooled protocol.
pub fn max_avg_f(preds: &[GrayMap], gts: &[GrayMap], beta_sq: f64) -> Result<(f64, f64)> {
    let (max_f, avg_f, _) = threshold_sweep(preds, gts, beta_sq, FAveraging::default())?;
    Ok((max_f, avg_f))
}

/// Mean absolute per-pixel difference.
pub fn mae(s: &GrayMap, g: &GrayMap) -> Result<f64> {
    shape_check(s, g)?;
    let sum: f64 = s.data.iter().zip(&g.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / (s.width * s.height) as f64)
}

/// Scores of one named sequence.
#[derive(Debug, Clone)]
pub struct SequenceScores {
    pub name: String,
    pub max_f: f64,
    pub avg_f: f64,
    pub mae: f64,
    pub n_frames: usize,
    /// Pooled precision/recall per threshold.
    pub pr_curve: Vec<(f64, f64)>,
}

/// Report over one or more sequences plus the cross-sequence aggregate.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub beta_sq: f64,
    pub mode: FAveraging,
    pub sequences: Vec<SequenceScores>,
}

/// Evaluate one sequence: predictions are resized (bilinear) to the ground
/// truth resolution before any metric. Frames with empty ground truth are
/// excluded from the F sweep; MAE averages over all frames.
pub fn evaluate_sequence(
    name: &str,
    preds: &[GrayMap],
    gts: &[GrayMap],
    beta_sq: f64,
    mode: FAveraging,
) -> Result<SequenceScores> {
    if preds.len() != gts.len() {
        return Err(Error::shape("prediction vs ground truth counts", gts.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::Invalid(format!("sequence {name} has no frames")));
    }
    let resized: Vec<GrayMap> = preds
        .iter()
        .zip(gts)
        .map(|(s, g)| s.resize_bilinear(g.width, g.height))
        .collect::<Result<_>>()?;
    let (max_f, avg_f, pr_curve) = threshold_sweep(&resized, gts, beta_sq, mode)?;
    let maes: Vec<f64> = resized
        .iter()
        .zip(gts)
        .map(|(s, g)| mae(s, g))
        .collect::<Result<_>>()?;
    let mae = maes.iter().sum::<f64>() / maes.len() as f64;
    Ok(SequenceScores {
        name: name.to_string(),
        max_f,
        avg_f,
        mae,
        n_frames: preds.len(),
        pr_curve,
    })
}

impl EvalReport {
    pub fn aggregate(&self) -> (f64, f64, f64) {
        let n = self.sequences.len() as f64;
        let max_f = self.sequences.iter().map(|s| s.max_f).sum::<f64>() / n;
        let avg_f = self.sequences.iter().map(|s| s.avg_f).sum::<f64>() / n;
        let mae = self.sequences.iter().map(|s| s.mae).sum::<f64>() / n;
        (max_f, avg_f, mae)
    }

    /// Byte-stable CSV: header comments, column row, one row per sequence,
    /// then the aggregate.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# avgF = mean F over the 256 integer thresholds; maxF = max over thresholds\n");
        let mode = match self.mode {
            FAveraging::PooledPrecisionRecall => {
                "precision/recall averaged over frames per threshold, then F"
            }
            FAveraging::PerFrameF => "per-frame F averaged per threshold",
        };
        out.push_str(&format!("# protocol: {mode}; beta_sq = {}\n", self.beta_sq));
        out.push_str("sequence,maxF,avgF,MAE,n_frames\n");
        for s in &self.sequences {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                s.name, s.max_f, s.avg_f, s.mae, s.n_frames
            ));
        }
        if self.sequences.len() > 1 {
            let (max_f, avg_f, mae) = self.aggregate();
            let n: usize = self.sequences.iter().map(|s| s.n_frames).sum();
            out.push_str(&format!("aggregate,{max_f:.6},{avg_f:.6},{mae:.6},{n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(w: usize, h: usize, seed: u64) -> GrayMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayMap {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    fn random_map(w: usize, h: usize, seed: u64) -> GrayMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayMap {
            width: w,
            height: h,
            data: (0..w * h).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn perfect_binary_prediction_scores_one() {
        let g = random_binary(8, 8, 1);
        for t in [0u8, 100, 254] {
            let (p, r) = pr_at_threshold(&g, &g, t).unwrap();
            assert_eq!((p, r), (1.0, 1.0));
        }
        let (max_f, _) = max_avg_f(&[g.clone()], &[g], BETA_SQ).unwrap();
        assert!((max_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_convention() {
        let s = GrayMap::filled(4, 4, 0.0);
        let mut g = GrayMap::filled(4, 4, 0.0);
        g.data[3] = 1.0;
        let (p, r) = pr_at_threshold(&s, &g, 0).unwrap();
        assert_eq!((p, r), (1.0, 0.0));
    }

    #[test]
    fn empty_ground_truth_is_excluded() {
        let s = random_map(4, 4, 2);
        let g = GrayMap::filled(4, 4, 0.0);
        assert!(pr_at_threshold(&s, &g, 10).is_err());
        // A sweep with one empty-GT frame and one normal frame uses only the
        // normal frame.
        let g2 = random_binary(4, 4, 3);
        let (max_f_mixed, avg_f_mixed) =
            max_avg_f(&[s.clone(), s.clone()], &[g, g2.clone()], BETA_SQ).unwrap();
        let (max_f_single, avg_f_single) = max_avg_f(&[s], &[g2], BETA_SQ).unwrap();
        assert_eq!(max_f_mixed, max_f_single);
        assert_eq!(avg_f_mixed, avg_f_single);
    }

    #[test]
    fn pr_matches_scalar_confusion_oracle() {
        for seed in 0..10 {
            let s = random_map(9, 7, 50 + seed);
            let g = random_binary(9, 7, 60 + seed);
            if g.data.iter().all(|&v| v == 0.0) {
                continue;
            }
            for t in [0u8, 31, 128, 200, 255] {
                let (p, r) = pr_at_threshold(&s, &g, t).unwrap();
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for (sv, gv) in s.data.iter().zip(&g.data) {
                    let pred = quantize_u8(*sv) > t;
                    match (pred, *gv == 1.0) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                let want_p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
                let want_r = tp as f64 / (tp + fn_) as f64;
                assert_eq!((p, r), (want_p, want_r));
            }
        }
    }

    #[test]
    fn f_measure_identities() {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            assert!((f_measure(p, p, BETA_SQ) - p).abs() < 1e-12, "p = {p}");
        }
        assert_eq!(f_measure(1.0, 0.0, BETA_SQ), 0.0);
        let f = f_measure(0.9, 0.6, BETA_SQ);
        let want = 1.3 * 0.9 * 0.6 / (0.3 * 0.9 + 0.6);
        assert!((f - want).abs() < 1e-12);
        assert!((f - 0.702 / 0.87).abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_brute_force_oracle() {
        let preds: Vec<GrayMap> = (0..3).map(|i| random_map(8, 6, 70 + i)).collect();
        let gts: Vec<GrayMap> = (0..3).map(|i| random_binary(8, 6, 80 + i)).collect();
        let (max_f, avg_f) = max_avg_f(&preds, &gts, BETA_SQ).unwrap();

        // Brute-force re-count per threshold from scratch.
        let mut best = 0.0f64;
        let mut sum = 0.0f64;
        for t in 0..=255u32 {
            let mut ps = 0.0;
            let mut rs = 0.0;
            let mut n = 0.0;
            for (s, g) in preds.iter().zip(&gts) {
                if g.data.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for (sv, gv) in s.data.iter().zip(&g.data) {
                    let pred = quantize_u8(*sv) as u32 > t;
                    match (pred, *gv == 1.0) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        _ => {}
                    }
                }
                ps += if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
                rs += tp as f64 / (tp + fn_) as f64;
                n += 1.0;
            }
            let f = f_measure(ps / n, rs / n, BETA_SQ);
            best = best.max(f);
            sum += f;
        }
        assert!((max_f - best).abs() < 1e-12);
        assert!((avg_f - sum / 256.0).abs() < 1e-12);
    }

    #[test]
    fn constant_half_prediction_matches_oracle() {
        let s = GrayMap::filled(8, 8, 0.5);
        let mut g = GrayMap::filled(8, 8, 0.0);
        for i in 0..32 {
            g.data[i] = 1.0;
        }
        let (max_f, avg_f) = max_avg_f(&[s], &[g], BETA_SQ).unwrap();
        // Byte 128: thresholds 0..=127 predict everything (p = 0.5, r = 1),
        // 128..=255 predict nothing (p = 1, r = 0).
        let f_low = f_measure(0.5, 1.0, BETA_SQ);
        assert!((max_f - f_low).abs() < 1e-12);
        assert!((avg_f - f_low * 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_f_invariant_under_monotone_level_remap() {
        // Predictions quantized to a limited level set, remapped through a
        // strictly increasing level table: the sweep covers all cut points,
        // so maxF cannot move.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let levels: Vec<f64> = vec![0.0, 0.1, 0.3, 0.55, 0.8, 1.0];
        let remap: Vec<f64> = vec![0.05, 0.2, 0.4, 0.6, 0.9, 1.0];
        let n = 64;
        let pred = GrayMap {
            width: 8,
            height: 8,
            data: (0..n).map(|_| levels[rng.random_range(0..levels.len())]).collect(),
        };
        let remapped = GrayMap {
            width: 8,
            height: 8,
            data: pred
                .data
                .iter()
                .map(|v| remap[levels.iter().position(|l| l == v).unwrap()])
                .collect(),
        };
        let g = random_binary(8, 8, 6);
        let (max_a, _) = max_avg_f(&[pred], &[g.clone()], BETA_SQ).unwrap();
        let (max_b, _) = max_avg_f(&[remapped], &[g], BETA_SQ).unwrap();
        assert_eq!(max_a, max_b);
    }

    #[test]
    fn mae_basics_and_oracle() {
        let g = random_binary(6, 6, 8);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        let s = GrayMap::filled(6, 6, 0.5);
        let z = GrayMap::filled(6, 6, 0.0);
        assert!((mae(&s, &z).unwrap() - 0.5).abs() < 1e-15);
        let a = random_map(6, 6, 9);
        let b = random_map(6, 6, 10);
        let got = mae(&a, &b).unwrap();
        let mut want = 0.0;
        for i in 0..36 {
            want += (a.data[i] - b.data[i]).abs();
        }
        want /= 36.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let a = random_map(6, 6, 11);
        let g = random_binary(6, 6, 12);
        let mut perm: Vec<usize> = (0..36).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in (1..36).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffle = |m: &GrayMap| GrayMap {
            width: 6,
            height: 6,
            data: perm.iter().map(|&i| m.data[i]).collect(),
        };
        let (sa, ga) = (shuffle(&a), shuffle(&g));
        assert_eq!(mae(&a, &g).unwrap(), mae(&sa, &ga).unwrap());
        assert_eq!(
            pr_at_threshold(&a, &g, 77).unwrap(),
            pr_at_threshold(&sa, &ga, 77).unwrap()
        );
    }

    #[test]
    fn report_csv_is_byte_stable() {
        let preds: Vec<GrayMap> = (0..2).map(|i| random_map(8, 8, 90 + i)).collect();
        let gts: Vec<GrayMap> = (0..2).map(|i| random_binary(8, 8, 95 + i)).collect();
        let make = || {
            let scores = evaluate_sequence("seq", &preds, &gts, BETA_SQ, FAveraging::default())
                .unwrap();
            EvalReport {
                beta_sq: BETA_SQ,
                mode: FAveraging::default(),
                sequences: vec![scores],
            }
            .to_csv()
        };
        assert_eq!(make(), make());
        assert!(make().starts_with("# avgF"));
    }

    #[test]
    fn evaluate_resizes_prediction_to_gt_resolution() {
        let pred = GrayMap::filled(4, 4, 0.8);
        let g = random_binary(8, 8, 97);
        let scores =
            evaluate_sequence("s", &[pred], &[g], BETA_SQ, FAveraging::default()).unwrap();
        assert_eq!(scores.n_frames, 1);
        assert!(scores.mae > 0.0);
    }

    #[test]
    fn rejects_non_binary_gt_and_empty_lists() {
        let s = random_map(4, 4, 20);
        let g = random_map(4, 4, 21);
        assert!(pr_at_threshold(&s, &g, 0).is_err());
        assert!(max_avg_f(&[], &[], BETA_SQ).is_err());
    }
}

//! Training losses: summed multi-head cross-entropy with soft targets, and
//! the batched Euclidean loss used during per-sequence fine-tuning.

use crate::error::{Error, Result};
use crate::image::GrayMap;

/// Probabilities are clamped away from 0 and 1 before taking logs so loss
/// values are finite and reproducible.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Gradient with respect to each head probability map.
    pub head_grads: Vec<Vec<f64>>,
}

/// Total cross-entropy summed over heads and pixels. Targets may be soft
/// (in [0,1]); for binary targets this is the usual per-pixel form.
pub fn cross_entropy_loss(heads: &[GrayMap], target: &GrayMap) -> Result<CrossEntropy> {
    if heads.is_empty() {
        return Err(Error::Invalid("cross-entropy needs at least one head".into()));
    }
    for (k, head) in heads.iter().enumerate() {
        if (head.width, head.height) != (target.width, target.height) {
            return Err(Error::shape(
                format!("head {k} vs target shape"),
                format!("{}x{}", target.width, target.height),
                format!("{}x{}", head.width, head.height),
            ));
        }
    }
    let mut loss = 0.0;
    let mut head_grads = Vec::with_capacity(heads.len());
    for head in heads {
        let mut grad = vec![0.0; head.data.len()];
        for (i, (&p, &g)) in head.data.iter().zip(&target.data).enumerate() {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
            // Flat where the clamp is active, matching the loss surface.
            grad[i] = if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                (pc - g) / (pc * (1.0 - pc))
            };
        }
        head_grads.push(grad);
    }
    Ok(CrossEntropy { loss, head_grads })
}

/// Batched Euclidean loss `sum_n ||target_n - pred_n||^2 / (2N)` with
/// per-sample gradients `(pred - target) / N`.
pub fn euclidean_loss(preds: &[GrayMap], targets: &[GrayMap]) -> Result<(f64, Vec<Vec<f64>>)> {
    if preds.is_empty() {
        return Err(Error::Invalid("euclidean loss needs a non-empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape("batch sizes", preds.len(), targets.len()));
    }
    let n = preds.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        if (p.width, p.height) != (t.width, t.height) {
            return Err(Error::shape(
                format!("batch item {i} shape"),
                format!("{}x{}", t.width, t.height),
                format!("{}x{}", p.width, p.height),
            ));
        }
        let mut grad = vec![0.0; p.data.len()];
        for (j, (&pv, &tv)) in p.data.iter().zip(&t.data).enumerate() {
            let d = tv - pv;
            loss += d * d;
            grad[j] = (pv - tv) / n;
        }
        grads.push(grad);
    }
    Ok((loss / (2.0 * n), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_of(data: Vec<f64>) -> GrayMap {
        GrayMap {
            width: data.len(),
            height: 1,
            data,
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let head = map_of(vec![1.0 - 1e-9; 4]);
        let target = map_of(vec![1.0; 4]);
        let ce = cross_entropy_loss(&[head], &target).unwrap();
        assert!(ce.loss / 4.0 <= 1e-6, "per-pixel loss {}", ce.loss / 4.0);
    }

    #[test]
    fn half_probability_against_one_is_ln_two() {
        let ce = cross_entropy_loss(&[map_of(vec![0.5])], &map_of(vec![1.0])).unwrap();
        assert!((ce.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = GrayMap {
            width: 8,
            height: 8,
            data: (0..64).map(|_| rng.random::<f64>()).collect(),
        };
        // Stay away from the interval ends: the finite-difference truncation
        // term h^2/(3p^2) itself crosses 1e-4 near p = 0.05.
        let heads: Vec<GrayMap> = (0..3)
            .map(|_| GrayMap {
                width: 8,
                height: 8,
                data: (0..64).map(|_| rng.random_range(0.2..0.8)).collect(),
            })
            .collect();
        let ce = cross_entropy_loss(&heads, &target).unwrap();
        let h = 1e-3;
        for k in 0..3 {
            for i in (0..64).step_by(7) {
                let mut plus = heads.clone();
                plus[k].data[i] += h;
                let mut minus = heads.clone();
                minus[k].data[i] -= h;
                let lp = cross_entropy_loss(&plus, &target).unwrap().loss;
                let lm = cross_entropy_loss(&minus, &target).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = ce.head_grads[k][i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "head {k} pixel {i}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn euclidean_zero_when_equal() {
        let a = map_of(vec![0.3, 0.7]);
        let (loss, grads) = euclidean_loss(&[a.clone()], &[a]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn euclidean_single_pixel_value() {
        // N = 1, pred 0.2, target 0.8 -> (1/2)(0.6)^2 = 0.18
        let (loss, grads) =
            euclidean_loss(&[map_of(vec![0.2])], &[map_of(vec![0.8])]).unwrap();
        assert!((loss - 0.18).abs() < 1e-15);
        assert!((grads[0][0] - (0.2 - 0.8)).abs() < 1e-15);
    }

    #[test]
    fn euclidean_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let preds: Vec<GrayMap> = (0..4)
            .map(|_| map_of((0..16).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let targets: Vec<GrayMap> = (0..4)
            .map(|_| map_of((0..16).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let (_, grads) = euclidean_loss(&preds, &targets).unwrap();
        let h = 1e-5;
        for n in 0..4 {
            for i in 0..16 {
                let mut plus = preds.clone();
                plus[n].data[i] += h;
                let mut minus = preds.clone();
                minus[n].data[i] -= h;
                let lp = euclidean_loss(&plus, &targets).unwrap().0;
                let lm = euclidean_loss(&minus, &targets).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grads[n][i] - fd).abs() / grads[n][i].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-6, "sample {n} pixel {i}");
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let a = map_of(vec![0.5; 3]);
        let b = map_of(vec![0.5; 4]);
        assert!(cross_entropy_loss(&[a.clone()], &b).is_err());
        assert!(euclidean_loss(&[a], &[b]).is_err());
    }
}

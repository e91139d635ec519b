//! Per-sequence online learning: clone the color model into a twin, fit the
//! twin to keyframe pseudo ground truth with the Euclidean loss, then fuse
//! its predictions with the low-level maps. The source model is never
//! touched, and twins never outlive their sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::KeyframeRecord;
use crate::image::{Frame, GrayMap};
use crate::net::{euclidean_loss, sgd_step, NetGrads, NetParams, SgdConfig};
use crate::par;

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    /// Iteration budget multiplier: the twin trains for `lambda * K`
    /// iterations, K being the keyframe count.
    pub lambda: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            lambda: 8,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub twin: NetParams,
    /// False when no keyframes existed; the pipeline then falls back to the
    /// low-level maps as final output.
    pub adapted: bool,
    /// One Euclidean-loss value per iteration.
    pub losses: Vec<f64>,
}

/// Fine-tune a twin of `color` on the keyframes' low-level maps. Each
/// iteration draws `batch_size` keyframes uniformly with replacement
/// (seeded) and takes one SGD step on the batched Euclidean loss between the
/// twin's head-averaged prediction and the pseudo ground truth.
pub fn online_finetune(
    color: &NetParams,
    keyframes: &[KeyframeRecord],
    frames: &[Frame],
    cfg: &OnlineConfig,
) -> Result<OnlineOutcome> {
    if cfg.lambda < 1 {
        return Err(Error::Invalid("lambda must be >= 1".into()));
    }
    if cfg.batch_size < 1 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    let mut twin = color.clone();
    twin.reset_momentum();
    if keyframes.is_empty() {
        return Ok(OnlineOutcome {
            twin,
            adapted: false,
            losses: Vec::new(),
        });
    }
    for kf in keyframes {
        if kf.frame_index >= frames.len() {
            return Err(Error::Invalid(format!(
                "keyframe index {} out of range ({} frames)",
                kf.frame_index,
                frames.len()
            )));
        }
    }

    let sgd = SgdConfig {
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        ..SgdConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let iterations = cfg.lambda * keyframes.len();
    let mut losses = Vec::with_capacity(iterations);
    let head_count = crate::net::HEAD_COUNT as f64;

    for _ in 0..iterations {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..keyframes.len()))
            .collect();
        // Forward passes are independent; run them in parallel and reduce in
        // batch order.
        let passes = par::map_slice(&picks, |&k| {
            let kf = &keyframes[k];
            twin.forward_cached(&frames[kf.frame_index])
        });
        let mut preds = Vec::with_capacity(picks.len());
        let mut caches = Vec::with_capacity(picks.len());
        for pass in passes {
            let (out, cache) = pass?;
            preds.push(out.prediction);
            caches.push(cache);
        }
        let targets: Vec<GrayMap> = picks
            .iter()
            .map(|&k| keyframes[k].low_level_map.clone())
            .collect();
        let (loss, pred_grads) = euclidean_loss(&preds, &targets)?;

        // The loss sums over pixels; optimize its per-pixel mean so the
        // stock learning rate is resolution-independent.
        let scale = 1.0 / (twin.arch.input_w * twin.arch.input_h) as f64;
        let sample_grads = par::map_indices(picks.len(), |n| {
            // The prediction is the head mean, so each head receives the
            // prediction gradient divided by the head count.
            let per_head: Vec<f64> = pred_grads[n]
                .iter()
                .map(|g| g * scale / head_count)
                .collect();
            let upstream = vec![per_head.clone(), per_head.clone(), per_head];
            twin.backward(&caches[n], &upstream)
        });
        let mut total = NetGrads::zeros_like(&twin);
        for g in sample_grads {
            total.add_assign(&g?);
        }
        sgd_step(&mut twin, &total, &sgd)?;
        losses.push(loss);
    }

    Ok(OnlineOutcome {
        twin,
        adapted: true,
        losses,
    })
}

/// Final fusion: element-wise product of the twin's prediction and the
/// low-level map.
pub fn final_fuse(twin_prediction: &GrayMap, low_level: &GrayMap) -> Result<GrayMap> {
    if (twin_prediction.width, twin_prediction.height) != (low_level.width, low_level.height) {
        return Err(Error::shape(
            "final fusion inputs",
            format!("{}x{}", low_level.width, low_level.height),
            format!("{}x{}", twin_prediction.width, twin_prediction.height),
        ));
    }
    Ok(GrayMap {
        width: low_level.width,
        height: low_level.height,
        data: twin_prediction
            .data
            .iter()
            .zip(&low_level.data)
            .map(|(a, b)| a * b)
            .collect(),
    })
}

//! Training stages that produce the two branch models: pretraining the color
//! model on still frames, and fine-tuning a copy of it on color-coded flow
//! so it predicts motion saliency. The source model is never mutated; the
//! motion model is frozen once adapted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Frame, GrayMap};
use crate::net::{
    cross_entropy_loss, init, sgd_step, NetArch, NetParams, SgdConfig,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub sgd: SgdConfig,
    /// Horizontal-flip augmentation (flips input and target together).
    pub augment_hflip: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            sgd: SgdConfig::new(learning_rate, seed),
            augment_hflip: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// One total-loss value per iteration.
    pub losses: Vec<f64>,
}

fn check_sample_dims(arch: NetArch, frames: &[Frame], gts: &[GrayMap]) -> Result<()> {
    for (i, (f, g)) in frames.iter().zip(gts).enumerate() {
        if (f.width, f.height) != (arch.input_w, arch.input_h)
            || (g.width, g.height) != (arch.input_w, arch.input_h)
        {
            return Err(Error::shape(
                format!("training sample {i}"),
                format!("{}x{}", arch.input_w, arch.input_h),
                format!("{}x{} / {}x{}", f.width, f.height, g.width, g.height),
            ));
        }
    }
    Ok(())
}

/// Single-sample SGD over the multi-head cross-entropy, one seeded uniform
/// draw (plus an optional flip coin) per iteration.
fn run_cross_entropy_training(
    params: &mut NetParams,
    frames: &[Frame],
    gts: &[GrayMap],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sgd.seed);
    let mut log = TrainLog::default();
    for _ in 0..cfg.iterations {
        let idx = rng.random_range(0..frames.len());
        let flip = cfg.augment_hflip && rng.random::<f64>() < 0.5;
        let (frame, gt);
        let (frame_ref, gt_ref) = if flip {
            frame = frames[idx].hflip();
            gt = gts[idx].hflip();
            (&frame, &gt)
        } else {
            (&frames[idx], &gts[idx])
        };
        let (out, cache) = params.forward_cached(frame_ref)?;
        let ce = cross_entropy_loss(&out.side_maps, gt_ref)?;
        // The loss sums over pixels; optimize its per-pixel mean so the
        // stock learning rates are resolution-independent.
        let scale = 1.0 / (params.arch.input_w * params.arch.input_h) as f64;
        let upstream: Vec<Vec<f64>> = ce
            .head_grads
            .iter()
            .map(|g| g.iter().map(|v| v * scale).collect())
            .collect();
        let grads = params.backward(&cache, &upstream)?;
        sgd_step(params, &grads, &cfg.sgd)?;
        log.losses.push(ce.loss);
    }
    Ok(log)
}

/// Train a color saliency model from scratch on (frame, binary mask) pairs.
pub fn pretrain_color(
    samples: &[(Frame, GrayMap)],
    arch: NetArch,
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainLog)> {
    if samples.is_empty() {
        return Err(Error::Invalid("pretraining set is empty".into()));
    }
    let frames: Vec<Frame> = samples.iter().map(|(f, _)| f.clone()).collect();
    let gts: Vec<GrayMap> = samples.iter().map(|(_, g)| g.clone()).collect();
    check_sample_dims(arch, &frames, &gts)?;
    for (i, g) in gts.iter().enumerate() {
        if g.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid(format!(
                "pretraining ground truth {i} is not binary"
            )));
        }
    }
    let mut params = init(arch, cfg.sgd.seed);
    let log = run_cross_entropy_training(&mut params, &frames, &gts, cfg)?;
    Ok((params, log))
}

/// Clone the color model and fine-tune the clone on color-coded flow frames
/// against the moving-object masks. The source model is untouched; the
/// returned motion model is used frozen from here on.
pub fn finetune_motion(
    color: &NetParams,
    coded: &[Frame],
    gts: &[GrayMap],
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainLog)> {
    if coded.len() != gts.len() {
        return Err(Error::shape("coded frames vs ground truths", coded.len(), gts.len()));
    }
    if coded.is_empty() {
        return Err(Error::Invalid("motion fine-tuning set is empty".into()));
    }
    check_sample_dims(color.arch, coded, gts)?;
    let mut params = color.clone();
    params.reset_momentum();
    let log = run_cross_entropy_training(&mut params, coded, gts, cfg)?;
    Ok((params, log))
}

/// Head-averaged motion saliency for one color-coded flow frame.
pub fn motion_saliency(motion: &NetParams, coded: &Frame) -> Result<GrayMap> {
    Ok(motion.forward(coded)?.prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Tiny colored-square corpus at the given size.
    fn square_corpus(n: usize, size: usize, seed: u64) -> Vec<(Frame, GrayMap)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut frame = Frame::filled(size, size, [0.4, 0.4, 0.4]);
                let mut gt = GrayMap::filled(size, size, 0.0);
                let side = size / 4;
                let x0 = rng.random_range(0..size - side);
                let y0 = rng.random_range(0..size - side);
                for px in frame.data.iter_mut() {
                    *px = (*px + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                }
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        let i = (y * size + x) * 3;
                        frame.data[i] = 0.9;
                        frame.data[i + 1] = 0.15;
                        frame.data[i + 2] = 0.1;
                        gt.data[y * size + x] = 1.0;
                    }
                }
                (frame, gt)
            })
            .collect()
    }

    #[test]
    fn pretraining_reduces_loss() {
        let samples = square_corpus(20, 32, 1);
        let arch = NetArch::new(32, 32).unwrap();
        let cfg = TrainConfig::new(2000, 1e-2, 7);
        let (_, log) = pretrain_color(&samples, arch, &cfg).unwrap();
        assert_eq!(log.losses.len(), 2000);
        // Smoothed endpoints to damp single-sample noise.
        let first: f64 = log.losses[..5].iter().sum::<f64>() / 5.0;
        let last: f64 = log.losses[log.losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(
            last < 0.25 * first,
            "loss went from {first} to {last}, expected < 25%"
        );
    }

    #[test]
    fn single_sample_separates_object_from_background() {
        let samples = square_corpus(1, 32, 2);
        let arch = NetArch::new(32, 32).unwrap();
        let cfg = TrainConfig::new(500, 1e-2, 9);
        let (params, _) = pretrain_color(&samples, arch, &cfg).unwrap();
        let pred = params.forward(&samples[0].0).unwrap().prediction;
        let gt = &samples[0].1;
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for (p, g) in pred.data.iter().zip(&gt.data) {
            if *g > 0.5 {
                inside += p;
                n_in += 1;
            } else {
                outside += p;
                n_out += 1;
            }
        }
        assert!(inside / n_in as f64 > outside / n_out as f64);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let samples = square_corpus(3, 16, 3);
        let arch = NetArch::new(16, 16).unwrap();
        let cfg = TrainConfig::new(0, 1e-2, 21);
        let (params, log) = pretrain_color(&samples, arch, &cfg).unwrap();
        assert!(log.losses.is_empty());
        assert_eq!(params, init(arch, 21));
    }

    #[test]
    fn empty_training_set_is_invalid() {
        let arch = NetArch::new(16, 16).unwrap();
        let cfg = TrainConfig::new(10, 1e-2, 0);
        assert!(pretrain_color(&[], arch, &cfg).is_err());
    }

    #[test]
    fn finetune_leaves_source_untouched_and_logs_every_iteration() {
        let samples = square_corpus(4, 16, 4);
        let arch = NetArch::new(16, 16).unwrap();
        let color = init(arch, 5);
        let color_before = color.clone();
        let frames: Vec<Frame> = samples.iter().map(|(f, _)| f.clone()).collect();
        let gts: Vec<GrayMap> = samples.iter().map(|(_, g)| g.clone()).collect();
        let cfg = TrainConfig::new(40, 1e-2, 6);
        let (motion, log) = finetune_motion(&color, &frames, &gts, &cfg).unwrap();
        assert_eq!(color, color_before);
        assert_eq!(log.losses.len(), 40);
        assert_ne!(motion, color);
    }

    #[test]
    fn finetune_zero_iterations_is_weight_identical_clone() {
        let arch = NetArch::new(16, 16).unwrap();
        let color = init(arch, 8);
        let samples = square_corpus(2, 16, 9);
        let frames: Vec<Frame> = samples.iter().map(|(f, _)| f.clone()).collect();
        let gts: Vec<GrayMap> = samples.iter().map(|(_, g)| g.clone()).collect();
        let cfg = TrainConfig::new(0, 1e-2, 10);
        let (motion, _) = finetune_motion(&color, &frames, &gts, &cfg).unwrap();
        for (a, b) in motion.layers.iter().zip(&color.layers) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
    }

    #[test]
    fn adaptation_is_deterministic() {
        let samples = square_corpus(4, 16, 12);
        let arch = NetArch::new(16, 16).unwrap();
        let cfg = TrainConfig::new(30, 1e-2, 13);
        let (a, _) = pretrain_color(&samples, arch, &cfg).unwrap();
        let (b, _) = pretrain_color(&samples, arch, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_length_mismatch() {
        let arch = NetArch::new(16, 16).unwrap();
        let color = init(arch, 1);
        let samples = square_corpus(2, 16, 2);
        let frames: Vec<Frame> = samples.iter().map(|(f, _)| f.clone()).collect();
        let gts: Vec<GrayMap> = samples[..1].iter().map(|(_, g)| g.clone()).collect();
        let cfg = TrainConfig::new(5, 1e-2, 3);
        assert!(finetune_motion(&color, &frames, &gts, &cfg).is_err());
    }

    #[test]
    fn motion_saliency_is_head_average() {
        let arch = NetArch::new(16, 16).unwrap();
        let p = init(arch, 14);
        let frame = Frame::filled(16, 16, [0.2, 0.8, 0.5]);
        let out = p.forward(&frame).unwrap();
        let ms = motion_saliency(&p, &frame).unwrap();
        for i in 0..ms.data.len() {
            let mean = (out.side_maps[0].data[i] + out.side_maps[1].data[i] + out.side_maps[2].data[i]) / 3.0;
            assert!((ms.data[i] - mean).abs() < 1e-12);
        }
    }
}

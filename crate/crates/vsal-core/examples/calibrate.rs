//! Calibration harness for the acceptance-scale experiments (not shipped
//! behavior; run manually with --release).

use std::time::Instant;

use vsal_core::adapt::{finetune_motion, motion_saliency, pretrain_color, TrainConfig};
use vsal_core::coding::color_code;
use vsal_core::contrast::{contrast_motion_saliency, ContrastConfig};
use vsal_core::eval::{evaluate_sequence, FAveraging, BETA_SQ};
use vsal_core::flow::{sequence_flow, FlowConfig};
use vsal_core::fusion::{fuse_low_level, select_keyframes, NrOptions};
use vsal_core::image::{Frame, GrayMap};
use vsal_core::net::{NetArch, NetParams};
use vsal_core::online::{final_fuse, online_finetune, OnlineConfig};
use vsal_core::pipeline::derive_seed;
use vsal_core::synth::{gen_pretrain_corpus, gen_synthetic, ObjectKind, SyntheticSpec};

const SEED: u64 = 2024;

fn train_fixture() -> (NetParams, NetParams) {
    let cache = std::path::Path::new("/tmp/vsal-calib");
    std::fs::create_dir_all(cache).unwrap();
    let (color_path, motion_path) = (cache.join("color.weights"), cache.join("motion.weights"));
    if color_path.exists() && motion_path.exists() {
        println!("using cached fixture weights from {}", cache.display());
        return (
            vsal_core::net::load_params(&color_path).unwrap(),
            vsal_core::net::load_params(&motion_path).unwrap(),
        );
    }
    let arch = NetArch::new(64, 64).unwrap();
    let t0 = Instant::now();
    let corpus = gen_pretrain_corpus(120, 64, 64, derive_seed(SEED, "pretrain-corpus")).unwrap();
    let cfg = TrainConfig::new(2000, 1e-2, derive_seed(SEED, "pretrain"));
    let (color, log) = pretrain_color(&corpus, arch, &cfg).unwrap();
    println!(
        "pretrain: {:?}, loss {:.1} -> {:.1}",
        t0.elapsed(),
        log.losses[0],
        log.losses.last().unwrap()
    );

    let t0 = Instant::now();
    let kinds = [
        ObjectKind::CamouflagedMoving,
        ObjectKind::ColoredMoving,
        ObjectKind::ColoredMovingWithDistractor,
    ];
    let motions: [(f64, f64); 5] = [(1.5, 0.0), (-2.0, 0.0), (0.0, 1.5), (1.0, 1.0), (2.0, -1.0)];
    let flow_cfg = FlowConfig::default();
    let mut coded = Vec::new();
    let mut gts = Vec::new();
    let mut c = 0;
    while coded.len() < 180 {
        let spec = SyntheticSpec {
            frames: 20,
            kind: kinds[c % 3],
            motion: motions[c % 5],
            ..SyntheticSpec::new(kinds[c % 3], 20, derive_seed(SEED, &format!("clip-{c}")))
        };
        let clip = gen_synthetic(&spec).unwrap();
        let fields = sequence_flow(&clip.frames, &flow_cfg).unwrap();
        for (i, f) in fields.iter().enumerate() {
            coded.push(color_code(f, None).unwrap());
            gts.push(clip.gt[i].clone());
        }
        c += 1;
    }
    println!("adapt corpus: {} pairs in {:?}", coded.len(), t0.elapsed());
    let t0 = Instant::now();
    let cfg = TrainConfig::new(2000, 1e-2, derive_seed(SEED, "adapt"));
    let (motion, log) = finetune_motion(&color, &coded, &gts, &cfg).unwrap();
    println!(
        "adapt: {:?}, loss {:.1} -> {:.1}",
        t0.elapsed(),
        log.losses[0],
        log.losses.last().unwrap()
    );
    // Training-health: non-overlapping window-50 means.
    let wins: Vec<f64> = log
        .losses
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let non_inc = wins.windows(2).filter(|w| w[1] <= w[0]).count();
    println!(
        "adapt loss windows nonincreasing: {}/{}",
        non_inc,
        wins.len() - 1
    );
    (color, motion)
}

fn main() {
    let t_all = Instant::now();
    let (color, motion) = train_fixture();
    let flow_cfg = FlowConfig::default();

    // --- camouflage suite: learned motion vs contrast baseline ---
    let mut net_preds = Vec::new();
    let mut base_preds = Vec::new();
    let mut gts_all = Vec::new();
    for s in 0..3 {
        let spec = SyntheticSpec {
            motion: [(2.0, 0.0), (-1.5, 0.5), (0.0, 2.0)][s],
            ..SyntheticSpec::new(ObjectKind::CamouflagedMoving, 20, derive_seed(SEED, &format!("cam-{s}")))
        };
        let clip = gen_synthetic(&spec).unwrap();
        let fields = sequence_flow(&clip.frames, &flow_cfg).unwrap();
        for i in 0..clip.frames.len() {
            let pair = i.saturating_sub(1);
            let coded = color_code(&fields[pair], None).unwrap();
            net_preds.push(motion_saliency(&motion, &coded).unwrap());
            base_preds.push(contrast_motion_saliency(&fields[pair], &ContrastConfig::default()).unwrap());
            gts_all.push(clip.gt[i].clone());
        }
    }
    let net_scores =
        evaluate_sequence("net", &net_preds, &gts_all, BETA_SQ, FAveraging::default()).unwrap();
    let base_scores =
        evaluate_sequence("base", &base_preds, &gts_all, BETA_SQ, FAveraging::default()).unwrap();
    println!(
        "camouflage: net maxF {:.3} vs baseline maxF {:.3} (gap {:.3})",
        net_scores.max_f,
        base_scores.max_f,
        net_scores.max_f - base_scores.max_f
    );

    // --- distractor suite: component ordering + lambda sweep ---
    let mut mae_cs = Vec::new();
    let mut mae_ls = Vec::new();
    let mut mae_fs = Vec::new();
    let mut kf_counts = Vec::new();
    let mut maxf8 = Vec::new();
    let mut maxf1 = Vec::new();
    for s in 0..10u64 {
        let spec = SyntheticSpec {
            motion: if s % 2 == 0 { (2.0, 0.0) } else { (-1.5, 1.0) },
            ..SyntheticSpec::new(
                ObjectKind::ColoredMovingWithDistractor,
                20,
                derive_seed(SEED, &format!("dis-{s}")),
            )
        };
        let clip = gen_synthetic(&spec).unwrap();
        let fields = sequence_flow(&clip.frames, &flow_cfg).unwrap();
        let n = clip.frames.len();
        let mut ms = Vec::new();
        let mut cs = Vec::new();
        for i in 0..n {
            let coded = color_code(&fields[i.saturating_sub(1)], None).unwrap();
            ms.push(motion_saliency(&motion, &coded).unwrap());
            cs.push(color.forward(&clip.frames[i]).unwrap().prediction);
        }
        let ls: Vec<GrayMap> = (0..n)
            .map(|i| fuse_low_level(&ms[i], &cs[i]).unwrap())
            .collect();
        let keyframes = select_keyframes(&ms, &cs, 0.6, &NrOptions::default()).unwrap();
        kf_counts.push(keyframes.len());

        let run = |lambda: usize| -> Vec<GrayMap> {
            let cfg = OnlineConfig {
                lambda,
                seed: derive_seed(SEED, &format!("online-{s}")),
                ..OnlineConfig::default()
            };
            let out = online_finetune(&color, &keyframes, &clip.frames, &cfg).unwrap();
            (0..n)
                .map(|i| {
                    let em = out.twin.forward(&clip.frames[i]).unwrap().prediction;
                    if out.adapted {
                        final_fuse(&em, &ls[i]).unwrap()
                    } else {
                        ls[i].clone()
                    }
                })
                .collect()
        };
        let fs8 = run(8);
        let fs1 = run(1);

        let seq_mae = |preds: &[GrayMap]| -> f64 {
            preds
                .iter()
                .zip(&clip.gt)
                .map(|(p, g)| vsal_core::eval::mae(p, g).unwrap())
                .sum::<f64>()
                / n as f64
        };
        mae_cs.push(seq_mae(&cs));
        mae_ls.push(seq_mae(&ls));
        mae_fs.push(seq_mae(&fs8));
        maxf8.push(
            evaluate_sequence("f8", &fs8, &clip.gt, BETA_SQ, FAveraging::default())
                .unwrap()
                .max_f,
        );
        maxf1.push(
            evaluate_sequence("f1", &fs1, &clip.gt, BETA_SQ, FAveraging::default())
                .unwrap()
                .max_f,
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("keyframe counts: {kf_counts:?}");
    println!(
        "MAE: CS {:.4}  LS {:.4}  FS {:.4}",
        mean(&mae_cs),
        mean(&mae_ls),
        mean(&mae_fs)
    );
    let wins = mae_fs
        .iter()
        .zip(&mae_cs)
        .filter(|(f, c)| f < c)
        .count();
    println!("FS beats CS on {wins}/10 sequences");
    println!(
        "lambda sweep: maxF(8) {:.4} vs maxF(1) {:.4}",
        mean(&maxf8),
        mean(&maxf1)
    );
    for i in 0..10 {
        println!(
            "  seq {i}: kf {:2}  mae cs {:.4} ls {:.4} fs {:.4}   maxF8 {:.4} maxF1 {:.4}",
            kf_counts[i], mae_cs[i], mae_ls[i], mae_fs[i], maxf8[i], maxf1[i]
        );
    }
    println!("total {:?}", t_all.elapsed());
}

//! `vsal`: stage-by-stage driver and end-to-end pipeline for video salient
//! object detection. Exit codes: 0 success, 2 validation error, 1 runtime
//! error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use vsal_core::adapt::{finetune_motion, pretrain_color, TrainConfig};
use vsal_core::coding::{auto_max_magnitude, color_code};
use vsal_core::config::parse_config_file;
use vsal_core::contrast::{contrast_motion_saliency, ContrastConfig};
use vsal_core::error::{Error, Result};
use vsal_core::eval::{evaluate_sequence, EvalReport, FAveraging, BETA_SQ};
use vsal_core::flow::{read_flo, sequence_flow, write_flo, FlowConfig, FlowField};
use vsal_core::fusion::{fuse_low_level, score_frames, KeyframeRecord, NrOptions};
use vsal_core::image::{read_pgm, read_ppm, write_pgm, write_ppm, Frame, GrayMap};
use vsal_core::net::{load_params, save_params, NetArch};
use vsal_core::online::{final_fuse, online_finetune, OnlineConfig};
use vsal_core::pipeline::{
    derive_seed, list_numbered, parse_size, read_keyframe_csv, run_pipeline, PipelineConfig,
};
use vsal_core::synth::{gen_pretrain_corpus, gen_synthetic, write_clip, ObjectKind, SyntheticSpec};

#[derive(Parser)]
#[command(name = "vsal", version, about = "Video salient object detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FlowArgs {
    /// Smoothness weight of the flow solver
    #[arg(long, default_value_t = 15.0)]
    alpha: f64,
    /// Fixed-point iterations per pyramid level
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Pyramid levels
    #[arg(long, default_value_t = 3)]
    levels: usize,
}

impl FlowArgs {
    fn config(&self) -> FlowConfig {
        FlowConfig {
            alpha: self.alpha,
            iterations: self.iterations,
            pyramid_levels: self.levels,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip with ground-truth masks
    GenSynth {
        /// Output directory (creates frames/ and gt/)
        #[arg(long)]
        out: PathBuf,
        /// Object kind: camouflaged | colored | distractor
        #[arg(long, default_value = "colored")]
        kind: String,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        /// Clip resolution, e.g. 64x64
        #[arg(long, default_value = "64x64")]
        size: String,
        /// Object velocity in px/frame, e.g. 2,0
        #[arg(long, default_value = "2,0")]
        motion: String,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dense optical flow for every consecutive frame pair
    Flow {
        /// Directory of numbered .ppm frames
        #[arg(long)]
        frames: PathBuf,
        /// Output directory for NNNNN.flo files
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Render .flo fields as color-coded .ppm images
    Colorize {
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed magnitude normalizer (default: per-frame 99th percentile)
        #[arg(long, conflicts_with = "global_max")]
        max_mag: Option<f64>,
        /// Normalize over the whole sequence instead of per frame
        #[arg(long)]
        global_max: bool,
    },
    /// Contrast-based motion saliency baseline over .flo fields
    MotionBaseline {
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        radius: usize,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
    },
    /// Train the color saliency model (on given data or a generated corpus)
    PretrainColor {
        /// Output weight file
        #[arg(long)]
        out: PathBuf,
        /// Training frames (.ppm); omit to use a generated corpus
        #[arg(long, requires = "gt")]
        frames: Option<PathBuf>,
        /// Binary ground-truth masks (.pgm)
        #[arg(long, requires = "frames")]
        gt: Option<PathBuf>,
        /// Generated corpus size when no data is given
        #[arg(long, default_value_t = 200)]
        corpus_frames: usize,
        /// Network input size
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune a copy of the color model into a motion model
    AdaptMotion {
        #[arg(long)]
        color_weights: PathBuf,
        /// Directory of .flo fields or pre-coded .ppm flow images
        #[arg(long)]
        flows: PathBuf,
        /// Ground-truth masks (.pgm), aligned with the flow files
        #[arg(long)]
        gt: PathBuf,
        /// Output weight file
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score motion/color consistency and select keyframes
    Keyframes {
        /// Motion saliency maps (.pgm)
        #[arg(long)]
        ms: PathBuf,
        /// Color saliency maps (.pgm)
        #[arg(long)]
        cs: PathBuf,
        /// Output CSV (frame_index,nr,selected)
        #[arg(long)]
        out_csv: PathBuf,
        /// Directory for the fused low-level maps
        #[arg(long)]
        ls_out: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        nr_threshold: f64,
        /// Binarize the hard-threshold filter instead of keeping values
        #[arg(long)]
        binarize_t: bool,
    },
    /// Fine-tune a twin color model on keyframe pseudo ground truth
    Online {
        #[arg(long)]
        color_weights: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// keyframes.csv from the keyframes stage
        #[arg(long)]
        keyframes: PathBuf,
        /// Low-level maps directory
        #[arg(long)]
        ls: PathBuf,
        /// Output twin weight file
        #[arg(long)]
        out: PathBuf,
        /// Where to write the per-iteration loss CSV
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Write the twin's predictions here
        #[arg(long)]
        em_out: Option<PathBuf>,
        /// Write final fused maps here
        #[arg(long)]
        fs_out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        lambda: usize,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every stage end to end over one sequence
    Pipeline {
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Working directory for all stage outputs
        #[arg(long)]
        work: Option<PathBuf>,
        /// key = value config file; flags override file settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        color_weights: Option<PathBuf>,
        #[arg(long)]
        motion_weights: Option<PathBuf>,
        /// Train both models from a synthetic corpus first
        #[arg(long)]
        train_all: bool,
        #[arg(long)]
        input_size: Option<String>,
        #[arg(long)]
        flow_alpha: Option<f64>,
        #[arg(long)]
        flow_iterations: Option<usize>,
        #[arg(long)]
        flow_levels: Option<usize>,
        #[arg(long)]
        global_max: bool,
        #[arg(long)]
        nr_threshold: Option<f64>,
        #[arg(long)]
        binarize_t: bool,
        #[arg(long)]
        lambda: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        online_lr: Option<f64>,
        #[arg(long)]
        train_iterations: Option<usize>,
        #[arg(long)]
        train_corpus_frames: Option<usize>,
        #[arg(long)]
        train_lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip stages whose outputs already exist and hash-match
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate predictions against binary ground truth
    Eval {
        /// Prediction maps (.pgm), or a directory of per-sequence subdirs
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth masks (.pgm), same layout as --pred
        #[arg(long)]
        gt: PathBuf,
        /// Output report CSV
        #[arg(long)]
        out: PathBuf,
        /// Average per-frame F values instead of pooling precision/recall
        #[arg(long)]
        per_frame_f: bool,
    },
    /// Print the layer table of a weight file
    NetInfo {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            eprintln!("  caused by: {s}");
            src = s.source();
        }
        std::process::exit(if e.is_validation() { 2 } else { 1 });
    }
}

fn parse_motion(value: &str) -> Result<(f64, f64)> {
    let Some((x, y)) = value.split_once(',') else {
        return Err(Error::Invalid(format!(
            "motion must look like 2,0 got {value:?}"
        )));
    };
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad motion component {s:?}")))
    };
    Ok((parse(x)?, parse(y)?))
}

fn parse_kind(value: &str) -> Result<ObjectKind> {
    match value {
        "camouflaged" => Ok(ObjectKind::CamouflagedMoving),
        "colored" => Ok(ObjectKind::ColoredMoving),
        "distractor" => Ok(ObjectKind::ColoredMovingWithDistractor),
        other => Err(Error::Invalid(format!(
            "unknown object kind {other:?} (expected camouflaged | colored | distractor)"
        ))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Invalid(format!(
            "{what} directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    require_dir(dir, "frames")?;
    let files = list_numbered(dir, "ppm")?;
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .ppm frames in {}",
            dir.display()
        )));
    }
    files.iter().map(read_ppm).collect()
}

fn load_maps(dir: &Path, what: &str) -> Result<Vec<GrayMap>> {
    require_dir(dir, what)?;
    let files = list_numbered(dir, "pgm")?;
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .pgm maps in {}",
            dir.display()
        )));
    }
    files.iter().map(read_pgm).collect()
}

fn load_flows(dir: &Path) -> Result<Vec<FlowField>> {
    require_dir(dir, "flows")?;
    let files = list_numbered(dir, "flo")?;
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .flo fields in {}",
            dir.display()
        )));
    }
    files.iter().map(|p| read_flo(p)).collect()
}

/// Resize a mask to the network size, snapping back to binary.
fn resize_mask(gt: &GrayMap, w: usize, h: usize) -> Result<GrayMap> {
    let soft = gt.resize_bilinear(w, h)?;
    GrayMap::new(
        w,
        h,
        soft.data
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
    )
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth {
            out,
            kind,
            frames,
            size,
            motion,
            noise,
            seed,
        } => {
            let (width, height) = parse_size(&size)?;
            let spec = SyntheticSpec {
                width,
                height,
                frames,
                kind: parse_kind(&kind)?,
                motion: parse_motion(&motion)?,
                noise,
                seed,
            };
            let clip = gen_synthetic(&spec)?;
            write_clip(&clip, &out)?;
            println!(
                "wrote {} frames and masks under {}",
                clip.frames.len(),
                out.display()
            );
            Ok(())
        }

        Command::Flow { frames, out, flow } => {
            let loaded = load_frames(&frames)?;
            if loaded.len() < 2 {
                return Err(Error::Invalid(
                    "flow needs at least two frames".into(),
                ));
            }
            ensure_dir(&out)?;
            let fields = sequence_flow(&loaded, &flow.config())?;
            for (i, field) in fields.iter().enumerate() {
                write_flo(field, out.join(format!("{i:05}.flo")))?;
            }
            println!("wrote {} flow fields to {}", fields.len(), out.display());
            Ok(())
        }

        Command::Colorize {
            flows,
            out,
            max_mag,
            global_max,
        } => {
            let fields = load_flows(&flows)?;
            ensure_dir(&out)?;
            let normalizer = if global_max {
                Some(auto_max_magnitude(&fields.iter().collect::<Vec<_>>()))
            } else {
                max_mag
            };
            if let Some(m) = normalizer {
                if m <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "magnitude normalizer must be positive, got {m}"
                    )));
                }
            }
            for (i, field) in fields.iter().enumerate() {
                let coded = color_code(field, normalizer)?;
                write_ppm(&coded, out.join(format!("{i:05}.ppm")))?;
            }
            println!("wrote {} coded frames to {}", fields.len(), out.display());
            Ok(())
        }

        Command::MotionBaseline {
            flows,
            out,
            radius,
            omega,
        } => {
            let fields = load_flows(&flows)?;
            ensure_dir(&out)?;
            let cfg = ContrastConfig { radius, omega };
            for (i, field) in fields.iter().enumerate() {
                let map = contrast_motion_saliency(field, &cfg)?;
                write_pgm(&map, out.join(format!("{i:05}.pgm")))?;
            }
            println!("wrote {} baseline maps to {}", fields.len(), out.display());
            Ok(())
        }

        Command::PretrainColor {
            out,
            frames,
            gt,
            corpus_frames,
            size,
            iterations,
            lr,
            seed,
        } => {
            let (w, h) = parse_size(&size)?;
            let arch = NetArch::new(w, h)?;
            let samples: Vec<(Frame, GrayMap)> = match (frames, gt) {
                (Some(fdir), Some(gdir)) => {
                    let frames = load_frames(&fdir)?;
                    let masks = load_maps(&gdir, "ground truth")?;
                    if frames.len() != masks.len() {
                        return Err(Error::Invalid(format!(
                            "{} frames but {} masks",
                            frames.len(),
                            masks.len()
                        )));
                    }
                    frames
                        .iter()
                        .zip(&masks)
                        .map(|(f, g)| Ok((f.resize_bilinear(w, h)?, resize_mask(g, w, h)?)))
                        .collect::<Result<_>>()?
                }
                _ => gen_pretrain_corpus(corpus_frames, w, h, derive_seed(seed, "pretrain-corpus"))?,
            };
            let cfg = TrainConfig::new(iterations, lr, derive_seed(seed, "pretrain"));
            let (params, log) = pretrain_color(&samples, arch, &cfg)?;
            save_params(&params, &out)?;
            let (first, last) = (
                log.losses.first().copied().unwrap_or(0.0),
                log.losses.last().copied().unwrap_or(0.0),
            );
            println!(
                "trained color model on {} samples for {iterations} iterations (loss {first:.2} -> {last:.2}); wrote {}",
                samples.len(),
                out.display()
            );
            Ok(())
        }

        Command::AdaptMotion {
            color_weights,
            flows,
            gt,
            out,
            iterations,
            lr,
            seed,
        } => {
            let color = load_params(&color_weights)?;
            let (w, h) = (color.arch.input_w, color.arch.input_h);
            require_dir(&flows, "flows")?;
            // Accept either raw .flo fields (coded here) or pre-coded .ppm.
            let flo_files = list_numbered(&flows, "flo")?;
            let coded: Vec<Frame> = if flo_files.is_empty() {
                load_frames(&flows)?
                    .iter()
                    .map(|f| f.resize_bilinear(w, h))
                    .collect::<Result<_>>()?
            } else {
                flo_files
                    .iter()
                    .map(|p| color_code(&read_flo(p)?, None)?.resize_bilinear(w, h))
                    .collect::<Result<_>>()?
            };
            let masks: Vec<GrayMap> = load_maps(&gt, "ground truth")?
                .iter()
                .map(|g| resize_mask(g, w, h))
                .collect::<Result<_>>()?;
            if coded.len() != masks.len() {
                return Err(Error::Invalid(format!(
                    "{} flow inputs but {} masks",
                    coded.len(),
                    masks.len()
                )));
            }
            let cfg = TrainConfig::new(iterations, lr, derive_seed(seed, "adapt"));
            let (motion, _) = finetune_motion(&color, &coded, &masks, &cfg)?;
            save_params(&motion, &out)?;
            println!(
                "adapted motion model on {} coded frames; wrote {}",
                coded.len(),
                out.display()
            );
            Ok(())
        }

        Command::Keyframes {
            ms,
            cs,
            out_csv,
            ls_out,
            nr_threshold,
            binarize_t,
        } => {
            let ms_maps = load_maps(&ms, "motion saliency")?;
            let cs_maps = load_maps(&cs, "color saliency")?;
            if ms_maps.len() != cs_maps.len() {
                return Err(Error::Invalid(format!(
                    "{} motion maps but {} color maps",
                    ms_maps.len(),
                    cs_maps.len()
                )));
            }
            let opts = NrOptions {
                binarize: binarize_t,
                ..NrOptions::default()
            };
            let scores = score_frames(&ms_maps, &cs_maps, &opts)?;
            ensure_dir(&ls_out)?;
            let mut csv = String::from("frame_index,nr,selected\n");
            let mut selected = 0;
            for (i, nr) in scores.iter().enumerate() {
                let keep = *nr < nr_threshold;
                selected += usize::from(keep);
                csv.push_str(&format!("{i},{nr:.6},{}\n", u8::from(keep)));
                let ls = fuse_low_level(&ms_maps[i], &cs_maps[i])?;
                write_pgm(&ls, ls_out.join(format!("{i:05}.pgm")))?;
            }
            std::fs::write(&out_csv, csv).map_err(|e| Error::io(&out_csv, e))?;
            println!(
                "scored {} frames, {selected} keyframes; wrote {} and {}",
                scores.len(),
                out_csv.display(),
                ls_out.display()
            );
            Ok(())
        }

        Command::Online {
            color_weights,
            frames,
            keyframes,
            ls,
            out,
            loss_csv,
            em_out,
            fs_out,
            lambda,
            batch_size,
            lr,
            seed,
        } => {
            let color = load_params(&color_weights)?;
            let (w, h) = (color.arch.input_w, color.arch.input_h);
            let resized: Vec<Frame> = load_frames(&frames)?
                .iter()
                .map(|f| f.resize_bilinear(w, h))
                .collect::<Result<_>>()?;
            let ls_maps = load_maps(&ls, "low-level saliency")?;
            if ls_maps.len() != resized.len() {
                return Err(Error::Invalid(format!(
                    "{} frames but {} low-level maps",
                    resized.len(),
                    ls_maps.len()
                )));
            }
            let records: Vec<KeyframeRecord> = read_keyframe_csv(&keyframes)?
                .into_iter()
                .filter(|(_, _, sel)| *sel)
                .map(|(i, nr, _)| -> Result<KeyframeRecord> {
                    if i >= ls_maps.len() {
                        return Err(Error::Invalid(format!(
                            "keyframe index {i} out of range"
                        )));
                    }
                    Ok(KeyframeRecord {
                        frame_index: i,
                        nr,
                        low_level_map: ls_maps[i].resize_bilinear(w, h)?,
                    })
                })
                .collect::<Result<_>>()?;
            let cfg = OnlineConfig {
                lambda,
                batch_size,
                learning_rate: lr,
                seed: derive_seed(seed, "online"),
            };
            let outcome = online_finetune(&color, &records, &resized, &cfg)?;
            save_params(&outcome.twin, &out)?;
            if let Some(path) = loss_csv {
                let mut csv = String::from("iteration,loss\n");
                for (i, loss) in outcome.losses.iter().enumerate() {
                    csv.push_str(&format!("{i},{loss:.9}\n"));
                }
                std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            }
            if !outcome.adapted {
                println!("no keyframes selected: twin equals the source model (no-adaptation)");
            }
            if let Some(dir) = &em_out {
                ensure_dir(dir)?;
                for (i, frame) in resized.iter().enumerate() {
                    let em = outcome.twin.forward(frame)?.prediction;
                    write_pgm(&em, dir.join(format!("{i:05}.pgm")))?;
                }
            }
            if let Some(dir) = &fs_out {
                ensure_dir(dir)?;
                for (i, frame) in resized.iter().enumerate() {
                    let ls_small = ls_maps[i].resize_bilinear(w, h)?;
                    let fs = if outcome.adapted {
                        let em = outcome.twin.forward(frame)?.prediction;
                        final_fuse(&em, &ls_small)?
                    } else {
                        ls_small
                    };
                    write_pgm(&fs, dir.join(format!("{i:05}.pgm")))?;
                }
            }
            println!(
                "online fine-tuning: {} keyframes, {} iterations; wrote {}",
                records.len(),
                outcome.losses.len(),
                out.display()
            );
            Ok(())
        }

        Command::Pipeline {
            frames,
            work,
            config,
            color_weights,
            motion_weights,
            train_all,
            input_size,
            flow_alpha,
            flow_iterations,
            flow_levels,
            global_max,
            nr_threshold,
            binarize_t,
            lambda,
            batch_size,
            online_lr,
            train_iterations,
            train_corpus_frames,
            train_lr,
            seed,
            resume,
        } => {
            // Defaults, then the config file, then explicit flags. Weight
            // paths stay empty until the working directory is known so the
            // default can live under it.
            let mut cfg = PipelineConfig::new("", "");
            cfg.color_weights = PathBuf::new();
            cfg.motion_weights = PathBuf::new();
            if let Some(path) = &config {
                cfg.apply_config_map(&parse_config_file(path)?)?;
            }
            if let Some(v) = frames {
                cfg.frames_dir = v;
            }
            if let Some(v) = work {
                cfg.work_dir = v;
            }
            if let Some(v) = color_weights {
                cfg.color_weights = v;
            }
            if let Some(v) = motion_weights {
                cfg.motion_weights = v;
            }
            if cfg.color_weights.as_os_str().is_empty() {
                cfg.color_weights = cfg.work_dir.join("color.weights");
            }
            if cfg.motion_weights.as_os_str().is_empty() {
                cfg.motion_weights = cfg.work_dir.join("motion.weights");
            }
            if train_all {
                cfg.train_all = true;
            }
            if let Some(v) = input_size {
                cfg.input_size = parse_size(&v)?;
            }
            if let Some(v) = flow_alpha {
                cfg.flow.alpha = v;
            }
            if let Some(v) = flow_iterations {
                cfg.flow.iterations = v;
            }
            if let Some(v) = flow_levels {
                cfg.flow.pyramid_levels = v;
            }
            if global_max {
                cfg.coding_global_max = true;
            }
            if let Some(v) = nr_threshold {
                cfg.nr_threshold = v;
            }
            if binarize_t {
                cfg.nr_binarize = true;
            }
            if let Some(v) = lambda {
                cfg.online.lambda = v;
            }
            if let Some(v) = batch_size {
                cfg.online.batch_size = v;
            }
            if let Some(v) = online_lr {
                cfg.online.learning_rate = v;
            }
            if let Some(v) = train_iterations {
                cfg.train_iterations = v;
            }
            if let Some(v) = train_corpus_frames {
                cfg.train_corpus_frames = v;
            }
            if let Some(v) = train_lr {
                cfg.train_learning_rate = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if resume {
                cfg.resume = true;
            }
            if cfg.frames_dir.as_os_str().is_empty() {
                return Err(Error::Invalid(
                    "no frames directory (pass --frames or set `frames` in the config file)"
                        .into(),
                ));
            }
            if cfg.work_dir.as_os_str().is_empty() {
                return Err(Error::Invalid(
                    "no working directory (pass --work or set `work` in the config file)".into(),
                ));
            }
            let summary = run_pipeline(&cfg)?;
            println!(
                "pipeline complete: {} frames, {} keyframes, adapted = {}",
                summary.frame_count, summary.keyframe_count, summary.adapted
            );
            if !summary.stages_skipped.is_empty() {
                println!("skipped (up to date): {}", summary.stages_skipped.join(", "));
            }
            println!("final maps: {}", cfg.work_dir.join("fs").display());
            Ok(())
        }

        Command::Eval {
            pred,
            gt,
            out,
            per_frame_f,
        } => {
            require_dir(&pred, "prediction")?;
            require_dir(&gt, "ground truth")?;
            let mode = if per_frame_f {
                FAveraging::PerFrameF
            } else {
                FAveraging::PooledPrecisionRecall
            };
            // Multi-sequence when the ground-truth directory has subdirs.
            let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&gt)
                .map_err(|e| Error::io(&gt, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subdirs.sort();
            let mut sequences = Vec::new();
            if subdirs.is_empty() {
                let preds = load_maps(&pred, "prediction")?;
                let gts = load_maps(&gt, "ground truth")?;
                sequences.push(evaluate_sequence("sequence", &preds, &gts, BETA_SQ, mode)?);
            } else {
                for sub in subdirs {
                    let name = sub.file_name().unwrap().to_string_lossy().to_string();
                    let preds = load_maps(&pred.join(&name), "prediction")?;
                    let gts = load_maps(&sub, "ground truth")?;
                    sequences.push(evaluate_sequence(&name, &preds, &gts, BETA_SQ, mode)?);
                }
            }
            let report = EvalReport {
                beta_sq: BETA_SQ,
                mode,
                sequences,
            };
            std::fs::write(&out, report.to_csv()).map_err(|e| Error::io(&out, e))?;
            let (max_f, avg_f, mae) = report.aggregate();
            println!("maxF {max_f:.4}  avgF {avg_f:.4}  MAE {mae:.4}; wrote {}", out.display());
            Ok(())
        }

        Command::NetInfo { weights } => {
            let params = load_params(&weights)?;
            print!("{}", params.layer_table());
            println!(
                "input size: {}x{}",
                params.arch.input_w, params.arch.input_h
            );
            Ok(())
        }
    }
}

//! End-to-end orchestration: flow, coding, the two saliency branches,
//! low-level fusion, keyframe selection, online learning and final fusion.
//!
//! Stages communicate exclusively through files under the working directory,
//! so a resumed run sees byte-identical inputs to a fresh one. Each stage
//! records a manifest (config fingerprint plus output hashes); `resume`
//! skips stages whose manifests still match.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adapt::{finetune_motion, motion_saliency, pretrain_color, TrainConfig};
use crate::coding::{auto_max_magnitude, color_code};
use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::flow::{horn_schunck, read_flo, write_flo, FlowConfig};
use crate::fusion::{fuse_low_level, score_frames, KeyframeRecord, NrOptions};
use crate::image::{read_pgm, read_ppm, write_pgm, Frame, GrayMap};
use crate::net::{load_params, save_params, NetArch, NetParams};
use crate::online::{final_fuse, online_finetune, OnlineConfig};
use crate::par;
use crate::synth::{gen_pretrain_corpus, gen_synthetic, ObjectKind, SyntheticSpec};

/// Deterministic per-stage seed derivation from the master seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub frames_dir: PathBuf,
    pub work_dir: PathBuf,
    /// Network input size; frames and coded flow are resized to this.
    pub input_size: (usize, usize),
    pub flow: FlowConfig,
    /// Normalize the flow coding over the whole sequence instead of per
    /// frame.
    pub coding_global_max: bool,
    pub nr_threshold: f64,
    pub nr_binarize: bool,
    pub online: OnlineConfig,
    pub color_weights: PathBuf,
    pub motion_weights: PathBuf,
    /// Regenerate both models from a synthetic corpus before processing.
    pub train_all: bool,
    pub train_iterations: usize,
    pub train_corpus_frames: usize,
    pub train_learning_rate: f64,
    pub seed: u64,
    pub resume: bool,
}

impl PipelineConfig {
    pub fn new(frames_dir: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> PipelineConfig {
        let work_dir = work_dir.into();
        PipelineConfig {
            frames_dir: frames_dir.into(),
            color_weights: work_dir.join("color.weights"),
            motion_weights: work_dir.join("motion.weights"),
            work_dir,
            input_size: (64, 64),
            flow: FlowConfig::default(),
            coding_global_max: false,
            nr_threshold: crate::fusion::NR_KEYFRAME_THRESHOLD,
            nr_binarize: false,
            online: OnlineConfig::default(),
            train_all: false,
            train_iterations: 2000,
            train_corpus_frames: 200,
            train_learning_rate: 1e-2,
            seed: 0,
            resume: false,
        }
    }

    /// Apply `key = value` settings from a config map. Unknown keys are
    /// rejected. CLI flags should be applied after this so they win.
    pub fn apply_config_map(
        &mut self,
        map: &std::collections::BTreeMap<String, String>,
    ) -> Result<()> {
        for (key, value) in map {
            match key.as_str() {
                "frames" => self.frames_dir = PathBuf::from(value),
                "work" => self.work_dir = PathBuf::from(value),
                "input-size" => self.input_size = parse_size(value)?,
                "flow-alpha" => self.flow.alpha = parse_value(key, value)?,
                "flow-iterations" => self.flow.iterations = parse_value(key, value)?,
                "flow-levels" => self.flow.pyramid_levels = parse_value(key, value)?,
                "global-max" => self.coding_global_max = parse_value(key, value)?,
                "nr-threshold" => self.nr_threshold = parse_value(key, value)?,
                "binarize-t" => self.nr_binarize = parse_value(key, value)?,
                "lambda" => self.online.lambda = parse_value(key, value)?,
                "batch-size" => self.online.batch_size = parse_value(key, value)?,
                "online-lr" => self.online.learning_rate = parse_value(key, value)?,
                "color-weights" => self.color_weights = PathBuf::from(value),
                "motion-weights" => self.motion_weights = PathBuf::from(value),
                "train-all" => self.train_all = parse_value(key, value)?,
                "train-iterations" => self.train_iterations = parse_value(key, value)?,
                "train-corpus-frames" => self.train_corpus_frames = parse_value(key, value)?,
                "train-lr" => self.train_learning_rate = parse_value(key, value)?,
                "seed" => self.seed = parse_value(key, value)?,
                "resume" => self.resume = parse_value(key, value)?,
                _ => {
                    return Err(Error::Invalid(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.frames_dir.is_dir() {
            return Err(Error::Invalid(format!(
                "frames directory {} does not exist",
                self.frames_dir.display()
            )));
        }
        NetArch::new(self.input_size.0, self.input_size.1)?;
        if !(0.0..=1.0).contains(&self.nr_threshold) {
            return Err(Error::Invalid(format!(
                "NR threshold {} outside [0,1]",
                self.nr_threshold
            )));
        }
        if self.online.lambda < 1 || self.online.batch_size < 1 {
            return Err(Error::Invalid(
                "online lambda and batch size must be >= 1".into(),
            ));
        }
        if !self.train_all {
            for (what, path) in [
                ("color weights", &self.color_weights),
                ("motion weights", &self.motion_weights),
            ] {
                if !path.is_file() {
                    return Err(Error::Invalid(format!(
                        "{what} file {} does not exist (pass --train-all to generate)",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_size(value: &str) -> Result<(usize, usize)> {
    let Some((w, h)) = value.split_once('x') else {
        return Err(Error::Invalid(format!(
            "size must look like 64x64, got {value:?}"
        )));
    };
    Ok((parse_value("size width", w.trim())?, parse_value("size height", h.trim())?))
}

#[derive(Debug, Clone, Default)]
pub struct PipelineSummary {
    pub frame_count: usize,
    pub keyframe_count: usize,
    /// False means the no-adaptation fallback was taken and the final maps
    /// equal the low-level maps.
    pub adapted: bool,
    pub stages_run: Vec<String>,
    pub stages_skipped: Vec<String>,
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        e @ Error::Invalid(_) => e,
        other => Error::Format {
            path: PathBuf::from(stage),
            detail: format!("stage failed: {other}"),
        },
    }
}

/// Files with the given extension under `dir`, sorted by name.
pub fn list_numbered(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    files.sort();
    Ok(files)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn config_fingerprint(cfg: &PipelineConfig, frame_files: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(format!(
        "input={:?};flow={} {} {};global_max={};nr={} {};online={} {} {} ;train={} {} {} {};seed={}",
        cfg.input_size,
        cfg.flow.alpha,
        cfg.flow.iterations,
        cfg.flow.pyramid_levels,
        cfg.coding_global_max,
        cfg.nr_threshold,
        cfg.nr_binarize,
        cfg.online.lambda,
        cfg.online.batch_size,
        cfg.online.learning_rate,
        cfg.train_all,
        cfg.train_iterations,
        cfg.train_corpus_frames,
        cfg.train_learning_rate,
        cfg.seed,
    ));
    for f in frame_files {
        hasher.update(sha256_file(f)?.as_bytes());
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

struct StageRunner<'a> {
    work: &'a Path,
    fingerprint: String,
    resume: bool,
    run: Vec<String>,
    skipped: Vec<String>,
}

impl<'a> StageRunner<'a> {
    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.work.join(".manifest").join(format!("{stage}.txt"))
    }

    fn manifest_matches(&self, stage: &str) -> bool {
        let Ok(text) = fs::read_to_string(self.manifest_path(stage)) else {
            return false;
        };
        let mut lines = text.lines();
        if lines.next() != Some(format!("config={}", self.fingerprint).as_str()) {
            return false;
        }
        for line in lines {
            let Some((hash, rel)) = line.split_once("  ") else {
                return false;
            };
            let path = self.work.join(rel);
            match sha256_file(&path) {
                Ok(h) if h == hash => {}
                _ => return false,
            }
        }
        true
    }

    fn record(&self, stage: &str, outputs: &[PathBuf]) -> Result<()> {
        let dir = self.work.join(".manifest");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut text = format!("config={}\n", self.fingerprint);
        for path in outputs {
            let rel = path.strip_prefix(self.work).unwrap_or(path);
            text.push_str(&format!("{}  {}\n", sha256_file(path)?, rel.display()));
        }
        let path = self.manifest_path(stage);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Run or skip one stage. The closure returns the stage's output files.
    fn stage<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce() -> Result<Vec<PathBuf>>,
    {
        if self.resume && self.manifest_matches(name) {
            self.skipped.push(name.to_string());
            return Ok(());
        }
        let outputs = f().map_err(|e| stage_err(name, e))?;
        self.record(name, &outputs)?;
        self.run.push(name.to_string());
        Ok(())
    }
}

fn load_model(path: &Path, arch: NetArch) -> Result<NetParams> {
    let params = load_params(path)?;
    if params.arch != arch {
        return Err(Error::Invalid(format!(
            "weights {} were trained for {}x{}, pipeline runs at {}x{}",
            path.display(),
            params.arch.input_w,
            params.arch.input_h,
            arch.input_w,
            arch.input_h
        )));
    }
    Ok(params)
}

/// Build the synthetic corpora and train both models, saving them to the
/// configured weight paths.
fn train_models(cfg: &PipelineConfig, arch: NetArch) -> Result<Vec<PathBuf>> {
    let (w, h) = cfg.input_size;
    let corpus = gen_pretrain_corpus(
        cfg.train_corpus_frames.max(1),
        w,
        h,
        derive_seed(cfg.seed, "pretrain-corpus"),
    )?;
    let pre_cfg = TrainConfig::new(
        cfg.train_iterations,
        cfg.train_learning_rate,
        derive_seed(cfg.seed, "pretrain"),
    );
    let (color, _) = pretrain_color(&corpus, arch, &pre_cfg)?;
    save_params(&color, &cfg.color_weights)?;

    // Mixed moving-object clips; flow pairs become the adaptation corpus.
    // Clip length is capped so the trajectory fits the frame at any object
    // size the generator may draw.
    let kinds = [
        ObjectKind::CamouflagedMoving,
        ObjectKind::ColoredMoving,
        ObjectKind::ColoredMovingWithDistractor,
    ];
    let motions: [(f64, f64); 5] = [(1.5, 0.0), (-2.0, 0.0), (0.0, 1.5), (1.0, 1.0), (2.0, -1.0)];
    let min_dim = w.min(h) as f64;
    let mut coded_frames = Vec::new();
    let mut gts = Vec::new();
    let target = cfg.train_corpus_frames.max(1);
    let mut c = 0usize;
    while coded_frames.len() < target && c < 1000 {
        let motion = motions[c % motions.len()];
        let speed = motion.0.abs().max(motion.1.abs()).max(0.5);
        let max_len = ((0.72 * min_dim - 4.0) / speed + 1.0).floor() as usize;
        let spec = SyntheticSpec {
            width: w,
            height: h,
            frames: 25.min(max_len).max(2),
            kind: kinds[c % kinds.len()],
            motion,
            noise: 0.02,
            seed: derive_seed(cfg.seed, &format!("adapt-clip-{c}")),
        };
        let clip = gen_synthetic(&spec)?;
        let pairs = par::map_indices(clip.frames.len() - 1, |i| -> Result<Frame> {
            let field = horn_schunck(&clip.frames[i], &clip.frames[i + 1], &cfg.flow)?;
            color_code(&field, None)?.resize_bilinear(w, h)
        });
        for (i, coded) in pairs.into_iter().enumerate() {
            coded_frames.push(coded?);
            gts.push(clip.gt[i].clone());
        }
        c += 1;
    }
    let adapt_cfg = TrainConfig::new(
        cfg.train_iterations,
        cfg.train_learning_rate,
        derive_seed(cfg.seed, "adapt"),
    );
    let (motion, _) = finetune_motion(&color, &coded_frames, &gts, &adapt_cfg)?;
    save_params(&motion, &cfg.motion_weights)?;
    Ok(vec![cfg.color_weights.clone(), cfg.motion_weights.clone()])
}

/// Keyframe CSV row mirror of the on-disk format.
pub fn read_keyframe_csv(path: &Path) -> Result<Vec<(usize, f64, bool)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "frame_index,nr,selected" {
                return Err(Error::format(path, format!("unexpected header {line:?}")));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::format(path, format!("bad row {line:?}")));
        }
        rows.push((
            parse_value("frame_index", cols[0])?,
            parse_value("nr", cols[1])?,
            cols[2] == "1",
        ));
    }
    Ok(rows)
}

/// Run every stage for one sequence. Any stage error aborts with the stage
/// name; partial outputs stay on disk for inspection.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let arch = NetArch::new(cfg.input_size.0, cfg.input_size.1)?;

    let frame_files = list_numbered(&cfg.frames_dir, "ppm")?;
    if frame_files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .ppm frames found in {}",
            cfg.frames_dir.display()
        )));
    }
    let n = frame_files.len();
    let fingerprint = config_fingerprint(cfg, &frame_files)?;
    let mut runner = StageRunner {
        work: &cfg.work_dir,
        fingerprint,
        resume: cfg.resume,
        run: Vec::new(),
        skipped: Vec::new(),
    };

    let work = cfg.work_dir.clone();
    let (iw, ih) = cfg.input_size;
    let dir = |name: &str| -> Result<PathBuf> {
        let d = work.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    };

    if cfg.train_all {
        runner.stage("train", || train_models(cfg, arch))?;
    }
    let color = load_model(&cfg.color_weights, arch)?;
    let has_pairs = n >= 2;

    // Original-resolution frames for the flow stage; resized copies feed the
    // networks.
    let frames: Vec<Frame> = frame_files
        .iter()
        .map(read_ppm)
        .collect::<Result<Vec<_>>>()?;
    let resized: Vec<Frame> = frames
        .iter()
        .map(|f| f.resize_bilinear(iw, ih))
        .collect::<Result<Vec<_>>>()?;

    if has_pairs {
        runner.stage("flow", || {
            let out = dir("flow")?;
            let written = par::map_indices(n - 1, |i| -> Result<PathBuf> {
                let field = horn_schunck(&frames[i], &frames[i + 1], &cfg.flow)?;
                let path = out.join(format!("{i:05}.flo"));
                write_flo(&field, &path)?;
                Ok(path)
            });
            written.into_iter().collect()
        })?;

        runner.stage("coded", || {
            let out = dir("coded")?;
            let flo_files = list_numbered(&work.join("flow"), "flo")?;
            let fields: Vec<_> = flo_files
                .iter()
                .map(|p| read_flo(p))
                .collect::<Result<Vec<_>>>()?;
            let global_max = if cfg.coding_global_max {
                Some(auto_max_magnitude(&fields.iter().collect::<Vec<_>>()))
            } else {
                None
            };
            let written = par::map_indices(fields.len(), |i| -> Result<PathBuf> {
                let coded = color_code(&fields[i], global_max)?;
                let path = out.join(format!("{i:05}.ppm"));
                crate::image::write_ppm(&coded, &path)?;
                Ok(path)
            });
            written.into_iter().collect()
        })?;

        runner.stage("ms", || {
            let out = dir("ms")?;
            let coded_files = list_numbered(&work.join("coded"), "ppm")?;
            if coded_files.len() != n - 1 {
                return Err(Error::shape("coded frame count", n - 1, coded_files.len()));
            }
            let motion = load_model(&cfg.motion_weights, arch)?;
            let written = par::map_indices(n, |i| -> Result<PathBuf> {
                // Frame i pairs with flow (i-1 -> i); the first frame reuses
                // the (0 -> 1) flow.
                let pair = i.saturating_sub(1);
                let coded = read_ppm(&coded_files[pair])?.resize_bilinear(iw, ih)?;
                let ms = motion_saliency(&motion, &coded)?;
                let path = out.join(format!("{i:05}.pgm"));
                write_pgm(&ms, &path)?;
                Ok(path)
            });
            written.into_iter().collect()
        })?;
    }

    runner.stage("cs", || {
        let out = dir("cs")?;
        let written = par::map_indices(n, |i| -> Result<PathBuf> {
            let map = color.forward(&resized[i])?.prediction;
            let path = out.join(format!("{i:05}.pgm"));
            write_pgm(&map, &path)?;
            Ok(path)
        });
        written.into_iter().collect()
    })?;

    runner.stage("ls", || {
        let out = dir("ls")?;
        let cs_files = list_numbered(&work.join("cs"), "pgm")?;
        let written = par::map_indices(n, |i| -> Result<PathBuf> {
            let cs = read_pgm(&cs_files[i])?;
            // Without a flow pair there is no motion branch; the low-level
            // map falls back to the color map alone.
            let ls = if has_pairs {
                let ms = read_pgm(&work.join("ms").join(format!("{i:05}.pgm")))?;
                fuse_low_level(&ms, &cs)?
            } else {
                cs
            };
            let path = out.join(format!("{i:05}.pgm"));
            write_pgm(&ls, &path)?;
            Ok(path)
        });
        written.into_iter().collect()
    })?;

    runner.stage("keyframes", || {
        let path = work.join("keyframes.csv");
        let mut csv = String::from("frame_index,nr,selected\n");
        if has_pairs {
            let ms: Vec<GrayMap> = (0..n)
                .map(|i| read_pgm(&work.join("ms").join(format!("{i:05}.pgm"))))
                .collect::<Result<_>>()?;
            let cs: Vec<GrayMap> = (0..n)
                .map(|i| read_pgm(&work.join("cs").join(format!("{i:05}.pgm"))))
                .collect::<Result<_>>()?;
            let opts = NrOptions {
                binarize: cfg.nr_binarize,
                ..NrOptions::default()
            };
            let scores = score_frames(&ms, &cs, &opts)?;
            for (i, nr) in scores.iter().enumerate() {
                let selected = nr < &cfg.nr_threshold;
                csv.push_str(&format!("{i},{nr:.6},{}\n", u8::from(selected)));
            }
        } else {
            // No motion evidence: every frame is maximally untrusted.
            for i in 0..n {
                csv.push_str(&format!("{i},1.000000,0\n"));
            }
        }
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        Ok(vec![path])
    })?;

    let rows = read_keyframe_csv(&work.join("keyframes.csv"))?;
    let keyframes: Vec<KeyframeRecord> = rows
        .iter()
        .filter(|(_, _, selected)| *selected)
        .map(|&(i, nr, _)| -> Result<KeyframeRecord> {
            Ok(KeyframeRecord {
                frame_index: i,
                nr,
                low_level_map: read_pgm(&work.join("ls").join(format!("{i:05}.pgm")))?,
            })
        })
        .collect::<Result<_>>()?;
    let keyframe_count = keyframes.len();
    let mut adapted = false;

    runner.stage("online", || {
        let online_cfg = OnlineConfig {
            seed: derive_seed(cfg.seed, "online"),
            ..cfg.online.clone()
        };
        // One twin per sequence, cloned fresh from the source weights.
        let outcome = online_finetune(&color, &keyframes, &resized, &online_cfg)?;
        adapted = outcome.adapted;
        let twin_path = work.join("twin.weights");
        save_params(&outcome.twin, &twin_path)?;
        let loss_path = work.join("loss.csv");
        let mut csv = String::from("iteration,loss\n");
        for (i, loss) in outcome.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{loss:.9}\n"));
        }
        fs::write(&loss_path, csv).map_err(|e| Error::io(&loss_path, e))?;
        let mut outputs = vec![twin_path, loss_path];
        if outcome.adapted {
            let out = dir("em")?;
            let written = par::map_indices(n, |i| -> Result<PathBuf> {
                let map = outcome.twin.forward(&resized[i])?.prediction;
                let path = out.join(format!("{i:05}.pgm"));
                write_pgm(&map, &path)?;
                Ok(path)
            });
            for p in written {
                outputs.push(p?);
            }
        }
        Ok(outputs)
    })?;
    // A skipped online stage still needs the adaptation flag for the final
    // stage; the twin predictions directory only exists when it adapted.
    if runner.skipped.iter().any(|s| s == "online") {
        adapted = work.join("em").is_dir() && keyframe_count > 0;
    }

    runner.stage("fs", || {
        let out = dir("fs")?;
        let written = par::map_indices(n, |i| -> Result<PathBuf> {
            let ls = read_pgm(&work.join("ls").join(format!("{i:05}.pgm")))?;
            let fs_map = if adapted {
                let em = read_pgm(&work.join("em").join(format!("{i:05}.pgm")))?;
                final_fuse(&em, &ls)?
            } else {
                // No-adaptation fallback: the low-level map is the output.
                ls
            };
            let path = out.join(format!("{i:05}.pgm"));
            write_pgm(&fs_map, &path)?;
            Ok(path)
        });
        written.into_iter().collect()
    })?;

    Ok(PipelineSummary {
        frame_count: n,
        keyframe_count,
        adapted,
        stages_run: runner.run,
        stages_skipped: runner.skipped,
    })
}

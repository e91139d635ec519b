//! End-to-end checks of the `vsal` binary: stage chaining, exit codes, and
//! output layout.

use std::path::Path;
use std::process::{Command, Output};

fn vsal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    let code = out.status.code().unwrap();
    assert_eq!(
        code,
        want,
        "exit {code}, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn stage_chain_runs_and_produces_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_code(
        &vsal(
            &[
                "gen-synth", "--out", "clip", "--kind", "colored", "--frames", "5", "--size",
                "32x32", "--motion", "1,0", "--seed", "4",
            ],
            d,
        ),
        0,
    );
    assert!(d.join("clip/frames/00004.ppm").exists());
    assert!(d.join("clip/gt/00004.pgm").exists());

    assert_code(
        &vsal(
            &[
                "flow", "--frames", "clip/frames", "--out", "flow", "--iterations", "30",
                "--levels", "2",
            ],
            d,
        ),
        0,
    );
    assert!(d.join("flow/00003.flo").exists());

    assert_code(&vsal(&["colorize", "--flows", "flow", "--out", "coded"], d), 0);
    assert_code(
        &vsal(
            &["motion-baseline", "--flows", "flow", "--out", "base", "--radius", "3"],
            d,
        ),
        0,
    );
    assert!(d.join("coded/00000.ppm").exists());
    assert!(d.join("base/00000.pgm").exists());

    // Keyframes with the baseline maps standing in for both branches:
    // identical maps agree perfectly, so every frame is selected.
    let out = vsal(
        &[
            "keyframes", "--ms", "base", "--cs", "base", "--out-csv", "kf.csv", "--ls-out",
            "ls",
        ],
        d,
    );
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(d.join("kf.csv")).unwrap();
    assert!(csv.starts_with("frame_index,nr,selected\n0,0.000000,1\n"), "{csv}");

    // Evaluating the ground truth against itself is perfect.
    let out = vsal(
        &["eval", "--pred", "clip/gt", "--gt", "clip/gt", "--out", "report.csv"],
        d,
    );
    assert_code(&out, 0);
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(report.contains("sequence,1.000000"), "{report}");
}

#[test]
fn full_pipeline_with_config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(
        &vsal(
            &[
                "gen-synth", "--out", "clip", "--kind", "distractor", "--frames", "4", "--size",
                "32x32", "--motion", "1,0", "--seed", "9",
            ],
            d,
        ),
        0,
    );
    std::fs::write(
        d.join("run.cfg"),
        "frames = clip/frames\nwork = wrong-dir\ntrain-all = true\n\
         input-size = 16x16\ntrain-iterations = 15\ntrain-corpus-frames = 6\n\
         flow-iterations = 25\nflow-levels = 2\nseed = 3\n",
    )
    .unwrap();
    // --work overrides the config file's work dir.
    let out = vsal(
        &["pipeline", "--config", "run.cfg", "--work", "run"],
        d,
    );
    assert_code(&out, 0);
    assert!(d.join("run/fs/00003.pgm").exists());
    assert!(d.join("run/keyframes.csv").exists());
    assert!(d.join("run/loss.csv").exists());
    assert!(!d.join("wrong-dir").exists());

    // net-info on the weights the run produced.
    let out = vsal(&["net-info", "--weights", "run/color.weights"], d);
    assert_code(&out, 0);
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("enc1"), "{table}");
    assert!(table.contains("total parameters"), "{table}");
}

#[test]
fn online_stage_runs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(
        &vsal(
            &[
                "gen-synth", "--out", "clip", "--kind", "colored", "--frames", "4", "--size",
                "16x16", "--motion", "1,0", "--seed", "2",
            ],
            d,
        ),
        0,
    );
    assert_code(
        &vsal(
            &[
                "pretrain-color", "--out", "color.weights", "--corpus-frames", "4", "--size",
                "16x16", "--iterations", "10", "--seed", "1",
            ],
            d,
        ),
        0,
    );
    // Ground-truth masks double as low-level maps for this wiring test.
    std::fs::write(
        d.join("kf.csv"),
        "frame_index,nr,selected\n0,0.100000,1\n1,0.200000,1\n2,0.900000,0\n3,0.100000,1\n",
    )
    .unwrap();
    let out = vsal(
        &[
            "online", "--color-weights", "color.weights", "--frames", "clip/frames",
            "--keyframes", "kf.csv", "--ls", "clip/gt", "--out", "twin.weights", "--lambda",
            "2", "--fs-out", "fs", "--em-out", "em", "--loss-csv", "loss.csv",
        ],
        d,
    );
    assert_code(&out, 0);
    assert!(d.join("twin.weights").exists());
    assert!(d.join("fs/00003.pgm").exists());
    assert!(d.join("em/00000.pgm").exists());
    let loss = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2 * 3); // header + lambda*K
}

#[test]
fn validation_errors_exit_2_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Missing directory: validation.
    assert_code(&vsal(&["flow", "--frames", "missing", "--out", "o"], d), 2);
    // Unknown flag: clap usage error.
    assert_code(&vsal(&["flow", "--bogus"], d), 2);
    // Unknown object kind: validation.
    assert_code(
        &vsal(&["gen-synth", "--out", "x", "--kind", "sphere"], d),
        2,
    );
    // Out-of-bounds trajectory: validation.
    assert_code(
        &vsal(
            &[
                "gen-synth", "--out", "x", "--kind", "colored", "--frames", "60", "--size",
                "32x32", "--motion", "9,0",
            ],
            d,
        ),
        2,
    );
    // Corrupt weight file: runtime error.
    std::fs::write(d.join("bad.weights"), b"not a weight file").unwrap();
    assert_code(&vsal(&["net-info", "--weights", "bad.weights"], d), 1);
    // Corrupt image payload: runtime error.
    std::fs::create_dir(d.join("fr")).unwrap();
    std::fs::write(d.join("fr/00000.ppm"), b"P6\n2 2\n255\nxx").unwrap();
    std::fs::write(d.join("fr/00001.ppm"), b"P6\n2 2\n255\nxx").unwrap();
    assert_code(&vsal(&["flow", "--frames", "fr", "--out", "o"], d), 1);
}

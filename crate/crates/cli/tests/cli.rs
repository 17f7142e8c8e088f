use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfz_core::lightfield::{load_light_field, save_view_directory, Layout, LightField};
use lfz_core::nets::{DepthConfig, HanceConfig, Nets};
use lfz_core::trainer::desk_scenes;
use serde_json::Value;
use tempfile::TempDir;

fn lfz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfz"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lfz(args);
    assert!(
        out.status.success(),
        "lfz {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture_lf(dir: &Path, angular: (usize, usize), size: usize) -> (PathBuf, LightField) {
    let lf = desk_scenes(3, size, angular, 1.0, 4).unwrap().remove(2).lf;
    let path = dir.join("lf");
    save_view_directory(&lf, &path).unwrap();
    // reload so the reference carries the 8-bit quantization of the files
    (path.clone(), load_light_field(&path, Layout::ViewDirectory).unwrap())
}

fn weights(dir: &Path, views: usize) -> PathBuf {
    let path = dir.join("w.lfw");
    let mut nets = Nets::<f32>::new(HanceConfig::DESK, DepthConfig::desk(views), 3);
    fs::write(&path, nets.to_archive().to_bytes()).unwrap();
    path
}

#[test]
fn help_documents_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("compress", &["--in", "--angular", "--quality", "--out"]),
        ("decompress", &["--in", "--weights", "--baseline", "--out", "--grid", "--orientation"]),
        (
            "eval",
            &["--gt", "--in", "--angular", "--weights", "--quality", "--alphas", "--orientation", "--report", "--plots"],
        ),
        ("refocus", &["--in", "--angular", "--alpha", "--orientation", "--out"]),
        ("dof", &["--in", "--angular", "--out"]),
        ("pseudoseq", &["--in", "--angular", "--order", "--out"]),
        (
            "train",
            &[
                "--phase", "--seed", "--steps", "--batch", "--steps-per-epoch", "--scenes", "--size", "--angular",
                "--d-range", "--scene-seed", "--quality", "--nets", "--init", "--resume", "--out", "--checkpoint",
                "--log",
            ],
        ),
        ("gradcheck", &["--seed", "--shapes", "--no-networks"]),
        ("info", &["--in", "--angular"]),
    ];
    for (sub, flags) in expected {
        let text = ok(&[sub, "--help"]);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help lacks {flag}:\n{text}");
        }
    }
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let out = lfz(&["compress", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E1:"));

    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nothing");
    let out = lfz(&["compress", "--in", p(&missing), "--out", p(&dir.path().join("x.lfz"))]);
    assert_eq!(out.status.code(), Some(1), "a plain file path needs --angular");

    fs::create_dir(&missing).unwrap();
    let out = lfz(&["compress", "--in", p(&missing), "--out", p(&dir.path().join("x.lfz"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E2:"));

    let junk = dir.path().join("junk.lfz");
    fs::write(&junk, b"LFZ1 but not really").unwrap();
    let out = lfz(&["decompress", "--in", p(&junk), "--baseline", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compress_then_decompress_gives_every_view() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, lf) = fixture_lf(dir.path(), (7, 7), 32);
    let container = dir.path().join("x.lfz");
    let line = ok(&["compress", "--in", p(&lf_dir), "--quality", "50", "--out", p(&container)]);
    let v: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["bytes"].as_u64().unwrap(), fs::metadata(&container).unwrap().len());

    let w = weights(dir.path(), 49);
    let out_dir = dir.path().join("out");
    ok(&["decompress", "--in", p(&container), "--weights", p(&w), "--out", p(&out_dir)]);
    let files = fs::read_dir(&out_dir).unwrap().count();
    assert_eq!(files, 49);
    let rebuilt = load_light_field(&out_dir, Layout::ViewDirectory).unwrap();
    assert_eq!(rebuilt.angular(), (7, 7));
    assert_eq!(rebuilt.spatial(), lf.spatial());

    let info: Value = serde_json::from_str(ok(&["info", "--in", p(&container)]).trim()).unwrap();
    assert_eq!(info["kind"], "container");
    assert_eq!(info["angular"], serde_json::json!([7, 7]));
    assert_eq!(info["quality"], 50);
}

#[test]
fn compress_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, _) = fixture_lf(dir.path(), (3, 3), 40);
    let (a, b) = (dir.path().join("a.lfz"), dir.path().join("b.lfz"));
    ok(&["compress", "--in", p(&lf_dir), "--out", p(&a)]);
    ok(&["compress", "--in", p(&lf_dir), "--out", p(&b)]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, _) = fixture_lf(dir.path(), (3, 3), 32);
    let report = dir.path().join("report").join("out.txt");
    let stdout = ok(&["eval", "--gt", p(&lf_dir), "--in", p(&lf_dir), "--report", p(&report)]);
    let v: Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(v["mssim"].as_f64(), Some(1.0));
    assert_eq!(v["mpsnr"], "inf");
    assert_eq!(v["identical_views"], 9);
    assert_eq!(fs::read_to_string(&report).unwrap(), stdout);
    for plot in ["eval_mssim.svg", "eval_mpsnr.svg", "eval_dof.svg", "eval_refocus.svg"] {
        let svg = fs::read_to_string(report.parent().unwrap().join(plot)).unwrap();
        assert!(svg.starts_with("<svg"), "{plot}");
    }
}

#[test]
fn eval_pipeline_reports_timings() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, _) = fixture_lf(dir.path(), (3, 3), 32);
    let w = weights(dir.path(), 9);
    let plots = dir.path().join("plots");
    let stdout = ok(&["eval", "--gt", p(&lf_dir), "--weights", p(&w), "--alphas", "-0.5,1", "--plots", p(&plots)]);
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(v["compress_secs"].as_f64().unwrap() > 0.0);
    assert!(v["decompress_secs"].as_f64().unwrap() > 0.0);
    assert_eq!(v["refocus"].as_array().unwrap().len(), 2);
    assert_eq!(v["refocus"][0]["alpha"].as_f64(), Some(-0.5));
    assert!(plots.join("eval_timing.svg").exists());
}

#[test]
fn pseudoseq_raster_frames_follow_row_major_views() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, lf) = fixture_lf(dir.path(), (3, 3), 32);
    let frames = dir.path().join("frames");
    ok(&["pseudoseq", "--in", p(&lf_dir), "--order", "raster", "--out", p(&frames)]);
    let mut names: Vec<String> = fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let expected: Vec<String> = (0..9).map(|i| format!("frame_{i:03}.png")).collect();
    assert_eq!(names, expected);
    for (i, name) in names.iter().enumerate() {
        let frame = lfz_core::lightfield::Image::load(frames.join(name)).unwrap();
        assert_eq!(&frame, lf.view(i / 3, i % 3));
    }
}

#[test]
fn refocus_and_dof_write_images() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, lf) = fixture_lf(dir.path(), (3, 3), 32);
    let (r, d) = (dir.path().join("r.png"), dir.path().join("d.png"));
    ok(&["refocus", "--in", p(&lf_dir), "--alpha", "-1", "--out", p(&r)]);
    ok(&["dof", "--in", p(&lf_dir), "--out", p(&d)]);
    for f in [r, d] {
        let img = lfz_core::lightfield::Image::load(f).unwrap();
        assert_eq!(img.dims(), lf.spatial());
    }
}

#[test]
fn grid_image_input_matches_directory_input() {
    let dir = TempDir::new().unwrap();
    let (lf_dir, lf) = fixture_lf(dir.path(), (3, 3), 32);
    let grid = dir.path().join("grid.png");
    lfz_core::lightfield::save_grid_image(&lf, &grid).unwrap();
    let (a, b) = (dir.path().join("a.lfz"), dir.path().join("b.lfz"));
    ok(&["compress", "--in", p(&lf_dir), "--out", p(&a)]);
    ok(&["compress", "--in", p(&grid), "--angular", "3x3", "--out", p(&b)]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn training_resumes_from_checkpoint_on_the_same_trajectory() {
    let dir = TempDir::new().unwrap();
    let base = [
        "train", "--phase", "joint", "--seed", "3", "--scenes", "2", "--size", "32", "--angular", "3x3",
        "--steps-per-epoch", "2",
    ];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        ok(&args)
    };
    let (full_log, ckpt, w) = (dir.path().join("full.jsonl"), dir.path().join("c.ckpt"), dir.path().join("w.lfw"));
    run(&["--steps", "4", "--log", p(&full_log), "--out", p(&w)]);
    run(&["--steps", "2", "--checkpoint", p(&ckpt), "--log", p(&dir.path().join("half.jsonl"))]);
    let resumed = run(&["--steps", "4", "--resume", p(&ckpt)]);

    let full = fs::read_to_string(&full_log).unwrap();
    let full: Vec<&str> = full.lines().collect();
    assert_eq!(full.len(), 4);
    assert_eq!(resumed.lines().collect::<Vec<_>>(), full[2..].to_vec());

    let info: Value = serde_json::from_str(ok(&["info", "--in", p(&w)]).trim()).unwrap();
    assert_eq!(info["kind"], "weights");
    assert_eq!(info["views"], 9);
    let info: Value = serde_json::from_str(ok(&["info", "--in", p(&ckpt)]).trim()).unwrap();
    assert_eq!(info["kind"], "checkpoint");
}

#[test]
fn gradcheck_command_passes() {
    let out = ok(&["gradcheck", "--shapes", "1", "--no-networks"]);
    assert!(out.trim_end().ends_with("0 failed"), "{out}");
}

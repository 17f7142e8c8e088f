//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;
use zune_core::colorspace::ColorSpace;
use zune_core::options::DecoderOptions;
use zune_jpeg::JpegDecoder;

use lfz_core::gradsuite::{self, SuiteOptions};
use lfz_core::jpeg::{self, tables, ChromaSubsampling, JpegConfig};
use lfz_core::lightfield::{save_view_directory, Image, LightField};
use lfz_core::nets::{DepthConfig, DepthNet, HanceConfig, HanceNet, Module, Nets};
use lfz_core::objectives::{mssim, psnr, ssim_image};
use lfz_core::pipeline::{self, LfzContainer};
use lfz_core::synthesis::{refocus, warp_center_to_view, Orientation};
use lfz_core::trainer::{desk_scenes, disparity_error, smoothed_ends, Phase, StepRecord, SyntheticScene, TrainConfig, Trainer};

type Verdict = Result<(bool, String), String>;
type Criterion = (&'static str, &'static str, fn(&mut Ctx) -> Verdict);

/// State shared between criteria: the desk training run feeds AC7 and AC9.
struct Ctx {
    work: TempDir,
    scenes: Vec<SyntheticScene>,
    trained: Option<(Nets<f32>, Vec<StepRecord>)>,
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn lfz(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lfz"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lfz {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn warp_oracle(_: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 32;
    let center = Image::from_fn(n, n, |_, _, _| 0.0).data().iter().map(|_| rng.random::<f32>()).collect::<Vec<_>>();
    let center = Image::from_vec(n, n, center).map_err(|e| e.to_string())?;
    let offsets = Orientation::Standard.offsets((7, 7));
    let mut compared = 0usize;
    let mut mismatches = 0usize;
    for delta in -2i32..=2 {
        let d = vec![delta as f32; n * n];
        for &(du, dv) in &offsets {
            let view = warp_center_to_view(&center, &d, (du, dv)).map_err(|e| e.to_string())?;
            let (sy, sx) = (du as i32 * delta, dv as i32 * delta);
            for y in 0..n as i32 {
                for x in 0..n as i32 {
                    let (yy, xx) = (y + sy, x + sx);
                    if yy < 0 || xx < 0 || yy >= n as i32 || xx >= n as i32 {
                        continue;
                    }
                    for c in 0..3 {
                        compared += 1;
                        if view.get(y as usize, x as usize, c) != center.get(yy as usize, xx as usize, c) {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} mismatches over {compared} interior samples (5 disparities x 49 offsets), {secs:.2} s < 5 s"),
    ))
}

fn gradient_suite(_: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let reports = gradsuite::run(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst_op = reports
        .iter()
        .filter(|r| r.tolerance == gradsuite::OP_TOLERANCE)
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let worst_composite = reports
        .iter()
        .filter(|r| r.tolerance == gradsuite::COMPOSITE_TOLERANCE)
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    Ok((
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks, worst rel err {worst_op:.1e} (op, tol 1e-4) / {worst_composite:.1e} (composite, tol 1e-3), {secs:.1} s < 120 s{}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    ))
}

fn ssim_fidelity(_: &mut Ctx) -> Verdict {
    let text = fs::read_to_string(fixture("ssim_reference.json")).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut identity = true;
    for pair in v["pairs"].as_array().ok_or("fixture lacks pairs")? {
        let load = |k: &str| Image::load(fixture(pair[k].as_str().unwrap_or_default())).map_err(|e| e.to_string());
        let (a, b) = (load("a")?, load("b")?);
        let expected = pair["ssim"].as_f64().ok_or("fixture lacks ssim")?;
        worst = worst.max((ssim_image(&a, &b).map_err(|e| e.to_string())? - expected).abs());
        identity &= ssim_image(&a, &a).map_err(|e| e.to_string())? == 1.0;
        identity &= ssim_image(&b, &b).map_err(|e| e.to_string())? == 1.0;
    }
    Ok((
        worst <= 1e-6 && identity,
        format!("max |ssim - reference| = {worst:.2e} <= 1e-6, ssim(I,I) == 1 exactly: {identity}"),
    ))
}

fn jpeg_conformance(_: &mut Ctx) -> Verdict {
    let rocket = Image::load(fixture("rocket_375x540.png")).map_err(|e| e.to_string())?;
    let images = [
        Image::load(fixture("ssim_astronaut_a.png")).map_err(|e| e.to_string())?,
        Image::load(fixture("ssim_coffee_b.png")).map_err(|e| e.to_string())?,
        rocket.crop(120, 200, 61, 77),
        rocket.crop(0, 0, 1, 1),
        rocket,
    ];
    let mut streams = 0;
    let mut worst = 0u8;
    for img in &images {
        for quality in [10, 50, 90] {
            for chroma_subsampling in [ChromaSubsampling::Yuv420, ChromaSubsampling::Yuv444] {
                for restart_interval in [0, 4] {
                    let cfg = JpegConfig {
                        quality,
                        chroma_subsampling,
                        restart_interval,
                    };
                    let bytes = jpeg::encode(img, &cfg).map_err(|e| e.to_string())?;
                    let ours = jpeg::decode(bytes.as_bytes()).map_err(|e| e.to_string())?.to_rgb8();
                    let opts = DecoderOptions::default().jpeg_set_out_colorspace(ColorSpace::RGB);
                    let theirs = JpegDecoder::new_with_options(Cursor::new(bytes.as_bytes()), opts)
                        .decode()
                        .map_err(|e| format!("independent decoder rejected {cfg:?}: {e:?}"))?;
                    if theirs.len() != ours.len() {
                        return Ok((false, format!("{cfg:?}: sample count differs")));
                    }
                    let dev = ours.iter().zip(&theirs).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
                    worst = worst.max(dev);
                    streams += 1;
                }
            }
        }
    }
    let (luma, chroma) = jpeg::quant_tables(50);
    let tables_ok = luma == tables::BASE_LUMA_QUANT && chroma == tables::BASE_CHROMA_QUANT;
    Ok((
        worst <= 1 && tables_ok,
        format!("{streams} streams, max deviation vs independent decoder {worst} <= 1, q50 tables == base tables: {tables_ok}"),
    ))
}

fn rate_check(_: &mut Ctx) -> Verdict {
    let view = Image::load(fixture("rocket_375x540.png")).map_err(|e| e.to_string())?;
    let lf = LightField::replicated((7, 7), &view).map_err(|e| e.to_string())?;
    let c = pipeline::compress(&lf, &JpegConfig::with_quality(50)).map_err(|e| e.to_string())?;
    let bytes = c.to_bytes().len();
    let bpp = lfz_core::objectives::bpp(bytes, lf.angular(), lf.spatial()).map_err(|e| e.to_string())?;
    Ok((
        (0.002..=0.010).contains(&bpp),
        format!("7x7x375x540 at q=50: {bytes} bytes, {bpp:.5} bpp in [0.002, 0.010]"),
    ))
}

fn desk_learning(ctx: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let mut cfg = TrainConfig::desk(Phase::Joint);
    cfg.steps = 200;
    cfg.seed = 7;
    let nets = Nets::new(HanceConfig::DESK, DepthConfig::desk(49), 7);
    let mut trainer = Trainer::new(cfg, nets, ctx.scenes.clone()).map_err(|e| e.to_string())?;
    let log = trainer.run(|_, _| Ok(())).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let nets = trainer.into_nets();
    let (first, last) = smoothed_ends(&log, 20);
    let ratio = last / first;
    let mae = disparity_error(&nets, &ctx.scenes, 50).map_err(|e| e.to_string())?;
    let max_d = ctx.scenes.iter().map(|s| s.disparity.abs()).fold(0.0, f32::max);
    ctx.trained = Some((nets, log));
    Ok((
        ratio <= 0.5 && mae < 0.5 && secs < 900.0,
        format!(
            "16 scenes 64x64 7x7 |d| <= {max_d}: 20-step smoothed loss {first:.3} -> {last:.3} (ratio {ratio:.3} <= 0.5), disparity MAE {mae:.3} px < 0.5, {secs:.0} s < 900 s"
        ),
    ))
}

fn interior_psnr(a: &Image, b: &Image, margin: usize) -> Result<f64, String> {
    let (h, w) = a.dims();
    if 2 * margin >= h.min(w) {
        return Err("margin covers the whole image".into());
    }
    let (ih, iw) = (h - 2 * margin, w - 2 * margin);
    psnr(&a.crop(margin, margin, ih, iw), &b.crop(margin, margin, ih, iw)).map_err(|e| e.to_string())
}

fn quality_ordering(ctx: &mut Ctx) -> Verdict {
    let (nets, _) = ctx.trained.as_ref().ok_or("needs the desk training run")?;
    let (mut ours, mut baseline, mut wins) = (0.0, 0.0, 0);
    let mut decoded_refocus = f64::INFINITY;
    for scene in &ctx.scenes {
        let c = pipeline::compress(&scene.lf, &JpegConfig::with_quality(50)).map_err(|e| e.to_string())?;
        let rec = pipeline::decompress(&c, nets).map_err(|e| e.to_string())?;
        let base = pipeline::replicate_baseline(&c).map_err(|e| e.to_string())?;
        let (a, b) = (
            mssim(&scene.lf, &rec).map_err(|e| e.to_string())?,
            mssim(&scene.lf, &base).map_err(|e| e.to_string())?,
        );
        ours += a;
        baseline += b;
        wins += usize::from(a > b);
        if scene.disparity.fract() == 0.0 {
            let r = refocus(&rec, f64::from(scene.disparity), Orientation::Standard);
            decoded_refocus = decoded_refocus.min(interior_psnr(&r, &rec.center_view(), scene.interior_margin())?);
        }
    }
    let n = ctx.scenes.len() as f64;
    let (ours, baseline) = (ours / n, baseline / n);

    let mut worst_refocus = f64::INFINITY;
    let mut integer_scenes = 0;
    for scene in ctx.scenes.iter().filter(|s| s.disparity.fract() == 0.0) {
        let r = refocus(&scene.lf, f64::from(scene.disparity), Orientation::Standard);
        worst_refocus = worst_refocus.min(interior_psnr(&r, &scene.center(), scene.interior_margin())?);
        integer_scenes += 1;
    }
    Ok((
        ours > baseline && worst_refocus >= 40.0 && integer_scenes > 0,
        format!(
            "mean MSSIM decompressed {ours:.4} > replicate baseline {baseline:.4} (higher on {wins}/{} scenes); refocus at true disparity vs center on {integer_scenes} integer-disparity scenes: min interior PSNR {worst_refocus:.1} dB >= 40 (decompressed LFs: {decoded_refocus:.1} dB)",
            ctx.scenes.len()
        ),
    ))
}

fn parameter_counts(_: &mut Ctx) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hance = HanceNet::<f32>::new(HanceConfig::PAPER, &mut rng).trainable_parameters();
    let depth = DepthNet::<f32>::new(DepthConfig::paper(), &mut rng).trainable_parameters();
    let dh = hance as f64 / 202_435.0 - 1.0;
    let dd = depth as f64 / 38.2e6 - 1.0;
    Ok((
        dh.abs() <= 0.10 && dd.abs() <= 0.15,
        format!(
            "enhancement {hance} ({:+.2}% of 202,435, within 10%), disparity {depth} ({:+.2}% of 38.2M, within 15%)",
            100.0 * dh,
            100.0 * dd
        ),
    ))
}

fn timing_harness(ctx: &mut Ctx) -> Verdict {
    let (nets, _) = ctx.trained.as_mut().ok_or("needs the desk training run")?;
    let dir = ctx.work.path().join("timing");
    let weights = dir.join("desk.lfw");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    fs::write(&weights, nets.to_archive().to_bytes()).map_err(|e| e.to_string())?;

    let rocket = Image::load(fixture("rocket_375x540.png")).map_err(|e| e.to_string())?;
    let mut lfs = vec![("rocket".to_string(), LightField::replicated((7, 7), &rocket).map_err(|e| e.to_string())?)];
    for (i, scene) in ctx.scenes.iter().take(3).enumerate() {
        lfs.push((format!("scene{i}"), scene.lf.clone()));
    }
    let mut args = vec!["eval".to_string(), "--weights".into(), s(&weights).into()];
    for (name, lf) in &lfs {
        let p = dir.join(name);
        save_view_directory(lf, &p).map_err(|e| e.to_string())?;
        args.push("--gt".into());
        args.push(s(&p).into());
    }
    args.push("--report".into());
    args.push(s(&dir.join("report.txt")).into());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = lfz(&refs)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for line in out.lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let (c, d) = (
            v["compress_secs"].as_f64().ok_or("report lacks compress_secs")?,
            v["decompress_secs"].as_f64().ok_or("report lacks decompress_secs")?,
        );
        ok &= c < d;
        let id = v["id"].as_str().unwrap_or_default();
        let id = Path::new(id).file_name().and_then(|f| f.to_str()).unwrap_or(id).to_string();
        lines.push(format!("{id} {:.1} ms < {:.1} ms", 1e3 * c, 1e3 * d));
    }
    ok &= lines.len() == lfs.len();
    ok &= dir.join("eval_timing.svg").exists();
    Ok((ok, format!("eval compress < decompress per LF: {}", lines.join(", "))))
}

fn determinism(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.work.path().join("determinism");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    let mut weights = Vec::new();
    for run in 0..2 {
        let (log, w) = (dir.join(format!("train{run}.jsonl")), dir.join(format!("w{run}.lfw")));
        lfz(&["train", "--seed", "7", "--steps", "50", "--log", s(&log), "--out", s(&w)])?;
        logs.push(fs::read_to_string(&log).map_err(|e| e.to_string())?);
        weights.push(fs::read(&w).map_err(|e| e.to_string())?);
    }
    let lines = logs[0].lines().count();
    let logs_equal = logs[0] == logs[1] && lines == 50;
    // the in-process run of the acceptance training uses the same seeds
    let matches_library = ctx.trained.as_ref().is_none_or(|(_, log)| {
        log.iter().take(50).map(|r| r.to_json_line()).collect::<Vec<_>>() == logs[0].lines().collect::<Vec<_>>()
    });

    let lf_dir = dir.join("lf");
    save_view_directory(&ctx.scenes[0].lf, &lf_dir).map_err(|e| e.to_string())?;
    let mut containers = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("x{run}.lfz"));
        lfz(&["compress", "--in", s(&lf_dir), "--quality", "50", "--out", s(&out)])?;
        containers.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    LfzContainer::from_bytes(&containers[0]).map_err(|e| e.to_string())?;
    let bytes_equal = containers[0] == containers[1];
    Ok((
        logs_equal && weights[0] == weights[1] && bytes_equal && matches_library,
        format!(
            "train --seed 7 x2: {lines}-line logs identical {logs_equal}, weights identical {}, matches library run {matches_library}; compress x2: .lfz bytes identical {bytes_equal} ({} bytes)",
            weights[0] == weights[1],
            containers[0].len()
        ),
    ))
}

fn main() {
    let scenes = desk_scenes(16, 64, (7, 7), 2.0, 1).expect("desk scenes");
    let mut ctx = Ctx {
        work: TempDir::new().expect("temp dir"),
        scenes,
        trained: None,
    };
    let criteria: [Criterion; 10] = [
        ("AC1", "warp oracle", warp_oracle),
        ("AC2", "gradient suite", gradient_suite),
        ("AC3", "SSIM fidelity", ssim_fidelity),
        ("AC4", "JPEG conformance", jpeg_conformance),
        ("AC5", "rate check", rate_check),
        ("AC6", "desk-scale learning", desk_learning),
        ("AC7", "end-to-end quality ordering", quality_ordering),
        ("AC8", "parameter counts", parameter_counts),
        ("AC9", "timing harness", timing_harness),
        ("AC10", "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let (passed, detail) = match f(&mut ctx) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "{id:<4} {} {name}: {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

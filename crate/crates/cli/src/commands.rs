use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use lfz_core::gradsuite::{self, SuiteOptions};
use lfz_core::jpeg::JpegConfig;
use lfz_core::lightfield::{load_light_field, save_grid_image, save_view_directory, Layout, LightField, ViewOrder};
use lfz_core::nets::{DepthConfig, HanceConfig, Module, Nets, WeightArchive};
use lfz_core::objectives::bpp;
use lfz_core::pipeline::{self, EvalRecord, LfzContainer, MAGIC};
use lfz_core::synthesis::{self, Orientation};
use lfz_core::trainer::{desk_scenes, load_checkpoint, Adam, AdamParams, Phase, TrainConfig, Trainer, OPT_MAGIC};

use crate::args::*;
use crate::{plots, CliError, CliResult};

pub fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Eval(a) => eval(a),
        Command::Refocus(a) => refocus(a),
        Command::Dof(a) => dof(a),
        Command::Pseudoseq(a) => pseudoseq(a),
        Command::Train(a) => train(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Info(a) => info(a),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_lf(path: &Path, angular: Option<(usize, usize)>) -> CliResult<LightField> {
    let layout = if path.is_dir() {
        Layout::ViewDirectory
    } else {
        let angular = angular.ok_or_else(|| {
            CliError::Usage(format!("{} is a file; pass --angular UxV to split it into views", path.display()))
        })?;
        Layout::GridImage { angular }
    };
    Ok(load_light_field(path, layout)?)
}

fn load_nets(path: &Path) -> CliResult<Nets<f32>> {
    Ok(load_checkpoint(&read(path)?, AdamParams::default())?.0)
}

fn orientation(o: OrientationArg) -> Orientation {
    match o {
        OrientationArg::Standard => Orientation::Standard,
        OrientationArg::Flipped => Orientation::Flipped,
    }
}

fn compress(a: CompressArgs) -> CliResult {
    let lf = load_lf(&a.lf.input, a.lf.angular)?;
    let c = pipeline::compress(&lf, &JpegConfig::with_quality(a.quality))?;
    let bytes = c.to_bytes();
    write(&a.out, &bytes)?;
    let line = json!({
        "out": a.out.display().to_string(),
        "bytes": bytes.len(),
        "bpp": bpp(bytes.len(), lf.angular(), lf.spatial())?,
    });
    println!("{line}");
    Ok(())
}

fn decompress(a: DecompressArgs) -> CliResult {
    let c = LfzContainer::from_bytes(&read(&a.input)?)?;
    let lf = match &a.weights {
        Some(w) => pipeline::decompress_detail(&c, &load_nets(w)?, orientation(a.orientation))?.lf,
        None => pipeline::replicate_baseline(&c)?,
    };
    save_view_directory(&lf, &a.out)?;
    if let Some(grid) = &a.grid {
        save_grid_image(&lf, grid)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    if !a.input.is_empty() && a.input.len() != a.gt.len() {
        return Err(CliError::Usage(format!(
            "{} --in paths for {} --gt light fields",
            a.input.len(),
            a.gt.len()
        )));
    }
    let is_container = |p: &PathBuf| p.is_file() && fs::read(p).is_ok_and(|b| b.starts_with(MAGIC));
    let needs_nets = a.input.is_empty() || a.input.iter().any(is_container);
    let nets = match (&a.weights, needs_nets) {
        (Some(w), true) => Some(load_nets(w)?),
        (None, true) => return Err(CliError::Usage("--weights is required to decode containers".into())),
        _ => None,
    };
    let orient = orientation(a.orientation);
    let mut report = Vec::new();
    for (i, gt_path) in a.gt.iter().enumerate() {
        let gt = load_lf(gt_path, a.angular)?;
        let id = gt_path.display().to_string();
        let record: EvalRecord = match a.input.get(i) {
            None => pipeline::evaluate(
                &id,
                &gt,
                &JpegConfig::with_quality(a.quality),
                nets.as_ref().expect("loaded above"),
                &a.alphas,
                orient,
            )?,
            Some(p) if is_container(p) => {
                pipeline::evaluate_container(&id, &gt, &read(p)?, nets.as_ref().expect("loaded above"), &a.alphas, orient)?
            }
            Some(p) => pipeline::compare(&id, &gt, &load_lf(p, a.angular)?, &a.alphas, orient)?,
        };
        let line = record.to_json_line();
        println!("{line}");
        report.push(record);
    }
    let text: String = report.iter().map(|r| r.to_json_line() + "\n").collect();
    if let Some(path) = &a.report {
        write(path, text.as_bytes())?;
    }
    let plot_dir = a.plots.clone().or_else(|| {
        a.report
            .as_ref()
            .map(|r| r.parent().map(Path::to_path_buf).unwrap_or_default())
    });
    if let Some(dir) = plot_dir {
        plots::write_eval_plots(&report, &dir)?;
    }
    Ok(())
}

fn refocus(a: RefocusArgs) -> CliResult {
    let lf = load_lf(&a.lf.input, a.lf.angular)?;
    synthesis::refocus(&lf, a.alpha, orientation(a.orientation)).save_png(&a.out)?;
    Ok(())
}

fn dof(a: DofArgs) -> CliResult {
    let lf = load_lf(&a.lf.input, a.lf.angular)?;
    synthesis::dof(&lf).save_png(&a.out)?;
    Ok(())
}

fn pseudoseq(a: PseudoseqArgs) -> CliResult {
    let lf = load_lf(&a.lf.input, a.lf.angular)?;
    let order = match a.order {
        OrderArg::Raster => ViewOrder::Raster,
        OrderArg::Spiral => ViewOrder::Spiral,
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    let frames = lf.pseudo_sequence(order);
    let digits = (frames.len().saturating_sub(1)).to_string().len().max(3);
    for (i, f) in frames.iter().enumerate() {
        f.save_png(a.out.join(format!("frame_{i:0digits$}.png")))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    if a.size < 32 {
        return Err(CliError::Usage(format!("--size must be at least 32, got {}", a.size)));
    }
    let phase = match a.phase {
        PhaseArg::HancePretrain => Phase::HancePretrain,
        PhaseArg::DepthPretrain => Phase::DepthPretrain,
        PhaseArg::Joint => Phase::Joint,
        PhaseArg::FinetuneFullres => Phase::FinetuneFullres,
    };
    let mut cfg = TrainConfig::desk(phase);
    cfg.seed = a.seed;
    cfg.steps = a.steps;
    cfg.quality = a.quality;
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.steps_per_epoch = a.steps_per_epoch.unwrap_or(cfg.steps_per_epoch);
    cfg.crop = (cfg.crop.0.min(a.size), cfg.crop.1.min(a.size));

    let scenes = desk_scenes(a.scenes, a.size, a.angular, a.d_range, a.scene_seed)?;
    let n_views = a.angular.0 * a.angular.1;
    let (nets, adam) = match (&a.resume, &a.init) {
        (Some(p), _) => load_checkpoint(&read(p)?, cfg.adam)?,
        (None, Some(p)) => (load_nets(p)?, Adam::new(cfg.adam)),
        (None, None) => {
            let (hc, dc) = match a.nets {
                NetSize::Desk => (HanceConfig::DESK, DepthConfig::desk(n_views)),
                NetSize::Paper => (HanceConfig::PAPER, DepthConfig { n_views, ..DepthConfig::paper() }),
            };
            (Nets::new(hc, dc, a.seed), Adam::new(cfg.adam))
        }
    };
    let mut trainer = Trainer::resume(cfg, nets, adam, scenes)?;

    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => {
            write(p, b"")?;
            Box::new(
                fs::OpenOptions::new()
                    .append(true)
                    .open(p)
                    .map_err(|e| CliError::Data(format!("cannot open {}: {e}", p.display())))?,
            )
        }
        None => Box::new(std::io::stdout()),
    };
    let spe = trainer.cfg.steps_per_epoch;
    let checkpoint = a.checkpoint.clone();
    let result = trainer.run(|r, t| {
        writeln!(log, "{}", r.to_json_line())
            .map_err(|e| lfz_core::Error::InvalidArgument(format!("cannot write training log: {e}")))?;
        if let Some(p) = &checkpoint {
            if (r.step + 1) % spe == 0 || r.step + 1 == t.cfg.steps {
                let bytes = t.checkpoint();
                fs::write(p, bytes).map_err(|e| lfz_core::Error::InvalidArgument(format!("cannot write {}: {e}", p.display())))?;
            }
        }
        Ok(())
    });
    log.flush().map_err(|e| CliError::Data(format!("cannot flush training log: {e}")))?;
    result?;
    if let Some(out) = &a.out {
        let mut nets = trainer.into_nets();
        write(out, &nets.to_archive().to_bytes())?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let opts = SuiteOptions {
        seed: a.seed,
        shapes: a.shapes,
        networks: !a.no_networks,
    };
    let reports = gradsuite::run(&opts).map_err(|e| CliError::Internal(e.to_string()))?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", reports.len());
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn info(a: InfoArgs) -> CliResult {
    let path = &a.input;
    if path.is_file() {
        let bytes = read(path)?;
        if bytes.starts_with(MAGIC) {
            let c = LfzContainer::from_bytes(&bytes)?;
            let line = json!({
                "kind": "container",
                "version": c.version,
                "angular": [c.angular.0, c.angular.1],
                "spatial": [c.spatial.0, c.spatial.1],
                "quality": c.quality,
                "bytes": bytes.len(),
                "bpp": bpp(bytes.len(), c.angular(), c.spatial())?,
            });
            println!("{line}");
            return Ok(());
        }
        if bytes.starts_with(b"LFW1") {
            let (archive, used) = WeightArchive::from_bytes_prefix(&bytes)?;
            let mut nets = Nets::<f32>::from_archive(&archive)?;
            let line = json!({
                "kind": if used < bytes.len() && bytes[used..].starts_with(OPT_MAGIC) { "checkpoint" } else { "weights" },
                "tensors": archive.len(),
                "hance_parameters": nets.hance.trainable_parameters(),
                "depth_parameters": nets.depth.trainable_parameters(),
                "views": nets.depth.config().n_views,
            });
            println!("{line}");
            return Ok(());
        }
    }
    let lf = load_lf(path, a.angular)?;
    let line = json!({
        "kind": "light_field",
        "angular": [lf.angular().0, lf.angular().1],
        "spatial": [lf.spatial().0, lf.spatial().1],
    });
    println!("{line}");
    Ok(())
}

//! Static SVG charts of per-light-field evaluation metrics.

use std::path::Path;

use plotters::prelude::*;

use lfz_core::pipeline::EvalRecord;

use crate::{CliError, CliResult};

const SIZE: (u32, u32) = (720, 420);
const COLORS: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

/// One line chart per metric, x = light-field index in report order.
pub fn write_eval_plots(report: &[EvalRecord], dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let series = |f: &dyn Fn(&EvalRecord) -> f64| report.iter().map(f).collect::<Vec<f64>>();

    chart(dir, "eval_mssim.svg", "MSSIM", &[("mssim", series(&|r| r.metrics.mssim))])?;
    chart(dir, "eval_mpsnr.svg", "MPSNR (dB)", &[("mpsnr", series(&|r| r.metrics.mpsnr))])?;
    chart(
        dir,
        "eval_dof.svg",
        "Depth-of-field PSNR (dB)",
        &[("dof_psnr", series(&|r| r.metrics.dof_psnr))],
    )?;
    let alphas: Vec<f64> = report.first().map(|r| r.refocus.iter().map(|s| s.alpha).collect()).unwrap_or_default();
    let refocus: Vec<(String, Vec<f64>)> = alphas
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let v = report.iter().map(|r| r.refocus.get(k).map_or(f64::NAN, |s| s.psnr)).collect();
            (format!("alpha {a}"), v)
        })
        .collect();
    let refocus: Vec<(&str, Vec<f64>)> = refocus.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    chart(dir, "eval_refocus.svg", "Refocus PSNR (dB)", &refocus)?;
    if report.iter().any(|r| r.timing.is_some()) {
        let t = |f: fn(&lfz_core::pipeline::Timing) -> f64| series(&move |r| r.timing.as_ref().map_or(f64::NAN, f));
        chart(
            dir,
            "eval_timing.svg",
            "Wall time (s)",
            &[("compress", t(|t| t.compress_secs)), ("decompress", t(|t| t.decompress_secs))],
        )?;
    }
    Ok(())
}

fn chart(dir: &Path, file: &str, ylabel: &str, series: &[(&str, Vec<f64>)]) -> CliResult {
    let path = dir.join(file);
    let finite: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    };
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(1);
    let err = |e: &dyn std::fmt::Display| CliError::Data(format!("cannot draw {}: {e}", path.display()));

    let root = SVGBackend::new(&path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut c = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5..(n as f64 - 0.5), lo..hi)
        .map_err(|e| err(&e))?;
    c.configure_mesh()
        .x_desc("light field")
        .y_desc(ylabel)
        .draw()
        .map_err(|e| err(&e))?;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (i as f64, v))
            .collect();
        c.draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        c.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| err(&e))?;
    }
    c.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

//! Compression (JPEG of the center view) and learned reconstruction of the
//! full light field.

mod container;

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::autodiff::{crop_spatial, pad_spatial, Var};
use crate::error::{Error, Result};
use crate::jpeg::{self, JpegConfig};
use crate::lightfield::{Image, LightField};
use crate::nets::{Nets, DEPTH_ALIGN};
use crate::objectives::{self, serialize_metric, MetricRecord};
use crate::synthesis::{self, DepthStack, Orientation};

pub use container::{ContainerError, LfzContainer, MAGIC, VERSION};

/// Refocus depths reported by [`evaluate`] unless overridden.
pub const DEFAULT_REFOCUS: [f64; 2] = [0.15, 1.5];

/// Encodes only the center view; everything else is discarded.
pub fn compress(lf: &LightField, cfg: &JpegConfig) -> Result<LfzContainer> {
    cfg.validate()?;
    let payload = jpeg::encode(&lf.center_view(), cfg)?;
    Ok(LfzContainer::new(lf.angular(), lf.spatial(), cfg.quality, payload)?)
}

/// Smallest multiple of the disparity net's alignment not below `n`.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(DEPTH_ALIGN) * DEPTH_ALIGN
}

/// Intermediate products of decompression.
pub struct Decoded {
    pub decoded_center: Image,
    pub enhanced_center: Image,
    /// `None` for single-view light fields.
    pub depth: Option<DepthStack>,
    pub lf: LightField,
}

/// Decode → enhance → pad → estimate disparities → crop → warp.
pub fn decompress(c: &LfzContainer, nets: &Nets<f32>) -> Result<LightField> {
    decompress_detail(c, nets, Orientation::default()).map(|d| d.lf)
}

pub fn decompress_detail(c: &LfzContainer, nets: &Nets<f32>, orientation: Orientation) -> Result<Decoded> {
    let angular = c.angular();
    let (h, w) = c.spatial();
    let decoded_center = jpeg::decode(c.payload.as_bytes())?;
    if decoded_center.dims() != (h, w) {
        return Err(Error::InvalidLightField(format!(
            "payload is {:?} but header says {h}x{w}",
            decoded_center.dims()
        )));
    }
    let views = angular.0 * angular.1;
    if views > 1 && nets.depth.config().n_views != views {
        return Err(Error::InvalidArgument(format!(
            "disparity net predicts {} views but the container holds {}x{}",
            nets.depth.config().n_views,
            angular.0,
            angular.1
        )));
    }
    let enhanced = nets
        .hance
        .forward(&Var::constant(decoded_center.to_tensor::<f32>()), false)?;
    let enhanced_center = Image::from_tensor(enhanced.value(), 0)?;
    if views == 1 {
        return Ok(Decoded {
            lf: LightField::new(angular, vec![enhanced_center.clone()])?,
            decoded_center,
            enhanced_center,
            depth: None,
        });
    }
    let padded = pad_spatial(&enhanced, padded_len(h) - h, padded_len(w) - w)?;
    let d = crop_spatial(&nets.depth.forward(&padded)?, h, w)?;
    let depth = DepthStack::from_tensor(angular, d.value())?;
    let lf = synthesis::reconstruct_lf(&enhanced_center, &depth, orientation)?;
    Ok(Decoded {
        decoded_center,
        enhanced_center,
        depth: Some(depth),
        lf,
    })
}

/// The zero-disparity baseline: the decoded center replicated to every view.
pub fn replicate_baseline(c: &LfzContainer) -> Result<LightField> {
    let center = jpeg::decode(c.payload.as_bytes())?;
    LightField::replicated(c.angular(), &center)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefocusScore {
    pub alpha: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub ssim: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub psnr: f64,
}

/// Wall-clock seconds of the two pipeline halves (model loading excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub compress_secs: f64,
    pub decompress_secs: f64,
}

/// Quality metrics, plus timings when the pipeline was run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    #[serde(flatten)]
    pub metrics: MetricRecord,
    pub refocus: Vec<RefocusScore>,
    #[serde(flatten)]
    pub timing: Option<Timing>,
    /// Views whose PSNR was infinite and left out of `mpsnr`.
    pub identical_views: usize,
}

impl EvalRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("eval record serializes")
    }
}

/// Scores `reconstructed` against `gt`.
pub fn score(
    id: &str,
    gt: &LightField,
    reconstructed: &LightField,
    compressed_bytes: usize,
    alphas: &[f64],
    orientation: Orientation,
) -> Result<(MetricRecord, Vec<RefocusScore>, usize)> {
    let psnr = objectives::mpsnr_detail(gt, reconstructed)?;
    let (dof_gt, dof_rec) = (synthesis::dof(gt), synthesis::dof(reconstructed));
    let metrics = MetricRecord {
        id: id.to_string(),
        mssim: objectives::mssim(gt, reconstructed)?,
        mpsnr: psnr.mean,
        bpp: objectives::bpp(compressed_bytes, gt.angular(), gt.spatial())?,
        dof_ssim: objectives::ssim_image(&dof_gt, &dof_rec)?,
        dof_psnr: objectives::psnr(&dof_gt, &dof_rec)?,
    };
    let refocus = alphas
        .iter()
        .map(|&alpha| {
            let a = synthesis::refocus(gt, alpha, orientation);
            let b = synthesis::refocus(reconstructed, alpha, orientation);
            Ok(RefocusScore {
                alpha,
                ssim: objectives::ssim_image(&a, &b)?,
                psnr: objectives::psnr(&a, &b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((metrics, refocus, psnr.excluded))
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, Duration)> {
    let start = Instant::now();
    let r = f()?;
    Ok((r, start.elapsed()))
}

/// Compresses `gt`, decompresses it with `nets` (both timed) and scores
/// the result.
pub fn evaluate(
    id: &str,
    gt: &LightField,
    cfg: &JpegConfig,
    nets: &Nets<f32>,
    alphas: &[f64],
    orientation: Orientation,
) -> Result<EvalRecord> {
    let (bytes, t_compress) = timed(|| compress(gt, cfg).map(|c| c.to_bytes()))?;
    finish(id, gt, &bytes, t_compress, nets, alphas, orientation)
}

/// Scores an existing container against `gt`. The compress time is
/// measured by re-encoding `gt` at the container's quality.
pub fn evaluate_container(
    id: &str,
    gt: &LightField,
    container: &[u8],
    nets: &Nets<f32>,
    alphas: &[f64],
    orientation: Orientation,
) -> Result<EvalRecord> {
    let quality = LfzContainer::from_bytes(container)?.quality;
    let (_, t_compress) = timed(|| compress(gt, &JpegConfig::with_quality(quality)).map(|c| c.to_bytes()))?;
    finish(id, gt, container, t_compress, nets, alphas, orientation)
}

fn finish(
    id: &str,
    gt: &LightField,
    bytes: &[u8],
    t_compress: Duration,
    nets: &Nets<f32>,
    alphas: &[f64],
    orientation: Orientation,
) -> Result<EvalRecord> {
    let (lf, t_decompress) = timed(|| {
        let c = LfzContainer::from_bytes(bytes)?;
        decompress_detail(&c, nets, orientation).map(|d| d.lf)
    })?;
    let (metrics, refocus, identical_views) = score(id, gt, &lf, bytes.len(), alphas, orientation)?;
    Ok(EvalRecord {
        metrics,
        refocus,
        timing: Some(Timing {
            compress_secs: t_compress.as_secs_f64(),
            decompress_secs: t_decompress.as_secs_f64(),
        }),
        identical_views,
    })
}

/// Scores two light fields directly; there is no bitstream, so `bpp` is NaN.
pub fn compare(
    id: &str,
    gt: &LightField,
    other: &LightField,
    alphas: &[f64],
    orientation: Orientation,
) -> Result<EvalRecord> {
    let (mut metrics, refocus, identical_views) = score(id, gt, other, 0, alphas, orientation)?;
    metrics.bpp = f64::NAN;
    Ok(EvalRecord {
        metrics,
        refocus,
        timing: None,
        identical_views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{DepthConfig, HanceConfig};

    fn small_lf() -> LightField {
        let views = (0..9)
            .map(|k| Image::from_fn(20, 24, |y, x, c| ((y * 3 + x * 5 + c * 7 + k) % 17) as f32 / 16.0))
            .collect();
        LightField::new((3, 3), views).unwrap()
    }

    #[test]
    fn padding_geometry() {
        assert_eq!((padded_len(375), padded_len(540)), (384, 544));
        assert_eq!(padded_len(16), 16);
    }

    #[test]
    fn output_dims_follow_header() {
        let lf = small_lf();
        let c = compress(&lf, &JpegConfig::default()).unwrap();
        let nets = Nets::<f32>::new(HanceConfig::DESK, DepthConfig::desk(9), 1);
        let d = decompress_detail(&c, &nets, Orientation::Standard).unwrap();
        assert_eq!(d.lf.angular(), (3, 3));
        assert_eq!(d.lf.spatial(), (20, 24));
        assert_eq!(d.lf.center_view(), d.enhanced_center);
        // the untrained enhancement net is the identity
        assert_eq!(d.enhanced_center, d.decoded_center);
    }

    #[test]
    fn view_count_mismatch_is_reported() {
        let c = compress(&small_lf(), &JpegConfig::default()).unwrap();
        let nets = Nets::<f32>::new(HanceConfig::DESK, DepthConfig::desk(49), 1);
        assert!(decompress(&c, &nets).is_err());
    }

    #[test]
    fn eval_records_carry_timings_only_for_pipeline_runs() {
        let lf = small_lf();
        let nets = Nets::<f32>::new(HanceConfig::DESK, DepthConfig::desk(9), 1);
        let r = evaluate("a", &lf, &JpegConfig::default(), &nets, &[0.5], Orientation::Standard).unwrap();
        let t = r.timing.unwrap();
        assert!(t.compress_secs >= 0.0 && t.decompress_secs >= 0.0);
        assert!(r.to_json_line().contains("\"decompress_secs\""));
        let same = compare("b", &lf, &lf, &[0.5], Orientation::Standard).unwrap();
        assert_eq!(same.metrics.mssim, 1.0);
        assert_eq!(same.identical_views, 9);
        let line = same.to_json_line();
        assert!(!line.contains("compress_secs"));
        assert!(line.contains("\"bpp\":\"nan\""), "{line}");
    }

    #[test]
    fn single_view_light_field() {
        let lf = LightField::new((1, 1), vec![small_lf().center_view()]).unwrap();
        let c = compress(&lf, &JpegConfig::default()).unwrap();
        let nets = Nets::<f32>::new(HanceConfig::DESK, DepthConfig::desk(49), 1);
        let out = decompress(&c, &nets).unwrap();
        assert_eq!(out.angular(), (1, 1));
    }
}

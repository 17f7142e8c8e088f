//! Training losses on autodiff graphs and evaluation metrics on images.

use serde::{Serialize, Serializer};

use crate::autodiff::{
    abs, add, add_n, add_scalar, l1_mean, mean, scale, select_channel, ssim, sub, OpResult, Real, ShapeError,
    SsimWindow, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::lightfield::{Image, LightField};
use crate::par;
use crate::synthesis::{mean_views, reconstruct_views, reproject, warp_to_center};

/// Weights of the four loss terms and the SSIM/L1 blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub photometric: f64,
    pub defocus: f64,
    pub consistency: f64,
    pub dof: f64,
    /// Share of the structural term in [`psi`].
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            photometric: 2.0,
            defocus: 100.0,
            consistency: 0.02,
            dof: 10.0,
            beta: 0.15,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.photometric, self.defocus, self.consistency, self.dof, self.beta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.beta > 1.0 {
            return Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// `β·(1−SSIM)/2 + (1−β)·mean|a−b|`.
pub fn psi<T: Real>(a: &Var<T>, b: &Var<T>, beta: f64, window: &SsimWindow) -> OpResult<T> {
    let l1 = l1_mean(a, b)?;
    let dssim = scale(&add_scalar(&scale(&ssim(a, b, window)?, -1.0), 1.0), 0.5);
    add(&scale(&dssim, beta), &scale(&l1, 1.0 - beta))
}

/// Inputs shared by the loss terms. Views are `[N,H,W,3]` in row-major
/// angular order; `depth` is `[N,H,W,V]`.
pub struct LossInputs<'a, T: Real> {
    pub center: &'a Var<T>,
    pub depth: &'a Var<T>,
    pub gt_views: &'a [Var<T>],
    pub offsets: &'a [(f64, f64)],
    pub beta: f64,
    pub window: SsimWindow,
}

impl<T: Real> LossInputs<'_, T> {
    fn center_index(&self) -> std::result::Result<usize, ShapeError> {
        if self.gt_views.len() != self.offsets.len() {
            return Err(ShapeError::new(
                "loss",
                format!("{} ground-truth views for {} offsets", self.gt_views.len(), self.offsets.len()),
            ));
        }
        self.offsets
            .iter()
            .position(|&o| o == (0.0, 0.0))
            .ok_or_else(|| ShapeError::new("loss", "angular grid has no center view"))
    }

    fn map(&self, k: usize) -> OpResult<T> {
        select_channel(self.depth, k)
    }

    fn to_center(&self) -> std::result::Result<Vec<Var<T>>, ShapeError> {
        (0..self.offsets.len())
            .map(|k| warp_to_center(&self.gt_views[k], &self.map(k)?, self.offsets[k]))
            .collect()
    }
}

/// The four loss terms, unweighted.
pub struct LossTerms<T: Real> {
    pub photometric: Var<T>,
    pub defocus: Var<T>,
    pub consistency: Var<T>,
    pub dof: Var<T>,
}

impl<T: Real> LossTerms<T> {
    pub fn values(&self) -> [f64; 4] {
        [&self.photometric, &self.defocus, &self.consistency, &self.dof].map(|v| v.item().to_f64_lossy())
    }
}

/// Σ_u ψ(center warped to u, GT u) + ψ(GT u warped to center, GT center).
pub fn loss_photometric<T: Real>(inp: &LossInputs<'_, T>) -> OpResult<T> {
    let c = inp.center_index()?;
    let pred = reconstruct_views(inp.center, inp.depth, inp.offsets)?;
    photometric_from(inp, c, &pred, &inp.to_center()?)
}

fn photometric_from<T: Real>(
    inp: &LossInputs<'_, T>,
    c: usize,
    pred: &[Var<T>],
    back: &[Var<T>],
) -> OpResult<T> {
    let mut terms = Vec::with_capacity(2 * pred.len());
    for k in 0..pred.len() {
        terms.push(psi(&pred[k], &inp.gt_views[k], inp.beta, &inp.window)?);
        terms.push(psi(&back[k], &inp.gt_views[c], inp.beta, &inp.window)?);
    }
    add_n(&terms)
}

/// ψ(GT center, mean of all GT views warped to the center).
pub fn loss_defocus<T: Real>(inp: &LossInputs<'_, T>) -> OpResult<T> {
    let c = inp.center_index()?;
    defocus_from(inp, c, &inp.to_center()?)
}

fn defocus_from<T: Real>(inp: &LossInputs<'_, T>, c: usize, back: &[Var<T>]) -> OpResult<T> {
    psi(&inp.gt_views[c], &mean_views(back)?, inp.beta, &inp.window)
}

/// Σ_u mean |d_u − center map reprojected along d_u|.
pub fn loss_consistency<T: Real>(inp: &LossInputs<'_, T>) -> OpResult<T> {
    let c = inp.center_index()?;
    let dc = inp.map(c)?;
    let terms = (0..inp.offsets.len())
        .map(|k| {
            let dk = inp.map(k)?;
            let r = reproject(&dc, &dk, inp.offsets[k])?;
            Ok(mean(&abs(&sub(&dk, &r)?)))
        })
        .collect::<std::result::Result<Vec<_>, ShapeError>>()?;
    add_n(&terms)
}

/// ψ(DoF of GT, DoF of the predicted light field).
pub fn loss_dof<T: Real>(inp: &LossInputs<'_, T>) -> OpResult<T> {
    inp.center_index()?;
    let pred = reconstruct_views(inp.center, inp.depth, inp.offsets)?;
    dof_from(inp, &pred)
}

fn dof_from<T: Real>(inp: &LossInputs<'_, T>, pred: &[Var<T>]) -> OpResult<T> {
    psi(&mean_views(inp.gt_views)?, &mean_views(pred)?, inp.beta, &inp.window)
}

/// All four terms, sharing the warps between them.
pub fn loss_terms<T: Real>(inp: &LossInputs<'_, T>) -> std::result::Result<LossTerms<T>, ShapeError> {
    let c = inp.center_index()?;
    let pred = reconstruct_views(inp.center, inp.depth, inp.offsets)?;
    let back = inp.to_center()?;
    Ok(LossTerms {
        photometric: photometric_from(inp, c, &pred, &back)?,
        defocus: defocus_from(inp, c, &back)?,
        consistency: loss_consistency(inp)?,
        dof: dof_from(inp, &pred)?,
    })
}

/// Weighted sum of the terms; fails on a non-finite term.
pub fn loss_total<T: Real>(terms: &LossTerms<T>, w: &LossWeights) -> Result<Var<T>> {
    let names = ["photometric", "defocus", "consistency", "dof"];
    if let Some((name, v)) = names.iter().zip(terms.values()).find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite {name} loss ({v})")));
    }
    Ok(add_n(&[
        scale(&terms.photometric, w.photometric),
        scale(&terms.defocus, w.defocus),
        scale(&terms.consistency, w.consistency),
        scale(&terms.dof, w.dof),
    ])?)
}

// ---- evaluation metrics -------------------------------------------------

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidArgument(format!(
            "image dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean SSIM of two images (11×11 Gaussian window, σ 1.5, channels averaged).
pub fn ssim_image(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let va = Var::constant(a.to_tensor::<f64>());
    let vb = Var::constant(b.to_tensor::<f64>());
    Ok(ssim(&va, &vb, &SsimWindow::default())?.item())
}

/// PSNR with peak 1.0; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn check_lf(a: &LightField, b: &LightField) -> Result<()> {
    if a.angular() != b.angular() || a.spatial() != b.spatial() {
        return Err(Error::InvalidArgument(format!(
            "light field dims differ: {:?}x{:?} vs {:?}x{:?}",
            a.angular(),
            a.spatial(),
            b.angular(),
            b.spatial()
        )));
    }
    Ok(())
}

/// Mean of per-view SSIM.
pub fn mssim(a: &LightField, b: &LightField) -> Result<f64> {
    check_lf(a, b)?;
    let per = par::map_indexed(a.num_views(), |k| ssim_image(&a.views()[k], &b.views()[k]));
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean per-view PSNR with the number of identical (infinite) views left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrMean {
    /// Mean over finite views; `+inf` when every view is identical.
    pub mean: f64,
    pub excluded: usize,
}

pub fn mpsnr_detail(a: &LightField, b: &LightField) -> Result<PsnrMean> {
    check_lf(a, b)?;
    let per = par::map_indexed(a.num_views(), |k| psnr(&a.views()[k], &b.views()[k]));
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = per.iter().copied().filter(|p| p.is_finite()).collect();
    let excluded = per.len() - finite.len();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(PsnrMean { mean, excluded })
}

pub fn mpsnr(a: &LightField, b: &LightField) -> Result<f64> {
    mpsnr_detail(a, b).map(|m| m.mean)
}

/// Bits per light-field sample: `8·bytes / (U·V·H·W)`.
pub fn bpp(bytes: usize, angular: (usize, usize), spatial: (usize, usize)) -> Result<f64> {
    let samples = angular.0 * angular.1 * spatial.0 * spatial.1;
    if samples == 0 {
        return Err(Error::InvalidArgument("bpp of an empty light field".into()));
    }
    Ok(8.0 * bytes as f64 / samples as f64)
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` or `"nan"`.
pub fn serialize_metric<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// One evaluation record per light field.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRecord {
    pub id: String,
    #[serde(serialize_with = "serialize_metric")]
    pub mssim: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub mpsnr: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub bpp: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub dof_ssim: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub dof_psnr: f64,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric record serializes")
    }
}

/// Converts light-field views to `[1,H,W,3]` graph constants.
pub fn views_to_vars<T: Real>(lf: &LightField) -> Vec<Var<T>> {
    lf.views().iter().map(|v| Var::constant(v.to_tensor::<T>())).collect()
}

/// Stacks equally sized `[1,H,W,C]` tensors into `[N,H,W,C]`.
pub fn stack<T: Real>(items: &[Tensor<T>]) -> std::result::Result<Tensor<T>, ShapeError> {
    let first = items.first().ok_or_else(|| ShapeError::new("stack", "nothing to stack"))?;
    let (_, h, w, c) = first.dims4("stack")?;
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(ShapeError::new(
                "stack",
                format!("shape {:?} differs from {:?}", t.shape(), first.shape()),
            ));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![items.len() * first.shape()[0], h, w, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(img: &Image) -> Var<f64> {
        Var::constant(img.to_tensor())
    }

    #[test]
    fn psi_of_identical_is_zero_and_pure_l1_of_unit_gap_is_one() {
        let a = Image::from_fn(12, 12, |y, x, c| ((y + x + c) % 5) as f32 / 4.0);
        let w = SsimWindow::default();
        assert_eq!(psi(&var(&a), &var(&a), 0.15, &w).unwrap().item(), 0.0);
        let zero = Image::zeros(8, 8);
        let one = Image::filled(8, 8, [1.0; 3]);
        assert_eq!(psi(&var(&zero), &var(&one), 0.0, &w).unwrap().item(), 1.0);
    }

    #[test]
    fn total_of_unit_terms() {
        let one = || Var::constant(Tensor::scalar(1.0f64));
        let terms = LossTerms {
            photometric: one(),
            defocus: one(),
            consistency: one(),
            dof: one(),
        };
        let t = loss_total(&terms, &LossWeights::default()).unwrap().item();
        assert!((t - 112.02).abs() < 1e-12);
    }

    #[test]
    fn non_finite_term_is_rejected() {
        let v = |x: f64| Var::constant(Tensor::scalar(x));
        let terms = LossTerms {
            photometric: v(0.0),
            defocus: v(f64::NAN),
            consistency: v(0.0),
            dof: v(0.0),
        };
        assert!(loss_total(&terms, &LossWeights::default()).is_err());
    }

    #[test]
    fn psnr_of_one_level_error() {
        let a = Image::zeros(4, 4);
        let b = Image::filled(4, 4, [1.0 / 255.0; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bpp_arithmetic() {
        let b = bpp(5830, (7, 7), (375, 540)).unwrap();
        assert_eq!(format!("{b:.5}"), "0.00470");
        assert_eq!(bpp(0, (7, 7), (375, 540)).unwrap(), 0.0);
        assert!(bpp(1, (0, 7), (3, 3)).is_err());
    }

    #[test]
    fn infinite_metrics_serialize_as_strings() {
        let r = MetricRecord {
            id: "x".into(),
            mssim: 1.0,
            mpsnr: f64::INFINITY,
            bpp: 0.5,
            dof_ssim: 1.0,
            dof_psnr: f64::INFINITY,
        };
        let line = r.to_json_line();
        assert!(line.contains("\"mpsnr\":\"inf\""), "{line}");
    }
}

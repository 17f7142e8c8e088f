//! Disparity-driven view synthesis, depth-of-field images and refocusing.
//!
//! Views relate to the center view through per-view disparity maps `d_u`:
//! view `u` at pixel `x` shows the center view at `x + Δ·d_u(x)`, where `Δ`
//! is the angular offset `(u−u0, v−v0)` applied to (row, column).

use crate::autodiff::{
    add_n, bilinear_at, disparity_coords, grid_sample_bilinear, scale, select_channel, OpResult, Real, ShapeError,
    Tensor, Var,
};
use crate::error::{Error, Result};
use crate::lightfield::{view_offsets, Image, LightField};
use crate::par;

/// Sign convention for angular offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Orientation {
    /// `+Δu` moves the sampling point down, `+Δv` moves it right.
    #[default]
    Standard,
    /// Both axes reversed.
    Flipped,
}

impl Orientation {
    pub fn offset(self, (du, dv): (i32, i32)) -> (f64, f64) {
        let s = match self {
            Orientation::Standard => 1.0,
            Orientation::Flipped => -1.0,
        };
        (s * f64::from(du), s * f64::from(dv))
    }

    pub fn offsets(self, angular: (usize, usize)) -> Vec<(f64, f64)> {
        view_offsets(angular).into_iter().map(|o| self.offset(o)).collect()
    }
}

/// One disparity map per view, stored as `[view][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthStack {
    angular: (usize, usize),
    height: usize,
    width: usize,
    maps: Vec<f32>,
}

impl DepthStack {
    pub fn new(angular: (usize, usize), height: usize, width: usize, maps: Vec<f32>) -> Result<Self> {
        let views = angular.0 * angular.1;
        if views == 0 || height == 0 || width == 0 || maps.len() != views * height * width {
            return Err(Error::InvalidArgument(format!(
                "disparity stack for {}x{} views of {height}x{width} needs {} values, got {}",
                angular.0,
                angular.1,
                views * height * width,
                maps.len()
            )));
        }
        if maps.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite disparity".into()));
        }
        Ok(DepthStack {
            angular,
            height,
            width,
            maps,
        })
    }

    pub fn constant(angular: (usize, usize), height: usize, width: usize, value: f32) -> Self {
        DepthStack {
            angular,
            height,
            width,
            maps: vec![value; angular.0 * angular.1 * height * width],
        }
    }

    /// Reads an `[1,H,W,V]` network output.
    pub fn from_tensor<T: Real>(angular: (usize, usize), t: &Tensor<T>) -> Result<Self> {
        let (n, h, w, c) = t.dims4("depth stack")?;
        if n != 1 || c != angular.0 * angular.1 {
            return Err(Error::InvalidArgument(format!(
                "disparity tensor {:?} does not match {}x{} views",
                t.shape(),
                angular.0,
                angular.1
            )));
        }
        let mut maps = vec![0.0f32; c * h * w];
        for (p, px) in t.data().chunks_exact(c).enumerate() {
            for (k, v) in px.iter().enumerate() {
                maps[k * h * w + p] = v.to_f32().unwrap_or(f32::NAN);
            }
        }
        Self::new(angular, h, w, maps)
    }

    /// `[1,H,W,V]` tensor with one channel per view.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (v, hw) = (self.num_views(), self.height * self.width);
        Tensor::from_fn(&[1, self.height, self.width, v], |i| {
            T::from_f32(self.maps[(i % v) * hw + i / v]).expect("f32")
        })
    }

    pub fn angular(&self) -> (usize, usize) {
        self.angular
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_views(&self) -> usize {
        self.angular.0 * self.angular.1
    }

    /// Disparity map of view `k` (row-major view index).
    pub fn map(&self, k: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.maps[k * hw..(k + 1) * hw]
    }

    /// `(u, v)` of each map, in storage order.
    pub fn view_index_map(&self) -> Vec<(usize, usize)> {
        let (nu, nv) = self.angular;
        (0..nu).flat_map(|u| (0..nv).map(move |v| (u, v))).collect()
    }

    pub fn max_abs(&self) -> f32 {
        self.maps.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Resamples `center: [N,H,W,C]` at `x + offset·d(x)` (`d: [N,H,W,1]`).
pub fn warp_from_center<T: Real>(center: &Var<T>, d: &Var<T>, offset: (f64, f64)) -> OpResult<T> {
    check_map(center, d, "warp")?;
    grid_sample_bilinear(center, &disparity_coords(d, offset)?)
}

/// Brings a view back onto the center grid, sampling it at `x − offset·d(x)`
/// with the view's own disparity map.
pub fn warp_to_center<T: Real>(view: &Var<T>, d: &Var<T>, offset: (f64, f64)) -> OpResult<T> {
    check_map(view, d, "warp")?;
    grid_sample_bilinear(view, &disparity_coords(d, (-offset.0, -offset.1))?)
}

/// Center disparity map resampled along view `u`'s disparities.
pub fn reproject<T: Real>(d_center: &Var<T>, d_view: &Var<T>, offset: (f64, f64)) -> OpResult<T> {
    check_map(d_center, d_view, "reproject")?;
    grid_sample_bilinear(d_center, &disparity_coords(d_view, offset)?)
}

fn check_map<T: Real>(img: &Var<T>, d: &Var<T>, op: &'static str) -> std::result::Result<(), ShapeError> {
    let (n, h, w, _) = img.value().dims4(op)?;
    let (dn, dh, dw, dc) = d.value().dims4(op)?;
    if (dn, dh, dw, dc) != (n, h, w, 1) {
        return Err(ShapeError::new(
            op,
            format!("disparity {:?} does not match image {:?}", d.shape(), img.shape()),
        ));
    }
    Ok(())
}

/// Every view of the light field predicted from `center: [N,H,W,3]` and
/// `depth: [N,H,W,V]`. The center entry is `center` itself.
pub fn reconstruct_views<T: Real>(
    center: &Var<T>,
    depth: &Var<T>,
    offsets: &[(f64, f64)],
) -> std::result::Result<Vec<Var<T>>, ShapeError> {
    let (_, _, _, v) = depth.value().dims4("reconstruct")?;
    if v != offsets.len() {
        return Err(ShapeError::new(
            "reconstruct",
            format!("{v} disparity maps for {} views", offsets.len()),
        ));
    }
    offsets
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            if o == (0.0, 0.0) {
                Ok(center.clone())
            } else {
                warp_from_center(center, &select_channel(depth, k)?, o)
            }
        })
        .collect()
}

/// Per-pixel mean of equally shaped views.
pub fn mean_views<T: Real>(views: &[Var<T>]) -> OpResult<T> {
    let n = views.len();
    if n == 0 {
        return Err(ShapeError::new("mean_views", "no views"));
    }
    Ok(scale(&add_n(views)?, 1.0 / n as f64))
}

/// Warps `center` to the view at `offset` using that view's disparity map
/// (row-major, `H·W` values).
pub fn warp_center_to_view(center: &Image, d: &[f32], offset: (f64, f64)) -> Result<Image> {
    let (h, w) = center.dims();
    if d.len() != h * w {
        return Err(Error::InvalidArgument(format!(
            "disparity map has {} values for a {h}x{w} view",
            d.len()
        )));
    }
    let dv = Var::constant(Tensor::new(vec![1, h, w, 1], d.to_vec())?);
    let out = warp_from_center(&Var::constant(center.to_tensor::<f32>()), &dv, offset)?;
    Image::from_tensor(out.value(), 0)
}

/// Full light field synthesized from the center view; the center stays bitwise.
pub fn reconstruct_lf(center: &Image, depth: &DepthStack, orientation: Orientation) -> Result<LightField> {
    if depth.spatial() != center.dims() {
        return Err(Error::InvalidArgument(format!(
            "disparity stack {:?} does not match center view {:?}",
            depth.spatial(),
            center.dims()
        )));
    }
    let angular = depth.angular();
    let offsets = orientation.offsets(angular);
    let views = par::map_indexed(offsets.len(), |k| {
        if offsets[k] == (0.0, 0.0) {
            Ok(center.clone())
        } else {
            warp_center_to_view(center, depth.map(k), offsets[k])
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    LightField::new(angular, views)
}

fn mean_images(images: &[Image]) -> Image {
    let (h, w) = images[0].dims();
    let n = images.len() as f64;
    let mut acc = vec![0.0f64; h * w * 3];
    for img in images {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += f64::from(v);
        }
    }
    Image::from_fn(h, w, |y, x, c| (acc[(y * w + x) * 3 + c] / n) as f32)
}

/// Depth-of-field image: per-pixel mean over all views.
pub fn dof(lf: &LightField) -> Image {
    mean_images(lf.views())
}

/// Shift-and-add refocus: each view is sampled at `x − α·Δ` so that scene
/// content at disparity `α` aligns across views. `α = 0` is [`dof`].
pub fn refocus(lf: &LightField, alpha: f64, orientation: Orientation) -> Image {
    let (h, w) = lf.spatial();
    let offsets = orientation.offsets(lf.angular());
    let shifted = par::map_indexed(lf.num_views(), |k| {
        let (oy, ox) = ((-alpha * offsets[k].0) as f32, (-alpha * offsets[k].1) as f32);
        let src = lf.views()[k].data();
        let mut out = vec![0.0f32; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                bilinear_at(src, h, w, 3, y as f32 + oy, x as f32 + ox, &mut out[(y * w + x) * 3..][..3]);
            }
        }
        Image::from_vec(h, w, out).expect("convex combination of valid samples")
    });
    mean_images(&shifted)
}

/// Center disparity map reprojected to view `target`.
pub fn reproject_depth(depth: &DepthStack, target: (usize, usize), orientation: Orientation) -> Result<Vec<f32>> {
    let (nu, nv) = depth.angular();
    if target.0 >= nu || target.1 >= nv {
        return Err(Error::InvalidArgument(format!(
            "view ({}, {}) outside {nu}x{nv} grid",
            target.0, target.1
        )));
    }
    let (h, w) = depth.spatial();
    let center = ((nu - 1) / 2) * nv + (nv - 1) / 2;
    let k = target.0 * nv + target.1;
    let offset = orientation.offset((
        target.0 as i32 - (nu as i32 - 1) / 2,
        target.1 as i32 - (nv as i32 - 1) / 2,
    ));
    let plane = |i: usize| Tensor::new(vec![1, h, w, 1], depth.map(i).to_vec()).map(Var::constant);
    let out = reproject(&plane(center)?, &plane(k)?, offset)?;
    Ok(out.value().data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| ((y * 7 + x * 13 + c * 29) % 31) as f32 / 30.0)
    }

    #[test]
    fn zero_disparity_replicates_center() {
        let c = texture(9, 11);
        let lf = reconstruct_lf(&c, &DepthStack::constant((3, 5), 9, 11, 0.0), Orientation::Standard).unwrap();
        assert!(lf.views().iter().all(|v| v == &c));
    }

    #[test]
    fn unit_disparity_shifts_one_pixel() {
        let c = texture(8, 10);
        let out = warp_center_to_view(&c, &vec![1.0; 80], (0.0, 1.0)).unwrap();
        for y in 0..8 {
            for x in 0..9 {
                for ch in 0..3 {
                    assert_eq!(out.get(y, x, ch), c.get(y, x + 1, ch));
                }
            }
        }
    }

    #[test]
    fn refocus_at_zero_is_dof() {
        let views: Vec<Image> = (0..9)
            .map(|k| Image::from_fn(6, 7, |y, x, c| ((y * x + k * 5 + c) % 11) as f32 / 10.0))
            .collect();
        let lf = LightField::new((3, 3), views).unwrap();
        assert_eq!(refocus(&lf, 0.0, Orientation::Standard), dof(&lf));
    }

    #[test]
    fn one_bright_view_gives_uniform_fraction() {
        let mut views = vec![Image::zeros(4, 4); 49];
        views[10] = Image::filled(4, 4, [1.0; 3]);
        let out = dof(&LightField::new((7, 7), views).unwrap());
        assert!(out.data().iter().all(|&v| v == 1.0 / 49.0));
    }

    #[test]
    fn constant_depth_reprojects_to_itself() {
        let d = DepthStack::constant((3, 3), 5, 6, 1.25);
        for t in [(0, 0), (1, 1), (2, 1)] {
            assert!(reproject_depth(&d, t, Orientation::Standard).unwrap().iter().all(|&v| v == 1.25));
        }
    }

    #[test]
    fn stack_tensor_round_trip() {
        let maps: Vec<f32> = (0..4 * 3 * 5).map(|i| i as f32 * 0.1 - 2.0).collect();
        let e = DepthStack::new((1, 5), 3, 4, maps[..59].to_vec()).unwrap_err();
        assert!(matches!(e, Error::InvalidArgument(_)));
        let d = DepthStack::new((1, 5), 3, 4, maps).unwrap();
        assert_eq!(DepthStack::from_tensor((1, 5), &d.to_tensor::<f32>()).unwrap(), d);
    }

    #[test]
    fn flipped_orientation_negates_offsets() {
        assert_eq!(Orientation::Flipped.offset((2, -1)), (-2.0, 1.0));
    }
}

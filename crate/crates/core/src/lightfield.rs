//! Light-field data model: RGB views on a regular angular grid.
//!
//! Samples live in `[0, 1]` as `f32`, interleaved R,G,B. Views are stored
//! row-major over the angular grid (`u` is the row, `v` the column).

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// A single `H × W × 3` view with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    /// Builds an image from a per-sample function; results are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// Wraps interleaved RGB samples, rejecting non-finite or out-of-range values.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// Like [`Image::from_vec`] but clamps into range instead of failing.
    pub(crate) fn from_vec_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// `[1,H,W,3]` tensor of this image.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, self.height, self.width, 3],
            self.data.iter().map(|&v| T::from_f32(v).expect("f32")).collect(),
        )
        .expect("image dims")
    }

    /// Image `index` of an `[N,H,W,3]` tensor, clamped into `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, h, w, c) = t.dims4("image")?;
        if c != 3 || index >= n {
            return Err(Error::InvalidArgument(format!(
                "cannot take image {index} of a tensor shaped {:?}",
                t.shape()
            )));
        }
        let plane = h * w * 3;
        let data = t.data()[index * plane..(index + 1) * plane]
            .iter()
            .map(|v| v.to_f32().unwrap_or(0.0))
            .collect();
        Ok(Self::from_vec_clamped(h, w, data))
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Self {
        assert_eq!(rgb.len(), height * width * 3);
        Image {
            height,
            width,
            data: rgb.iter().map(|&b| f32::from(b) / 255.0).collect(),
        }
    }

    /// Quantizes to 8 bits with round-half-away-from-zero.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Image {
            height,
            width,
            data,
        }
    }

    fn to_rgb_image(&self) -> RgbImage {
        ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        Ok(Image::from_rgb8(
            rgb.height() as usize,
            rgb.width() as usize,
            rgb.as_raw(),
        ))
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Views on a regular angular grid with no parity requirement.
///
/// Raw Lytro-style grids are 14×14; they must be cropped to odd angular
/// dimensions before they form a [`LightField`].
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGrid {
    angular: (usize, usize),
    views: Vec<Image>,
}

impl ViewGrid {
    pub fn new(angular: (usize, usize), views: Vec<Image>) -> Result<Self> {
        let (nu, nv) = angular;
        if nu == 0 || nv == 0 {
            return Err(Error::InvalidLightField("empty angular grid".into()));
        }
        if views.len() != nu * nv {
            return Err(Error::InvalidLightField(format!(
                "expected {} views for a {nu}x{nv} grid, got {}",
                nu * nv,
                views.len()
            )));
        }
        let dims = views[0].dims();
        if let Some((i, v)) = views.iter().enumerate().find(|(_, v)| v.dims() != dims) {
            return Err(Error::InvalidLightField(format!(
                "view {} is {}x{}, expected {}x{}",
                i, v.height, v.width, dims.0, dims.1
            )));
        }
        Ok(ViewGrid { angular, views })
    }

    pub fn angular(&self) -> (usize, usize) {
        self.angular
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.views[0].dims()
    }

    pub fn view(&self, u: usize, v: usize) -> &Image {
        &self.views[u * self.angular.1 + v]
    }

    /// Center-anchored crop to odd angular dimensions.
    pub fn crop(&self, angular: (usize, usize), spatial: (usize, usize)) -> Result<LightField> {
        let (nu, nv) = self.angular;
        let (h, w) = self.spatial();
        let (cu, cv) = angular;
        let (ch, cw) = spatial;
        if cu % 2 == 0 || cv % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "angular crop {cu}x{cv} must be odd in both dimensions"
            )));
        }
        if cu > nu || cv > nv || ch > h || cw > w || ch == 0 || cw == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {cu}x{cv}x{ch}x{cw} does not fit inside {nu}x{nv}x{h}x{w}"
            )));
        }
        let (ou, ov) = ((nu - cu) / 2, (nv - cv) / 2);
        let (oy, ox) = ((h - ch) / 2, (w - cw) / 2);
        let mut views = Vec::with_capacity(cu * cv);
        for u in ou..ou + cu {
            for v in ov..ov + cv {
                let src = self.view(u, v);
                views.push(if (ch, cw) == (h, w) {
                    src.clone()
                } else {
                    src.crop(oy, ox, ch, cw)
                });
            }
        }
        LightField::new(angular, views)
    }

    pub fn into_light_field(self) -> Result<LightField> {
        LightField::new(self.angular, self.views)
    }
}

/// A light field with odd angular dimensions and a unique center view.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    angular: (usize, usize),
    views: Vec<Image>,
}

impl LightField {
    pub fn new(angular: (usize, usize), views: Vec<Image>) -> Result<Self> {
        let grid = ViewGrid::new(angular, views)?;
        let (nu, nv) = angular;
        if nu % 2 == 0 || nv % 2 == 0 {
            return Err(Error::InvalidLightField(format!(
                "angular dimensions {nu}x{nv} must be odd"
            )));
        }
        Ok(LightField {
            angular,
            views: grid.views,
        })
    }

    /// Every view a copy of `center`.
    pub fn replicated(angular: (usize, usize), center: &Image) -> Result<Self> {
        Self::new(angular, vec![center.clone(); angular.0 * angular.1])
    }

    pub fn angular(&self) -> (usize, usize) {
        self.angular
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.views[0].dims()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn center_index(&self) -> (usize, usize) {
        ((self.angular.0 - 1) / 2, (self.angular.1 - 1) / 2)
    }

    pub fn view(&self, u: usize, v: usize) -> &Image {
        &self.views[u * self.angular.1 + v]
    }

    pub fn views(&self) -> &[Image] {
        &self.views
    }

    /// Angular offset `(u - u0, v - v0)` of each view in storage order.
    pub fn offsets(&self) -> Vec<(i32, i32)> {
        view_offsets(self.angular)
    }

    pub fn center_view(&self) -> Image {
        let (u0, v0) = self.center_index();
        self.view(u0, v0).clone()
    }

    pub fn crop(&self, angular: (usize, usize), spatial: (usize, usize)) -> Result<LightField> {
        ViewGrid {
            angular: self.angular,
            views: self.views.clone(),
        }
        .crop(angular, spatial)
    }

    pub fn pseudo_sequence(&self, order: ViewOrder) -> Vec<Image> {
        order
            .sequence(self.angular)
            .into_iter()
            .map(|(u, v)| self.view(u, v).clone())
            .collect()
    }

    /// Total sample count `U·V·H·W`.
    pub fn sample_count(&self) -> usize {
        let (h, w) = self.spatial();
        self.views.len() * h * w
    }
}

/// Angular offsets of a grid relative to its center, row-major.
pub fn view_offsets(angular: (usize, usize)) -> Vec<(i32, i32)> {
    let (nu, nv) = angular;
    let (u0, v0) = ((nu as i32 - 1) / 2, (nv as i32 - 1) / 2);
    (0..nu as i32)
        .flat_map(|u| (0..nv as i32).map(move |v| (u - u0, v - v0)))
        .collect()
}

/// Extracts the center view; free-function form of [`LightField::center_view`].
pub fn center_view(lf: &LightField) -> Image {
    lf.center_view()
}

/// Center-anchored crop; free-function form of [`LightField::crop`].
pub fn crop(lf: &LightField, angular: (usize, usize), spatial: (usize, usize)) -> Result<LightField> {
    lf.crop(angular, spatial)
}

/// Linearization of the angular grid for video-codec pseudo-sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewOrder {
    /// Row-major: `u` ascending, `v` ascending within each row.
    Raster,
    /// Starts at the center, steps right, then walks clockwise in growing rings.
    Spiral,
}

impl std::str::FromStr for ViewOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(ViewOrder::Raster),
            "spiral" => Ok(ViewOrder::Spiral),
            other => Err(Error::InvalidArgument(format!(
                "unknown view order '{other}' (expected raster or spiral)"
            ))),
        }
    }
}

impl ViewOrder {
    pub fn sequence(self, angular: (usize, usize)) -> Vec<(usize, usize)> {
        let (nu, nv) = angular;
        match self {
            ViewOrder::Raster => (0..nu)
                .flat_map(|u| (0..nv).map(move |v| (u, v)))
                .collect(),
            ViewOrder::Spiral => {
                let total = nu * nv;
                let mut out = Vec::with_capacity(total);
                let (mut u, mut v) = (((nu as i64) - 1) / 2, ((nv as i64) - 1) / 2);
                // right, down, left, up
                const DIRS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
                let in_bounds =
                    |u: i64, v: i64| u >= 0 && v >= 0 && (u as usize) < nu && (v as usize) < nv;
                if in_bounds(u, v) {
                    out.push((u as usize, v as usize));
                }
                let mut leg = 1;
                let mut dir = 0;
                while out.len() < total {
                    for _ in 0..2 {
                        let (du, dv) = DIRS[dir % 4];
                        for _ in 0..leg {
                            u += du;
                            v += dv;
                            if in_bounds(u, v) {
                                out.push((u as usize, v as usize));
                            }
                        }
                        dir += 1;
                    }
                    leg += 1;
                }
                out
            }
        }
    }
}

/// On-disk arrangement of a light field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// One losslessly coded image per view named `view_{u}_{v}.<ext>`.
    ViewDirectory,
    /// A single image of `U × V` tiles in row-major angular order.
    GridImage { angular: (usize, usize) },
}

/// Loads views without enforcing odd angular dimensions.
pub fn load_view_grid(path: impl AsRef<Path>, layout: Layout) -> Result<ViewGrid> {
    let path = path.as_ref();
    match layout {
        Layout::ViewDirectory => load_view_directory(path),
        Layout::GridImage { angular } => load_grid_image(path, angular),
    }
}

/// Loads a light field; 8-bit samples are scaled into `[0, 1]` by `1/255`.
pub fn load_light_field(path: impl AsRef<Path>, layout: Layout) -> Result<LightField> {
    load_view_grid(path, layout)?.into_light_field()
}

fn parse_view_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    let rest = stem.strip_prefix("view_")?;
    let (u, v) = rest.split_once('_')?;
    Some((u.parse().ok()?, v.parse().ok()?))
}

fn load_view_directory(dir: &Path) -> Result<ViewGrid> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<((usize, usize), PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(parse_view_name) {
            found.push((idx, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidLightField(format!(
            "no view_{{u}}_{{v}} files in {}",
            dir.display()
        )));
    }
    let nu = found.iter().map(|((u, _), _)| u + 1).max().unwrap_or(0);
    let nv = found.iter().map(|((_, v), _)| v + 1).max().unwrap_or(0);
    let mut paths: Vec<Option<PathBuf>> = vec![None; nu * nv];
    for ((u, v), p) in found {
        let slot = &mut paths[u * nv + v];
        // prefer a deterministic choice when several extensions exist
        if slot.as_ref().is_none_or(|old| p < *old) {
            *slot = Some(p);
        }
    }
    if let Some(i) = paths.iter().position(Option::is_none) {
        return Err(Error::MissingView {
            dir: dir.to_path_buf(),
            u: i / nv,
            v: i % nv,
        });
    }
    let views = par::map_indexed(paths.len(), |i| {
        Image::load(paths[i].as_ref().expect("checked above"))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    ViewGrid::new((nu, nv), views)
}

fn load_grid_image(path: &Path, angular: (usize, usize)) -> Result<ViewGrid> {
    let (nu, nv) = angular;
    if nu == 0 || nv == 0 {
        return Err(Error::InvalidArgument("angular grid must be non-empty".into()));
    }
    let grid = Image::load(path)?;
    let (gh, gw) = grid.dims();
    if gh % nu != 0 || gw % nv != 0 {
        return Err(Error::InvalidLightField(format!(
            "grid image {gh}x{gw} is not divisible into {nu}x{nv} tiles"
        )));
    }
    let (h, w) = (gh / nu, gw / nv);
    let views = (0..nu)
        .flat_map(|u| (0..nv).map(move |v| (u, v)))
        .map(|(u, v)| grid.crop(u * h, v * w, h, w))
        .collect();
    ViewGrid::new(angular, views)
}

/// Writes one PNG per view as `view_{u}_{v}.png`.
pub fn save_view_directory(lf: &LightField, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (_, nv) = lf.angular();
    par::map_indexed(lf.num_views(), |i| {
        lf.views[i].save_png(dir.join(format!("view_{}_{}.png", i / nv, i % nv)))
    })
    .into_iter()
    .collect()
}

/// Writes all views tiled into a single PNG.
pub fn save_grid_image(lf: &LightField, path: impl AsRef<Path>) -> Result<()> {
    let (nu, nv) = lf.angular();
    let (h, w) = lf.spatial();
    let mut buf: RgbImage = ImageBuffer::new((w * nv) as u32, (h * nu) as u32);
    for u in 0..nu {
        for v in 0..nv {
            let view = lf.view(u, v);
            for y in 0..h {
                for x in 0..w {
                    let px = Rgb([
                        quantize_u8(view.get(y, x, 0)),
                        quantize_u8(view.get(y, x, 1)),
                        quantize_u8(view.get(y, x, 2)),
                    ]);
                    buf.put_pixel((v * w + x) as u32, (u * h + y) as u32, px);
                }
            }
        }
    }
    let path = path.as_ref();
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, k: f32) -> Image {
        Image::from_fn(h, w, |y, x, c| ((y * 7 + x * 3 + c) as f32 * 0.01 + k).fract())
    }

    fn grid(nu: usize, nv: usize, h: usize, w: usize) -> Vec<Image> {
        (0..nu * nv).map(|i| ramp(h, w, i as f32 * 0.013)).collect()
    }

    #[test]
    fn raster_3x3() {
        let s = ViewOrder::Raster.sequence((3, 3));
        assert_eq!(
            s,
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]
        );
    }

    #[test]
    fn spiral_3x3_matches_hand_enumeration() {
        // center, right, then clockwise around the ring
        let expected = vec![
            (1, 1),
            (1, 2),
            (2, 2),
            (2, 1),
            (2, 0),
            (1, 0),
            (0, 0),
            (0, 1),
            (0, 2),
        ];
        let s = ViewOrder::Spiral.sequence((3, 3));
        assert_eq!(s, expected);
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, ViewOrder::Raster.sequence((3, 3)));
    }

    #[test]
    fn single_view_orders() {
        assert_eq!(ViewOrder::Raster.sequence((1, 1)), vec![(0, 0)]);
        assert_eq!(ViewOrder::Spiral.sequence((1, 1)), vec![(0, 0)]);
    }

    #[test]
    fn center_index_of_7x7_and_1x1() {
        let lf = LightField::new((7, 7), grid(7, 7, 2, 2)).unwrap();
        assert_eq!(lf.center_index(), (3, 3));
        assert_eq!(lf.center_view(), *lf.view(3, 3));
        let one = LightField::new((1, 1), grid(1, 1, 3, 3)).unwrap();
        assert_eq!(one.center_view(), one.views()[0]);
    }

    #[test]
    fn zero_center_passes_through() {
        let mut views = grid(3, 3, 4, 4);
        views[4] = Image::zeros(4, 4);
        let lf = LightField::new((3, 3), views).unwrap();
        assert!(lf.center_view().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_grid_rejected_until_cropped() {
        let g = ViewGrid::new((14, 14), grid(14, 14, 6, 7)).unwrap();
        assert!(g.clone().into_light_field().is_err());
        let lf = g.crop((7, 7), (5, 6)).unwrap();
        assert_eq!(lf.angular(), (7, 7));
        assert_eq!(lf.spatial(), (5, 6));
        assert_eq!(lf.center_index(), (3, 3));
        // angular offset (14-7)/2 = 3, spatial offsets floor(1/2)=0
        assert_eq!(*lf.view(0, 0), g.view(3, 3).crop(0, 0, 5, 6));
    }

    #[test]
    fn crop_errors() {
        let lf = LightField::new((3, 3), grid(3, 3, 4, 4)).unwrap();
        assert!(lf.crop((2, 3), (4, 4)).is_err());
        assert!(lf.crop((5, 5), (4, 4)).is_err());
        assert!(lf.crop((3, 3), (5, 4)).is_err());
    }

    #[test]
    fn identity_and_angular_identity_crop() {
        let lf = LightField::new((7, 7), grid(7, 7, 8, 8)).unwrap();
        assert_eq!(lf.crop((7, 7), (8, 8)).unwrap(), lf);
        let spatial_only = lf.crop((7, 7), (5, 6)).unwrap();
        for (a, b) in spatial_only.views().iter().zip(lf.views()) {
            assert_eq!(*a, b.crop(1, 1, 5, 6));
        }
    }

    #[test]
    fn mismatched_views_rejected() {
        let mut views = grid(3, 3, 4, 4);
        views[2] = Image::zeros(4, 5);
        assert!(LightField::new((3, 3), views).is_err());
    }

    #[test]
    fn from_vec_rejects_out_of_range() {
        assert!(Image::from_vec(1, 1, vec![0.0, 1.5, 0.2]).is_err());
        assert!(Image::from_vec(1, 1, vec![0.0, f32::NAN, 0.2]).is_err());
        assert!(Image::from_vec(1, 1, vec![0.0, 1.0, 0.2]).is_ok());
    }

    #[test]
    fn parse_names() {
        assert_eq!(parse_view_name("view_3_12.png"), Some((3, 12)));
        assert_eq!(parse_view_name("view_0_0"), Some((0, 0)));
        assert_eq!(parse_view_name("frame_1_2.png"), None);
    }
}

//! Procedural fronto-planar scenes with exactly known disparity.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::bilinear_at;
use crate::error::Result;
use crate::lightfield::{view_offsets, Image, LightField};

/// A textured plane at constant disparity and the light field it produces.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    /// Texture canvas, larger than the views by `margin` on every side.
    pub texture: Image,
    pub margin: usize,
    pub disparity: f32,
    pub lf: LightField,
}

impl SyntheticScene {
    /// Renders view `u` as the texture sampled at `x + Δ·d`, so the light
    /// field satisfies the warp model against its own disparity.
    pub fn new(texture: Image, margin: usize, disparity: f32, angular: (usize, usize)) -> Result<Self> {
        let (th, tw) = texture.dims();
        let (h, w) = (th - 2 * margin, tw - 2 * margin);
        let m = margin as f32;
        let views = view_offsets(angular)
            .into_iter()
            .map(|(du, dv)| {
                let (oy, ox) = (du as f32 * disparity + m, dv as f32 * disparity + m);
                let mut data = vec![0.0f32; h * w * 3];
                for y in 0..h {
                    for x in 0..w {
                        let out = &mut data[(y * w + x) * 3..][..3];
                        bilinear_at(texture.data(), th, tw, 3, y as f32 + oy, x as f32 + ox, out);
                    }
                }
                Image::from_vec(h, w, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticScene {
            lf: LightField::new(angular, views)?,
            texture,
            margin,
            disparity,
        })
    }

    pub fn center(&self) -> Image {
        self.lf.center_view()
    }

    /// Pixels farther than this from the border never sample clamped texture.
    pub fn interior_margin(&self) -> usize {
        let (nu, nv) = self.lf.angular();
        let reach = (nu.max(nv) - 1) / 2;
        (reach as f32 * self.disparity.abs()).ceil() as usize + 1
    }
}

/// Smooth random plaid whose spatial period grows with `disparity`, so the
/// disparity can be read from the texture under any color augmentation.
pub fn plaid_texture(height: usize, width: usize, disparity: f32, d_range: f32, rng: &mut impl Rng) -> Image {
    let t = ((disparity + d_range) / (2.0 * d_range)).clamp(0.0, 1.0);
    let period = 5.0 + 11.0 * t;
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|i| {
            let theta = rng.random_range(0.0..std::f32::consts::PI) + i as f32 * 1.05;
            let k = TAU / (period * rng.random_range(0.85..1.15));
            let phase = rng.random_range(0.0..TAU);
            let tint = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
            (k * theta.sin(), k * theta.cos(), phase, tint)
        })
        .collect();
    let base = [rng.random_range(0.35..0.65), rng.random_range(0.35..0.65), rng.random_range(0.35..0.65)];
    Image::from_fn(height, width, |y, x, c| {
        let s: f32 = waves
            .iter()
            .map(|&(ky, kx, p, tint)| tint[c] * (ky * y as f32 + kx * x as f32 + p).sin())
            .sum();
        base[c] + 0.12 * s
    })
}

/// Disparity of scene `i`: cycles through `−d_range..=d_range` in half-pixel steps.
pub fn scene_disparity(i: usize, d_range: f32) -> f32 {
    let levels = (4.0 * d_range).round() as usize + 1;
    -d_range + 0.5 * (i % levels) as f32
}

/// `count` scenes of `size×size` pixels over an `angular` grid.
pub fn desk_scenes(count: usize, size: usize, angular: (usize, usize), d_range: f32, seed: u64) -> Result<Vec<SyntheticScene>> {
    let reach = (angular.0.max(angular.1) - 1) / 2;
    let margin = (reach as f32 * d_range).ceil() as usize + 2;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let d = scene_disparity(i, d_range);
            let tex = plaid_texture(size + 2 * margin, size + 2 * margin, d, d_range, &mut rng);
            SyntheticScene::new(tex, margin, d, angular)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_disparity_views_are_integer_shifts() {
        let scenes = desk_scenes(9, 24, (3, 3), 2.0, 11).unwrap();
        let s = &scenes[2];
        assert_eq!(s.disparity, -1.0);
        let center = s.center();
        // view (u0, v0+1) shows the center at x + d
        let right = s.lf.view(1, 2);
        for y in 0..24 {
            for x in 1..24 {
                for c in 0..3 {
                    assert_eq!(right.get(y, x, c), center.get(y, x - 1, c));
                }
            }
        }
    }

    #[test]
    fn disparities_cover_the_range() {
        let d: Vec<f32> = (0..9).map(|i| scene_disparity(i, 2.0)).collect();
        assert_eq!(d.first(), Some(&-2.0));
        assert_eq!(d.last(), Some(&2.0));
    }
}

//! Photometric augmentation applied identically to every view.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lightfield::{Image, LightField};

/// Probabilities of the four augmentation branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentProbs {
    pub original: f64,
    pub contrast: f64,
    pub brightness: f64,
    pub hue: f64,
}

impl AugmentProbs {
    /// Mix used while pre-training the disparity net.
    pub const PRETRAIN: AugmentProbs = AugmentProbs {
        original: 0.50,
        contrast: 0.15,
        brightness: 0.15,
        hue: 0.20,
    };

    /// Uniform mix used for joint training.
    pub const JOINT: AugmentProbs = AugmentProbs {
        original: 0.25,
        contrast: 0.25,
        brightness: 0.25,
        hue: 0.25,
    };

    pub const NONE: AugmentProbs = AugmentProbs {
        original: 1.0,
        contrast: 0.0,
        brightness: 0.0,
        hue: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let p = [self.original, self.contrast, self.brightness, self.hue];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "augmentation probabilities {p:?} must lie in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Augment {
        let r: f64 = rng.random();
        if r < self.original {
            Augment::Original
        } else if r < self.original + self.contrast {
            Augment::Contrast(rng.random_range(0.1..=0.5))
        } else if r < self.original + self.contrast + self.brightness {
            Augment::Brightness(rng.random_range(-0.4..=0.4))
        } else {
            Augment::Hue(rng.random_range(-0.4..=0.4) * 180.0)
        }
    }
}

/// One drawn augmentation with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augment {
    Original,
    /// Scales deviations from the per-channel mean by this factor.
    Contrast(f32),
    /// Added to every sample.
    Brightness(f32),
    /// HSV hue rotation in degrees.
    Hue(f32),
}

impl Augment {
    /// Applies the transform; `means` are the per-channel means used by the
    /// contrast branch.
    pub fn apply_with(&self, img: &Image, means: [f32; 3]) -> Image {
        let (h, w) = img.dims();
        match *self {
            Augment::Original => img.clone(),
            Augment::Contrast(f) => Image::from_fn(h, w, |y, x, c| means[c] + f * (img.get(y, x, c) - means[c])),
            Augment::Brightness(b) => Image::from_fn(h, w, |y, x, c| img.get(y, x, c) + b),
            Augment::Hue(deg) => {
                let mut data = img.data().to_vec();
                for px in data.chunks_exact_mut(3) {
                    let (hue, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
                    let rgb = hsv_to_rgb((hue + deg).rem_euclid(360.0), s, v);
                    px.copy_from_slice(&rgb);
                }
                Image::from_fn(h, w, |y, x, c| data[(y * w + x) * 3 + c])
            }
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        self.apply_with(img, channel_means(img))
    }

    /// Applies the transform to every view, with contrast taken about the
    /// center view's means.
    pub fn apply_lf(&self, lf: &LightField) -> Result<LightField> {
        let means = channel_means(&lf.center_view());
        let views = lf.views().iter().map(|v| self.apply_with(v, means)).collect();
        LightField::new(lf.angular(), views)
    }
}

pub fn channel_means(img: &Image) -> [f32; 3] {
    let mut acc = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            acc[c] += f64::from(px[c]);
        }
    }
    let n = (img.data().len() / 3) as f64;
    acc.map(|a| (a / n) as f32)
}

/// Draws a branch and applies it to a single image.
pub fn augment(img: &Image, probs: &AugmentProbs, rng: &mut impl Rng) -> Image {
    probs.draw(rng).apply(img)
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> Image {
        Image::from_fn(6, 5, |y, x, c| ((y * 5 + x) * 3 + c) as f32 / 90.0)
    }

    #[test]
    fn original_is_identity_and_contrast_of_constant_is_identity() {
        assert_eq!(Augment::Original.apply(&img()), img());
        let flat = Image::filled(4, 4, [0.25, 0.5, 0.75]);
        assert_eq!(Augment::Contrast(0.1).apply(&flat), flat);
    }

    #[test]
    fn hue_round_trip_and_full_turn() {
        for rgb in [[0.2, 0.5, 0.9], [0.9, 0.1, 0.1], [0.3, 0.3, 0.3], [0.0, 1.0, 0.5]] {
            let (h, s, v) = rgb_to_hsv(rgb);
            let back = hsv_to_rgb(h, s, v);
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-6);
            }
        }
        let a = Augment::Hue(120.0).apply(&Image::filled(2, 2, [1.0, 0.0, 0.0]));
        assert_eq!(a.get(0, 0, 1), 1.0);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let out = augment(&img(), &AugmentProbs::JOINT, &mut rng);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        assert!(AugmentProbs::PRETRAIN.validate().is_ok());
        let bad = AugmentProbs { hue: 0.3, ..AugmentProbs::JOINT };
        assert!(bad.validate().is_err());
    }
}

//! Residual enhancement network for decoded JPEG center views.

use rand::Rng;

use super::{join, to_signed, BatchNorm, Conv, Module, Slot};
use crate::autodiff::{add, clamp, elu, scale, tanh, OpResult, Real, ShapeError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HanceConfig {
    /// Channels carried between blocks.
    pub width: usize,
    /// Channels inside each bottleneck.
    pub bottleneck: usize,
    pub blocks: usize,
}

impl HanceConfig {
    /// Full-size configuration (about 205k parameters).
    pub const PAPER: HanceConfig = HanceConfig {
        width: 96,
        bottleneck: 64,
        blocks: 4,
    };

    /// Small configuration used for desk-scale training.
    pub const DESK: HanceConfig = HanceConfig {
        width: 32,
        bottleneck: 16,
        blocks: 2,
    };

    pub fn as_vec(&self) -> Vec<usize> {
        vec![self.width, self.bottleneck, self.blocks]
    }

    pub fn from_slice(v: &[usize]) -> Option<Self> {
        match v {
            &[width, bottleneck, blocks] if width > 0 && bottleneck > 0 => Some(HanceConfig {
                width,
                bottleneck,
                blocks,
            }),
            _ => None,
        }
    }
}

struct Unit<T: Real> {
    conv: Conv<T>,
    norm: BatchNorm<T>,
}

impl<T: Real> Unit<T> {
    fn new(k: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Unit {
            conv: Conv::new(k, cin, cout, 1, 1.0, rng),
            norm: BatchNorm::new(cout),
        }
    }

    fn forward(&self, x: &Var<T>, train: bool) -> OpResult<T> {
        Ok(elu(&self.norm.forward(&self.conv.forward(x)?, train)?))
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "bn"), f);
    }
}

pub struct HanceNet<T: Real> {
    config: HanceConfig,
    stem: Unit<T>,
    blocks: Vec<[Unit<T>; 3]>,
    out: Conv<T>,
}

impl<T: Real> HanceNet<T> {
    pub fn new(config: HanceConfig, rng: &mut impl Rng) -> Self {
        let (c, b) = (config.width, config.bottleneck);
        let stem = Unit::new(3, 3, c, rng);
        let blocks = (0..config.blocks)
            .map(|_| [Unit::new(1, c, b, rng), Unit::new(3, b, b, rng), Unit::new(1, b, c, rng)])
            .collect();
        let out = Conv::new(3, c, 3, 1, 1.0, rng).zeroed();
        HanceNet {
            config,
            stem,
            blocks,
            out,
        }
    }

    pub fn config(&self) -> HanceConfig {
        self.config
    }

    /// Enhances `[N,H,W,3]` images in `[0,1]`; the result stays in `[0,1]`.
    ///
    /// `train` selects batch statistics (and updates the running averages).
    pub fn forward(&self, x: &Var<T>, train: bool) -> OpResult<T> {
        let (_, _, _, c) = x.value().dims4("hance")?;
        if c != 3 {
            return Err(ShapeError::new("hance", format!("expected 3 channels, got {c}")));
        }
        let mut h = self.stem.forward(&to_signed(x), train)?;
        for block in &self.blocks {
            let mut r = h.clone();
            for unit in block {
                r = unit.forward(&r, train)?;
            }
            h = add(&h, &r)?;
        }
        let r = self.out.forward(&h)?;
        // clamp(2x−1 + tanh r, −1, 1) mapped back to [0,1]
        let y = add(x, &scale(&tanh(&r), 0.5))?;
        Ok(clamp(&y, 0.0, 1.0))
    }
}

impl<T: Real> Module<T> for HanceNet<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (j, unit) in block.iter_mut().enumerate() {
                unit.visit(&join(prefix, &format!("block{i}.unit{j}")), f);
            }
        }
        self.out.visit(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = HanceNet::<f32>::new(HanceConfig::PAPER, &mut rng);
        assert_eq!(net.trainable_parameters(), 204_771);
    }

    #[test]
    fn fresh_net_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = HanceNet::<f32>::new(HanceConfig::DESK, &mut rng);
        let x = Tensor::from_fn(&[2, 9, 7, 3], |i| ((i * 31) % 255) as f32 / 254.0);
        let y = net.forward(&Var::constant(x.clone()), false).unwrap();
        assert_eq!(y.value(), &x);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = HanceNet::<f32>::new(HanceConfig::DESK, &mut rng);
        let x = Var::constant(Tensor::zeros(&[1, 8, 8, 4]));
        assert!(net.forward(&x, false).is_err());
    }
}

//! Encoder–decoder network emitting one disparity map per view.

use rand::Rng;

use super::{join, to_signed, Conv, InstanceNorm, Module, Slot};
use crate::autodiff::{add, elu, scale, tanh, OpResult, Real, ShapeError, Var};

/// Spatial dims must be multiples of this (four stride-2 stages).
pub const DEPTH_ALIGN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthConfig {
    pub stem: usize,
    /// Output width of each of the four encoder stages.
    pub widths: [usize; 4],
    /// Bottleneck width inside each residual block, per stage.
    pub inner: [usize; 4],
    pub blocks_per_stage: usize,
    pub n_views: usize,
    /// Output bound in pixels.
    pub d_max: f64,
}

impl DepthConfig {
    /// Full-size configuration for 7×7 views (about 39.6M parameters).
    pub fn paper() -> Self {
        DepthConfig {
            stem: 32,
            widths: [64, 128, 256, 512],
            inner: [144, 288, 576, 1152],
            blocks_per_stage: 2,
            n_views: 49,
            d_max: 4.0,
        }
    }

    /// Small configuration for desk-scale training.
    pub fn desk(n_views: usize) -> Self {
        DepthConfig {
            stem: 16,
            widths: [16, 24, 32, 48],
            inner: [16, 24, 32, 48],
            blocks_per_stage: 1,
            n_views,
            d_max: 4.0,
        }
    }

    /// Flattened form stored in weight archives (`d_max` in millipixels).
    pub fn as_vec(&self) -> Vec<usize> {
        let mut v = vec![self.stem];
        v.extend(self.widths);
        v.extend(self.inner);
        v.extend([self.blocks_per_stage, self.n_views, (self.d_max * 1000.0).round() as usize]);
        v
    }

    pub fn from_slice(v: &[usize]) -> Option<Self> {
        if v.len() != 12 || v.iter().take(9).any(|&x| x == 0) || v[10] == 0 {
            return None;
        }
        Some(DepthConfig {
            stem: v[0],
            widths: [v[1], v[2], v[3], v[4]],
            inner: [v[5], v[6], v[7], v[8]],
            blocks_per_stage: v[9],
            n_views: v[10],
            d_max: v[11] as f64 / 1000.0,
        })
    }
}

struct Residual<T: Real> {
    reduce: Conv<T>,
    norm1: InstanceNorm<T>,
    spatial: Conv<T>,
    norm2: InstanceNorm<T>,
    expand: Conv<T>,
}

impl<T: Real> Residual<T> {
    fn new(width: usize, inner: usize, rng: &mut impl Rng) -> Self {
        Residual {
            reduce: Conv::new(1, width, inner, 1, 1.0, rng),
            norm1: InstanceNorm::new(inner),
            spatial: Conv::new(3, inner, inner, 1, 1.0, rng),
            norm2: InstanceNorm::new(inner),
            expand: Conv::new(1, inner, width, 1, 0.5, rng),
        }
    }

    fn forward(&self, x: &Var<T>) -> OpResult<T> {
        let h = elu(&self.norm1.forward(&self.reduce.forward(x)?)?);
        let h = elu(&self.norm2.forward(&self.spatial.forward(&h)?)?);
        let h = self.expand.forward(&h)?;
        Ok(elu(&add(x, &h)?))
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.norm1.visit(&join(prefix, "in1"), f);
        self.spatial.visit(&join(prefix, "spatial"), f);
        self.norm2.visit(&join(prefix, "in2"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }
}

struct Stage<T: Real> {
    down: Conv<T>,
    blocks: Vec<Residual<T>>,
}

struct Up<T: Real> {
    deconv: Conv<T>,
    conv1: Conv<T>,
    conv2: Conv<T>,
}

pub struct DepthNet<T: Real> {
    config: DepthConfig,
    stem: Conv<T>,
    stages: Vec<Stage<T>>,
    ups: Vec<Up<T>>,
    head: Conv<T>,
}

impl<T: Real> DepthNet<T> {
    pub fn new(config: DepthConfig, rng: &mut impl Rng) -> Self {
        let stem = Conv::new(3, 3, config.stem, 1, 1.0, rng);
        let mut stages = Vec::new();
        let mut prev = config.stem;
        for (&w, &m) in config.widths.iter().zip(&config.inner) {
            let down = Conv::new(3, prev, w, 2, 1.0, rng);
            let blocks = (0..config.blocks_per_stage).map(|_| Residual::new(w, m, rng)).collect();
            stages.push(Stage { down, blocks });
            prev = w;
        }
        // decoder widths mirror the encoder: 512→256→128→64→stem
        let mut targets: Vec<usize> = config.widths[..3].iter().rev().copied().collect();
        targets.push(config.stem);
        let mut ups = Vec::new();
        for &t in &targets {
            ups.push(Up {
                deconv: Conv::transposed(3, prev, t, rng),
                conv1: Conv::new(3, t, t, 1, 1.0, rng),
                conv2: Conv::new(3, t, t, 1, 1.0, rng),
            });
            prev = t;
        }
        let head = Conv::new(3, prev, config.n_views, 1, 0.1, rng);
        DepthNet {
            config,
            stem,
            stages,
            ups,
            head,
        }
    }

    pub fn config(&self) -> &DepthConfig {
        &self.config
    }

    /// Maps `[N,H,W,3]` images in `[0,1]` to `[N,H,W,n_views]` disparities
    /// bounded by `d_max`. `H` and `W` must be multiples of 16.
    pub fn forward(&self, x: &Var<T>) -> OpResult<T> {
        let (_, h, w, c) = x.value().dims4("depth")?;
        if c != 3 {
            return Err(ShapeError::new("depth", format!("expected 3 channels, got {c}")));
        }
        if h % DEPTH_ALIGN != 0 || w % DEPTH_ALIGN != 0 {
            return Err(ShapeError::new(
                "depth",
                format!("spatial dims {h}x{w} must be multiples of {DEPTH_ALIGN}"),
            ));
        }
        let mut skips = Vec::with_capacity(4);
        let mut f = elu(&self.stem.forward(&to_signed(x))?);
        for stage in &self.stages {
            skips.push(f.clone());
            f = elu(&stage.down.forward(&f)?);
            for block in &stage.blocks {
                f = block.forward(&f)?;
            }
        }
        for up in &self.ups {
            let skip = skips.pop().expect("one skip per stage");
            f = add(&elu(&up.deconv.forward(&f)?), &skip)?;
            f = elu(&up.conv1.forward(&f)?);
            f = elu(&up.conv2.forward(&f)?);
        }
        Ok(scale(&tanh(&self.head.forward(&f)?), self.config.d_max))
    }
}

impl<T: Real> Module<T> for DepthNet<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            stage.down.visit(&join(&p, "down"), f);
            for (j, block) in stage.blocks.iter_mut().enumerate() {
                block.visit(&join(&p, &format!("block{j}")), f);
            }
        }
        for (i, up) in self.ups.iter_mut().enumerate() {
            let p = join(prefix, &format!("up{i}"));
            up.deconv.visit(&join(&p, "deconv"), f);
            up.conv1.visit(&join(&p, "conv1"), f);
            up.conv2.visit(&join(&p, "conv2"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_net_shapes_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DepthNet::<f32>::new(DepthConfig::desk(9), &mut rng);
        let x = Var::constant(Tensor::from_fn(&[2, 32, 48, 3], |i| ((i * 13) % 7) as f32 / 6.0));
        let d = net.forward(&x).unwrap();
        assert_eq!(d.shape(), &[2, 32, 48, 9]);
        assert!(d.value().data().iter().all(|v| v.abs() <= 4.0));
    }

    #[test]
    fn rejects_unaligned_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DepthNet::<f32>::new(DepthConfig::desk(4), &mut rng);
        let x = Var::constant(Tensor::zeros(&[1, 24, 32, 3]));
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = DepthConfig::paper();
        assert_eq!(DepthConfig::from_slice(&c.as_vec()), Some(c));
    }
}

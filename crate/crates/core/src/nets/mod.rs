//! Network building blocks, the enhancement and disparity networks, and
//! their weight archive.

mod archive;
mod depth;
mod hance;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};

use crate::autodiff::{
    batch_norm, bias_add, conv2d, conv2d_transpose, instance_norm, BatchStats, OpResult, Padding, Real, Tensor, Var,
};

pub use archive::{ArchiveError, WeightArchive};
pub use depth::{DepthConfig, DepthNet, DEPTH_ALIGN};
pub use hance::{HanceConfig, HanceNet};

/// A named storage slot handed to [`Module::visit`].
pub enum Slot<'a, T: Real> {
    /// Trainable parameter.
    Param(&'a mut Var<T>),
    /// Persistent non-trainable state (e.g. running statistics).
    Buffer(&'a mut Tensor<T>),
}

pub trait Module<T: Real> {
    /// Calls `f` on every parameter and buffer with its fully qualified name.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>));

    fn trainable_parameters(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s| {
            if let Slot::Param(v) = s {
                n += v.value().len();
            }
        });
        n
    }

    /// Marks every parameter as trainable or frozen.
    fn set_trainable(&mut self, trainable: bool) {
        self.visit("", &mut |_, s| {
            if let Slot::Param(v) = s {
                if v.requires_grad() != trainable {
                    *v = v.detached(trainable);
                }
            }
        });
    }

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, s| {
            if let Slot::Param(v) = s {
                v.zero_grad();
            }
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Convolution with bias; either a regular strided conv or a stride-2
/// transposed conv.
pub struct Conv<T: Real> {
    pub weight: Var<T>,
    pub bias: Var<T>,
    pub stride: (usize, usize),
    pub transpose: bool,
}

impl<T: Real> Conv<T> {
    /// Fan-in scaled uniform initialization; `gain` multiplies the bound.
    pub fn new(k: usize, cin: usize, cout: usize, stride: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (6.0 / (k * k * cin) as f64).sqrt();
        let weight = Tensor::from_fn(&[k, k, cin, cout], |_| T::lit(rng.random_range(-bound..=bound)));
        Conv {
            weight: Var::leaf(weight),
            bias: Var::leaf(Tensor::zeros(&[cout])),
            stride: (stride, stride),
            transpose: false,
        }
    }

    /// Transposed conv mapping `cin` channels to `cout` at twice the resolution.
    pub fn transposed(k: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (k * k * cin) as f64).sqrt();
        let weight = Tensor::from_fn(&[k, k, cout, cin], |_| T::lit(rng.random_range(-bound..=bound)));
        Conv {
            weight: Var::leaf(weight),
            bias: Var::leaf(Tensor::zeros(&[cout])),
            stride: (2, 2),
            transpose: true,
        }
    }

    pub fn zeroed(mut self) -> Self {
        self.weight = Var::leaf(Tensor::zeros(self.weight.shape()));
        self
    }

    pub fn forward(&self, x: &Var<T>) -> OpResult<T> {
        let y = if self.transpose {
            conv2d_transpose(x, &self.weight, self.stride)?
        } else {
            conv2d(x, &self.weight, self.stride, Padding::Same)?
        };
        bias_add(&y, &self.bias)
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

fn affine_pair<T: Real>(c: usize) -> (Var<T>, Var<T>) {
    (
        Var::leaf(Tensor::full(&[c], T::one())),
        Var::leaf(Tensor::zeros(&[c])),
    )
}

pub struct BatchNorm<T: Real> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub stats: RefCell<BatchStats<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(c: usize) -> Self {
        let (gamma, beta) = affine_pair(c);
        BatchNorm {
            gamma,
            beta,
            stats: RefCell::new(BatchStats::new(c)),
        }
    }

    /// In training mode the running statistics are updated in place.
    pub fn forward(&self, x: &Var<T>, train: bool) -> OpResult<T> {
        batch_norm(x, &self.gamma, &self.beta, &mut self.stats.borrow_mut(), train)
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        let stats = self.stats.get_mut();
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut stats.mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut stats.var));
    }
}

pub struct InstanceNorm<T: Real> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn new(c: usize) -> Self {
        let (gamma, beta) = affine_pair(c);
        InstanceNorm { gamma, beta }
    }

    pub fn forward(&self, x: &Var<T>) -> OpResult<T> {
        instance_norm(x, &self.gamma, &self.beta)
    }
}

impl<T: Real> Module<T> for InstanceNorm<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
    }
}

/// The enhancement and disparity networks as one unit.
pub struct Nets<T: Real> {
    pub hance: HanceNet<T>,
    pub depth: DepthNet<T>,
}

impl<T: Real> Nets<T> {
    pub fn new(hance: HanceConfig, depth: DepthConfig, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let hance = HanceNet::new(hance, &mut rng);
        let depth = DepthNet::new(depth, &mut rng);
        Nets { hance, depth }
    }

    pub fn to_archive(&mut self) -> WeightArchive {
        let mut a = WeightArchive::new();
        a.push_config("hance.config", &self.hance.config().as_vec())
            .and_then(|_| a.push_config("depth.config", &self.depth.config().as_vec()))
            .and_then(|_| a.store(&mut self.hance, "hance"))
            .and_then(|_| a.store(&mut self.depth, "depth"))
            .expect("module names are unique");
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self, ArchiveError> {
        let hc = HanceConfig::from_slice(&a.config("hance.config")?)
            .ok_or_else(|| ArchiveError::BadConfig("hance.config".into()))?;
        let dc = DepthConfig::from_slice(&a.config("depth.config")?)
            .ok_or_else(|| ArchiveError::BadConfig("depth.config".into()))?;
        let mut nets = Nets::new(hc, dc, 0);
        a.restore(&mut nets.hance, "hance")?;
        a.restore(&mut nets.depth, "depth")?;
        Ok(nets)
    }

    pub fn set_trainable(&mut self, hance: bool, depth: bool) {
        self.hance.set_trainable(hance);
        self.depth.set_trainable(depth);
    }
}

/// Scales `[0,1]` images to the `[−1,1]` network domain.
pub(crate) fn to_signed<T: Real>(x: &Var<T>) -> Var<T> {
    crate::autodiff::add_scalar(&crate::autodiff::scale(x, 2.0), -1.0)
}

/// Snapshot of every slot, keyed by name (used by archives and checkpoints).
pub fn state<T: Real>(m: &mut dyn Module<T>, prefix: &str) -> Vec<(String, Tensor<T>, bool)> {
    let mut out = Vec::new();
    m.visit(prefix, &mut |name, slot| match slot {
        Slot::Param(v) => out.push((name.to_string(), v.value().clone(), true)),
        Slot::Buffer(t) => out.push((name.to_string(), t.clone(), false)),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn freezing_and_unfreezing_keeps_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv::<f32>::new(3, 2, 4, 1, 1.0, &mut rng);
        let before = conv.weight.value().clone();
        conv.set_trainable(false);
        assert!(!conv.weight.requires_grad());
        conv.set_trainable(true);
        assert!(conv.weight.requires_grad());
        assert_eq!(conv.weight.value(), &before);
        assert_eq!(conv.trainable_parameters(), 3 * 3 * 2 * 4 + 4);
    }
}

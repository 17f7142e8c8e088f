//! Adam, learning-rate schedules and checkpoints.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::{Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{ArchiveError, Module, Nets, Slot, WeightArchive};

/// Magic of the optimizer section appended to a weight archive.
pub const OPT_MAGIC: &[u8; 4] = b"LFO1";

/// Piecewise-geometric learning rate over epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrSchedule {
    /// `(epoch, rate)` knots with strictly increasing epochs.
    pub knots: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule { knots: vec![(0, rate)] }
    }

    /// Geometric decay from `start` to `end` over `epochs`, holding `end`
    /// for the final `floor_epochs`.
    pub fn geometric(start: f64, end: f64, epochs: usize, floor_epochs: usize) -> Self {
        let last = epochs.saturating_sub(floor_epochs).max(1);
        LrSchedule {
            knots: vec![(0, start), (last, end)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.knots.is_empty()
            && self.knots.iter().all(|&(_, r)| r.is_finite() && r > 0.0)
            && self.knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "learning-rate knots {:?} must be positive, non-increasing, with increasing epochs",
                self.knots
            )))
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let k = &self.knots;
        if epoch <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((e0, r0), (e1, r1)) = (w[0], w[1]);
            if epoch < e1 {
                let t = (epoch - e0) as f64 / (e1 - e0) as f64;
                return r0 * (r1 / r0).powf(t);
            }
        }
        k[k.len() - 1].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    /// Number of updates applied so far.
    pub step: u64,
    moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Adam {
            params,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter of `module` that has a gradient.
    pub fn update(&mut self, module: &mut dyn Module<f32>, prefix: &str, lr: f64) {
        let AdamParams { beta1, beta2, eps } = self.params;
        let t = (self.step + 1) as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let moments = &mut self.moments;
        module.visit(prefix, &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let Some(g) = p.grad() else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let mut value = p.value().clone();
            let (b1, b2) = (beta1 as f32, beta2 as f32);
            for (((w, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = f64::from(*mi) / c1;
                let vhat = f64::from(*vi) / c2;
                *w -= (lr * mhat / (vhat.sqrt() + eps)) as f32;
            }
            *p = Var::leaf(value);
        });
    }

    /// Marks the end of an optimization step.
    pub fn advance(&mut self) {
        self.step += 1;
    }

    fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        for (name, (m, v)) in &self.moments {
            a.push(&format!("m.{name}"), m.shape().to_vec(), m.data().to_vec())
                .and_then(|_| a.push(&format!("v.{name}"), v.shape().to_vec(), v.data().to_vec()))
                .expect("names unique");
        }
        a
    }

    fn from_archive(params: AdamParams, step: u64, a: &WeightArchive) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for name in a.names().filter_map(|n| n.strip_prefix("m.")) {
            let get = |key: String| -> Result<Tensor<f32>> {
                let (dims, data) = a.get(&key).ok_or(ArchiveError::Missing(key.clone()))?;
                Ok(Tensor::new(dims.to_vec(), data.to_vec())?)
            };
            moments.insert(name.to_string(), (get(format!("m.{name}"))?, get(format!("v.{name}"))?));
        }
        Ok(Adam { params, step, moments })
    }
}

/// Weight archive followed by `LFO1`, the step count and Adam moments.
pub fn checkpoint_bytes(nets: &mut Nets<f32>, adam: &Adam) -> Vec<u8> {
    let mut out = nets.to_archive().to_bytes();
    out.extend_from_slice(OPT_MAGIC);
    out.extend_from_slice(&adam.step.to_le_bytes());
    out.extend_from_slice(&adam.to_archive().to_bytes());
    out
}

/// Parses a checkpoint; a plain weight archive yields a fresh optimizer.
pub fn load_checkpoint(bytes: &[u8], params: AdamParams) -> Result<(Nets<f32>, Adam)> {
    let (weights, used) = WeightArchive::from_bytes_prefix(bytes)?;
    let nets = Nets::from_archive(&weights)?;
    let rest = &bytes[used..];
    if rest.is_empty() {
        return Ok((nets, Adam::new(params)));
    }
    if rest.len() < 12 || &rest[..4] != OPT_MAGIC {
        return Err(ArchiveError::BadMagic.into());
    }
    let step = u64::from_le_bytes(rest[4..12].try_into().expect("8 bytes"));
    let (opt, used) = WeightArchive::from_bytes_prefix(&rest[12..])?;
    if used != rest.len() - 12 {
        return Err(Error::InvalidArgument("trailing bytes after checkpoint".into()));
    }
    Ok((nets, Adam::from_archive(params, step, &opt)?))
}

/// Mean squared error as a graph node.
pub fn mse<T: Real>(a: &Var<T>, b: &Var<T>) -> crate::autodiff::OpResult<T> {
    let d = crate::autodiff::sub(a, b)?;
    Ok(crate::autodiff::mean(&crate::autodiff::mul(&d, &d)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedule_endpoints() {
        let s = LrSchedule::geometric(1e-4, 1e-6, 45, 5);
        s.validate().unwrap();
        assert_eq!(s.rate(0), 1e-4);
        assert!(s.rate(39) > 1e-6);
        assert!((s.rate(20) - 1e-5).abs() < 1e-15);
        for e in 40..45 {
            assert_eq!(s.rate(e), 1e-6);
        }
        assert!((1..45).all(|e| s.rate(e) <= s.rate(e - 1)));
    }

    #[test]
    fn increasing_rates_are_rejected() {
        let s = LrSchedule {
            knots: vec![(0, 1e-4), (5, 1e-3)],
        };
        assert!(s.validate().is_err());
    }
}

//! Batch and instance normalization with learnable scale and shift.

use super::{OpResult, Real, ShapeError, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: f64,
}

impl<T: Real> BatchStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
        }
    }
}

fn check_affine<T: Real>(op: &'static str, c: usize, gamma: &Var<T>, beta: &Var<T>) -> Result<(), ShapeError> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(ShapeError::new(
            op,
            format!("scale {:?} / shift {:?} must be [{c}]", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Normalizes each `(segment, channel)` group, where segments are
/// contiguous pixel ranges of length `seg_len`.
fn normalize_groups<T: Real>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    seg_len: usize,
    c: usize,
) -> (Var<T>, Vec<T>, Vec<T>) {
    let data = x.value().data();
    let segs = data.len() / (seg_len * c);
    let eps = T::lit(NORM_EPS);
    let count = T::from_usize(seg_len).expect("group size");
    let mut means = vec![T::zero(); segs * c];
    let mut vars = vec![T::zero(); segs * c];
    for s in 0..segs {
        let block = &data[s * seg_len * c..(s + 1) * seg_len * c];
        let m = &mut means[s * c..(s + 1) * c];
        for px in block.chunks_exact(c) {
            for (a, &v) in m.iter_mut().zip(px) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= count);
        let va = &mut vars[s * c..(s + 1) * c];
        for px in block.chunks_exact(c) {
            for ((a, &v), &mu) in va.iter_mut().zip(px).zip(m.iter()) {
                *a += (v - mu) * (v - mu);
            }
        }
        va.iter_mut().for_each(|a| *a /= count);
    }
    let inv_std: Vec<T> = vars.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let g = gamma.value().data();
    let b = beta.value().data();
    let mut xhat = Vec::with_capacity(data.len());
    let mut y = Vec::with_capacity(data.len());
    for (i, px) in data.chunks_exact(c).enumerate() {
        let s = i / seg_len;
        for (ch, &v) in px.iter().enumerate() {
            let xh = (v - means[s * c + ch]) * inv_std[s * c + ch];
            xhat.push(xh);
            y.push(g[ch] * xh + b[ch]);
        }
    }
    let out = Tensor::new(x.shape().to_vec(), y).expect("norm shape");
    let inv = inv_std.clone();
    let var = Var::from_op(
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |gy, p, _| {
            let gd = gy.data();
            let gam = p[1].value().data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (gp, xp) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    dgamma[ch] += gp[ch] * xp[ch];
                    dbeta[ch] += gp[ch];
                }
            }
            let dx = p[0].requires_grad().then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for s in 0..segs {
                    let range = s * seg_len * c..(s + 1) * seg_len * c;
                    let (gs, xs) = (&gd[range.clone()], &xhat[range.clone()]);
                    let mut m1 = vec![T::zero(); c];
                    let mut m2 = vec![T::zero(); c];
                    for (gp, xp) in gs.chunks_exact(c).zip(xs.chunks_exact(c)) {
                        for ch in 0..c {
                            let d = gp[ch] * gam[ch];
                            m1[ch] += d;
                            m2[ch] += d * xp[ch];
                        }
                    }
                    m1.iter_mut().chain(m2.iter_mut()).for_each(|v| *v /= count);
                    for ((o, gp), xp) in dx[range].chunks_exact_mut(c).zip(gs.chunks_exact(c)).zip(xs.chunks_exact(c)) {
                        for ch in 0..c {
                            let d = gp[ch] * gam[ch];
                            o[ch] = inv[s * c + ch] * (d - m1[ch] - xp[ch] * m2[ch]);
                        }
                    }
                }
                Tensor::new(p[0].shape().to_vec(), dx).expect("norm dx")
            });
            vec![
                dx,
                p[1].requires_grad().then(|| Tensor::new(vec![c], dgamma).expect("dgamma")),
                p[2].requires_grad().then(|| Tensor::new(vec![c], dbeta).expect("dbeta")),
            ]
        }),
    );
    (var, means, vars)
}

/// Per-channel affine map `gamma·x·scale + (beta − gamma·shift·scale)`, used for
/// inference-mode batch norm.
fn channel_affine<T: Real>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, shift: Vec<T>, scale: Vec<T>) -> Var<T> {
    let c = scale.len();
    let g = gamma.value().data();
    let b = beta.value().data();
    let mut y = x.value().clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = g[ch] * (px[ch] - shift[ch]) * scale[ch] + b[ch];
        }
    }
    Var::from_op(
        y,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |gy, p, _| {
            let gam = p[1].value().data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (gp, xp) in gy.data().chunks_exact(c).zip(p[0].value().data().chunks_exact(c)) {
                for ch in 0..c {
                    dgamma[ch] += gp[ch] * (xp[ch] - shift[ch]) * scale[ch];
                    dbeta[ch] += gp[ch];
                }
            }
            let dx = p[0].requires_grad().then(|| {
                let mut d = gy.clone();
                for px in d.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        px[ch] *= gam[ch] * scale[ch];
                    }
                }
                d
            });
            vec![
                dx,
                p[1].requires_grad().then(|| Tensor::new(vec![c], dgamma).expect("dgamma")),
                p[2].requires_grad().then(|| Tensor::new(vec![c], dbeta).expect("dbeta")),
            ]
        }),
    )
}

/// Batch normalization over `(N, H, W)` per channel.
///
/// In training mode the batch statistics are used and `stats` is updated
/// with an exponential moving average (unbiased variance); otherwise the
/// running statistics are applied.
pub fn batch_norm<T: Real>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    stats: &mut BatchStats<T>,
    train: bool,
) -> OpResult<T> {
    let (n, h, w, c) = x.value().dims4("batch_norm")?;
    check_affine("batch_norm", c, gamma, beta)?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(ShapeError::new("batch_norm", "running statistics do not match channels"));
    }
    let count = n * h * w;
    if !train {
        let eps = T::lit(NORM_EPS);
        let scale = stats.var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        return Ok(channel_affine(x, gamma, beta, stats.mean.data().to_vec(), scale));
    }
    if count < 2 {
        return Err(ShapeError::new("batch_norm", "training needs at least 2 elements per channel"));
    }
    let (y, means, vars) = normalize_groups(x, gamma, beta, count, c);
    let m = T::lit(stats.momentum);
    let unbias = T::from_usize(count).expect("count") / T::from_usize(count - 1).expect("count");
    for ch in 0..c {
        let rm = &mut stats.mean.data_mut()[ch];
        *rm = (T::one() - m) * *rm + m * means[ch];
        let rv = &mut stats.var.data_mut()[ch];
        *rv = (T::one() - m) * *rv + m * vars[ch] * unbias;
    }
    Ok(y)
}

/// Instance normalization over `(H, W)` per sample and channel.
pub fn instance_norm<T: Real>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> OpResult<T> {
    let (_, h, w, c) = x.value().dims4("instance_norm")?;
    check_affine("instance_norm", c, gamma, beta)?;
    if h * w < 2 {
        return Err(ShapeError::new("instance_norm", "needs at least 2 spatial elements"));
    }
    Ok(normalize_groups(x, gamma, beta, h * w, c).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine(c: usize) -> (Var<f64>, Var<f64>) {
        (
            Var::constant(Tensor::full(&[c], 1.0)),
            Var::constant(Tensor::zeros(&[c])),
        )
    }

    #[test]
    fn instance_norm_of_constant_channels_is_zero() {
        let x = Var::constant(Tensor::from_fn(&[2, 3, 4, 3], |i| (i % 3) as f64 * 5.0 - 1.0));
        let (g, b) = affine(3);
        let y = instance_norm(&x, &g, &b).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_train_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Var::constant(Tensor::from_fn(&[3, 5, 4, 2], |i| {
            rng.random_range(-2.0..3.0) + (i % 2) as f64 * 10.0
        }));
        let (g, b) = affine(2);
        let mut stats = BatchStats::new(2);
        let y = batch_norm(&x, &g, &b, &mut stats, true).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = y.value().data().iter().skip(ch).step_by(2).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
        // one step of momentum 0.1 from (0, 1)
        assert!(stats.mean.data()[1] > 0.9 && stats.mean.data()[1] < 1.35);
    }

    #[test]
    fn inference_uses_running_stats() {
        let x = Var::constant(Tensor::full(&[1, 2, 2, 1], 3.0));
        let (g, b) = affine(1);
        let mut stats = BatchStats::new(1);
        stats.mean.data_mut()[0] = 1.0;
        stats.var.data_mut()[0] = 4.0;
        let y = batch_norm(&x, &g, &b, &mut stats, false).unwrap();
        let expect = 2.0 / (4.0 + NORM_EPS).sqrt();
        assert!(y.value().data().iter().all(|&v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn degenerate_groups_are_rejected_not_nan() {
        let x = Var::constant(Tensor::full(&[1, 1, 1, 2], 3.0));
        let (g, b) = affine(2);
        assert!(instance_norm(&x, &g, &b).is_err());
        let x = Var::constant(Tensor::full(&[1, 2, 1, 2], 3.0));
        let y = instance_norm(&x, &g, &b).unwrap();
        assert!(y.value().all_finite());
    }
}

//! Differentiable mean SSIM with a Gaussian window and analytic gradient.

use super::{OpResult, Real, ShapeError, Tensor, Var};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow {
            size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimWindow {
    /// Window side actually used for an `h×w` image: the configured size,
    /// shrunk to the largest odd size that fits.
    pub fn effective_size(&self, h: usize, w: usize) -> usize {
        let m = self.size.min(h).min(w);
        if m.is_multiple_of(2) {
            m.saturating_sub(1).max(1)
        } else {
            m
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter<T: Real>(p: &[T], h: usize, w: usize, k: &[T]) -> Vec<T> {
    let s = k.len();
    let (ho, wo) = (h + 1 - s, w + 1 - s);
    let mut tmp = vec![T::zero(); h * wo];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..wo {
            let mut acc = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * row[x + t];
            }
            tmp[y * wo + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ho * wo];
    for y in 0..ho {
        for (t, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + t) * wo..(y + t + 1) * wo];
            for (o, &v) in out[y * wo..(y + 1) * wo].iter_mut().zip(src) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter`]: spreads an `ho×wo` map back over `h×w`.
fn filter_adjoint<T: Real>(g: &[T], h: usize, w: usize, k: &[T]) -> Vec<T> {
    let s = k.len();
    let (ho, wo) = (h + 1 - s, w + 1 - s);
    let mut tmp = vec![T::zero(); h * wo];
    for y in 0..ho {
        for (t, &kv) in k.iter().enumerate() {
            let dst = &mut tmp[(y + t) * wo..(y + t + 1) * wo];
            for (o, &v) in dst.iter_mut().zip(&g[y * wo..(y + 1) * wo]) {
                *o += kv * v;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for x in 0..wo {
            let v = tmp[y * wo + x];
            for (t, &kv) in k.iter().enumerate() {
                row[x + t] += kv * v;
            }
        }
    }
    out
}

struct Moments<T> {
    mx: Vec<T>,
    my: Vec<T>,
    sxx: Vec<T>,
    syy: Vec<T>,
    sxy: Vec<T>,
}

fn moments<T: Real>(x: &[T], y: &[T], h: usize, w: usize, k: &[T]) -> Moments<T> {
    let mx = filter(x, h, w, k);
    let my = filter(y, h, w, k);
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&p, &q)| p * q).collect::<Vec<T>>();
    let exx = filter(&sq(x, x), h, w, k);
    let eyy = filter(&sq(y, y), h, w, k);
    let exy = filter(&sq(x, y), h, w, k);
    let n = mx.len();
    let mut sxx = Vec::with_capacity(n);
    let mut syy = Vec::with_capacity(n);
    let mut sxy = Vec::with_capacity(n);
    for i in 0..n {
        sxx.push(exx[i] - mx[i] * mx[i]);
        syy.push(eyy[i] - my[i] * my[i]);
        sxy.push(exy[i] - mx[i] * my[i]);
    }
    Moments { mx, my, sxx, syy, sxy }
}

fn plane<T: Real>(t: &[T], b: usize, ch: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    t[b * h * w * c..(b + 1) * h * w * c]
        .iter()
        .skip(ch)
        .step_by(c)
        .copied()
        .collect()
}

/// Mean SSIM over valid window positions, channels and batch.
pub fn ssim<T: Real>(a: &Var<T>, b: &Var<T>, window: &SsimWindow) -> OpResult<T> {
    if a.shape() != b.shape() {
        return Err(ShapeError::new(
            "ssim",
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, h, w, c) = a.value().dims4("ssim")?;
    let size = window.effective_size(h, w);
    let k: Vec<T> = gaussian_window(size, window.sigma).into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(window.c1()), T::lit(window.c2()));
    let planes = n * c;
    let valid = (h + 1 - size) * (w + 1 - size);
    let denom = T::from_usize(planes * valid).expect("count");
    let sums = {
        let (ad, bd) = (a.value().data(), b.value().data());
        let k = &k;
        par::map_indexed(planes, move |i| {
            let (bi, ch) = (i / c, i % c);
            let x = plane(ad, bi, ch, h, w, c);
            let y = plane(bd, bi, ch, h, w, c);
            let m = moments(&x, &y, h, w, k);
            let two = T::lit(2.0);
            (0..m.mx.len())
                .map(|j| {
                    let a1 = two * m.mx[j] * m.my[j] + c1;
                    let a2 = two * m.sxy[j] + c2;
                    let b1 = m.mx[j] * m.mx[j] + m.my[j] * m.my[j] + c1;
                    let b2 = m.sxx[j] + m.syy[j] + c2;
                    a1 * a2 / (b1 * b2)
                })
                .fold(T::zero(), |s, v| s + v)
        })
    };
    let total = sums.into_iter().fold(T::zero(), |s, v| s + v) / denom;
    Ok(Var::from_op(
        Tensor::scalar(total),
        vec![a.clone(), b.clone()],
        Box::new(move |g, p, _| {
            let scale = g.data()[0] / denom;
            let (ad, bd) = (p[0].value().data(), p[1].value().data());
            let two = T::lit(2.0);
            let k = &k;
            let grads = par::map_indexed(planes, move |i| {
                let (bi, ch) = (i / c, i % c);
                let x = plane(ad, bi, ch, h, w, c);
                let y = plane(bd, bi, ch, h, w, c);
                let m = moments(&x, &y, h, w, k);
                let len = m.mx.len();
                let (mut gmx, mut gmy) = (vec![T::zero(); len], vec![T::zero(); len]);
                let (mut gxx, mut gyy, mut gxy) = (vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]);
                for j in 0..len {
                    let (mx, my) = (m.mx[j], m.my[j]);
                    let a1 = two * mx * my + c1;
                    let a2 = two * m.sxy[j] + c2;
                    let b1 = mx * mx + my * my + c1;
                    let b2 = m.sxx[j] + m.syy[j] + c2;
                    let s = a1 * a2 / (b1 * b2);
                    let d_var = -s / b2;
                    let d_cov = two * a1 / (b1 * b2);
                    let d_mx = two * my * a2 / (b1 * b2) - s * two * mx / b1;
                    let d_my = two * mx * a2 / (b1 * b2) - s * two * my / b1;
                    gxx[j] = scale * d_var;
                    gyy[j] = scale * d_var;
                    gxy[j] = scale * d_cov;
                    gmx[j] = scale * (d_mx - two * mx * d_var - my * d_cov);
                    gmy[j] = scale * (d_my - two * my * d_var - mx * d_cov);
                }
                let fmx = filter_adjoint(&gmx, h, w, k);
                let fmy = filter_adjoint(&gmy, h, w, k);
                let fxx = filter_adjoint(&gxx, h, w, k);
                let fyy = filter_adjoint(&gyy, h, w, k);
                let fxy = filter_adjoint(&gxy, h, w, k);
                let dx: Vec<T> = (0..h * w).map(|q| fmx[q] + two * x[q] * fxx[q] + y[q] * fxy[q]).collect();
                let dy: Vec<T> = (0..h * w).map(|q| fmy[q] + two * y[q] * fyy[q] + x[q] * fxy[q]).collect();
                (dx, dy)
            });
            let mut da = vec![T::zero(); n * h * w * c];
            let mut db = vec![T::zero(); n * h * w * c];
            for (i, (dx, dy)) in grads.into_iter().enumerate() {
                let (bi, ch) = (i / c, i % c);
                let base = bi * h * w * c + ch;
                for q in 0..h * w {
                    da[base + q * c] = dx[q];
                    db[base + q * c] = dy[q];
                }
            }
            let shape = p[0].shape().to_vec();
            vec![
                p[0].requires_grad().then(|| Tensor::new(shape.clone(), da).expect("ssim da")),
                p[1].requires_grad().then(|| Tensor::new(shape, db).expect("ssim db")),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let k = gaussian_window(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn adjoint_filter_identity() {
        let (h, w) = (13, 16);
        let k: Vec<f64> = gaussian_window(5, 1.5);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64).collect();
        let g: Vec<f64> = (0..(h - 4) * (w - 4)).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let lhs: f64 = filter(&x, h, w, &k).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = filter_adjoint(&g, h, w, &k).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn identical_images_score_one() {
        let t = Tensor::from_fn(&[2, 16, 14, 3], |i| ((i * 7919) % 101) as f64 / 100.0);
        let a = Var::constant(t);
        let s = ssim(&a, &a, &SsimWindow::default()).unwrap();
        assert!((s.item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_images_shrink_window() {
        let w = SsimWindow::default();
        assert_eq!(w.effective_size(64, 64), 11);
        assert_eq!(w.effective_size(8, 20), 7);
        assert_eq!(w.effective_size(1, 5), 1);
    }
}

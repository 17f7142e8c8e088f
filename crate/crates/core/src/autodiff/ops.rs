//! Elementwise, reduction and layout operators.

use super::{OpResult, Real, ShapeError, Tensor, Var};

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<(), ShapeError> {
    if a.shape() != b.shape() {
        return Err(ShapeError::new(
            op,
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn need<T: Real>(p: &Var<T>, f: impl FnOnce() -> Tensor<T>) -> Option<Tensor<T>> {
    p.requires_grad().then(f)
}

pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> OpResult<T> {
    same_shape("add", a, b)?;
    let v = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(Var::from_op(
        v,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| vec![need(&p[0], || g.clone()), need(&p[1], || g.clone())]),
    ))
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> OpResult<T> {
    same_shape("sub", a, b)?;
    let v = a.value().zip_map(b.value(), |x, y| x - y);
    Ok(Var::from_op(
        v,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| vec![need(&p[0], || g.clone()), need(&p[1], || g.map(|x| -x))]),
    ))
}

pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> OpResult<T> {
    same_shape("mul", a, b)?;
    let v = a.value().zip_map(b.value(), |x, y| x * y);
    Ok(Var::from_op(
        v,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| {
            vec![
                need(&p[0], || g.zip_map(p[1].value(), |g, y| g * y)),
                need(&p[1], || g.zip_map(p[0].value(), |g, x| g * x)),
            ]
        }),
    ))
}

/// Sum of equally shaped terms.
pub fn add_n<T: Real>(terms: &[Var<T>]) -> OpResult<T> {
    let Some(first) = terms.first() else {
        return Err(ShapeError::new("add_n", "no terms"));
    };
    for t in terms {
        same_shape("add_n", first, t)?;
    }
    let mut v = first.value().clone();
    for t in &terms[1..] {
        v.add_assign(t.value());
    }
    Ok(Var::from_op(
        v,
        terms.to_vec(),
        Box::new(|g, p, _| p.iter().map(|pi| need(pi, || g.clone())).collect()),
    ))
}

pub fn scale<T: Real>(a: &Var<T>, s: f64) -> Var<T> {
    let s = T::lit(s);
    Var::from_op(
        a.value().map(|x| x * s),
        vec![a.clone()],
        Box::new(move |g, p, _| vec![need(&p[0], || g.map(|x| x * s))]),
    )
}

pub fn add_scalar<T: Real>(a: &Var<T>, s: f64) -> Var<T> {
    let s = T::lit(s);
    Var::from_op(
        a.value().map(|x| x + s),
        vec![a.clone()],
        Box::new(|g, p, _| vec![need(&p[0], || g.clone())]),
    )
}

/// `|x|`, with subgradient 0 at 0.
pub fn abs<T: Real>(a: &Var<T>) -> Var<T> {
    Var::from_op(
        a.value().map(T::abs),
        vec![a.clone()],
        Box::new(|g, p, _| {
            vec![need(&p[0], || {
                g.zip_map(p[0].value(), |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
            })]
        }),
    )
}

pub fn sum<T: Real>(a: &Var<T>) -> Var<T> {
    let s = a.value().sum();
    Var::from_op(
        Tensor::scalar(s),
        vec![a.clone()],
        Box::new(|g, p, _| vec![need(&p[0], || Tensor::full(p[0].shape(), g.data()[0]))]),
    )
}

pub fn mean<T: Real>(a: &Var<T>) -> Var<T> {
    let n = a.value().len().max(1) as f64;
    scale(&sum(a), 1.0 / n)
}

/// Mean absolute difference.
pub fn l1_mean<T: Real>(a: &Var<T>, b: &Var<T>) -> OpResult<T> {
    Ok(mean(&abs(&sub(a, b)?)))
}

/// Adds a per-channel bias to the last axis.
pub fn bias_add<T: Real>(x: &Var<T>, b: &Var<T>) -> OpResult<T> {
    let c = *x.shape().last().unwrap_or(&0);
    if b.shape() != [c] {
        return Err(ShapeError::new(
            "bias_add",
            format!("bias {:?} does not match {c} channels", b.shape()),
        ));
    }
    let mut v = x.value().clone();
    let bias = b.value().data();
    for row in v.data_mut().chunks_exact_mut(c) {
        for (o, &bb) in row.iter_mut().zip(bias) {
            *o += bb;
        }
    }
    Ok(Var::from_op(
        v,
        vec![x.clone(), b.clone()],
        Box::new(move |g, p, _| {
            vec![
                need(&p[0], || g.clone()),
                need(&p[1], || {
                    let mut acc = vec![T::zero(); c];
                    for row in g.data().chunks_exact(c) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(vec![c], acc).expect("bias shape")
                }),
            ]
        }),
    ))
}

/// ELU with unit scale: `x` for `x > 0`, `e^x − 1` otherwise.
pub fn elu<T: Real>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        x.value()
            .map(|v| if v > T::zero() { v } else { v.exp_m1() }),
        vec![x.clone()],
        Box::new(|g, p, out| {
            vec![need(&p[0], || {
                let mut d = g.clone();
                for ((d, &x), &y) in d.data_mut().iter_mut().zip(p[0].value().data()).zip(out.data()) {
                    if x <= T::zero() {
                        *d *= y + T::one();
                    }
                }
                d
            })]
        }),
    )
}

pub fn tanh<T: Real>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        x.value().map(T::tanh),
        vec![x.clone()],
        Box::new(|g, p, out| {
            vec![need(&p[0], || g.zip_map(out, |g, y| g * (T::one() - y * y)))]
        }),
    )
}

/// Clamp to `[lo, hi]`; gradient passes only where the input is inside.
pub fn clamp<T: Real>(x: &Var<T>, lo: f64, hi: f64) -> Var<T> {
    let (lo, hi) = (T::lit(lo), T::lit(hi));
    Var::from_op(
        x.value().map(|v| v.max(lo).min(hi)),
        vec![x.clone()],
        Box::new(move |g, p, _| {
            vec![need(&p[0], || {
                g.zip_map(p[0].value(), |g, x| {
                    if x >= lo && x <= hi {
                        g
                    } else {
                        T::zero()
                    }
                })
            })]
        }),
    )
}

/// Zero-pads the spatial axes at the bottom and right.
pub fn pad_spatial<T: Real>(x: &Var<T>, bottom: usize, right: usize) -> OpResult<T> {
    let (n, h, w, c) = x.value().dims4("pad_spatial")?;
    if bottom == 0 && right == 0 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h + bottom, w + right);
    let mut out = Tensor::zeros(&[n, ho, wo, c]);
    let src = x.value().data();
    {
        let dst = out.data_mut();
        for b in 0..n {
            for y in 0..h {
                let s = ((b * h + y) * w) * c;
                let d = ((b * ho + y) * wo) * c;
                dst[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
            }
        }
    }
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, p, _| {
            vec![need(&p[0], || crop_tensor(g, h, w).expect("pad geometry"))]
        }),
    ))
}

fn crop_tensor<T: Real>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, ShapeError> {
    let (n, hi, wi, c) = t.dims4("crop_spatial")?;
    if h > hi || w > wi {
        return Err(ShapeError::new(
            "crop_spatial",
            format!("cannot crop {hi}x{wi} to {h}x{w}"),
        ));
    }
    let src = t.data();
    let mut data = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for y in 0..h {
            let s = ((b * hi + y) * wi) * c;
            data.extend_from_slice(&src[s..s + w * c]);
        }
    }
    Tensor::new(vec![n, h, w, c], data)
}

/// Keeps the top-left `h×w` window (inverse of [`pad_spatial`]).
pub fn crop_spatial<T: Real>(x: &Var<T>, h: usize, w: usize) -> OpResult<T> {
    let (_, hi, wi, _) = x.value().dims4("crop_spatial")?;
    if h == hi && w == wi {
        return Ok(x.clone());
    }
    let out = crop_tensor(x.value(), h, w)?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, p, _| {
            vec![need(&p[0], || {
                let (n, _, _, c) = g.dims4("crop_spatial").expect("rank 4");
                let mut full = Tensor::zeros(&[n, hi, wi, c]);
                let dst = full.data_mut();
                for b in 0..n {
                    for y in 0..h {
                        let s = ((b * h + y) * w) * c;
                        let d = ((b * hi + y) * wi) * c;
                        dst[d..d + w * c].copy_from_slice(&g.data()[s..s + w * c]);
                    }
                }
                full
            })]
        }),
    ))
}

/// Channel `c` of an NHWC tensor as `N×H×W×1`.
pub fn select_channel<T: Real>(x: &Var<T>, c: usize) -> OpResult<T> {
    let out = x.value().channel(c)?;
    let ch = x.shape()[3];
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, p, _| {
            vec![need(&p[0], || {
                let mut full = Tensor::zeros(p[0].shape());
                for (dst, &v) in full.data_mut().iter_mut().skip(c).step_by(ch).zip(g.data()) {
                    *dst = v;
                }
                full
            })]
        }),
    ))
}

/// Concatenates NHWC tensors along channels.
pub fn concat_channels<T: Real>(xs: &[Var<T>]) -> OpResult<T> {
    let Some(first) = xs.first() else {
        return Err(ShapeError::new("concat_channels", "no inputs"));
    };
    let (n, h, w, _) = first.value().dims4("concat_channels")?;
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        let (n2, h2, w2, c) = x.value().dims4("concat_channels")?;
        if (n2, h2, w2) != (n, h, w) {
            return Err(ShapeError::new(
                "concat_channels",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            ));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let pixels = n * h * w;
    let mut data = Vec::with_capacity(pixels * total);
    for px in 0..pixels {
        for (x, &c) in xs.iter().zip(&widths) {
            data.extend_from_slice(&x.value().data()[px * c..(px + 1) * c]);
        }
    }
    let out = Tensor::new(vec![n, h, w, total], data)?;
    Ok(Var::from_op(
        out,
        xs.to_vec(),
        Box::new(move |g, p, _| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(p.len());
            for (pi, &c) in p.iter().zip(&widths) {
                grads.push(need(pi, || {
                    let mut d = Vec::with_capacity(pixels * c);
                    for px in 0..pixels {
                        let s = px * total + offset;
                        d.extend_from_slice(&g.data()[s..s + c]);
                    }
                    Tensor::new(pi.shape().to_vec(), d).expect("concat shape")
                }));
                offset += c;
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn activations_at_zero_and_limits() {
        let x = t(&[3], &[0.0, -1e3, 1e3]);
        let e = elu(&x);
        assert_eq!(e.value().data()[0], 0.0);
        assert!((e.value().data()[1] + 1.0).abs() < 1e-12);
        let th = tanh(&t(&[3], &[0.0, -5.0, 5.0]));
        assert_eq!(th.value().data()[0], 0.0);
        assert!(th.value().data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let x = Var::constant(Tensor::from_fn(&[2, 3, 5, 2], |i| i as f64));
        let y = crop_spatial(&pad_spatial(&x, 5, 3).unwrap(), 3, 5).unwrap();
        assert_eq!(y.value(), x.value());
        assert_eq!(pad_spatial(&x, 5, 3).unwrap().shape(), &[2, 8, 8, 2]);
    }

    #[test]
    fn concat_and_select_round_trip() {
        let a = Var::constant(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let b = Var::constant(Tensor::from_fn(&[1, 2, 2, 1], |i| 100.0 + i as f64));
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 3]);
        assert_eq!(select_channel(&c, 2).unwrap().value(), b.value());
        assert_eq!(select_channel(&c, 1).unwrap().value(), &a.value().channel(1).unwrap());
    }

    #[test]
    fn bias_shape_is_checked() {
        let x = t(&[1, 1, 1, 3], &[0.0; 3]);
        assert!(bias_add(&x, &t(&[2], &[0.0; 2])).is_err());
    }
}

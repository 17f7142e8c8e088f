//! Differentiable bilinear resampling with border clamping.

use super::{OpResult, Real, ShapeError, Tensor, Var};
use crate::par;

#[derive(Clone, Copy)]
struct Tap<T> {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    wy: T,
    wx: T,
    // whether the coordinate was inside the frame (gradient flows)
    in_y: bool,
    in_x: bool,
}

#[inline]
fn tap<T: Real>(h: usize, w: usize, y: T, x: T) -> Tap<T> {
    let ymax = T::from_usize(h - 1).expect("height");
    let xmax = T::from_usize(w - 1).expect("width");
    let in_y = y >= T::zero() && y <= ymax;
    let in_x = x >= T::zero() && x <= xmax;
    let yc = y.max(T::zero()).min(ymax);
    let xc = x.max(T::zero()).min(xmax);
    let fy = yc.floor();
    let fx = xc.floor();
    let y0 = fy.to_usize().unwrap_or(0).min(h - 1);
    let x0 = fx.to_usize().unwrap_or(0).min(w - 1);
    Tap {
        y0,
        y1: (y0 + 1).min(h - 1),
        x0,
        x1: (x0 + 1).min(w - 1),
        wy: yc - fy,
        wx: xc - fx,
        in_y,
        in_x,
    }
}

/// Samples an interleaved `h×w×c` image at continuous pixel coordinates
/// `(y, x)` into `out` (length `c`). Coordinates outside the frame clamp to
/// the border.
#[inline]
pub fn bilinear_at<T: Real>(img: &[T], h: usize, w: usize, c: usize, y: T, x: T, out: &mut [T]) {
    let t = tap(h, w, y, x);
    let one = T::one();
    let p00 = &img[(t.y0 * w + t.x0) * c..][..c];
    let p01 = &img[(t.y0 * w + t.x1) * c..][..c];
    let p10 = &img[(t.y1 * w + t.x0) * c..][..c];
    let p11 = &img[(t.y1 * w + t.x1) * c..][..c];
    for ch in 0..c {
        let top = (one - t.wx) * p00[ch] + t.wx * p01[ch];
        let bottom = (one - t.wx) * p10[ch] + t.wx * p11[ch];
        out[ch] = (one - t.wy) * top + t.wy * bottom;
    }
}

/// Samples `img: [N,H,W,C]` at `coords: [N,Ho,Wo,2]` holding `(y, x)` pixel
/// positions. Differentiable in both arguments.
pub fn grid_sample_bilinear<T: Real>(img: &Var<T>, coords: &Var<T>) -> OpResult<T> {
    let (n, h, w, c) = img.value().dims4("grid_sample")?;
    let (cn, ho, wo, two) = coords.value().dims4("grid_sample")?;
    if two != 2 {
        return Err(ShapeError::new(
            "grid_sample",
            format!("coordinate tensor must end in 2, got {two}"),
        ));
    }
    if cn != n {
        return Err(ShapeError::new(
            "grid_sample",
            format!("batch {cn} of coordinates does not match image batch {n}"),
        ));
    }
    let mut out = vec![T::zero(); n * ho * wo * c];
    let src = img.value().data();
    let cd = coords.value().data();
    par::for_each_chunk_mut(&mut out, wo * c, |row, dst| {
        let b = row / ho;
        let image = &src[b * h * w * c..(b + 1) * h * w * c];
        for ox in 0..wo {
            let q = (row * wo + ox) * 2;
            bilinear_at(image, h, w, c, cd[q], cd[q + 1], &mut dst[ox * c..(ox + 1) * c]);
        }
    });
    let out = Tensor::new(vec![n, ho, wo, c], out)?;
    Ok(Var::from_op(
        out,
        vec![img.clone(), coords.clone()],
        Box::new(move |g, p, _| {
            let src = p[0].value().data();
            let cd = p[1].value().data();
            let gd = g.data();
            let one = T::one();
            let dimg = p[0].requires_grad().then(|| {
                let mut d = vec![T::zero(); n * h * w * c];
                par::for_each_chunk_mut(&mut d, h * w * c, |b, di| {
                    for i in b * ho * wo..(b + 1) * ho * wo {
                        let t = tap(h, w, cd[2 * i], cd[2 * i + 1]);
                        let gp = &gd[i * c..(i + 1) * c];
                        let weights = [
                            (t.y0, t.x0, (one - t.wy) * (one - t.wx)),
                            (t.y0, t.x1, (one - t.wy) * t.wx),
                            (t.y1, t.x0, t.wy * (one - t.wx)),
                            (t.y1, t.x1, t.wy * t.wx),
                        ];
                        for (yy, xx, wgt) in weights {
                            let dst = &mut di[(yy * w + xx) * c..][..c];
                            for ch in 0..c {
                                dst[ch] += wgt * gp[ch];
                            }
                        }
                    }
                });
                Tensor::new(vec![n, h, w, c], d).expect("sample dimg")
            });
            let dcoords = p[1].requires_grad().then(|| {
                let mut d = vec![T::zero(); n * ho * wo * 2];
                par::for_each_chunk_mut(&mut d, wo * 2, |row, dr| {
                    let b = row / ho;
                    let image = &src[b * h * w * c..(b + 1) * h * w * c];
                    for ox in 0..wo {
                        let i = row * wo + ox;
                        let t = tap(h, w, cd[2 * i], cd[2 * i + 1]);
                        let gp = &gd[i * c..(i + 1) * c];
                        let p00 = &image[(t.y0 * w + t.x0) * c..][..c];
                        let p01 = &image[(t.y0 * w + t.x1) * c..][..c];
                        let p10 = &image[(t.y1 * w + t.x0) * c..][..c];
                        let p11 = &image[(t.y1 * w + t.x1) * c..][..c];
                        let (mut gy, mut gx) = (T::zero(), T::zero());
                        for ch in 0..c {
                            let dy = (one - t.wx) * (p10[ch] - p00[ch]) + t.wx * (p11[ch] - p01[ch]);
                            let dx = (one - t.wy) * (p01[ch] - p00[ch]) + t.wy * (p11[ch] - p10[ch]);
                            gy += gp[ch] * dy;
                            gx += gp[ch] * dx;
                        }
                        dr[2 * ox] = if t.in_y { gy } else { T::zero() };
                        dr[2 * ox + 1] = if t.in_x { gx } else { T::zero() };
                    }
                });
                Tensor::new(vec![n, ho, wo, 2], d).expect("sample dcoords")
            });
            vec![dimg, dcoords]
        }),
    ))
}

/// Sampling positions `(y + dy·d(y,x), x + dx·d(y,x))` for a disparity map
/// `d: [N,H,W,1]` and an angular offset `(dy, dx)`.
pub fn disparity_coords<T: Real>(d: &Var<T>, offset: (f64, f64)) -> OpResult<T> {
    let (n, h, w, c) = d.value().dims4("disparity_coords")?;
    if c != 1 {
        return Err(ShapeError::new(
            "disparity_coords",
            format!("disparity map must have one channel, got {c}"),
        ));
    }
    let (oy, ox) = (T::lit(offset.0), T::lit(offset.1));
    let dd = d.value().data();
    let mut out = Vec::with_capacity(n * h * w * 2);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let v = dd[(b * h + y) * w + x];
                out.push(T::from_usize(y).expect("row") + oy * v);
                out.push(T::from_usize(x).expect("col") + ox * v);
            }
        }
    }
    let out = Tensor::new(vec![n, h, w, 2], out)?;
    Ok(Var::from_op(
        out,
        vec![d.clone()],
        Box::new(move |g, p, _| {
            vec![p[0].requires_grad().then(|| {
                let data = g.data().chunks_exact(2).map(|q| oy * q[0] + ox * q[1]).collect();
                Tensor::new(p[0].shape().to_vec(), data).expect("coords grad")
            })]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Var<f64> {
        Var::constant(Tensor::from_fn(&[1, 4, 5, 2], |i| (i * i % 17) as f64))
    }

    #[test]
    fn identity_grid_reproduces_input() {
        let img = ramp();
        let d = Var::constant(Tensor::zeros(&[1, 4, 5, 1]));
        let coords = disparity_coords(&d, (1.0, -1.0)).unwrap();
        let out = grid_sample_bilinear(&img, &coords).unwrap();
        assert_eq!(out.value(), img.value());
    }

    #[test]
    fn integer_coordinates_gather_exactly() {
        let img = ramp();
        let coords = Var::constant(Tensor::new(vec![1, 1, 2, 2], vec![3.0, 1.0, 0.0, 4.0]).unwrap());
        let out = grid_sample_bilinear(&img, &coords).unwrap();
        let v = img.value().data();
        assert_eq!(out.value().data(), &[v[(3 * 5 + 1) * 2], v[(3 * 5 + 1) * 2 + 1], v[4 * 2], v[4 * 2 + 1]]);
    }

    #[test]
    fn out_of_frame_clamps_to_border() {
        let img = ramp();
        let coords = Var::constant(Tensor::new(vec![1, 1, 1, 2], vec![-3.5, 9.0]).unwrap());
        let out = grid_sample_bilinear(&img, &coords).unwrap();
        let v = img.value().data();
        assert_eq!(out.value().data(), &[v[4 * 2], v[4 * 2 + 1]]);
    }

    #[test]
    fn coordinate_last_dim_is_checked() {
        let img = ramp();
        let coords = Var::constant(Tensor::zeros(&[1, 2, 2, 3]));
        assert!(grid_sample_bilinear(&img, &coords).is_err());
    }
}

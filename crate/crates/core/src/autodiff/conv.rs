//! 2-D convolution (cross-correlation) and its transpose, NHWC layout with
//! `[KH, KW, C_in, C_out]` kernels, lowered to banded im2col + GEMM.

use super::{OpResult, Real, ShapeError, Tensor, Var};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output is `ceil(in / stride)`; zeros split evenly, extra on bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Shape bookkeeping shared by the forward and both adjoint passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

// im2col band size in elements; fixed so results never depend on threading
const BAND_ELEMS: usize = 1 << 21;

impl ConvGeometry {
    pub fn new(
        x: (usize, usize, usize, usize),
        kernel: &[usize],
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self, ShapeError> {
        let (n, h, w, cin) = x;
        let [kh, kw, kc, cout] = kernel[..] else {
            return Err(ShapeError::new(
                "conv2d",
                format!("kernel must be [KH,KW,Cin,Cout], got {kernel:?}"),
            ));
        };
        if kc != cin {
            return Err(ShapeError::new(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {cin}"),
            ));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 {
            return Err(ShapeError::new("conv2d", "stride and kernel size must be >= 1"));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let ho = h.div_ceil(sh);
                let wo = w.div_ceil(sw);
                let ph = ((ho - 1) * sh + kh).saturating_sub(h);
                let pw = ((wo - 1) * sw + kw).saturating_sub(w);
                (ho, wo, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(ShapeError::new(
                        "conv2d",
                        format!("{h}x{w} input smaller than {kh}x{kw} kernel"),
                    ));
                }
                ((h - kh) / sh + 1, (w - kw) / sw + 1, 0, 0)
            }
        };
        Ok(ConvGeometry {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            sh,
            sw,
            ho,
            wo,
            pad_top,
            pad_left,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Output rows (of `wo` pixels) per im2col band.
    fn band_rows(&self) -> usize {
        (BAND_ELEMS / (self.wo * self.patch()).max(1)).clamp(1, self.ho.max(1))
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.ho, self.wo, self.cout]
    }

    /// Fills `cols` with patches for output rows `row0..row0+rows` (rows are
    /// global over `n·ho`).
    fn im2col<T: Real>(&self, x: &[T], row0: usize, rows: usize, cols: &mut [T]) {
        let k = self.patch();
        let kwc = self.kw * self.cin;
        for r in 0..rows {
            let (b, oy) = ((row0 + r) / self.ho, (row0 + r) % self.ho);
            let img = &x[b * self.h * self.w * self.cin..(b + 1) * self.h * self.w * self.cin];
            for ox in 0..self.wo {
                let dst = &mut cols[(r * self.wo + ox) * k..(r * self.wo + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.sh + ky) as isize - self.pad_top as isize;
                    let drow = &mut dst[ky * kwc..(ky + 1) * kwc];
                    if iy < 0 || iy >= self.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = iy as usize;
                    let ix0 = (ox * self.sw) as isize - self.pad_left as isize;
                    if ix0 >= 0 && ix0 as usize + self.kw <= self.w {
                        let s = (iy * self.w + ix0 as usize) * self.cin;
                        drow.copy_from_slice(&img[s..s + kwc]);
                    } else {
                        for kx in 0..self.kw {
                            let ix = ix0 + kx as isize;
                            let d = &mut drow[kx * self.cin..(kx + 1) * self.cin];
                            if ix < 0 || ix >= self.w as isize {
                                d.fill(T::zero());
                            } else {
                                let s = (iy * self.w + ix as usize) * self.cin;
                                d.copy_from_slice(&img[s..s + self.cin]);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds patch gradients for rows `oy0..oy0+rows` of one image.
    fn col2im<T: Real>(&self, cols: &[T], oy0: usize, rows: usize, img: &mut [T]) {
        let k = self.patch();
        for r in 0..rows {
            let oy = oy0 + r;
            for ox in 0..self.wo {
                let src = &cols[(r * self.wo + ox) * k..(r * self.wo + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.sh + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.sw + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let d = (iy as usize * self.w + ix as usize) * self.cin;
                        let s = (ky * self.kw + kx) * self.cin;
                        for (o, &v) in img[d..d + self.cin].iter_mut().zip(&src[s..s + self.cin]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y = x ⋆ k`.
pub(crate) fn conv_forward<T: Real>(x: &[T], k: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.ho * g.wo * g.cout];
    let kdim = g.patch();
    let row_len = g.wo * g.cout;
    let band = g.band_rows();
    par::for_each_chunk_mut(&mut out, band * row_len, |i, out_band| {
        let rows = out_band.len() / row_len;
        let row0 = i * band;
        let pixels = rows * g.wo;
        if g.is_pointwise() {
            let s = row0 * g.wo * g.cin;
            T::gemm(pixels, kdim, g.cout, T::one(), &x[s..s + pixels * g.cin], (kdim, 1), k, (g.cout, 1), T::zero(), out_band, (g.cout, 1));
        } else {
            let mut cols = vec![T::zero(); pixels * kdim];
            g.im2col(x, row0, rows, &mut cols);
            T::gemm(pixels, kdim, g.cout, T::one(), &cols, (kdim, 1), k, (g.cout, 1), T::zero(), out_band, (g.cout, 1));
        }
    });
    out
}

/// Gradient of [`conv_forward`] with respect to its input.
pub(crate) fn conv_backward_data<T: Real>(dy: &[T], k: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.cin];
    let kdim = g.patch();
    if g.is_pointwise() {
        let band = g.band_rows() * g.w;
        par::for_each_chunk_mut(&mut dx, band * g.cin, |i, dxb| {
            let pixels = dxb.len() / g.cin;
            let s = i * band * g.cout;
            T::gemm(pixels, g.cout, g.cin, T::one(), &dy[s..s + pixels * g.cout], (g.cout, 1), k, (1, g.cout), T::zero(), dxb, (g.cin, 1));
        });
        return dx;
    }
    let band = g.band_rows();
    // images never share input pixels, so they can be scattered independently
    par::for_each_chunk_mut(&mut dx, g.h * g.w * g.cin, |b, img| {
        let mut cols = Vec::new();
        let mut oy = 0;
        while oy < g.ho {
            let rows = band.min(g.ho - oy);
            let pixels = rows * g.wo;
            cols.resize(pixels * kdim, T::zero());
            let s = (b * g.ho + oy) * g.wo * g.cout;
            T::gemm(pixels, g.cout, kdim, T::one(), &dy[s..s + pixels * g.cout], (g.cout, 1), k, (1, g.cout), T::zero(), &mut cols, (kdim, 1));
            g.col2im(&cols, oy, rows, img);
            oy += rows;
        }
    });
    dx
}

/// Gradient of [`conv_forward`] with respect to the kernel.
pub(crate) fn conv_backward_kernel<T: Real>(x: &[T], dy: &[T], g: &ConvGeometry) -> Vec<T> {
    let kdim = g.patch();
    let band = g.band_rows();
    let partials = par::map_indexed(g.n, |b| {
        let mut dk = vec![T::zero(); kdim * g.cout];
        let mut cols = Vec::new();
        let mut oy = 0;
        while oy < g.ho {
            let rows = band.min(g.ho - oy);
            let pixels = rows * g.wo;
            let row0 = b * g.ho + oy;
            let dys = &dy[row0 * g.wo * g.cout..(row0 * g.wo + pixels) * g.cout];
            if g.is_pointwise() {
                let xs = &x[row0 * g.wo * g.cin..(row0 * g.wo + pixels) * g.cin];
                T::gemm(kdim, pixels, g.cout, T::one(), xs, (1, kdim), dys, (g.cout, 1), T::one(), &mut dk, (g.cout, 1));
            } else {
                cols.resize(pixels * kdim, T::zero());
                g.im2col(x, row0, rows, &mut cols);
                T::gemm(kdim, pixels, g.cout, T::one(), &cols, (1, kdim), dys, (g.cout, 1), T::one(), &mut dk, (g.cout, 1));
            }
            oy += rows;
        }
        dk
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| vec![T::zero(); kdim * g.cout]);
    for p in iter {
        for (a, v) in total.iter_mut().zip(p) {
            *a += v;
        }
    }
    total
}

/// Cross-correlation of `x: [N,H,W,Cin]` with `k: [KH,KW,Cin,Cout]`.
pub fn conv2d<T: Real>(x: &Var<T>, k: &Var<T>, stride: (usize, usize), padding: Padding) -> OpResult<T> {
    let g = ConvGeometry::new(x.value().dims4("conv2d")?, k.shape(), stride, padding)?;
    let out = conv_forward(x.value().data(), k.value().data(), &g);
    let out = Tensor::new(g.output_shape().to_vec(), out)?;
    Ok(Var::from_op(
        out,
        vec![x.clone(), k.clone()],
        Box::new(move |dy, p, _| {
            let dx = p[0].requires_grad().then(|| {
                Tensor::new(p[0].shape().to_vec(), conv_backward_data(dy.data(), p[1].value().data(), &g))
                    .expect("conv dx")
            });
            let dk = p[1].requires_grad().then(|| {
                Tensor::new(p[1].shape().to_vec(), conv_backward_kernel(p[0].value().data(), dy.data(), &g))
                    .expect("conv dk")
            });
            vec![dx, dk]
        }),
    ))
}

/// Transposed convolution: the adjoint of a "same" strided [`conv2d`].
///
/// `y: [N,H,W,B]` with `k: [KH,KW,A,B]` gives `[N, H·s_h, W·s_w, A]`.
pub fn conv2d_transpose<T: Real>(y: &Var<T>, k: &Var<T>, stride: (usize, usize)) -> OpResult<T> {
    let (n, h, w, b) = y.value().dims4("conv2d_transpose")?;
    let [_, _, a, kb] = k.shape()[..] else {
        return Err(ShapeError::new(
            "conv2d_transpose",
            format!("kernel must be [KH,KW,Cout,Cin], got {:?}", k.shape()),
        ));
    };
    if kb != b {
        return Err(ShapeError::new(
            "conv2d_transpose",
            format!("kernel expects {kb} input channels, input has {b}"),
        ));
    }
    let g = ConvGeometry::new((n, h * stride.0, w * stride.1, a), k.shape(), stride, Padding::Same)?;
    debug_assert_eq!((g.ho, g.wo), (h, w));
    let out = conv_backward_data(y.value().data(), k.value().data(), &g);
    let out = Tensor::new(vec![n, g.h, g.w, a], out)?;
    Ok(Var::from_op(
        out,
        vec![y.clone(), k.clone()],
        Box::new(move |dout, p, _| {
            let dy = p[0].requires_grad().then(|| {
                Tensor::new(p[0].shape().to_vec(), conv_forward(dout.data(), p[1].value().data(), &g))
                    .expect("deconv dy")
            });
            let dk = p[1].requires_grad().then(|| {
                Tensor::new(p[1].shape().to_vec(), conv_backward_kernel(dout.data(), p[0].value().data(), &g))
                    .expect("deconv dk")
            });
            vec![dy, dk]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation used as an oracle.
    fn naive(x: &Tensor<f64>, k: &Tensor<f64>, g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.ho * g.wo * g.cout];
        for b in 0..g.n {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for co in 0..g.cout {
                        let mut s = 0.0;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.sh + ky) as isize - g.pad_top as isize;
                                let ix = (ox * g.sw + kx) as isize - g.pad_left as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                for ci in 0..g.cin {
                                    s += x.data()[((b * g.h + iy as usize) * g.w + ix as usize) * g.cin + ci]
                                        * k.data()[((ky * g.kw + kx) * g.cin + ci) * g.cout + co];
                                }
                            }
                        }
                        out[((b * g.ho + oy) * g.wo + ox) * g.cout + co] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_assorted_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (xs, ks, stride, pad) in [
            ([2, 7, 6, 3], [3, 3, 3, 4], (1, 1), Padding::Same),
            ([1, 8, 9, 2], [3, 3, 2, 3], (2, 2), Padding::Same),
            ([2, 5, 5, 1], [3, 3, 1, 2], (1, 1), Padding::Valid),
            ([1, 4, 4, 5], [1, 1, 5, 2], (1, 1), Padding::Same),
            ([1, 6, 7, 2], [2, 4, 2, 1], (2, 3), Padding::Same),
        ] {
            let x = random(&xs, &mut rng);
            let k = random(&ks, &mut rng);
            let g = ConvGeometry::new((xs[0], xs[1], xs[2], xs[3]), &ks, stride, pad).unwrap();
            let ours = conv_forward(x.data(), k.data(), &g);
            for (a, b) in ours.iter().zip(naive(&x, &k, &g)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel_and_box_sum() {
        let x = Var::constant(Tensor::from_fn(&[1, 4, 5, 3], |i| i as f64 * 0.1));
        let mut eye = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            eye.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &Var::constant(eye), (1, 1), Padding::Same).unwrap();
        assert_eq!(y.value(), x.value());

        let c = 0.7f64;
        let x = Var::constant(Tensor::full(&[1, 5, 5, 1], c));
        let k = Var::constant(Tensor::full(&[3, 3, 1, 1], 1.0));
        let y = conv2d(&x, &k, (1, 1), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 1]);
        assert!(y.value().data().iter().all(|&v| (v - 9.0 * c).abs() < 1e-12));
    }

    #[test]
    fn transpose_doubles_and_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (n, h, w, a, b) in [(1, 4, 4, 2, 3), (2, 3, 5, 3, 2), (1, 6, 2, 1, 1)] {
            let k = random(&[3, 3, a, b], &mut rng);
            let x = random(&[n, 2 * h, 2 * w, a], &mut rng);
            let y = random(&[n, h, w, b], &mut rng);
            let cx = conv2d(&Var::constant(x.clone()), &Var::constant(k.clone()), (2, 2), Padding::Same).unwrap();
            let ty = conv2d_transpose(&Var::constant(y.clone()), &Var::constant(k), (2, 2)).unwrap();
            assert_eq!(ty.shape(), &[n, 2 * h, 2 * w, a]);
            let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(p, q)| p * q).sum::<f64>();
            let rhs: f64 = x.data().iter().zip(ty.value().data()).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Var::leaf(random(&[3, 9, 11, 4], &mut rng).cast::<f32>());
        let k = Var::leaf(random(&[3, 3, 4, 5], &mut rng).cast::<f32>());
        let run = || {
            x.zero_grad();
            k.zero_grad();
            let y = conv2d(&x, &k, (2, 2), Padding::Same).unwrap();
            crate::autodiff::sum(&crate::autodiff::mul(&y, &y).unwrap()).backward().unwrap();
            (y.value().clone(), x.grad().unwrap(), k.grad().unwrap())
        };
        let a = run();
        let b = par::sequential(run);
        assert_eq!(a, b);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Var::constant(Tensor::<f32>::zeros(&[1, 4, 4, 3]));
        let k = Var::constant(Tensor::<f32>::zeros(&[3, 3, 2, 1]));
        assert!(conv2d(&x, &k, (1, 1), Padding::Same).is_err());
    }
}

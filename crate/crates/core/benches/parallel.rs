//! Parallel (rayon) versus forced-sequential execution of the hot kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lfz_core::autodiff::{conv2d, ssim, sum, Padding, SsimWindow, Tensor, Var};
use lfz_core::jpeg::{self, JpegConfig};
use lfz_core::lightfield::Image;
use lfz_core::par;
use lfz_core::synthesis::warp_center_to_view;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f32>())
}

fn image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_vec(h, w, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Benchmarks `f` once on the thread pool and once forced sequential.
fn both(c: &mut Criterion, group: &str, f: impl Fn()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| par::sequential(&f)));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let x = random(&[4, 64, 64, 32], 1);
    let k = random(&[3, 3, 32, 32], 2);
    both(c, "conv2d 4x64x64x32 k3 fwd+bwd", || {
        let (x, k) = (Var::leaf(x.clone()), Var::leaf(k.clone()));
        let y = conv2d(&x, &k, (1, 1), Padding::Same).unwrap();
        sum(&y).backward().unwrap();
        black_box(k.grad());
    });
}

fn ssim_bench(c: &mut Criterion) {
    let a = random(&[4, 128, 128, 3], 3);
    let b = random(&[4, 128, 128, 3], 4);
    let window = SsimWindow::default();
    both(c, "ssim 4x128x128 fwd+bwd", || {
        let (a, b) = (Var::leaf(a.clone()), Var::constant(b.clone()));
        ssim(&a, &b, &window).unwrap().backward().unwrap();
        black_box(a.grad());
    });
}

fn warp(c: &mut Criterion) {
    let center = image(256, 256, 5);
    let d: Vec<f32> = (0..256 * 256).map(|i| ((i % 97) as f32 / 97.0 - 0.5) * 3.0).collect();
    both(c, "warp 256x256", || {
        black_box(warp_center_to_view(&center, &d, (2.0, -3.0)).unwrap());
    });
}

fn codec(c: &mut Criterion) {
    let img = image(375, 540, 6);
    let cfg = JpegConfig::with_quality(50);
    let bytes = jpeg::encode(&img, &cfg).unwrap();
    both(c, "jpeg encode 375x540", || {
        black_box(jpeg::encode(&img, &cfg).unwrap());
    });
    both(c, "jpeg decode 375x540", || {
        black_box(jpeg::decode(bytes.as_bytes()).unwrap());
    });
}

criterion_group!(benches, conv, ssim_bench, warp, codec);
criterion_main!(benches);

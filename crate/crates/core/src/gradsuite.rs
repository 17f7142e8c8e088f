//! The full finite-difference suite: every differentiable op, the
//! synthesis warps, each loss term and end-to-end network gradients, all in
//! double precision on randomly drawn shapes.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, GradCheckOptions, GradCheckReport};
use crate::autodiff::*;
use crate::lightfield::view_offsets;
use crate::nets::{DepthConfig, HanceConfig, Module, Nets, Slot};
use crate::objectives::{
    loss_consistency, loss_defocus, loss_dof, loss_photometric, loss_terms, loss_total, psi, LossInputs, LossWeights,
};
use crate::synthesis::{mean_views, reconstruct_views, reproject, warp_from_center, warp_to_center};

/// Tolerance for single operators.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for losses and whole networks.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random shapes drawn per operator.
    pub shapes: usize,
    /// Include the network-level checks (the slowest part).
    pub networks: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            shapes: 3,
            networks: true,
        }
    }
}

type Case = Box<dyn Fn(&[Var<f64>]) -> OpResult<f64>>;

struct Suite {
    rng: ChaCha8Rng,
    reports: Vec<GradCheckReport>,
    seed: u64,
}

impl Suite {
    fn run(&mut self, name: String, inputs: Vec<Tensor<f64>>, tol: f64, max_coords: usize, f: Case) -> Result<(), ShapeError> {
        let opts = GradCheckOptions {
            tolerance: tol,
            max_coords,
            seed: self.seed ^ self.reports.len() as u64,
            ..GradCheckOptions::default()
        };
        self.reports.push(check(&name, &inputs, f, &opts)?);
        Ok(())
    }

    fn op(&mut self, name: String, inputs: Vec<Tensor<f64>>, f: Case) -> Result<(), ShapeError> {
        self.run(name, inputs, OP_TOLERANCE, 48, f)
    }

    fn composite(&mut self, name: String, inputs: Vec<Tensor<f64>>, f: Case) -> Result<(), ShapeError> {
        self.run(name, inputs, COMPOSITE_TOLERANCE, 32, f)
    }

    fn dims(&mut self, lo: usize, hi: usize) -> [usize; 4] {
        let r = &mut self.rng;
        [r.random_range(1..=2), r.random_range(lo..=hi), r.random_range(lo..=hi), r.random_range(1..=4)]
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let r = &mut self.rng;
        Tensor::from_fn(shape, |_| r.random_range(lo..hi))
    }

    /// Values in `±[0.1, 1]`: no element sits near zero.
    fn nonzero(&mut self, shape: &[usize]) -> Tensor<f64> {
        let r = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let m = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }
}

/// Contracts `out` with fixed pseudo-random weights so every output
/// element contributes a distinct amount to the checked scalar.
fn probe(out: &Var<f64>) -> OpResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ out.value().len() as u64);
    let w = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    Ok(sum(&mul(out, &Var::constant(w))?))
}

fn shape_tag(s: &[usize]) -> String {
    format!("{s:?}").replace(' ', "")
}

/// Runs every check and returns one report per (case, shape).
pub fn run(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>, ShapeError> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        reports: Vec::new(),
        seed: opts.seed,
    };
    for _ in 0..opts.shapes.max(1) {
        elementwise(&mut s)?;
        layout(&mut s)?;
        convolution(&mut s)?;
        normalization(&mut s)?;
        sampling(&mut s)?;
        synthesis_and_losses(&mut s)?;
    }
    if opts.networks {
        networks(&mut s)?;
    }
    Ok(s.reports)
}

fn elementwise(s: &mut Suite) -> Result<(), ShapeError> {
    let d = s.dims(2, 5);
    let tag = shape_tag(&d);
    let (a, b, c) = (s.uniform(&d, -1.0, 1.0), s.uniform(&d, -1.0, 1.0), s.uniform(&d, -1.0, 1.0));
    s.op(format!("add {tag}"), vec![a.clone(), b.clone()], Box::new(|v| probe(&add(&v[0], &v[1])?)))?;
    s.op(format!("sub {tag}"), vec![a.clone(), b.clone()], Box::new(|v| probe(&sub(&v[0], &v[1])?)))?;
    s.op(format!("mul {tag}"), vec![a.clone(), b.clone()], Box::new(|v| probe(&mul(&v[0], &v[1])?)))?;
    s.op(format!("add_n {tag}"), vec![a.clone(), b.clone(), c], Box::new(|v| probe(&add_n(v)?)))?;
    s.op(format!("scale {tag}"), vec![a.clone()], Box::new(|v| probe(&scale(&v[0], -1.7))))?;
    s.op(format!("add_scalar {tag}"), vec![a.clone()], Box::new(|v| probe(&add_scalar(&v[0], 0.3))))?;
    s.op(format!("sum {tag}"), vec![a.clone()], Box::new(|v| Ok(scale(&sum(&mul(&v[0], &v[0])?), 0.5))))?;
    s.op(format!("mean {tag}"), vec![a.clone()], Box::new(|v| Ok(mean(&mul(&v[0], &v[0])?))))?;
    s.op(format!("elu {tag}"), vec![a.clone()], Box::new(|v| probe(&elu(&v[0]))))?;
    s.op(format!("tanh {tag}"), vec![a.clone()], Box::new(|v| probe(&tanh(&v[0]))))?;

    let nz = s.nonzero(&d);
    s.op(format!("abs {tag}"), vec![nz.clone()], Box::new(|v| probe(&abs(&v[0]))))?;
    let shifted = a.zip_map(&nz, |x, y| x + y);
    s.op(
        format!("l1_mean {tag}"),
        vec![shifted, a.clone()],
        Box::new(|v| l1_mean(&v[0], &v[1])),
    )?;
    // clamp to ±0.5, keeping every sample at least 0.05 from a bound
    let clampable = s.nonzero(&d).map(|x| if x.abs() < 0.55 && x.abs() > 0.45 { x * 0.8 } else { x });
    s.op(format!("clamp {tag}"), vec![clampable], Box::new(|v| probe(&clamp(&v[0], -0.5, 0.5))))?;

    let bias = s.uniform(&[d[3]], -1.0, 1.0);
    s.op(format!("bias_add {tag}"), vec![a, bias], Box::new(|v| probe(&bias_add(&v[0], &v[1])?)))?;
    Ok(())
}

fn layout(s: &mut Suite) -> Result<(), ShapeError> {
    let d = s.dims(2, 5);
    let tag = shape_tag(&d);
    let x = s.uniform(&d, -1.0, 1.0);
    let (pb, pr) = (s.rng.random_range(0..=3), s.rng.random_range(0..=3));
    s.op(
        format!("pad_spatial {tag}+({pb},{pr})"),
        vec![x.clone()],
        Box::new(move |v| probe(&pad_spatial(&v[0], pb, pr)?)),
    )?;
    let (ch, cw) = (s.rng.random_range(1..=d[1]), s.rng.random_range(1..=d[2]));
    s.op(
        format!("crop_spatial {tag}->({ch},{cw})"),
        vec![x.clone()],
        Box::new(move |v| probe(&crop_spatial(&v[0], ch, cw)?)),
    )?;
    let c = s.rng.random_range(0..d[3]);
    s.op(
        format!("select_channel {tag}[{c}]"),
        vec![x.clone()],
        Box::new(move |v| probe(&select_channel(&v[0], c)?)),
    )?;
    let mut d2 = d;
    d2[3] = s.rng.random_range(1..=3);
    let y = s.uniform(&d2, -1.0, 1.0);
    s.op(
        format!("concat_channels {tag}+{}", d2[3]),
        vec![x, y],
        Box::new(|v| probe(&concat_channels(v)?)),
    )?;
    Ok(())
}

fn convolution(s: &mut Suite) -> Result<(), ShapeError> {
    let d = s.dims(3, 7);
    let tag = shape_tag(&d);
    let x = s.uniform(&d, -1.0, 1.0);
    for (k, stride, pad) in [(3, 1, Padding::Same), (3, 2, Padding::Same), (1, 1, Padding::Same), (3, 1, Padding::Valid)] {
        let cout = s.rng.random_range(1..=3);
        let kern = s.uniform(&[k, k, d[3], cout], -1.0, 1.0);
        s.op(
            format!("conv2d k{k} s{stride} {pad:?} {tag}->{cout}"),
            vec![x.clone(), kern],
            Box::new(move |v| probe(&conv2d(&v[0], &v[1], (stride, stride), pad)?)),
        )?;
    }
    let cout = s.rng.random_range(1..=3);
    let kern = s.uniform(&[3, 3, cout, d[3]], -1.0, 1.0);
    s.op(
        format!("conv2d_transpose k3 s2 {tag}->{cout}"),
        vec![x, kern],
        Box::new(|v| probe(&conv2d_transpose(&v[0], &v[1], (2, 2))?)),
    )?;
    Ok(())
}

fn normalization(s: &mut Suite) -> Result<(), ShapeError> {
    let d = s.dims(2, 5);
    let tag = shape_tag(&d);
    let x = s.uniform(&d, -1.0, 1.0);
    let gamma = s.uniform(&[d[3]], 0.5, 1.5);
    let beta = s.uniform(&[d[3]], -0.5, 0.5);
    let c = d[3];
    s.op(
        format!("batch_norm train {tag}"),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |v| {
            let mut stats = BatchStats::new(c);
            probe(&batch_norm(&v[0], &v[1], &v[2], &mut stats, true)?)
        }),
    )?;
    let mut stats = BatchStats::new(c);
    stats.mean = s.uniform(&[c], -0.5, 0.5);
    stats.var = s.uniform(&[c], 0.5, 2.0);
    s.op(
        format!("batch_norm eval {tag}"),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |v| probe(&batch_norm(&v[0], &v[1], &v[2], &mut stats.clone(), false)?)),
    )?;
    s.op(
        format!("instance_norm {tag}"),
        vec![x, gamma, beta],
        Box::new(|v| probe(&instance_norm(&v[0], &v[1], &v[2])?)),
    )?;
    Ok(())
}

/// Disparities whose sampling positions `x + o·d` stay at least `gap` away
/// from the integer lattice for every offset `o` in `offsets`.
fn smooth_disparity(s: &mut Suite, shape: &[usize], offsets: &[(f64, f64)], range: f64) -> Tensor<f64> {
    let r = &mut s.rng;
    let ok = |d: f64| {
        offsets.iter().all(|&(oy, ox)| {
            [oy * d, ox * d]
                .iter()
                .all(|p| (p - p.round()).abs() > 0.02 || *p == 0.0)
        })
    };
    Tensor::from_fn(shape, |_| loop {
        let d = r.random_range(-range..range);
        if ok(d) {
            break d;
        }
    })
}

fn sampling(s: &mut Suite) -> Result<(), ShapeError> {
    let d = s.dims(3, 6);
    let tag = shape_tag(&d);
    let img = s.uniform(&d, 0.0, 1.0);
    let (ho, wo) = (s.rng.random_range(2..=5), s.rng.random_range(2..=5));
    let r = &mut s.rng;
    // fractional positions off the lattice, a few of them outside the frame
    let coords = Tensor::from_fn(&[d[0], ho, wo, 2], |i| {
        let extent = if i % 2 == 0 { d[1] } else { d[2] } as f64;
        let base = r.random_range(-1..extent as i32) as f64;
        base + r.random_range(0.1..0.9)
    });
    s.op(
        format!("grid_sample {tag} at {ho}x{wo}"),
        vec![img, coords],
        Box::new(|v| probe(&grid_sample_bilinear(&v[0], &v[1])?)),
    )?;
    let dmap = s.uniform(&[d[0], d[1], d[2], 1], -2.0, 2.0);
    let off = (s.rng.random_range(-3..=3) as f64, s.rng.random_range(-3..=3) as f64);
    s.op(
        format!("disparity_coords {tag} {off:?}"),
        vec![dmap],
        Box::new(move |v| probe(&disparity_coords(&v[0], off)?)),
    )?;

    let side = s.rng.random_range(7..=13);
    let sd = [s.rng.random_range(1..=2), side, s.rng.random_range(7..=13), 3];
    let a = s.uniform(&sd, 0.0, 1.0);
    let b = a.map(|x| x * 0.8 + 0.1).zip_map(&s.uniform(&sd, -0.1, 0.1), |x, n| x + n);
    let window = SsimWindow::default();
    s.op(
        format!("ssim {}", shape_tag(&sd)),
        vec![a, b],
        Box::new(move |v| ssim(&v[0], &v[1], &window)),
    )?;
    Ok(())
}

fn synthesis_and_losses(s: &mut Suite) -> Result<(), ShapeError> {
    let angular = if s.rng.random_bool(0.5) { (3, 3) } else { (3, 5) };
    let offsets: Vec<(f64, f64)> = view_offsets(angular)
        .into_iter()
        .map(|(u, v)| (f64::from(u), f64::from(v)))
        .collect();
    let (h, w) = (s.rng.random_range(8..=12), s.rng.random_range(8..=12));
    let nv = offsets.len();
    let tag = format!("{}x{} {h}x{w}", angular.0, angular.1);
    let center = s.uniform(&[1, h, w, 3], 0.1, 0.9);
    let depth = smooth_disparity(s, &[1, h, w, nv], &offsets, 1.2);
    let gt: Vec<Tensor<f64>> = (0..nv).map(|_| s.uniform(&[1, h, w, 3], 0.1, 0.9)).collect();
    let window = SsimWindow::default();
    let beta = LossWeights::default().beta;

    let one_map = smooth_disparity(s, &[1, h, w, 1], &offsets, 1.2);
    let off = offsets[0];
    s.op(
        format!("warp_from_center {tag}"),
        vec![center.clone(), one_map.clone()],
        Box::new(move |v| probe(&warp_from_center(&v[0], &v[1], off)?)),
    )?;
    s.op(
        format!("warp_to_center {tag}"),
        vec![gt[0].clone(), one_map.clone()],
        Box::new(move |v| probe(&warp_to_center(&v[0], &v[1], off)?)),
    )?;
    let other = smooth_disparity(s, &[1, h, w, 1], &offsets, 1.2);
    s.op(
        format!("reproject {tag}"),
        vec![other, one_map],
        Box::new(move |v| probe(&reproject(&v[0], &v[1], off)?)),
    )?;
    let offs = offsets.clone();
    s.op(
        format!("reconstruct_views+mean {tag}"),
        vec![center.clone(), depth.clone()],
        Box::new(move |v| probe(&mean_views(&reconstruct_views(&v[0], &v[1], &offs)?)?)),
    )?;
    s.composite(
        format!("psi {tag}"),
        vec![center.clone(), gt[0].clone()],
        Box::new(move |v| psi(&v[0], &v[1], beta, &window)),
    )?;

    type Term = fn(&LossInputs<'_, f64>) -> OpResult<f64>;
    let total: Term = |inp| {
        let terms = loss_terms(inp)?;
        loss_total(&terms, &LossWeights::default()).map_err(|e| ShapeError::new("loss_total", e.to_string()))
    };
    let terms: [(&str, Term); 5] = [
        ("loss_photometric", loss_photometric),
        ("loss_defocus", loss_defocus),
        ("loss_consistency", loss_consistency),
        ("loss_dof", loss_dof),
        ("loss_total", total),
    ];
    for (name, term) in terms {
        let gt = gt.clone();
        let offs = offsets.clone();
        s.composite(
            format!("{name} {tag}"),
            vec![center.clone(), depth.clone()],
            Box::new(move |v| {
                let views: Vec<Var<f64>> = gt.iter().cloned().map(Var::constant).collect();
                term(&LossInputs {
                    center: &v[0],
                    depth: &v[1],
                    gt_views: &views,
                    offsets: &offs,
                    beta,
                    window,
                })
            }),
        )?;
    }
    Ok(())
}

/// Gradients of whole-network objectives with respect to their parameters.
/// One coordinate is drawn from every parameter tensor.
fn networks(s: &mut Suite) -> Result<(), ShapeError> {
    let mut nets = Nets::<f64>::new(HanceConfig::DESK, DepthConfig::desk(9), s.seed);
    // the output conv starts at zero, which would hide every upstream gradient
    let r = &mut s.rng;
    nets.hance.visit("hance", &mut |name, slot| {
        if let (true, Slot::Param(p)) = (name.starts_with("hance.out"), slot) {
            let shape = p.shape().to_vec();
            *p = Var::leaf(Tensor::from_fn(&shape, |_| r.random_range(-0.05..0.05)));
        }
    });

    let hance_params = params(&mut nets.hance, "hance");
    let input = s.uniform(&[1, 16, 16, 3], 0.15, 0.85);
    let target = s.uniform(&[1, 16, 16, 3], 0.15, 0.85);
    let nets = RefCell::new(nets);
    let shared = std::rc::Rc::new(nets);
    {
        let names: Vec<String> = hance_params.iter().map(|p| p.0.clone()).collect();
        let nets = shared.clone();
        let (input, target) = (input.clone(), target.clone());
        s.run(
            "hance+psi [1,16,16,3]".into(),
            hance_params.into_iter().map(|p| p.1).collect(),
            COMPOSITE_TOLERANCE,
            2,
            Box::new(move |v| {
                let mut n = nets.borrow_mut();
                install(&mut n.hance, "hance", &names, v);
                let y = n.hance.forward(&Var::constant(input.clone()), true)?;
                psi(&y, &Var::constant(target.clone()), 0.15, &SsimWindow::default())
            }),
        )?;
    }

    let (hp, dp) = {
        let mut n = shared.borrow_mut();
        (params(&mut n.hance, "hance"), params(&mut n.depth, "depth"))
    };
    let angular = (3, 3);
    let offsets: Vec<(f64, f64)> = view_offsets(angular)
        .into_iter()
        .map(|(u, v)| (f64::from(u), f64::from(v)))
        .collect();
    let side = 32;
    let decoded = s.uniform(&[1, side, side, 3], 0.15, 0.85);
    let gt: Vec<Tensor<f64>> = (0..9).map(|_| s.uniform(&[1, side, side, 3], 0.1, 0.9)).collect();
    let (hn, dn): (Vec<String>, Vec<String>) = (
        hp.iter().map(|p| p.0.clone()).collect(),
        dp.iter().map(|p| p.0.clone()).collect(),
    );
    let split = hn.len();
    let inputs = hp.into_iter().chain(dp).map(|p| p.1).collect();
    let nets = shared.clone();
    s.run(
        format!("total loss via nets 3x3 {side}x{side}"),
        inputs,
        COMPOSITE_TOLERANCE,
        1,
        Box::new(move |v| {
            let mut n = nets.borrow_mut();
            install(&mut n.hance, "hance", &hn, &v[..split]);
            install(&mut n.depth, "depth", &dn, &v[split..]);
            let center = n.hance.forward(&Var::constant(decoded.clone()), true)?;
            let depth = n.depth.forward(&center)?;
            let views: Vec<Var<f64>> = gt.iter().cloned().map(Var::constant).collect();
            let terms = loss_terms(&LossInputs {
                center: &center,
                depth: &depth,
                gt_views: &views,
                offsets: &offsets,
                beta: 0.15,
                window: SsimWindow::default(),
            })?;
            loss_total(&terms, &LossWeights::default()).map_err(|e| ShapeError::new("loss_total", e.to_string()))
        }),
    )?;
    Ok(())
}

fn params(m: &mut dyn Module<f64>, prefix: &str) -> Vec<(String, Tensor<f64>)> {
    let mut out = Vec::new();
    m.visit(prefix, &mut |name, slot| {
        if let Slot::Param(p) = slot {
            out.push((name.to_string(), p.value().clone()));
        }
    });
    out
}

fn install(m: &mut dyn Module<f64>, prefix: &str, names: &[String], vars: &[Var<f64>]) {
    let mut i = 0;
    m.visit(prefix, &mut |name, slot| {
        if let Slot::Param(p) = slot {
            debug_assert_eq!(name, names[i]);
            *p = vars[i].clone();
            i += 1;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_level_suite_passes_on_one_shape() {
        let reports = run(&SuiteOptions {
            seed: 3,
            shapes: 1,
            networks: false,
        })
        .unwrap();
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }
}

//! Central finite-difference checks of reverse-mode gradients (double precision).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ShapeError, Tensor, Var};

/// Denominator floor for relative errors, so vanishing gradients are judged
/// on absolute error instead.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Extra attempts at `step/10, step/100, …` for a coordinate that misses
    /// the tolerance, for when a kink (`|·|`, clamp, bilinear cell edge) lies
    /// within `step` of the evaluation point.
    pub refinements: u32,
    pub tolerance: f64,
    /// Upper bound on coordinates checked per input; larger inputs are sampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            refinements: 2,
            tolerance: 1e-4,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<40} {} coords  max rel err {:.2e}  (tol {:.0e})  {}",
            self.name,
            self.checked,
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradient of scalar `f` at `inputs` against central differences.
///
/// Every input is differentiated; `f` must build its graph only from the
/// vars it is handed.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ShapeError>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>, ShapeError>,
{
    let leaves: Vec<Var<f64>> = inputs.iter().cloned().map(Var::leaf).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(l, t)| l.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64, ShapeError> {
        let vars: Vec<Var<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[idx] += delta;
                }
                Var::constant(t)
            })
            .collect();
        Ok(f(&vars)?.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: opts.tolerance,
    };
    for (which, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.len() <= opts.max_coords {
            (0..t.len()).collect()
        } else {
            let mut v = sample(&mut rng, t.len(), opts.max_coords).into_vec();
            v.sort_unstable();
            v
        };
        for idx in coords {
            let a = analytic[which].data()[idx];
            let mut step = opts.step;
            let (mut numeric, mut err) = (0.0, f64::INFINITY);
            for _ in 0..=opts.refinements {
                let n = (eval(which, idx, step)? - eval(which, idx, -step)?) / (2.0 * step);
                if relative_error(a, n) < err {
                    (numeric, err) = (n, relative_error(a, n));
                }
                if err <= opts.tolerance {
                    break;
                }
                step /= 10.0;
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((which, idx, a, numeric));
            }
        }
    }
    Ok(report)
}

//! Finite-difference verification of reverse-mode gradients.
//!
//! Each checked component compares the analytic derivative `a` with the
//! central difference `b = (f(x + e) - f(x - e)) / 2e` using the relative
//! error `|a - b| / max(|a|, |b|, 1e-8)`. [`Stencil::FivePoint`] replaces
//! the central difference with the fourth-order
//! `(-f(x+2e) + 8f(x+e) - 8f(x-e) + f(x-2e)) / 12e`, which tolerates a
//! larger step where curvature and rounding pull in opposite directions.
//!
//! Evaluations run with kink tracking on. When a shifted evaluation takes a
//! different branch of a piecewise operation than the base point, the step
//! is shrunk tenfold and retried; a component that still straddles a kink
//! after all retries is skipped and counted in
//! [`GradCheckReport::kink_skipped`].

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per checked tensor.
    pub per_parameter_errors: BTreeMap<String, f64>,
    pub passed: bool,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Set when the function could not be evaluated (e.g. non-finite value).
    pub failure: Option<String>,
    /// Components compared against a finite difference.
    pub checked: usize,
    /// Components skipped because every step size crossed a kink.
    pub kink_skipped: usize,
}

impl GradCheckReport {
    fn new(epsilon: f64, tolerance: f64) -> Self {
        GradCheckReport {
            max_relative_error: 0.0,
            per_parameter_errors: BTreeMap::new(),
            passed: false,
            epsilon,
            tolerance,
            failure: None,
            checked: 0,
            kink_skipped: 0,
        }
    }

    fn record(&mut self, name: &str, error: f64) {
        let entry = self.per_parameter_errors.entry(name.to_string()).or_insert(0.0);
        *entry = entry.max(error);
        self.checked += 1;
        self.max_relative_error = self.max_relative_error.max(error);
    }

    fn fail(mut self, message: String) -> Self {
        self.failure = Some(message);
        self.passed = false;
        self
    }

    fn finish(mut self) -> Self {
        self.passed = self.failure.is_none() && self.checked > 0 && self.max_relative_error < self.tolerance;
        self
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    #[default]
    Central,
    FivePoint,
}

impl Stencil {
    /// `(offset in steps, weight)` pairs; the derivative is the weighted sum
    /// divided by the step.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }
}

/// Options shared by all checks.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen components per tensor.
    pub max_components: Option<usize>,
    pub seed: u64,
    /// Tenfold step reductions tried when a difference crosses a kink. Zero
    /// disables kink handling.
    pub kink_retries: u32,
    pub stencil: Stencil,
}

impl GradCheckOptions {
    pub fn new(epsilon: f64, tolerance: f64) -> Self {
        GradCheckOptions { epsilon, tolerance, max_components: None, seed: 0, kink_retries: 3, stencil: Stencil::Central }
    }

    pub fn sampled(mut self, max_components: usize, seed: u64) -> Self {
        self.max_components = Some(max_components);
        self.seed = seed;
        self
    }

    pub fn five_point(mut self) -> Self {
        self.stencil = Stencil::FivePoint;
        self
    }

    pub fn kink_retries(mut self, retries: u32) -> Self {
        self.kink_retries = retries;
        self
    }
}

fn components(len: usize, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match opts.max_components {
        Some(k) if k < len => {
            let mut picked = sample(rng, len, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..len).collect(),
    }
}

/// Scalar value and kink signature of one evaluation.
type Eval = (f64, u64);

fn scalar_output(g: &Graph<f64>, out: Var<'_, f64>) -> Result<Eval> {
    if out.value().numel() != 1 {
        return Err(crate::error::TensorError::shape("grad_check", &[&out.shape()]));
    }
    Ok((out.item(), g.kink_signature()))
}

/// Checks the gradient of the scalar function `f` at `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, opts: &GradCheckOptions) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let report = GradCheckReport::new(opts.epsilon, opts.tolerance);
    let eval = |x: &Tensor<f64>| -> Result<Eval> {
        let g = Graph::new().with_kink_tracking();
        let input = g.constant(x.clone());
        scalar_output(&g, f(&g, input)?)
    };
    let analytic = {
        let g = Graph::new();
        let input = g.input(point.clone());
        let out = match f(&g, input) {
            Ok(out) => out,
            Err(e) => return report.fail(format!("forward failed at the base point: {e}")),
        };
        match g.backward(out) {
            Ok(grads) => grads.wrt(input).cloned().unwrap_or_else(|| Tensor::zeros_like(point)),
            Err(e) => return report.fail(format!("backward failed: {e}")),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    compare("input", point, &analytic, opts, &mut rng, report, eval).finish()
}

/// Checks gradients of the scalar `f` with respect to every tensor in
/// `store`. `f` must read parameters through [`Graph::param`].
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph<f64>) -> Result<Var<'g, f64>>,
{
    let mut report = GradCheckReport::new(opts.epsilon, opts.tolerance);
    let g = Graph::with_params(store);
    let grads = match f(&g).and_then(|out| g.backward(out)) {
        Ok(grads) => grads,
        Err(e) => return report.fail(format!("forward/backward failed at the base point: {e}")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for id in store.ids() {
        let point = store.get(id);
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros_like(point));
        let eval = |value: &Tensor<f64>| -> Result<Eval> {
            let mut perturbed = store.clone();
            *perturbed.get_mut(id) = value.clone();
            let g = Graph::inference(&perturbed).with_kink_tracking();
            scalar_output(&g, f(&g)?)
        };
        report = compare(store.name(id), point, &analytic, opts, &mut rng, report, eval);
        if report.failure.is_some() {
            break;
        }
    }
    report.finish()
}

fn compare(
    name: &str,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
    mut report: GradCheckReport,
    eval: impl Fn(&Tensor<f64>) -> Result<Eval>,
) -> GradCheckReport {
    let base_signature = match eval(point) {
        Ok((_, sig)) => sig,
        Err(e) => return report.fail(format!("{name}: {e}")),
    };
    'component: for i in components(point.numel(), opts, rng) {
        let base = point.data()[i];
        let mut step = opts.epsilon;
        for attempt in 0..=opts.kink_retries {
            let mut numeric = 0.0;
            let mut smooth = true;
            for &(offset, weight) in opts.stencil.taps() {
                let mut shifted = point.clone();
                shifted.make_mut()[i] = base + offset * step;
                match eval(&shifted) {
                    Ok((v, sig)) if v.is_finite() => {
                        numeric += weight * v;
                        smooth &= sig == base_signature;
                    }
                    Ok(_) => return report.fail(format!("{name}[{i}]: non-finite value")),
                    Err(e) => return report.fail(format!("{name}[{i}]: {e}")),
                }
            }
            if smooth || opts.kink_retries == 0 {
                report.record(name, relative_error(analytic.data()[i], numeric / step));
                continue 'component;
            }
            if attempt == opts.kink_retries {
                report.kink_skipped += 1;
            }
            step /= 10.0;
        }
    }
    report
}

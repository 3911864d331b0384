use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{broadcast_shape, broadcast_zip, sum_to_shape};
use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

impl<'g, T: Real> Var<'g, T> {
    fn binary(self, other: Var<'g, T>, kind: Binary) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| TensorError::shape(kind.name(), &[a.shape(), b.shape()]))?;
        let out = match kind {
            Binary::Add => broadcast_zip(&a, &b, &out_shape, |x, y| x + y),
            Binary::Sub => broadcast_zip(&a, &b, &out_shape, |x, y| x - y),
            Binary::Mul => broadcast_zip(&a, &b, &out_shape, |x, y| x * y),
            Binary::Div => broadcast_zip(&a, &b, &out_shape, |x, y| x / y),
        };
        let saved_out = out.clone();
        self.graph.record(kind.name(), out, &[self, other], move |g| {
            let (sa, sb) = (a.shape(), b.shape());
            match kind {
                Binary::Add => vec![Some(sum_to_shape(g, sa)), Some(sum_to_shape(g, sb))],
                Binary::Sub => {
                    let neg = g.map(|v| -v);
                    vec![Some(sum_to_shape(g, sa)), Some(sum_to_shape(&neg, sb))]
                }
                Binary::Mul => {
                    let ga = broadcast_zip(g, &b, g.shape(), |x, y| x * y);
                    let gb = broadcast_zip(g, &a, g.shape(), |x, y| x * y);
                    vec![Some(sum_to_shape(&ga, sa)), Some(sum_to_shape(&gb, sb))]
                }
                Binary::Div => {
                    let ga = broadcast_zip(g, &b, g.shape(), |x, y| x / y);
                    let go = g.zip_map(&saved_out, |x, y| -x * y).expect("same shape");
                    let gb = broadcast_zip(&go, &b, g.shape(), |x, y| x / y);
                    vec![Some(sum_to_shape(&ga, sa)), Some(sum_to_shape(&gb, sb))]
                }
            }
        })
    }

    /// Broadcasting elementwise sum.
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Sub)
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Div)
    }

    /// Applies `f` elementwise; `df(x, y)` is the local derivative at input
    /// `x` with output `y`.
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'g, T>> {
        let x = self.value();
        let y = x.map(f);
        let saved = y.clone();
        self.graph.record(op, y, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(saved.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'g, T>> {
        let (a, b) = (T::of(scale), T::of(shift));
        self.unary("affine", move |v| a * v + b, move |_, _| a)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'g, T>> {
        self.affine(factor, 0.0)
    }

    pub fn neg(self) -> Result<Var<'g, T>> {
        self.affine(-1.0, 0.0)
    }

    pub fn relu(self) -> Result<Var<'g, T>> {
        if self.graph.tracks_kinks() {
            self.graph.note_branches(self.value().data().iter().map(|&v| u64::from(v > T::zero())));
        }
        self.unary(
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(self) -> Result<Var<'g, T>> {
        self.unary("gelu", |v| T::of(gelu_exact(v.as_f64())), |x, _| T::of(gelu_grad(x.as_f64())))
    }

    pub fn exp(self) -> Result<Var<'g, T>> {
        self.unary("exp", |v| v.exp(), |_, y| y)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(self, floor: f64) -> Result<Var<'g, T>> {
        let lo = T::of(floor);
        if self.graph.tracks_kinks() {
            self.graph.note_branches(self.value().data().iter().map(|&v| u64::from(v > lo)));
        }
        self.unary(
            "ln",
            move |v| v.max(lo).ln(),
            move |x, _| if x > lo { T::one() / x } else { T::zero() },
        )
    }

    /// `x^p`. Inputs must be non-negative unless `p` is an integer.
    pub fn powf(self, p: f64) -> Result<Var<'g, T>> {
        let e = T::of(p);
        let em1 = T::of(p - 1.0);
        self.unary("pow", move |v| v.powf(e), move |x, _| e * x.powf(em1))
    }

    pub fn square(self) -> Result<Var<'g, T>> {
        self.unary("square", |v| v * v, |x, _| x + x)
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn adding_zeros_is_identity() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap());
        let z = g.constant(Tensor::zeros(&[2, 2]));
        assert_eq!(x.add(z).unwrap().value(), x.value());
    }

    #[test]
    fn broadcast_mul_gradient_sums_over_broadcast_axis() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let w = g.input(Tensor::from_f64(&[3], &[1., 10., 100.]).unwrap());
        let y = x.mul(w).unwrap().sum_all().unwrap();
        assert_eq!(y.item(), 1. + 20. + 300. + 4. + 50. + 600.);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[1., 10., 100., 1., 10., 100.]);
    }

    #[test]
    fn mismatched_shapes_name_the_op() {
        let g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn non_finite_results_are_errors() {
        let g = Graph::<f64>::new();
        let a = g.input(Tensor::from_f64(&[1], &[1.0]).unwrap());
        let z = g.input(Tensor::zeros(&[1]));
        assert!(a.div(z).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[3], &[0.0, 1.0, -1.0]).unwrap());
        let y = x.gelu().unwrap().value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((y.data()[2] + 0.158_655_253_931_457_05).abs() < 1e-12);
    }
}

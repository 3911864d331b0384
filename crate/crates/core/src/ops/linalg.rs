use super::split_axis;
use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::{gemm, Real, Strides, Tensor};

/// Batched `a (b,m,k) @ b (b,k,n)` with optional operand transposes, where a
/// transposed operand is stored with its last two axes swapped.
#[allow(clippy::too_many_arguments)]
fn batched_gemm<T: Real>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    out: &mut [T],
) {
    let sa = if a_t { Strides::transposed(m) } else { Strides::row_major(k) };
    let sb = if b_t { Strides::transposed(k) } else { Strides::row_major(n) };
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            T::one(),
            &a[i * m * k..(i + 1) * m * k],
            sa,
            &b[i * k * n..(i + 1) * k * n],
            sb,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            Strides::row_major(n),
        );
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// Matrix product of `(m, k)` and `(k, n)`.
    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), rhs.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::shape("matmul", &[a.shape(), b.shape()]));
        }
        let lhs = self.reshape(&[1, a.shape()[0], a.shape()[1]])?;
        let rhs3 = rhs.reshape(&[1, b.shape()[0], b.shape()[1]])?;
        lhs.bmm(rhs3)?.reshape(&[a.shape()[0], b.shape()[1]])
    }

    /// Batched matrix product of `(b, m, k)` and `(b, k, n)`.
    pub fn bmm(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), rhs.value());
        let ok = a.ndim() == 3 && b.ndim() == 3 && a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[1];
        if !ok {
            return Err(TensorError::shape("bmm", &[a.shape(), b.shape()]));
        }
        let (batch, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut out = vec![T::zero(); batch * m * n];
        batched_gemm(batch, m, k, n, a.data(), false, b.data(), false, &mut out);
        let out = Tensor::from_parts(vec![batch, m, n], out);
        self.graph.record("bmm", out, &[self, rhs], move |g| {
            // dA = dC B^T, dB = A^T dC
            let mut ga = vec![T::zero(); batch * m * k];
            batched_gemm(batch, m, n, k, g.data(), false, b.data(), true, &mut ga);
            let mut gb = vec![T::zero(); batch * k * n];
            batched_gemm(batch, k, m, n, a.data(), true, g.data(), false, &mut gb);
            vec![
                Some(Tensor::from_parts(vec![batch, m, k], ga)),
                Some(Tensor::from_parts(vec![batch, k, n], gb)),
            ]
        })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range for {:?}", x.shape())));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..n {
                    let e = (xd[at(k)] - max).exp();
                    y[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    y[at(k)] /= total;
                }
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let saved = y.clone();
        self.graph.record("softmax", y, &[self], move |g| {
            let (yd, gd) = (saved.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: T = (0..n).map(|k| gd[at(k)] * yd[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(saved.shape().to_vec(), dx))]
        })
    }
}

use super::split_axis;
use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim || shape.len() == 1 {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

/// Broadcasts a reduced gradient back over `axis`, scaled by `factor`.
fn expand_axis<T: Real>(g: &Tensor<T>, in_shape: &[usize], axis: usize, factor: T) -> Tensor<T> {
    let (outer, n, inner) = split_axis(in_shape, axis);
    let gd = g.data();
    let mut data = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            data.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * factor));
        }
    }
    Tensor::from_parts(in_shape.to_vec(), data)
}

impl<'g, T: Real> Var<'g, T> {
    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Tensor<T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::invalid(op, format!("axis {axis} out of range for {:?}", x.shape())));
        }
        Ok(x)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.record("sum", Tensor::scalar(x.sum()), &[self], move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(self) -> Result<Var<'g, T>> {
        let n = self.value().numel();
        self.sum_all()?.scale(1.0 / n as f64)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'g, T>> {
        let x = self.check_axis("sum_axis", axis)?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let acc = &mut data[o * inner..(o + 1) * inner];
            for k in 0..n {
                let row = &xd[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let out = Tensor::from_parts(reduced_shape(x.shape(), axis, keepdim), data);
        let in_shape = x.shape().to_vec();
        self.graph.record("sum_axis", out, &[self], move |g| {
            vec![Some(expand_axis(g, &in_shape, axis, T::one()))]
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'g, T>> {
        let n = self.check_axis("mean_axis", axis)?.shape()[axis];
        self.sum_axis(axis, keepdim)?.scale(1.0 / n as f64)
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(self, axis: usize, keepdim: bool) -> Result<Var<'g, T>> {
        let x = self.check_axis("max_axis", axis)?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut data = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for k in 1..n {
                    if xd[(o * n + k) * inner + i] > xd[(o * n + best) * inner + i] {
                        best = k;
                    }
                }
                data[o * inner + i] = xd[(o * n + best) * inner + i];
                argmax[o * inner + i] = best;
            }
        }
        if self.graph.tracks_kinks() {
            self.graph.note_branches(argmax.iter().map(|&k| k as u64));
        }
        let out = Tensor::from_parts(reduced_shape(x.shape(), axis, keepdim), data);
        let in_shape = x.shape().to_vec();
        self.graph.record("max_axis", out, &[self], move |g| {
            let mut grad = vec![T::zero(); x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    grad[(o * n + argmax[o * inner + i]) * inner + i] = g.data()[o * inner + i];
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), grad))]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn axis_reductions() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 3], &[1., 5., 3., 4., 2., 6.]).unwrap());
        assert_eq!(x.sum_axis(1, false).unwrap().value().data(), &[9., 12.]);
        assert_eq!(x.sum_axis(0, true).unwrap().shape(), vec![1, 3]);
        assert_eq!(x.mean_axis(0, false).unwrap().value().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(x.max_axis(1, false).unwrap().value().data(), &[5., 6.]);
        let m = x.max_axis(1, false).unwrap().sum_all().unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0., 1., 0., 0., 0., 1.]);
    }
}
